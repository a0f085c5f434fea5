//! Green's-function and resolvent kernels for constant advection
//! `c φ' − λφ = 0`, and a numerical check that both constructions reduce to
//! the exponential kernel.
//!
//! With straight characteristics `s_t(x) = x + ct` the causal Green's function
//! is `G(x, ξ) = H((x−ξ)/c) e^{−(λ/c)(x−ξ)}` and the resolvent delta resolves to
//! `K_α(x, y) = e^{−α(y−x)/c} H((y−x)/c) / |c|`. Symmetrizing either over a
//! weight gives, for `w ≡ 1` on the whole line, `(|c|/2λ) e^{−λ|x−y|/|c|}`.
//! Decay transport with a constant field is the same operator.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Truncation depth in units of the decay length `|c|/λ`.
pub const TRUNCATION_DECAY_LENGTHS: f64 = 15.0;

#[derive(Clone)]
pub struct AdvectionProblem {
    pub c: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    weight: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for AdvectionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdvectionProblem")
            .field("c", &self.c)
            .field("lambda", &self.lambda)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("weighted", &self.weight.is_some())
            .finish()
    }
}

impl AdvectionProblem {
    pub fn new(c: f64, lambda: f64, a: f64, b: f64) -> Result<Self> {
        if c == 0.0 || !c.is_finite() {
            return Err(Error::InvalidParameter(
                "advection speed must be nonzero".into(),
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(a < b) {
            return Err(Error::InvalidParameter(format!(
                "domain requires a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self {
            c,
            lambda,
            a,
            b,
            weight: None,
        })
    }

    /// Interval covering `[x_min, x_max]` extended upstream by
    /// [`TRUNCATION_DECAY_LENGTHS`] decay lengths.
    pub fn for_grid(c: f64, lambda: f64, grid: &[f64]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = TRUNCATION_DECAY_LENGTHS * c.abs() / lambda;
        if c > 0.0 {
            Self::new(c, lambda, lo - pad, hi.max(lo + f64::EPSILON.max(1e-12)))
        } else {
            Self::new(c, lambda, lo.min(hi - 1e-12), hi + pad)
        }
    }

    pub fn with_weight<W>(mut self, w: W) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.weight = Some(Arc::new(w));
        self
    }

    pub fn weight(&self, xi: f64) -> f64 {
        self.weight.as_ref().map_or(1.0, |w| w(xi))
    }

    /// Decay transport `φ' = (λ/f)φ` with constant field `f`.
    pub fn decay_transport(f: f64, lambda: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(f, lambda, a, b)
    }

    /// Quadrature over `[a, b]` with panel breaks at every grid point.
    pub fn rule_for(&self, grid: &[f64], order: usize) -> Result<QuadratureRule> {
        let mut bps = vec![self.a, self.b];
        bps.extend(grid.iter().copied().filter(|&g| g > self.a && g < self.b));
        // Subdivide the long upstream stretch so each panel spans about one decay length.
        let decay = self.c.abs() / self.lambda;
        let (lo, hi) = (
            grid.iter().copied().fold(self.b, f64::min),
            grid.iter().copied().fold(self.a, f64::max),
        );
        let mut t = self.a;
        while t < lo {
            bps.push(t);
            t += decay;
        }
        let mut t = self.b;
        while t > hi {
            bps.push(t);
            t -= decay;
        }
        bps.sort_by(f64::total_cmp);
        bps.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        QuadratureRule::composite_gauss_legendre(&bps, order)
    }
}

#[inline]
fn heaviside(s: f64) -> f64 {
    if s >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `G(x, ξ) = H((x−ξ)/c) e^{−(λ/c)(x−ξ)}` with `H(0) = 1`.
pub fn green_advection(p: &AdvectionProblem, x: f64, xi: f64) -> f64 {
    let s = (x - xi) / p.c;
    heaviside(s) * (-p.lambda * s).exp()
}

/// `∫ G(x, ξ) G(y, ξ) w(ξ) dξ` by quadrature.
pub fn symmetrized_kernel(p: &AdvectionProblem, x: f64, y: f64, q: &QuadratureRule) -> Result<f64> {
    if q.len() < 2 {
        return Err(Error::InvalidParameter(
            "quadrature rule needs at least 2 nodes".into(),
        ));
    }
    Ok(q.integrate(|xi| green_advection(p, x, xi) * green_advection(p, y, xi) * p.weight(xi)))
}

/// `e^{−α(y−x)/c} H((y−x)/c) / |c|`: the time-`t = (y−x)/c` contribution of
/// `∫₀^∞ e^{−αt} δ(y − x − ct) dt`.
pub fn resolvent_kernel_advection(p: &AdvectionProblem, x: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let t = (y - x) / p.c;
    Ok(heaviside(t) * (-alpha * t).exp() / p.c.abs())
}

/// `∫ K_λ(ξ, x) K_λ(ξ, y) w(ξ) dξ` by quadrature.
pub fn symmetrized_resolvent(
    p: &AdvectionProblem,
    x: f64,
    y: f64,
    q: &QuadratureRule,
) -> Result<f64> {
    if q.len() < 2 {
        return Err(Error::InvalidParameter(
            "quadrature rule needs at least 2 nodes".into(),
        ));
    }
    let mut acc = 0.0;
    for (&xi, &wq) in q.nodes.iter().zip(&q.weights) {
        acc += wq
            * resolvent_kernel_advection(p, xi, x, p.lambda)?
            * resolvent_kernel_advection(p, xi, y, p.lambda)?
            * p.weight(xi);
    }
    Ok(acc)
}

/// Whole-line closed form for `w ≡ 1`: `(|c|/2λ) e^{−λ|x−y|/|c|}`.
pub fn analytic_exponential_kernel(p: &AdvectionProblem, x: f64, y: f64) -> f64 {
    let c = p.c.abs();
    c / (2.0 * p.lambda) * (-p.lambda * (x - y).abs() / c).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnificationRow {
    pub x: f64,
    pub y: f64,
    pub k_green: f64,
    pub k_analytic: f64,
    pub k_resolvent_sym: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnificationReport {
    pub rows: Vec<UnificationRow>,
    /// Least-squares scale mapping `K_green` onto the analytic kernel.
    pub scale_green: f64,
    /// Least-squares scale mapping the symmetrized resolvent onto it.
    pub scale_resolvent: f64,
    pub max_rel_dev: f64,
    /// `max |K_green(x, x)·2λ/|c| − 1|` before any fit.
    pub diagonal_law_error: f64,
}

fn ls_scale(from: &[f64], to: &[f64]) -> f64 {
    let num: f64 = from.iter().zip(to).map(|(a, b)| a * b).sum();
    let den: f64 = from.iter().map(|a| a * a).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Compares the three kernels on all grid pairs after one scalar fit each.
pub fn unification_check(
    p: &AdvectionProblem,
    grid: &[f64],
    q: &QuadratureRule,
) -> Result<UnificationReport> {
    let pairs: Vec<(f64, f64)> = grid
        .iter()
        .flat_map(|&x| grid.iter().map(move |&y| (x, y)))
        .collect();
    let vals: Vec<Result<(f64, f64, f64)>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            Ok((
                symmetrized_kernel(p, x, y, q)?,
                analytic_exponential_kernel(p, x, y),
                symmetrized_resolvent(p, x, y, q)?,
            ))
        })
        .collect();
    let vals: Vec<(f64, f64, f64)> = vals.into_iter().collect::<Result<_>>()?;
    let kg: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let ka: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let kr: Vec<f64> = vals.iter().map(|v| v.2).collect();
    let sg = ls_scale(&kg, &ka);
    let sr = ls_scale(&kr, &ka);

    let mut rows = Vec::with_capacity(pairs.len());
    let mut max_rel = 0.0_f64;
    let mut diag = 0.0_f64;
    for (i, &(x, y)) in pairs.iter().enumerate() {
        let dev = (sg * kg[i] - ka[i]).abs().max((sr * kr[i] - ka[i]).abs()) / ka[i].abs();
        max_rel = max_rel.max(dev);
        if x == y {
            diag = diag.max((kg[i] * 2.0 * p.lambda / p.c.abs() - 1.0).abs());
        }
        rows.push(UnificationRow {
            x,
            y,
            k_green: kg[i],
            k_analytic: ka[i],
            k_resolvent_sym: kr[i],
            rel_dev: dev,
        });
    }
    Ok(UnificationReport {
        rows,
        scale_green: sg,
        scale_resolvent: sr,
        max_rel_dev: max_rel,
        diagonal_law_error: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> AdvectionProblem {
        AdvectionProblem::new(1.0, 1.0, -30.0, 5.0).unwrap()
    }

    #[test]
    fn green_values() {
        let p = unit();
        assert_eq!(green_advection(&p, 0.0, 0.5), 0.0);
        assert_eq!(green_advection(&p, 0.2, 0.2), 1.0);
        assert!((green_advection(&p, 1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn resolvent_values() {
        let p = unit();
        assert_eq!(resolvent_kernel_advection(&p, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(
            (resolvent_kernel_advection(&p, 0.0, 1.0, 1.0).unwrap() - (-1.0f64).exp()).abs()
                < 1e-15
        );
        let p2 = AdvectionProblem::new(2.0, 1.0, -30.0, 5.0).unwrap();
        let v = resolvent_kernel_advection(&p2, 0.0, 2.0, 1.0).unwrap();
        assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn symmetrized_matches_closed_form() {
        let p = unit();
        let q = p.rule_for(&[0.0, 1.0], 16).unwrap();
        assert!((symmetrized_kernel(&p, 0.0, 0.0, &q).unwrap() - 0.5).abs() < 1e-4);
        let v = symmetrized_kernel(&p, 0.0, 1.0, &q).unwrap();
        assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-4);
        assert!((v - 0.18394).abs() < 1e-4);
        assert_eq!(symmetrized_kernel(&p, -31.0, -32.0, &q).unwrap(), 0.0);
    }

    #[test]
    fn negative_speed_mirrors() {
        let grid = [0.0, 0.7];
        let p = AdvectionProblem::for_grid(-1.0, 1.0, &grid).unwrap();
        let q = p.rule_for(&grid, 16).unwrap();
        let v = symmetrized_kernel(&p, 0.0, 0.7, &q).unwrap();
        assert!((v - analytic_exponential_kernel(&p, 0.0, 0.7)).abs() < 1e-10);
    }
}
