//! Penalized collocation for `f·∇φ = λφ` with `φ = Σ α_j K(·, x_j)`.
//!
//! The coefficients minimize
//!
//! ```text
//! (1/N)‖Bα‖² + η‖α‖² + μ_grad‖G₀α − w‖² + μ_trace‖Tα‖² + μ_layer‖Yα‖²
//! ```
//!
//! where `B_ij = ∇ₓK(x_i, x_j)·f(x_i) − λK(x_i, x_j)`, `G₀` holds kernel
//! gradients at the anchor, and `T`, `Y` evaluate the expansion on the trace
//! points and (mean-scaled) boundary layer.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{linearize, SystemDef};
use crate::error::{check_dim, Error, Result};
use crate::grid::{layer_indices, trace_indices, Domain};
use crate::kernels::Kernel;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub eta: f64,
    pub mu_grad: f64,
    pub mu_trace: f64,
    pub mu_layer: f64,
    /// Layer points satisfy `|x − center|_∞ > layer_fraction · half_width`.
    pub layer_fraction: f64,
    /// Enforce `G₀α = w` exactly through a KKT system instead of penalizing.
    pub exact_anchor: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            eta: 1e-8,
            mu_grad: 1e4,
            mu_trace: 0.0,
            mu_layer: 0.0,
            layer_fraction: 0.9,
            exact_anchor: false,
        }
    }
}

impl PenaltyConfig {
    /// Defaults plus trace and layer penalties at `1e2`.
    pub fn with_boundary() -> Self {
        Self {
            mu_trace: 1e2,
            mu_layer: 1e2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("mu_grad", self.mu_grad),
            ("mu_trace", self.mu_trace),
            ("mu_layer", self.mu_layer),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "penalty {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.mu_grad > 0.0) && !self.exact_anchor {
            return Err(Error::InvalidParameter(
                "mu_grad must be positive to exclude the zero solution".into(),
            ));
        }
        if !(self.layer_fraction > 0.0 && self.layer_fraction < 1.0) {
            return Err(Error::InvalidParameter(
                "layer_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient target `∇φ(location) = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub location: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone)]
pub struct CollocationProblem {
    pub system: SystemDef,
    pub lambda: f64,
    pub kernel: Arc<dyn Kernel>,
    pub points: Vec<Vec<f64>>,
    pub anchor: Anchor,
    pub penalties: PenaltyConfig,
    pub domain: Domain,
}

impl fmt::Debug for CollocationProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CollocationProblem")
            .field("system", &self.system.name())
            .field("lambda", &self.lambda)
            .field("kernel", &self.kernel.label())
            .field("n_points", &self.points.len())
            .field("anchor", &self.anchor)
            .field("penalties", &self.penalties)
            .finish()
    }
}

fn bounding_domain(points: &[Vec<f64>]) -> Result<Domain> {
    let d = points[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    for k in 0..d {
        if lo[k] == hi[k] {
            lo[k] -= 0.5;
            hi[k] += 0.5;
        }
    }
    Domain::new(lo, hi)
}

impl CollocationProblem {
    pub fn new(
        system: SystemDef,
        lambda: f64,
        kernel: Arc<dyn Kernel>,
        points: Vec<Vec<f64>>,
        anchor: Anchor,
        penalties: PenaltyConfig,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter(
                "collocation needs at least one point".into(),
            ));
        }
        for p in &points {
            check_dim(system.dim(), p.len())?;
        }
        check_dim(system.dim(), anchor.location.len())?;
        check_dim(system.dim(), anchor.target.len())?;
        if anchor.target.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter(
                "anchor target must be nonzero".into(),
            ));
        }
        penalties.validate()?;
        let domain = bounding_domain(&points)?;
        Ok(Self {
            system,
            lambda,
            kernel,
            points,
            anchor,
            penalties,
            domain,
        })
    }

    /// Anchors `∇φ(x*) = w` with `w` the left eigenvector for `lambda`.
    pub fn with_left_eigenvector<K: Kernel + 'static>(
        system: SystemDef,
        lambda: f64,
        kernel: K,
        points: Vec<Vec<f64>>,
        penalties: PenaltyConfig,
    ) -> Result<Self> {
        Self::with_left_eigenvector_arc(system, lambda, Arc::new(kernel), points, penalties)
    }

    pub fn with_left_eigenvector_arc(
        system: SystemDef,
        lambda: f64,
        kernel: Arc<dyn Kernel>,
        points: Vec<Vec<f64>>,
        penalties: PenaltyConfig,
    ) -> Result<Self> {
        let lin = linearize(&system)?;
        let w = lin.left_eigenvector(lambda)?.to_vec();
        let location = system
            .equilibrium()
            .expect("linearize checked the equilibrium")
            .to_vec();
        Self::new(
            system,
            lambda,
            kernel,
            points,
            Anchor {
                location,
                target: w,
            },
            penalties,
        )
    }

    /// Overrides the domain used for the boundary-layer predicate.
    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        check_dim(self.system.dim(), domain.dim())?;
        self.domain = domain;
        Ok(self)
    }

    pub fn trace_points(&self) -> Vec<usize> {
        if self.penalties.mu_trace > 0.0 {
            trace_indices(&self.points)
        } else {
            Vec::new()
        }
    }

    pub fn layer_points(&self) -> Vec<usize> {
        if self.penalties.mu_layer > 0.0 {
            layer_indices(&self.points, &self.domain, self.penalties.layer_fraction)
        } else {
            Vec::new()
        }
    }

    pub fn assemble(&self) -> Result<Assembly> {
        assemble_kernel(self, self.kernel.as_ref())
    }

    pub fn solve(&self) -> Result<Solution> {
        let asm = self.assemble()?;
        let (alpha, jitter) = solve_assembled(&asm, &self.penalties, &self.anchor.target)?;
        Ok(self.finish(alpha, jitter, &asm))
    }

    pub(crate) fn finish(&self, alpha: DVector<f64>, jitter: f64, asm: &Assembly) -> Solution {
        let n = self.points.len() as f64;
        let r = &asm.b * &alpha;
        let g = &asm.g0 * &alpha;
        let anchor_err: f64 = g
            .iter()
            .zip(&self.anchor.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut diagnostics = Diagnostics {
            residual_norm: r.norm() / n.sqrt(),
            anchor_error: anchor_err,
            derivative_at_anchor: g.iter().copied().collect(),
            jitter,
            non_smooth_evaluations: asm.non_smooth,
            rmse_raw: None,
            rmse_rescaled: None,
            rescale_factor: None,
        };
        let mut sol = Solution {
            alpha,
            centers: self.points.clone(),
            kernel: self.kernel.clone(),
            lambda: self.lambda,
            system: self.system.clone(),
            diagnostics: diagnostics.clone(),
        };
        if let Some(reference) = self.system.reference_for(self.lambda) {
            if let Ok(learned) = sol.evaluate(&self.points) {
                let exact: Vec<f64> = self.points.iter().map(|p| (reference.phi)(p)).collect();
                diagnostics.rmse_raw = Some(rmse(&learned, &exact));
                if let Ok((c, r)) = rescale_rmse(&learned, &exact) {
                    diagnostics.rescale_factor = Some(c);
                    diagnostics.rmse_rescaled = Some(r);
                }
            }
        }
        sol.diagnostics = diagnostics;
        sol
    }
}

/// Matrices of the quadratic objective for one kernel.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub b: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub trace: DMatrix<f64>,
    /// Layer rows, already scaled by `1/√|layer|`.
    pub layer: DMatrix<f64>,
    /// Number of kernel gradient evaluations that hit a non-smooth point.
    pub non_smooth: usize,
}

impl Assembly {
    /// `Σ c_ℓ A_ℓ` over assemblies on the same problem.
    pub fn combine(parts: &[Assembly], coeffs: &[f64]) -> Assembly {
        let mut out = Assembly {
            b: parts[0].b.clone() * coeffs[0],
            g0: parts[0].g0.clone() * coeffs[0],
            trace: parts[0].trace.clone() * coeffs[0],
            layer: parts[0].layer.clone() * coeffs[0],
            non_smooth: parts[0].non_smooth,
        };
        for (p, &c) in parts.iter().zip(coeffs).skip(1) {
            out.b += &p.b * c;
            out.g0 += &p.g0 * c;
            out.trace += &p.trace * c;
            out.layer += &p.layer * c;
            out.non_smooth += p.non_smooth;
        }
        out
    }
}

fn locate(e: Error, what: &str, i: usize) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("{what} {i}: {m}")),
        other => other,
    }
}

/// Assembles the objective matrices of `problem` with an arbitrary kernel.
pub fn assemble_kernel(problem: &CollocationProblem, kernel: &dyn Kernel) -> Result<Assembly> {
    let pts = &problem.points;
    let n = pts.len();
    let d = problem.system.dim();
    let lambda = problem.lambda;

    let rows: Vec<Result<(Vec<f64>, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &pts[i];
            let fx = problem.system.eval(xi)?;
            let mut grad = vec![0.0; d];
            let mut row = Vec::with_capacity(n);
            let mut kinks = 0;
            for xj in pts {
                let k = kernel
                    .eval(xi, xj)
                    .map_err(|e| locate(e, "collocation point", i))?;
                if kernel
                    .grad_x_into(xi, xj, &mut grad)
                    .map_err(|e| locate(e, "collocation point", i))?
                {
                    kinks += 1;
                }
                let fg: f64 = fx.iter().zip(&grad).map(|(a, b)| a * b).sum();
                row.push(fg - lambda * k);
            }
            Ok((row, kinks))
        })
        .collect();
    let mut b = DMatrix::zeros(n, n);
    let mut non_smooth = 0;
    for (i, r) in rows.into_iter().enumerate() {
        let (row, kinks) = r?;
        non_smooth += kinks;
        for (j, v) in row.into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }

    let mut g0 = DMatrix::zeros(d, n);
    let mut grad = vec![0.0; d];
    for (j, xj) in pts.iter().enumerate() {
        if kernel
            .grad_x_into(&problem.anchor.location, xj, &mut grad)
            .map_err(|e| locate(e, "anchor vs point", j))?
        {
            non_smooth += 1;
        }
        for k in 0..d {
            g0[(k, j)] = grad[k];
        }
    }

    let eval_rows = |idx: &[usize], scale: f64| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(idx.len(), n);
        for (r, &i) in idx.iter().enumerate() {
            for (j, xj) in pts.iter().enumerate() {
                m[(r, j)] = scale
                    * kernel
                        .eval(&pts[i], xj)
                        .map_err(|e| locate(e, "boundary point", i))?;
            }
        }
        Ok(m)
    };
    let trace = eval_rows(&problem.trace_points(), 1.0)?;
    let layer_idx = problem.layer_points();
    let layer_scale = if layer_idx.is_empty() {
        0.0
    } else {
        1.0 / (layer_idx.len() as f64).sqrt()
    };
    let layer = eval_rows(&layer_idx, layer_scale)?;

    Ok(Assembly {
        b,
        g0,
        trace,
        layer,
        non_smooth,
    })
}

/// Normal-equation matrix and right-hand side, anchor term included unless
/// the anchor is exact.
pub fn normal_equations(
    asm: &Assembly,
    pen: &PenaltyConfig,
    w: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = asm.b.ncols();
    let mut a = asm.b.tr_mul(&asm.b) / n as f64;
    for i in 0..n {
        a[(i, i)] += pen.eta;
    }
    if pen.mu_trace > 0.0 && asm.trace.nrows() > 0 {
        a += asm.trace.tr_mul(&asm.trace) * pen.mu_trace;
    }
    if pen.mu_layer > 0.0 && asm.layer.nrows() > 0 {
        a += asm.layer.tr_mul(&asm.layer) * pen.mu_layer;
    }
    let mut rhs = DVector::zeros(n);
    if !pen.exact_anchor {
        a += asm.g0.tr_mul(&asm.g0) * pen.mu_grad;
        rhs = asm.g0.tr_mul(&DVector::from_column_slice(w)) * pen.mu_grad;
    }
    (a, rhs)
}

/// Minimizer of the quadratic objective, with the jitter actually applied.
pub fn solve_assembled(
    asm: &Assembly,
    pen: &PenaltyConfig,
    w: &[f64],
) -> Result<(DVector<f64>, f64)> {
    let (a, rhs) = normal_equations(asm, pen, w);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    if !pen.exact_anchor {
        return linalg::solve_spd(&a, &rhs);
    }
    // [A G₀ᵀ; G₀ 0] [α; ν] = [0; w]
    let n = a.nrows();
    let d = asm.g0.nrows();
    let mut kkt = DMatrix::zeros(n + d, n + d);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&a * 2.0));
    kkt.view_mut((0, n), (n, d)).copy_from(&asm.g0.transpose());
    kkt.view_mut((n, 0), (d, n)).copy_from(&asm.g0);
    let mut rhs = DVector::zeros(n + d);
    for k in 0..d {
        rhs[n + k] = w[k];
    }
    let lu = kkt.clone().lu();
    let sol = lu.solve(&rhs).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned {
            condition: linalg::condition_estimate(&kkt),
        });
    }
    Ok((sol.rows(0, n).into_owned(), 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `‖Bα‖₂ / √N`.
    pub residual_norm: f64,
    /// `‖∇φ(anchor) − w‖₂`.
    pub anchor_error: f64,
    pub derivative_at_anchor: Vec<f64>,
    pub jitter: f64,
    pub non_smooth_evaluations: usize,
    pub rmse_raw: Option<f64>,
    pub rmse_rescaled: Option<f64>,
    pub rescale_factor: Option<f64>,
}

/// Fitted expansion `φ(x) = Σ α_j K(x, x_j)`.
#[derive(Clone)]
pub struct Solution {
    pub alpha: DVector<f64>,
    pub centers: Vec<Vec<f64>>,
    pub kernel: Arc<dyn Kernel>,
    pub lambda: f64,
    pub system: SystemDef,
    pub diagnostics: Diagnostics,
}

impl fmt::Debug for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Solution")
            .field("kernel", &self.kernel.label())
            .field("lambda", &self.lambda)
            .field("n", &self.alpha.len())
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl Solution {
    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (a, c) in self.alpha.iter().zip(&self.centers) {
            acc += a * self.kernel.eval(x, c)?;
        }
        Ok(acc)
    }

    pub fn evaluate(&self, probes: &[Vec<f64>]) -> Result<Vec<f64>> {
        probes.par_iter().map(|p| self.value_at(p)).collect()
    }

    pub fn gradient_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        let mut tmp = vec![0.0; x.len()];
        for (a, c) in self.alpha.iter().zip(&self.centers) {
            self.kernel.grad_x_into(x, c, &mut tmp)?;
            for (gi, ti) in g.iter_mut().zip(&tmp) {
                *gi += a * ti;
            }
        }
        Ok(g)
    }

    /// Pointwise `f·∇φ − λφ`.
    pub fn residual_field(&self, probes: &[Vec<f64>]) -> Result<Vec<f64>> {
        probes
            .par_iter()
            .map(|p| {
                let fx = self.system.eval(p)?;
                let g = self.gradient_at(p)?;
                let v = self.value_at(p)?;
                Ok(fx.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() - self.lambda * v)
            })
            .collect()
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// Optimal scale `c* = ⟨l, r⟩/⟨l, l⟩` (means of products) and the RMSE of
/// `c*·l − r`.
pub fn rescale_rmse(learned: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    if learned.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: learned.len(),
            got: reference.len(),
        });
    }
    if learned.is_empty() {
        return Err(Error::Degenerate("no values to compare".into()));
    }
    let n = learned.len() as f64;
    let ll = learned.iter().map(|v| v * v).sum::<f64>() / n;
    let rr = reference.iter().map(|v| v * v).sum::<f64>() / n;
    let lr = learned
        .iter()
        .zip(reference)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n;
    if !(ll > 0.0) {
        return Err(Error::Degenerate(
            "learned function is identically zero".into(),
        ));
    }
    if lr.abs() <= 1e-12 * (ll * rr).sqrt() {
        return Err(Error::Degenerate(
            "learned function is orthogonal to the reference".into(),
        ));
    }
    let c = lr / ll;
    let scaled: Vec<f64> = learned.iter().map(|v| c * v).collect();
    Ok((c, rmse(&scaled, reference)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::kernels::KernelSpec;

    #[test]
    fn rescale_cases() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(rescale_rmse(&r, &r).unwrap(), (1.0, 0.0));
        let l2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(rescale_rmse(&l2, &r).unwrap(), (0.5, 0.0));
        assert!(matches!(
            rescale_rmse(&[1.0, 1.0], &[1.0, -1.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            rescale_rmse(&[0.0, 0.0], &[1.0, -1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_point_gaussian_residual_matrix() {
        let sys = SystemDef::duffing(0.5, -1.0, 1.0);
        let p = CollocationProblem::with_left_eigenvector(
            sys,
            -1.280776406404415,
            KernelSpec::gaussian(1.0),
            vec![vec![0.3, 0.2]],
            PenaltyConfig::default(),
        )
        .unwrap();
        let asm = p.assemble().unwrap();
        assert!((asm.b[(0, 0)] - 1.280776406404415).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_gives_zero() {
        let sys = SystemDef::cubic1d();
        let sol = Solution {
            alpha: DVector::zeros(2),
            centers: vec![vec![0.1], vec![0.2]],
            kernel: Arc::new(KernelSpec::gaussian(1.0)),
            lambda: 1.0,
            system: sys,
            diagnostics: Diagnostics {
                residual_norm: 0.0,
                anchor_error: 0.0,
                derivative_at_anchor: vec![0.0],
                jitter: 0.0,
                non_smooth_evaluations: 0,
                rmse_raw: None,
                rmse_rescaled: None,
                rescale_factor: None,
            },
        };
        assert_eq!(
            sol.evaluate(&[vec![0.5], vec![-0.3]]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn poly2d_polynomial_kernel_recovers_eigenfunction() {
        let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[21, 21]).unwrap();
        let p = CollocationProblem::with_left_eigenvector(
            SystemDef::poly2d(-1.0, 3.0),
            -1.0,
            KernelSpec::polynomial(2, 0.5),
            pts,
            PenaltyConfig::default(),
        )
        .unwrap();
        let sol = p.solve().unwrap();
        assert!(
            sol.diagnostics.rmse_rescaled.unwrap() <= 1e-4,
            "{:?}",
            sol.diagnostics
        );
        assert!(
            sol.diagnostics.rmse_rescaled.unwrap() <= sol.diagnostics.rmse_raw.unwrap() + 1e-12
        );
        let x = [0.3, -0.2];
        let g = sol.gradient_at(&x).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[k] += h;
            xm[k] -= h;
            let fd = (sol.value_at(&xp).unwrap() - sol.value_at(&xm).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0));
        }
    }

    #[test]
    fn exact_anchor_mode() {
        let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[9, 9]).unwrap();
        let pen = PenaltyConfig {
            exact_anchor: true,
            ..PenaltyConfig::default()
        };
        let p = CollocationProblem::with_left_eigenvector(
            SystemDef::poly2d(-1.0, 3.0),
            -1.0,
            KernelSpec::polynomial(2, 0.5),
            pts,
            pen,
        )
        .unwrap();
        let sol = p.solve().unwrap();
        assert!(sol.diagnostics.anchor_error < 1e-8, "{:?}", sol.diagnostics);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = SystemDef::cubic1d();
        let k: Arc<dyn Kernel> = Arc::new(KernelSpec::gaussian(1.0));
        let anchor = Anchor {
            location: vec![0.0],
            target: vec![0.0],
        };
        assert!(CollocationProblem::new(
            sys.clone(),
            1.0,
            k.clone(),
            vec![vec![0.1]],
            anchor,
            PenaltyConfig::default()
        )
        .is_err());
        let anchor = Anchor {
            location: vec![0.0],
            target: vec![1.0],
        };
        let pen = PenaltyConfig {
            mu_grad: 0.0,
            ..PenaltyConfig::default()
        };
        assert!(CollocationProblem::new(sys, 1.0, k, vec![vec![0.1]], anchor, pen).is_err());
    }
}
