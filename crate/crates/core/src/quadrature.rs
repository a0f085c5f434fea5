//! One-dimensional quadrature rules.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    Trapezoid,
    GaussLegendre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scheme: QuadratureScheme,
    pub lower: f64,
    pub upper: f64,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Composite trapezoid rule with `n` nodes on `[a, b]`.
    pub fn trapezoid(a: f64, b: f64, n: usize) -> Result<Self> {
        check_interval(a, b)?;
        if n < 2 {
            return Err(Error::InvalidParameter(
                "trapezoid rule needs at least 2 nodes".into(),
            ));
        }
        let h = (b - a) / (n - 1) as f64;
        let nodes = (0..n).map(|i| a + h * i as f64).collect();
        let weights = (0..n)
            .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
            .collect();
        Ok(Self {
            nodes,
            weights,
            scheme: QuadratureScheme::Trapezoid,
            lower: a,
            upper: b,
        })
    }

    /// Gauss–Legendre panels of `order` nodes between consecutive
    /// `breakpoints`. Placing breakpoints at integrand kinks keeps each panel
    /// smooth.
    pub fn composite_gauss_legendre(breakpoints: &[f64], order: usize) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two breakpoints".into(),
            ));
        }
        if order < 2 {
            return Err(Error::InvalidParameter(
                "Gauss-Legendre order must be at least 2".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let (xs, ws) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(order * (breakpoints.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breakpoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in xs.iter().zip(&ws) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Ok(Self {
            nodes,
            weights,
            scheme: QuadratureScheme::GaussLegendre,
            lower: breakpoints[0],
            upper: *breakpoints.last().unwrap(),
        })
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "invalid interval [{a}, {b}]"
        )));
    }
    Ok(())
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// found by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
