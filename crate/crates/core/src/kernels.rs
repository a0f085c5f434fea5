//! Base kernel families, convex mixtures and Gram assembly.
//!
//! Every family provides its value and the analytic gradient in the first
//! argument; the collocation operator `f(x)·∇ₓK(x, y) − λK(x, y)` needs both.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// A scalar feature `ξ` with its gradient; backs the rank-one kernel
/// `K(x, y) = ξ(x)ξ(y)`.
pub trait XiSource: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn label(&self) -> String;
}

/// Shared handle to a [`XiSource`]. Equality is pointer identity.
#[derive(Clone)]
pub struct XiHandle(pub Arc<dyn XiSource>);

impl fmt::Debug for XiHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XiHandle({})", self.0.label())
    }
}

impl PartialEq for XiHandle {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Anything usable as a reproducing kernel by the solvers.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// Writes `∂K/∂x` into `out`. Returns `true` when the kernel is not
    /// differentiable at `(x, y)` and a one-sided or zero value was used.
    fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<bool>;

    /// Indefinite kernels skip Gram PSD checks.
    fn is_indefinite(&self) -> bool;

    fn label(&self) -> String;

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.grad_x_into(x, y, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `exp(−γ‖x−y‖²)`; `length_scale` records ℓ when built from it.
    Gaussian {
        gamma: f64,
        length_scale: Option<f64>,
    },
    /// `exp(−γ‖x−y‖)`.
    Exponential {
        gamma: f64,
    },
    /// Same formula as `Exponential`; kept as a separate name.
    Laplacian {
        gamma: f64,
    },
    /// `1/(1+γ‖x−y‖²)`.
    Cauchy {
        gamma: f64,
    },
    /// `max(0, 1 − ‖x−y‖/σ)`.
    Triangular {
        sigma: f64,
    },
    /// `tanh(γ xᵀy + c₀)`, indefinite.
    Sigmoid {
        gamma: f64,
        coef0: f64,
    },
    /// `1/(1+γ‖x−y‖²)`.
    InverseQuadratic {
        gamma: f64,
    },
    /// `(xᵀy + c₀)^d`.
    Polynomial {
        degree: u32,
        coef0: f64,
    },
    /// `xy/√((1−x²)(1−y²))` on `(−1, 1)`.
    Singular1d,
    RankOne(XiHandle),
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec::Gaussian {
            gamma,
            length_scale: None,
        }
    }

    /// Gaussian from a length scale, `γ = 1/(2ℓ²)`.
    pub fn gaussian_length_scale(ell: f64) -> Self {
        KernelSpec::Gaussian {
            gamma: 1.0 / (2.0 * ell * ell),
            length_scale: Some(ell),
        }
    }

    pub fn polynomial(degree: u32, coef0: f64) -> Self {
        KernelSpec::Polynomial { degree, coef0 }
    }

    pub fn rank_one(source: Arc<dyn XiSource>) -> Self {
        KernelSpec::RankOne(XiHandle(source))
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Exponential { .. } => "exponential",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Cauchy { .. } => "cauchy",
            KernelSpec::Triangular { .. } => "triangular",
            KernelSpec::Sigmoid { .. } => "sigmoid",
            KernelSpec::InverseQuadratic { .. } => "inverse_quadratic",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Singular1d => "singular_1d",
            KernelSpec::RankOne(_) => "rank_one",
        }
    }

    /// Checks hyperparameters. Returns warnings for admissible but unusual
    /// settings (polynomial degree above 6).
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{} {name} must be positive, got {v}",
                    self.family()
                )))
            }
        };
        match *self {
            KernelSpec::Gaussian { gamma, .. }
            | KernelSpec::Exponential { gamma }
            | KernelSpec::Laplacian { gamma }
            | KernelSpec::Cauchy { gamma }
            | KernelSpec::InverseQuadratic { gamma } => positive("gamma", gamma)?,
            KernelSpec::Triangular { sigma } => positive("sigma", sigma)?,
            KernelSpec::Sigmoid { gamma, coef0 } => {
                positive("gamma", gamma)?;
                if !coef0.is_finite() {
                    return Err(Error::InvalidParameter(
                        "sigmoid coef0 must be finite".into(),
                    ));
                }
            }
            KernelSpec::Polynomial { degree, coef0 } => {
                if degree == 0 {
                    return Err(Error::InvalidParameter(
                        "polynomial degree must be at least 1".into(),
                    ));
                }
                if !(coef0 >= 0.0 && coef0.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "polynomial coef0 must be nonnegative, got {coef0}"
                    )));
                }
                if !(2..=6).contains(&degree) {
                    return Ok(vec![format!(
                        "polynomial degree {degree} outside the usual range 2..=6"
                    )]);
                }
            }
            KernelSpec::Singular1d | KernelSpec::RankOne(_) => {}
        }
        Ok(Vec::new())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian {
                length_scale: Some(ell),
                ..
            } => write!(f, "gaussian(length_scale={ell})"),
            KernelSpec::Gaussian { gamma, .. } => write!(f, "gaussian(gamma={gamma})"),
            KernelSpec::Exponential { gamma } => write!(f, "exponential(gamma={gamma})"),
            KernelSpec::Laplacian { gamma } => write!(f, "laplacian(gamma={gamma})"),
            KernelSpec::Cauchy { gamma } => write!(f, "cauchy(gamma={gamma})"),
            KernelSpec::Triangular { sigma } => write!(f, "triangular(sigma={sigma})"),
            KernelSpec::Sigmoid { gamma, coef0 } => {
                write!(f, "sigmoid(gamma={gamma},coef0={coef0})")
            }
            KernelSpec::InverseQuadratic { gamma } => write!(f, "inverse_quadratic(gamma={gamma})"),
            KernelSpec::Polynomial { degree, coef0 } => {
                write!(f, "polynomial(degree={degree},coef0={coef0})")
            }
            KernelSpec::Singular1d => write!(f, "singular_1d"),
            KernelSpec::RankOne(h) => write!(f, "rank_one({})", h.0.label()),
        }
    }
}

#[inline]
fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn singular_factor(x: f64) -> Result<f64> {
    if x.abs() >= 1.0 || !x.is_finite() {
        return Err(Error::Domain(format!(
            "singular_1d requires |x| < 1, got {x}"
        )));
    }
    Ok(1.0 / (1.0 - x * x).sqrt())
}

impl Kernel for KernelSpec {
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(x, y)?;
        Ok(match self {
            KernelSpec::Gaussian { gamma, .. } => (-gamma * dist2(x, y)).exp(),
            KernelSpec::Exponential { gamma } | KernelSpec::Laplacian { gamma } => {
                (-gamma * dist2(x, y).sqrt()).exp()
            }
            KernelSpec::Cauchy { gamma } | KernelSpec::InverseQuadratic { gamma } => {
                1.0 / (1.0 + gamma * dist2(x, y))
            }
            KernelSpec::Triangular { sigma } => (1.0 - dist2(x, y).sqrt() / sigma).max(0.0),
            KernelSpec::Sigmoid { gamma, coef0 } => (gamma * dot(x, y) + coef0).tanh(),
            KernelSpec::Polynomial { degree, coef0 } => (dot(x, y) + coef0).powi(*degree as i32),
            KernelSpec::Singular1d => {
                if x.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: x.len(),
                    });
                }
                x[0] * y[0] * singular_factor(x[0])? * singular_factor(y[0])?
            }
            KernelSpec::RankOne(h) => h.0.value(x)? * h.0.value(y)?,
        })
    }

    fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<bool> {
        check_pair(x, y)?;
        if out.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: out.len(),
            });
        }
        let mut non_smooth = false;
        match self {
            KernelSpec::Gaussian { gamma, .. } => {
                let k = (-gamma * dist2(x, y)).exp();
                for i in 0..x.len() {
                    out[i] = -2.0 * gamma * (x[i] - y[i]) * k;
                }
            }
            KernelSpec::Exponential { gamma } | KernelSpec::Laplacian { gamma } => {
                let r = dist2(x, y).sqrt();
                if r == 0.0 {
                    out.fill(0.0);
                    non_smooth = true;
                } else {
                    let c = -gamma * (-gamma * r).exp() / r;
                    for i in 0..x.len() {
                        out[i] = c * (x[i] - y[i]);
                    }
                }
            }
            KernelSpec::Cauchy { gamma } | KernelSpec::InverseQuadratic { gamma } => {
                let k = 1.0 / (1.0 + gamma * dist2(x, y));
                for i in 0..x.len() {
                    out[i] = -2.0 * gamma * (x[i] - y[i]) * k * k;
                }
            }
            KernelSpec::Triangular { sigma } => {
                let r = dist2(x, y).sqrt();
                if r == 0.0 {
                    out.fill(0.0);
                    non_smooth = true;
                } else if r > *sigma {
                    out.fill(0.0);
                } else {
                    non_smooth = r == *sigma;
                    for i in 0..x.len() {
                        out[i] = -(x[i] - y[i]) / (r * sigma);
                    }
                }
            }
            KernelSpec::Sigmoid { gamma, coef0 } => {
                let k = (gamma * dot(x, y) + coef0).tanh();
                for i in 0..x.len() {
                    out[i] = gamma * (1.0 - k * k) * y[i];
                }
            }
            KernelSpec::Polynomial { degree, coef0 } => {
                let d = *degree as i32;
                let c = d as f64 * (dot(x, y) + coef0).powi(d - 1);
                for i in 0..x.len() {
                    out[i] = c * y[i];
                }
            }
            KernelSpec::Singular1d => {
                if x.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: x.len(),
                    });
                }
                let sx = singular_factor(x[0])?;
                out[0] = y[0] * singular_factor(y[0])? * sx * sx * sx;
            }
            KernelSpec::RankOne(h) => {
                let xi_y = h.0.value(y)?;
                let g = h.0.gradient(x)?;
                for i in 0..x.len() {
                    out[i] = xi_y * g[i];
                }
            }
        }
        Ok(non_smooth)
    }

    fn is_indefinite(&self) -> bool {
        matches!(self, KernelSpec::Sigmoid { .. })
    }

    fn label(&self) -> String {
        self.to_string()
    }
}

/// `Σ β_ℓ k_ℓ` with `β` on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMixture {
    components: Vec<KernelSpec>,
    weights: Vec<f64>,
}

impl KernelMixture {
    pub fn new(components: Vec<KernelSpec>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "mixture weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {sum}, not 1"
            )));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self {
            components,
            weights,
        })
    }

    /// Equal weights over `components`.
    pub fn uniform(components: Vec<KernelSpec>) -> Result<Self> {
        let n = components.len();
        let mut weights = vec![1.0 / n as f64; n];
        // Push the rounding residue into the last weight so the sum is exact.
        let partial: f64 = weights[..n.saturating_sub(1)].iter().sum();
        if n > 0 {
            weights[n - 1] = 1.0 - partial;
        }
        Self::new(components, weights)
    }

    /// Normalizes arbitrary nonnegative weights onto the simplex.
    pub fn normalized(components: Vec<KernelSpec>, raw: &[f64]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Degenerate("mixture weights are all zero".into()));
        }
        Self::new(components, raw.iter().map(|b| b / sum).collect())
    }

    pub fn components(&self) -> &[KernelSpec] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Kernel for KernelMixture {
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (k, &b) in self.components.iter().zip(&self.weights) {
            if b != 0.0 {
                acc += b * k.eval(x, y)?;
            }
        }
        Ok(acc)
    }

    fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<bool> {
        out.fill(0.0);
        let mut tmp = vec![0.0; x.len()];
        let mut flag = false;
        for (k, &b) in self.components.iter().zip(&self.weights) {
            if b != 0.0 {
                flag |= k.grad_x_into(x, y, &mut tmp)?;
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += b * t;
                }
            }
        }
        Ok(flag)
    }

    fn is_indefinite(&self) -> bool {
        self.components
            .iter()
            .zip(&self.weights)
            .any(|(k, &b)| b > 0.0 && k.is_indefinite())
    }

    fn label(&self) -> String {
        let parts: Vec<String> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(k, b)| format!("{b}*{k}"))
            .collect();
        format!("mixture[{}]", parts.join(" + "))
    }
}

/// The eleven base kernels used for kernel learning, with fixed hyperparameters.
pub fn default_base_kernels() -> Vec<KernelSpec> {
    let mut v = vec![
        KernelSpec::gaussian(1.0),
        KernelSpec::Exponential { gamma: 1.0 },
        KernelSpec::Cauchy { gamma: 1.0 },
        KernelSpec::Triangular { sigma: 2.0 },
        KernelSpec::Sigmoid {
            gamma: 0.5,
            coef0: 0.0,
        },
        KernelSpec::InverseQuadratic { gamma: 1.0 },
    ];
    v.extend((2..=6).map(|d| KernelSpec::polynomial(d, 1.0)));
    v
}

/// Short display names matching [`default_base_kernels`] order.
pub fn short_name(spec: &KernelSpec) -> String {
    match spec {
        KernelSpec::Polynomial { degree, .. } => format!("poly{degree}"),
        other => other.family().to_string(),
    }
}

/// Symmetric kernel matrix on a point set.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub points: Vec<Vec<f64>>,
    pub label: String,
    pub indefinite: bool,
}

impl GramMatrix {
    /// Copy with `1e-10 · max(diag)` added to the diagonal.
    pub fn with_jitter(&self) -> DMatrix<f64> {
        let mut m = self.values.clone();
        let j = 1e-10 * m.diagonal().amax();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.values)
    }
}

/// `K_ij = k(x_i, x_j)`, assembled over the upper triangle in parallel and mirrored.
pub fn gram(kernel: &dyn Kernel, points: &[Vec<f64>]) -> Result<GramMatrix> {
    let n = points.len();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    kernel.eval(&points[i], &points[j]).map_err(|e| match e {
                        Error::Domain(m) => Error::Domain(format!("points ({i}, {j}): {m}")),
                        other => other,
                    })
                })
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row?.into_iter().enumerate() {
            values[(i, i + off)] = v;
            values[(i + off, i)] = v;
        }
    }
    Ok(GramMatrix {
        values,
        points: points.to_vec(),
        label: kernel.label(),
        indefinite: kernel.is_indefinite(),
    })
}
