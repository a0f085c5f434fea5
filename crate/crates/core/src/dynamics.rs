//! Benchmark vector fields, fixed-step RK4 flows and linearization data.
//!
//! Every kernel construction in the crate needs three things from a system:
//! the field `f`, its Jacobian `E = Df(x*)` at the equilibrium, and the
//! purely nonlinear remainder `𝕗(x) = f(x) − E·x`. The left eigenvectors of
//! `E` anchor principal eigenfunctions at first order, `φ(x) = wᵀx + h(x)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

pub type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type JacobianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Names accepted by [`SystemDef::from_name`], with a one-line description.
pub const BUILTIN_SYSTEMS: [(&str, &str); 5] = [
    ("cubic1d", "x' = x - x^3"),
    (
        "poly2d",
        "2D polynomial system conjugate to diag(lambda1, lambda2)",
    ),
    (
        "duffing",
        "x1' = x2, x2' = -delta x2 - x1 (beta + alpha x1^2)",
    ),
    ("advection1d", "x' = c (constant advection, no equilibrium)"),
    ("linear_test", "x' = diag(a, b) x"),
];

const EQUILIBRIUM_TOL: f64 = 1e-12;
const FD_JACOBIAN_STEP: f64 = 1e-6;
pub const DEFAULT_ESCAPE_RADIUS: f64 = 1e6;

/// A known eigenvalue together with a closed-form eigenfunction.
#[derive(Clone)]
pub struct ReferenceEigenpair {
    pub lambda: f64,
    pub phi: Arc<ScalarFn>,
}

impl fmt::Debug for ReferenceEigenpair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceEigenpair")
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

/// A named autonomous vector field.
#[derive(Clone)]
pub struct SystemDef {
    name: String,
    dim: usize,
    params: Vec<(String, f64)>,
    field: Arc<FieldFn>,
    jacobian: Option<Arc<JacobianFn>>,
    equilibrium: Option<Vec<f64>>,
    reference: Vec<ReferenceEigenpair>,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("equilibrium", &self.equilibrium)
            .field("reference", &self.reference)
            .finish_non_exhaustive()
    }
}

impl SystemDef {
    /// A user-defined system. The Jacobian falls back to central differences
    /// unless [`SystemDef::with_jacobian`] supplies one.
    pub fn new<F>(name: impl Into<String>, dim: usize, field: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "system dimension must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            dim,
            params: Vec::new(),
            field: Arc::new(field),
            jacobian: None,
            equilibrium: None,
            reference: Vec::new(),
        })
    }

    pub fn with_param(mut self, name: impl Into<String>, value: f64) -> Self {
        self.params.push((name.into(), value));
        self
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Attaches the equilibrium, rejecting points where `f` does not vanish.
    pub fn with_equilibrium(mut self, x: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, x.len())?;
        let v = self.eval(&x)?;
        if let Some(bad) = v.iter().find(|c| c.abs() > EQUILIBRIUM_TOL) {
            return Err(Error::InvalidParameter(format!(
                "f(equilibrium) has component {bad:e}, not zero"
            )));
        }
        self.equilibrium = Some(x);
        Ok(self)
    }

    pub fn with_reference<P>(mut self, lambda: f64, phi: P) -> Self
    where
        P: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.reference.push(ReferenceEigenpair {
            lambda,
            phi: Arc::new(phi),
        });
        self
    }

    /// `ẋ = x − x³`; principal eigenfunction `x/√(1−x²)` at λ = 1.
    pub fn cubic1d() -> Self {
        Self::new("cubic1d", 1, |x, out| out[0] = x[0] - x[0].powi(3))
            .expect("static definition")
            .with_jacobian(|x| DMatrix::from_element(1, 1, 1.0 - 3.0 * x[0] * x[0]))
            .with_equilibrium(vec![0.0])
            .expect("origin is an equilibrium")
            .with_reference(1.0, |x| x[0] / (1.0 - x[0] * x[0]).sqrt())
    }

    /// Polynomial system smoothly conjugate to `ẏ = diag(λ₁, λ₂) y` through
    /// `y₁ = x₁ − x₂²`, `y₂ = x₂ − y₁²`.
    pub fn poly2d(lambda1: f64, lambda2: f64) -> Self {
        let (l1, l2) = (lambda1, lambda2);
        Self::new("poly2d", 2, move |x, out| {
            let (x1, x2) = (x[0], x[1]);
            let p = x1 * x1 - x2 - 2.0 * x1 * x2 * x2 + x2.powi(4);
            let q = x1 + 4.0 * x1 * x1 * x2 - x2 * x2 - 8.0 * x1 * x2.powi(3) + 4.0 * x2.powi(5);
            let r = x1 - x2 * x2;
            out[0] = -2.0 * l2 * x2 * p + l1 * q;
            out[1] = 2.0 * l1 * r * r - l2 * p;
        })
        .expect("static definition")
        .with_param("lambda1", l1)
        .with_param("lambda2", l2)
        .with_jacobian(move |x| {
            let (x1, x2) = (x[0], x[1]);
            let p = x1 * x1 - x2 - 2.0 * x1 * x2 * x2 + x2.powi(4);
            let p1 = 2.0 * x1 - 2.0 * x2 * x2;
            let p2 = -1.0 - 4.0 * x1 * x2 + 4.0 * x2.powi(3);
            let q1 = 1.0 + 8.0 * x1 * x2 - 8.0 * x2.powi(3);
            let q2 = 4.0 * x1 * x1 - 2.0 * x2 - 24.0 * x1 * x2 * x2 + 20.0 * x2.powi(4);
            let r = x1 - x2 * x2;
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    -2.0 * l2 * x2 * p1 + l1 * q1,
                    -2.0 * l2 * (p + x2 * p2) + l1 * q2,
                    4.0 * l1 * r - l2 * p1,
                    -8.0 * l1 * r * x2 - l2 * p2,
                ],
            )
        })
        .with_equilibrium(vec![0.0, 0.0])
        .expect("origin is an equilibrium")
        .with_reference(l1, |x| x[0] - x[1] * x[1])
        .with_reference(l2, |x| {
            -x[0] * x[0] + x[1] + 2.0 * x[0] * x[1] * x[1] - x[1].powi(4)
        })
    }

    /// Damped Duffing oscillator `ẋ₁ = x₂`, `ẋ₂ = −δx₂ − x₁(β + αx₁²)`.
    pub fn duffing(delta: f64, beta: f64, alpha: f64) -> Self {
        Self::new("duffing", 2, move |x, out| {
            out[0] = x[1];
            out[1] = -delta * x[1] - x[0] * (beta + alpha * x[0] * x[0]);
        })
        .expect("static definition")
        .with_param("delta", delta)
        .with_param("beta", beta)
        .with_param("alpha", alpha)
        .with_jacobian(move |x| {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -beta - 3.0 * alpha * x[0] * x[0], -delta])
        })
        .with_equilibrium(vec![0.0, 0.0])
        .expect("origin is an equilibrium")
    }

    /// Constant advection `ẋ = c`. Has no equilibrium, so it cannot be linearized.
    pub fn advection1d(c: f64) -> Self {
        Self::new("advection1d", 1, move |_, out| out[0] = c)
            .expect("static definition")
            .with_param("c", c)
            .with_jacobian(|_| DMatrix::zeros(1, 1))
    }

    /// `ẋ = diag(a, b) x` with eigenfunctions `x₁` and `x₂`.
    pub fn linear_test(a: f64, b: f64) -> Self {
        Self::new("linear_test", 2, move |x, out| {
            out[0] = a * x[0];
            out[1] = b * x[1];
        })
        .expect("static definition")
        .with_param("a", a)
        .with_param("b", b)
        .with_jacobian(move |_| DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]))
        .with_equilibrium(vec![0.0, 0.0])
        .expect("origin is an equilibrium")
        .with_reference(a, |x| x[0])
        .with_reference(b, |x| x[1])
    }

    /// Builds a built-in system, overriding its default parameters.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[(&str, f64)] = match name {
            "cubic1d" => &[],
            "poly2d" => &[("lambda1", -1.0), ("lambda2", 3.0)],
            "duffing" => &[("delta", 0.5), ("beta", -1.0), ("alpha", 1.0)],
            "advection1d" => &[("c", 1.0)],
            "linear_test" => &[("a", -1.0), ("b", -2.0)],
            other => return Err(Error::InvalidParameter(format!("unknown system '{other}'"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
            return Err(Error::InvalidParameter(format!(
                "system '{name}' has no parameter '{k}'"
            )));
        }
        let get = |key: &str| {
            params.get(key).copied().unwrap_or_else(|| {
                allowed
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .unwrap()
            })
        };
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "parameter '{k}' = {v} is not finite"
            )));
        }
        Ok(match name {
            "cubic1d" => Self::cubic1d(),
            "poly2d" => Self::poly2d(get("lambda1"), get("lambda2")),
            "duffing" => Self::duffing(get("delta"), get("beta"), get("alpha")),
            "advection1d" => {
                let c = get("c");
                if c == 0.0 {
                    return Err(Error::InvalidParameter(
                        "advection speed must be nonzero".into(),
                    ));
                }
                Self::advection1d(c)
            }
            _ => Self::linear_test(get("a"), get("b")),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn equilibrium(&self) -> Option<&[f64]> {
        self.equilibrium.as_deref()
    }

    pub fn reference_eigenpairs(&self) -> &[ReferenceEigenpair] {
        &self.reference
    }

    /// The closed-form eigenfunction for `lambda`, if the system ships one.
    pub fn reference_for(&self, lambda: f64) -> Option<&ReferenceEigenpair> {
        self.reference
            .iter()
            .find(|r| (r.lambda - lambda).abs() <= 1e-9 * (1.0 + lambda.abs()))
    }

    /// `f(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        (self.field)(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller buffer, for inner loops.
    #[inline]
    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.field)(x, out)
    }

    /// `Df(x)`, analytic when available, otherwise central differences.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        if let Some(j) = &self.jacobian {
            return Ok(j(x));
        }
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for k in 0..d {
            xp[k] = x[k] + FD_JACOBIAN_STEP;
            (self.field)(&xp, &mut fp);
            xp[k] = x[k] - FD_JACOBIAN_STEP;
            (self.field)(&xp, &mut fm);
            xp[k] = x[k];
            for i in 0..d {
                jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * FD_JACOBIAN_STEP);
            }
        }
        Ok(jac)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }
}

/// Linearization at the equilibrium: `E`, its real simple eigenvalues in
/// descending order and matching left eigenvectors `wᵢᵀE = λᵢwᵢᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationInfo {
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub left_eigenvectors: Vec<Vec<f64>>,
}

impl LinearizationInfo {
    /// Index of the eigenvalue matching `lambda` to within `1e-9`.
    pub fn index_of(&self, lambda: f64) -> Result<usize> {
        self.eigenvalues
            .iter()
            .position(|l| (l - lambda).abs() <= 1e-9)
            .ok_or(Error::UnknownEigenvalue(lambda))
    }

    pub fn left_eigenvector(&self, lambda: f64) -> Result<&[f64]> {
        Ok(&self.left_eigenvectors[self.index_of(lambda)?])
    }

    /// `‖wᵀE − λwᵀ‖_∞` for the stored pair `idx`.
    pub fn left_residual(&self, idx: usize) -> f64 {
        let w = DVector::from_column_slice(&self.left_eigenvectors[idx]);
        let r = self.jacobian.tr_mul(&w) - w * self.eigenvalues[idx];
        r.amax()
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Linearizes `sys` at its equilibrium.
pub fn linearize(sys: &SystemDef) -> Result<LinearizationInfo> {
    let eq = sys.equilibrium().ok_or_else(|| {
        Error::InvalidParameter(format!("system '{}' has no equilibrium", sys.name()))
    })?;
    let e = sys.jacobian(eq)?;
    let d = sys.dim();
    let scale = inf_norm(&e).max(1.0);

    let complex = nalgebra::linalg::Schur::new(e.clone()).complex_eigenvalues();
    let mut eigenvalues = Vec::with_capacity(d);
    for z in complex.iter() {
        if z.im.abs() > 1e-10 * scale {
            return Err(Error::UnsupportedSpectrum(format!(
                "complex eigenvalue {} {:+}i",
                z.re, z.im
            )));
        }
        eigenvalues.push(z.re);
    }
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    for pair in eigenvalues.windows(2) {
        if (pair[0] - pair[1]).abs() <= 1e-8 * scale {
            return Err(Error::UnsupportedSpectrum(format!(
                "repeated eigenvalue {}",
                pair[0]
            )));
        }
    }

    let et = e.transpose();
    let mut left = Vec::with_capacity(d);
    for &lambda in &eigenvalues {
        let shifted = &et - DMatrix::identity(d, d) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty spectrum");
        let mut w: Vec<f64> = v_t.row(imin).iter().copied().collect();
        let pivot = w
            .iter()
            .copied()
            .fold(0.0_f64, |m, c| if c.abs() > m.abs() { c } else { m });
        for c in &mut w {
            *c /= pivot;
        }
        left.push(w);
    }
    Ok(LinearizationInfo {
        jacobian: e,
        eigenvalues,
        left_eigenvectors: left,
    })
}

/// `𝕗(x) = f(x) − E·x`, with `x` measured from the origin.
pub fn nonlinear_part(sys: &SystemDef, lin: &LinearizationInfo, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(lin.jacobian.nrows(), sys.dim())?;
    let mut out = sys.eval(x)?;
    nonlinear_into(lin, x, &mut out);
    Ok(out)
}

/// Subtracts `E·x` from an already evaluated `f(x)` held in `fx`.
#[inline]
pub(crate) fn nonlinear_into(lin: &LinearizationInfo, x: &[f64], fx: &mut [f64]) {
    let e = &lin.jacobian;
    for (i, out) in fx.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += e[(i, j)] * xj;
        }
        *out -= acc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
}

/// Fixed-step integration settings; `steps · dt == horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub escape_radius: f64,
}

impl IntegratorConfig {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "step count must be at least 1".into(),
            ));
        }
        Ok(Self {
            dt: horizon / steps as f64,
            horizon,
            steps,
            scheme: Scheme::Rk4,
            escape_radius: DEFAULT_ESCAPE_RADIUS,
        })
    }

    /// Chooses the step count nearest to `horizon / dt` and recomputes `dt`.
    pub fn from_step(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {dt}"
            )));
        }
        let steps = ((horizon / dt).round() as usize).max(1);
        Self::new(horizon, steps)
    }

    pub fn with_escape_radius(mut self, radius: f64) -> Self {
        self.escape_radius = radius;
        self
    }
}

/// States of a flow sampled every `dt`; `times` are elapsed times along
/// `direction`, so the signed time of sample `k` is `direction.sign() * times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// Classical RK4 stepper with reusable scratch space.
pub struct Rk4Stepper<'a> {
    sys: &'a SystemDef,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Rk4Stepper<'a> {
    pub fn new(sys: &'a SystemDef) -> Self {
        let d = sys.dim();
        Self {
            sys,
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
        }
    }

    /// Advances `x` in place by signed step `h`.
    pub fn step(&mut self, x: &mut [f64], h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        self.sys.eval_into(x, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.sys.eval_into(tmp, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.sys.eval_into(tmp, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        self.sys.eval_into(tmp, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[inline]
pub(crate) fn escaped(x: &[f64], radius: f64) -> bool {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    !(n2.sqrt() <= radius)
}

/// Integrates `ẋ = f(x)` from `x0` for `cfg.steps` steps of size `±cfg.dt`.
pub fn flow(
    sys: &SystemDef,
    x0: &[f64],
    cfg: &IntegratorConfig,
    direction: Direction,
) -> Result<Trajectory> {
    check_dim(sys.dim(), x0.len())?;
    let h = direction.sign() * cfg.dt;
    let mut stepper = Rk4Stepper::new(sys);
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(cfg.steps + 1);
    let mut states = Vec::with_capacity(cfg.steps + 1);
    times.push(0.0);
    states.push(x.clone());
    for k in 1..=cfg.steps {
        stepper.step(&mut x, h);
        let t = k as f64 * cfg.dt;
        if escaped(&x, cfg.escape_radius) {
            return Err(Error::BlowUp {
                time: t,
                radius: cfg.escape_radius,
            });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        direction,
    })
}

/// [`flow`] over many initial conditions in parallel.
pub fn flow_batch(
    sys: &SystemDef,
    x0s: &[Vec<f64>],
    cfg: &IntegratorConfig,
    direction: Direction,
) -> Vec<Result<Trajectory>> {
    x0s.par_iter()
        .map(|x0| flow(sys, x0, cfg, direction))
        .collect()
}

/// `|φ(s_t(x₀)) − e^{λt}φ(x₀)| / max(1, |φ(x₀)|)`; negative `t` flows backward.
pub fn characteristic_identity_residual(
    sys: &SystemDef,
    phi: &dyn Fn(&[f64]) -> f64,
    lambda: f64,
    x0: &[f64],
    t: f64,
    dt: f64,
) -> Result<f64> {
    check_dim(sys.dim(), x0.len())?;
    let phi0 = phi(x0);
    if t == 0.0 {
        return Ok(0.0);
    }
    let cfg = IntegratorConfig::new(t.abs(), ((t.abs() / dt) - 1e-9).ceil().max(1.0) as usize)?;
    let dir = if t > 0.0 {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let traj = flow(sys, x0, &cfg, dir)?;
    let phit = phi(traj.final_state());
    Ok((phit - (lambda * t).exp() * phi0).abs() / phi0.abs().max(1.0))
}
