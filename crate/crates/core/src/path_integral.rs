//! Truncated path-integral coordinate `ξ` and the rank-one kernel it induces.
//!
//! ```text
//! ξ(x) = wᵀx + ∫₀^{±T} e^{−λt} wᵀ𝕗(s_t(x)) dt
//! ```
//!
//! Unstable modes (`λ > 0`) integrate forward in time, stable modes backward,
//! so the exponential weight always decays. The integral is split into `M`
//! steps; states come from RK4 and the integrand is sampled at the averaged
//! state of each step with weight `e^{−|λ|(k+½)Δt}`.
//!
//! Differentiating along the flow gives `wᵀx + ∫₀^{σT} … = e^{−λσT} wᵀs_{σT}(x)`,
//! so `f·∇ξ_T − λξ_T = e^{−|λ|T} wᵀ𝕗(s_{σT}(x))` exactly in the continuum.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::dynamics::{
    escaped, nonlinear_into, Direction, LinearizationInfo, Rk4Stepper, SystemDef,
};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelSpec, XiSource};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegralConfig {
    pub horizon: f64,
    pub steps: usize,
    pub direction: Direction,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub escape_radius: f64,
}

impl PathIntegralConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter(
                "path-integral steps must be positive".into(),
            ));
        }
        if self.lambda == 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(
                "path-integral eigenvalue must be nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Picks integration direction and anchor vector for `lambda`.
pub fn mode_kernel_select(
    lin: &LinearizationInfo,
    lambda: f64,
    horizon: f64,
    steps: usize,
) -> Result<PathIntegralConfig> {
    if lambda == 0.0 {
        return Err(Error::InvalidParameter(
            "lambda = 0 has no decaying path-integral weight".into(),
        ));
    }
    let idx = lin.index_of(lambda)?;
    let lambda = lin.eigenvalues[idx];
    let cfg = PathIntegralConfig {
        horizon,
        steps,
        direction: if lambda > 0.0 {
            Direction::Forward
        } else {
            Direction::Backward
        },
        lambda,
        w: lin.left_eigenvectors[idx].clone(),
        escape_radius: crate::dynamics::DEFAULT_ESCAPE_RADIUS,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Evaluates `ξ_T` and its finite-difference gradient. Values requested
/// through the [`XiSource`] interface are memoized per point.
pub struct XiEvaluator {
    system: SystemDef,
    lin: LinearizationInfo,
    cfg: PathIntegralConfig,
    fd_step: f64,
    values: RwLock<HashMap<Vec<u64>, f64>>,
    gradients: RwLock<HashMap<Vec<u64>, Vec<f64>>>,
}

impl std::fmt::Debug for XiEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("XiEvaluator")
            .field("system", &self.system.name())
            .field("cfg", &self.cfg)
            .field("fd_step", &self.fd_step)
            .finish_non_exhaustive()
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl XiEvaluator {
    pub fn new(system: SystemDef, lin: LinearizationInfo, cfg: PathIntegralConfig) -> Result<Self> {
        cfg.validate()?;
        check_dim(system.dim(), cfg.w.len())?;
        check_dim(system.dim(), lin.jacobian.nrows())?;
        Ok(Self {
            system,
            lin,
            cfg,
            fd_step: DEFAULT_FD_STEP,
            values: RwLock::new(HashMap::new()),
            gradients: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn config(&self) -> &PathIntegralConfig {
        &self.cfg
    }

    pub fn system(&self) -> &SystemDef {
        &self.system
    }

    pub fn linearization(&self) -> &LinearizationInfo {
        &self.lin
    }

    /// Truncated coordinate `ξ_T(x)`, uncached.
    pub fn xi_truncated(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.system.dim(), x.len())?;
        let d = x.len();
        let cfg = &self.cfg;
        let dt = cfg.dt();
        let sigma = cfg.direction.sign();
        let rate = cfg.lambda.abs();
        let w = &cfg.w;

        let mut stepper = Rk4Stepper::new(&self.system);
        let mut xk = x.to_vec();
        let mut xn = x.to_vec();
        let mut mid = vec![0.0; d];
        let mut nl = vec![0.0; d];
        let mut sum = 0.0;
        for k in 0..cfg.steps {
            xn.copy_from_slice(&xk);
            stepper.step(&mut xn, sigma * dt);
            if escaped(&xn, cfg.escape_radius) {
                return Err(Error::BlowUp {
                    time: (k + 1) as f64 * dt,
                    radius: cfg.escape_radius,
                });
            }
            for i in 0..d {
                mid[i] = 0.5 * (xk[i] + xn[i]);
            }
            self.system.eval_into(&mid, &mut nl);
            nonlinear_into(&self.lin, &mid, &mut nl);
            let wf: f64 = w.iter().zip(&nl).map(|(a, b)| a * b).sum();
            sum += (-rate * (k as f64 + 0.5) * dt).exp() * wf;
            std::mem::swap(&mut xk, &mut xn);
        }
        let wx: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(wx + sigma * sum * dt)
    }

    /// Central-difference gradient of `ξ_T` with step `h`.
    pub fn xi_gradient(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        check_dim(self.system.dim(), x.len())?;
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for k in 0..x.len() {
            xp[k] = x[k] + h;
            let fp = self.xi_truncated(&xp)?;
            xp[k] = x[k] - h;
            let fm = self.xi_truncated(&xp)?;
            xp[k] = x[k];
            g[k] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    /// `f(x)·∇ξ_T(x) − λξ_T(x)` with a central-difference gradient.
    pub fn koopman_residual_t(&self, x: &[f64], fd_step: f64) -> Result<f64> {
        let fx = self.system.eval(x)?;
        let g = self.xi_gradient(x, fd_step)?;
        let xi = self.xi_truncated(x)?;
        Ok(fx.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() - self.cfg.lambda * xi)
    }

    /// The continuum residual `e^{−|λ|T} wᵀ𝕗(s_{σT}(x))`, for comparison.
    pub fn residual_theory(&self, x: &[f64]) -> Result<f64> {
        let icfg = crate::dynamics::IntegratorConfig::new(self.cfg.horizon, self.cfg.steps)?
            .with_escape_radius(self.cfg.escape_radius);
        let traj = crate::dynamics::flow(&self.system, x, &icfg, self.cfg.direction)?;
        let end = traj.final_state();
        let nl = crate::dynamics::nonlinear_part(&self.system, &self.lin, end)?;
        let wf: f64 = self.cfg.w.iter().zip(&nl).map(|(a, b)| a * b).sum();
        Ok((-self.cfg.lambda.abs() * self.cfg.horizon).exp() * wf)
    }

    pub fn xi_batch(&self, points: &[Vec<f64>]) -> Vec<Result<f64>> {
        points.par_iter().map(|p| self.xi_truncated(p)).collect()
    }

    fn cached_value(&self, x: &[f64]) -> Result<f64> {
        let k = key(x);
        if let Some(v) = self.values.read().expect("cache lock").get(&k) {
            return Ok(*v);
        }
        let v = self.xi_truncated(x)?;
        self.values.write().expect("cache lock").insert(k, v);
        Ok(v)
    }

    fn cached_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = key(x);
        if let Some(v) = self.gradients.read().expect("cache lock").get(&k) {
            return Ok(v.clone());
        }
        let g = self.xi_gradient(x, self.fd_step)?;
        self.gradients
            .write()
            .expect("cache lock")
            .insert(k, g.clone());
        Ok(g)
    }
}

impl XiSource for XiEvaluator {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.cached_value(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.cached_gradient(x)
    }

    fn label(&self) -> String {
        format!(
            "xi[{},lambda={},T={},M={}]",
            self.system.name(),
            self.cfg.lambda,
            self.cfg.horizon,
            self.cfg.steps
        )
    }
}

/// `K(x, y) = ξ(x)ξ(y)`.
pub fn rank_one_kernel(ev: Arc<XiEvaluator>) -> KernelSpec {
    KernelSpec::rank_one(ev)
}

/// Combinations of the stable and unstable coordinates. Not used by any
/// solver path; kept for exploration.
#[cfg(feature = "experimental")]
pub mod combined {
    use super::*;
    use crate::kernels::Kernel;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Combination {
        /// `ξ₊(x)ξ₊(y) + ξ₋(x)ξ₋(y)`.
        Sum,
        /// `ξ₊(x)ξ₋(y) + ξ₋(x)ξ₊(y)`, symmetrized.
        Cross,
    }

    #[derive(Debug)]
    pub struct CombinedKernel {
        pub plus: Arc<XiEvaluator>,
        pub minus: Arc<XiEvaluator>,
        pub kind: Combination,
    }

    impl Kernel for CombinedKernel {
        fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
            let (px, py) = (self.plus.value(x)?, self.plus.value(y)?);
            let (mx, my) = (self.minus.value(x)?, self.minus.value(y)?);
            Ok(match self.kind {
                Combination::Sum => px * py + mx * my,
                Combination::Cross => px * my + mx * py,
            })
        }

        fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<bool> {
            let (gp, gm) = (self.plus.gradient(x)?, self.minus.gradient(x)?);
            let (py, my) = (self.plus.value(y)?, self.minus.value(y)?);
            for i in 0..out.len() {
                out[i] = match self.kind {
                    Combination::Sum => gp[i] * py + gm[i] * my,
                    Combination::Cross => gp[i] * my + gm[i] * py,
                };
            }
            Ok(false)
        }

        fn is_indefinite(&self) -> bool {
            self.kind == Combination::Cross
        }

        fn label(&self) -> String {
            format!(
                "{:?}({}, {})",
                self.kind,
                self.plus.label(),
                self.minus.label()
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linearize;
    use crate::kernels::Kernel;

    fn duffing_eval(lambda_index: usize, t: f64, m: usize) -> XiEvaluator {
        let sys = SystemDef::duffing(0.5, -1.0, 1.0);
        let lin = linearize(&sys).unwrap();
        let cfg = mode_kernel_select(&lin, lin.eigenvalues[lambda_index], t, m).unwrap();
        XiEvaluator::new(sys, lin, cfg).unwrap()
    }

    #[test]
    fn mode_selection() {
        let sys = SystemDef::duffing(0.5, -1.0, 1.0);
        let lin = linearize(&sys).unwrap();
        let up = mode_kernel_select(&lin, 0.780776406404415, 5.0, 100).unwrap();
        assert_eq!(up.direction, Direction::Forward);
        let down = mode_kernel_select(&lin, -1.280776406404415, 5.0, 100).unwrap();
        assert_eq!(down.direction, Direction::Backward);
        assert!(mode_kernel_select(&lin, 0.0, 5.0, 100).is_err());
        assert!(matches!(
            mode_kernel_select(&lin, 0.5, 5.0, 100),
            Err(Error::UnknownEigenvalue(_))
        ));
    }

    #[test]
    fn equilibrium_and_linear_cases() {
        let ev = duffing_eval(0, 5.0, 500);
        assert_eq!(ev.xi_truncated(&[0.0, 0.0]).unwrap(), 0.0);
        let sys = SystemDef::linear_test(-1.0, 2.0);
        let lin = linearize(&sys).unwrap();
        let cfg = mode_kernel_select(&lin, 2.0, 3.0, 300).unwrap();
        let ev = XiEvaluator::new(sys, lin, cfg).unwrap();
        assert_eq!(ev.xi_truncated(&[0.3, -0.7]).unwrap(), -0.7);
        assert!(ev.koopman_residual_t(&[0.3, -0.7], 1e-5).unwrap().abs() < 1e-8);
    }

    #[test]
    fn gradient_at_equilibrium_is_anchor() {
        for idx in 0..2 {
            let ev = duffing_eval(idx, 3.0, 600);
            let g = ev.xi_gradient(&[0.0, 0.0], 1e-5).unwrap();
            for (gi, wi) in g.iter().zip(&ev.config().w) {
                assert!((gi - wi).abs() < 1e-4, "mode {idx}: {g:?}");
            }
        }
    }

    #[test]
    fn numerical_residual_tracks_theory() {
        let ev = duffing_eval(0, 4.0, 2000);
        for x in [[0.3, 0.1], [-0.5, 0.4]] {
            let num = ev.koopman_residual_t(&x, 1e-4).unwrap();
            let th = ev.residual_theory(&x).unwrap();
            assert!((num - th).abs() < 1e-4 * (1.0 + th.abs()), "{num} vs {th}");
        }
    }

    #[test]
    fn rank_one_kernel_is_outer_product() {
        let ev = Arc::new(duffing_eval(0, 3.0, 300));
        let k = rank_one_kernel(ev.clone());
        let (x, y) = ([0.2, -0.1], [-0.4, 0.3]);
        let expect = ev.xi_truncated(&x).unwrap() * ev.xi_truncated(&y).unwrap();
        assert_eq!(k.eval(&x, &y).unwrap(), expect);
        assert_eq!(k.eval(&x, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(k.eval(&x, &x).unwrap() >= 0.0);
    }
}
