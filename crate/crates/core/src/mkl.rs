//! Multiple kernel learning over a convex combination of base kernels.
//!
//! For fixed mixture coefficients the inner problem in `α` is the quadratic
//! collocation objective, solved exactly. The outer problem over the mixture
//! parameters `θ` uses L-BFGS with gradients from the envelope theorem:
//!
//! ```text
//! ∂L/∂c_ℓ = (2/N)(Bα)ᵀ(B_ℓα) + 2μ_grad(G₀α − w)ᵀ(G₀,ℓα)
//! ```
//!
//! Without an L1 term `β = softmax(θ)`. With `λ_L1 > 0` the kernel is
//! `Σ u_ℓ k_ℓ` with `u = exp(θ)` unnormalized, the penalty is `λ_L1 Σ u_ℓ`, and
//! the reported weights are `β = u/Σu`. On the simplex `Σ|β| ≡ 1`, so the penalty
//! only has an effect on the unnormalized scale.

use std::sync::Arc;

use nalgebra::DVector;

use crate::dynamics::SystemDef;
use crate::error::{Error, Result};
use crate::kernels::{default_base_kernels, short_name, Kernel, KernelMixture, KernelSpec};
use crate::optim::{minimize, LbfgsConfig};
use crate::variational::{
    assemble_kernel, rescale_rmse, solve_assembled, Assembly, CollocationProblem, PenaltyConfig,
    Solution,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MklConfig {
    pub base_kernels: Vec<KernelSpec>,
    pub eta: f64,
    pub mu_grad: f64,
    pub lambda_l1: f64,
    pub tau: f64,
    pub optimizer: LbfgsConfig,
    /// Recorded for reproducibility; the optimizer starts from uniform
    /// weights and uses no randomness.
    pub seed: u64,
}

impl Default for MklConfig {
    fn default() -> Self {
        Self {
            base_kernels: default_base_kernels(),
            eta: 1e-8,
            mu_grad: 1e4,
            lambda_l1: 0.0,
            tau: 0.1,
            optimizer: LbfgsConfig {
                max_iter: 50,
                grad_tol: 1e-6,
                ..LbfgsConfig::default()
            },
            seed: 0,
        }
    }
}

impl MklConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_kernels.len() < 2 {
            return Err(Error::InvalidParameter(
                "kernel learning needs at least 2 base kernels".into(),
            ));
        }
        if !(self.tau >= 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold tau must lie in [0, 1), got {}",
                self.tau
            )));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::InvalidParameter(
                "lambda_l1 must be finite and >= 0".into(),
            ));
        }
        for k in &self.base_kernels {
            k.validate()?;
        }
        Ok(())
    }

    fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig {
            eta: self.eta,
            mu_grad: self.mu_grad,
            ..PenaltyConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MklDiagnostics {
    pub loss_trace: Vec<f64>,
    pub beta_trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// `Σ u_ℓ` before normalization (1 in softmax mode).
    pub raw_weight_sum: f64,
    pub rmse_rescaled: Option<f64>,
    pub pruned_rmse: Option<f64>,
    pub mode: &'static str,
}

#[derive(Debug, Clone)]
pub struct MklResult {
    pub kernels: Vec<KernelSpec>,
    pub beta: Vec<f64>,
    pub alpha: DVector<f64>,
    /// Thresholded weights, renormalized; empty when everything was pruned.
    pub pruned_beta: Vec<f64>,
    pub solution: Solution,
    pub diagnostics: MklDiagnostics,
}

impl MklResult {
    pub fn kernel_names(&self) -> Vec<String> {
        self.kernels.iter().map(short_name).collect()
    }

    /// The surviving mixture after [`sparsify`], if any.
    pub fn pruned_mixture(&self) -> Option<KernelMixture> {
        if self.pruned_beta.is_empty() {
            return None;
        }
        let (ks, bs): (Vec<KernelSpec>, Vec<f64>) = self
            .kernels
            .iter()
            .zip(&self.pruned_beta)
            .filter(|(_, &b)| b > 0.0)
            .map(|(k, &b)| (k.clone(), b))
            .unzip();
        KernelMixture::normalized(ks, &bs).ok()
    }
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct Objective<'a> {
    parts: &'a [Assembly],
    pen: PenaltyConfig,
    w: &'a [f64],
    lambda_l1: f64,
}

impl Objective<'_> {
    fn coeffs(&self, theta: &[f64]) -> Vec<f64> {
        if self.lambda_l1 > 0.0 {
            theta.iter().map(|t| t.exp()).collect()
        } else {
            softmax(theta)
        }
    }

    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let c = self.coeffs(theta);
        let asm = Assembly::combine(self.parts, &c);
        let (alpha, _) = solve_assembled(&asm, &self.pen, self.w)?;
        let n = asm.b.ncols() as f64;
        let r = &asm.b * &alpha;
        let mut ga = &asm.g0 * &alpha;
        for (g, wi) in ga.iter_mut().zip(self.w) {
            *g -= wi;
        }
        let mut loss = r.norm_squared() / n
            + self.pen.eta * alpha.norm_squared()
            + self.pen.mu_grad * ga.norm_squared();
        let mut dc: Vec<f64> = self
            .parts
            .iter()
            .map(|p| {
                2.0 / n * r.dot(&(&p.b * &alpha))
                    + 2.0 * self.pen.mu_grad * ga.dot(&(&p.g0 * &alpha))
            })
            .collect();
        let grad = if self.lambda_l1 > 0.0 {
            loss += self.lambda_l1 * c.iter().sum::<f64>();
            for d in &mut dc {
                *d += self.lambda_l1;
            }
            c.iter().zip(&dc).map(|(u, d)| u * d).collect()
        } else {
            let mean: f64 = c.iter().zip(&dc).map(|(b, d)| b * d).sum();
            c.iter().zip(&dc).map(|(b, d)| b * (d - mean)).collect()
        };
        Ok((loss, grad))
    }
}

/// Learns mixture weights and coefficients for the eigenfunction at `lambda`.
pub fn mkl_solve(
    system: &SystemDef,
    lambda: f64,
    points: &[Vec<f64>],
    cfg: &MklConfig,
) -> Result<MklResult> {
    cfg.validate()?;
    let pen = cfg.penalties();
    let uniform = KernelMixture::uniform(cfg.base_kernels.clone())?;
    let problem = CollocationProblem::with_left_eigenvector(
        system.clone(),
        lambda,
        uniform,
        points.to_vec(),
        pen.clone(),
    )?;
    let parts: Vec<Assembly> = cfg
        .base_kernels
        .iter()
        .map(|k| assemble_kernel(&problem, k))
        .collect::<Result<_>>()?;
    let obj = Objective {
        parts: &parts,
        pen: pen.clone(),
        w: &problem.anchor.target,
        lambda_l1: cfg.lambda_l1,
    };

    let theta0 = vec![0.0; cfg.base_kernels.len()];
    let report = minimize(|t| obj.eval(t), &theta0, &cfg.optimizer)?;
    if !report.f.is_finite() {
        return Err(Error::Divergence(format!("loss became {}", report.f)));
    }

    let to_beta = |theta: &[f64]| -> (Vec<f64>, f64) {
        let c = obj.coeffs(theta);
        let s: f64 = c.iter().sum();
        (c.iter().map(|v| v / s).collect(), s)
    };
    let beta_trace: Vec<Vec<f64>> = report.x_trace.iter().map(|t| to_beta(t).0).collect();
    let (beta, raw_sum) = to_beta(&report.x);
    let coeffs = obj.coeffs(&report.x);
    let asm = Assembly::combine(&parts, &coeffs);
    let (alpha_raw, jitter) = solve_assembled(&asm, &pen, &problem.anchor.target)?;
    // Σ u_ℓ k_ℓ = S Σ β_ℓ k_ℓ, so the simplex-weighted expansion carries S·α.
    let alpha = &alpha_raw * raw_sum;
    let mixture = KernelMixture::normalized(cfg.base_kernels.clone(), &beta)?;
    let solved_problem = CollocationProblem {
        kernel: Arc::new(mixture),
        ..problem.clone()
    };
    let solution = solved_problem.finish(alpha.clone(), jitter, &asm);

    let diagnostics = MklDiagnostics {
        loss_trace: report.loss_trace,
        beta_trace,
        iterations: report.iterations,
        converged: report.converged,
        grad_norm: report.grad_norm,
        raw_weight_sum: raw_sum,
        rmse_rescaled: solution.diagnostics.rmse_rescaled,
        pruned_rmse: None,
        mode: if cfg.lambda_l1 > 0.0 {
            "unnormalized-l1"
        } else {
            "softmax"
        },
    };
    let mut result = MklResult {
        kernels: cfg.base_kernels.clone(),
        beta,
        alpha,
        pruned_beta: Vec::new(),
        solution,
        diagnostics,
    };
    result.pruned_beta = prune(&result.beta, cfg.tau);
    Ok(result)
}

fn prune(beta: &[f64], tau: f64) -> Vec<f64> {
    let kept: Vec<f64> = beta
        .iter()
        .map(|&b| if b < tau { 0.0 } else { b })
        .collect();
    let s: f64 = kept.iter().sum();
    if s > 0.0 {
        kept.into_iter().map(|b| b / s).collect()
    } else {
        Vec::new()
    }
}

/// Zeroes weights below `tau` and renormalizes the survivors. An empty
/// `pruned_beta` means the pruned model is identically zero.
pub fn sparsify(result: &MklResult, tau: f64) -> MklResult {
    let mut out = result.clone();
    out.pruned_beta = prune(&result.beta, tau);
    out
}

/// Plain collocation solve with a pruned mixture.
pub fn refit_pruned(
    system: &SystemDef,
    lambda: f64,
    points: &[Vec<f64>],
    mixture: Option<KernelMixture>,
    penalties: PenaltyConfig,
) -> Result<Solution> {
    let mixture = mixture.ok_or_else(|| Error::Degenerate("pruned mixture is empty".into()))?;
    let problem = CollocationProblem::with_left_eigenvector(
        system.clone(),
        lambda,
        mixture,
        points.to_vec(),
        penalties,
    )?;
    problem.solve()
}

/// Rescaled RMSE of `solution` against the system's reference eigenfunction on `probes`.
pub fn reference_rmse(solution: &Solution, probes: &[Vec<f64>]) -> Result<f64> {
    let reference = solution
        .system
        .reference_for(solution.lambda)
        .ok_or_else(|| {
            Error::InvalidParameter("system has no reference eigenfunction for this lambda".into())
        })?;
    let learned = solution.evaluate(probes)?;
    let exact: Vec<f64> = probes.iter().map(|p| (reference.phi)(p)).collect();
    Ok(rescale_rmse(&learned, &exact)?.1)
}

/// Kernel handle shared by a [`Solution`]'s mixture, for callers that need
/// the learned kernel itself.
pub fn learned_kernel(result: &MklResult) -> Arc<dyn Kernel> {
    result.solution.kernel.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;

    #[test]
    fn prune_cases() {
        assert!(prune(&[1.0 / 11.0; 11], 0.1).is_empty());
        let b = [0.331, 0.378, 0.291, 0.0];
        let p = prune(&b, 0.1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[1] - 0.378).abs() < 1e-12);
        assert_eq!(prune(&[1.0, 0.0, 0.0], 0.1), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_is_on_simplex() {
        let b = softmax(&[0.3, -2.0, 5.0]);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(b.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn identical_kernels_split_evenly() {
        let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[7, 7]).unwrap();
        let cfg = MklConfig {
            base_kernels: vec![
                KernelSpec::polynomial(2, 0.5),
                KernelSpec::polynomial(2, 0.5),
            ],
            ..MklConfig::default()
        };
        let r = mkl_solve(&SystemDef::poly2d(-1.0, 3.0), -1.0, &pts, &cfg).unwrap();
        assert!((r.beta[0] - 0.5).abs() < 1e-12);
        let plain = CollocationProblem::with_left_eigenvector(
            SystemDef::poly2d(-1.0, 3.0),
            -1.0,
            KernelSpec::polynomial(2, 0.5),
            pts.clone(),
            PenaltyConfig::default(),
        )
        .unwrap()
        .solve()
        .unwrap();
        let a = r.solution.evaluate(&pts).unwrap();
        let b = plain.evaluate(&pts).unwrap();
        let diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn empty_refit_is_degenerate() {
        let r = refit_pruned(
            &SystemDef::poly2d(-1.0, 3.0),
            -1.0,
            &[vec![0.1, 0.1]],
            None,
            PenaltyConfig::default(),
        );
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }
}
