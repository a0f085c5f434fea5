//! Weighted Mercer decomposition on a grid and two eigen-oracles: finite-rank
//! mode recovery and the trajectory integral `∫₀^T e^{−λt} φ(s_{−t}(x)) dt`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::dynamics::{escaped, Rk4Stepper, SystemDef, DEFAULT_ESCAPE_RADIUS};
use crate::error::{Error, Result};
use crate::kernels::{gram, Kernel};

const CLIP_REL: f64 = 1e-8;
const WARN_REL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct MercerDecomposition {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `modes[n][i] = ψ_n(x_i)`, orthonormal under `Σ w_i u_i v_i`.
    pub modes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Most negative eigenvalue before clipping, relative to `μ₁`.
    pub min_relative_eigenvalue: f64,
    pub warnings: Vec<String>,
}

impl MercerDecomposition {
    /// `Σ μ_n ψ_n(x_i) ψ_n(x_j)` over the first `k` modes.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let n = self.weights.len();
        let mut m = DMatrix::zeros(n, n);
        for (mu, psi) in self.eigenvalues.iter().zip(&self.modes).take(k) {
            let v = DVector::from_column_slice(psi);
            m += &v * v.transpose() * *mu;
        }
        m
    }

    /// `max |⟨ψ_i, ψ_j⟩_w − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.modes.len() {
            for j in 0..=i {
                let ip: f64 = (0..self.weights.len())
                    .map(|k| self.weights[k] * self.modes[i][k] * self.modes[j][k])
                    .sum();
                worst = worst.max((ip - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "quadrature weights must be positive".into(),
        ));
    }
    Ok(())
}

/// Decomposes `W^{1/2} K W^{1/2}` and maps eigenvectors back by `W^{−1/2}`.
pub fn mercer_from_matrix(k: &DMatrix<f64>, weights: &[f64]) -> Result<MercerDecomposition> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: k.ncols(),
        });
    }
    check_weights(weights, n)?;
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = sq[i] * 0.5 * (k[(i, j)] + k[(j, i)]) * sq[j];
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mu1 = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let scale = mu1.abs();
    let mut warnings = Vec::new();
    let min = order.last().map_or(0.0, |&i| eig.eigenvalues[i]);
    let min_rel = if scale > 0.0 { min / scale } else { 0.0 };
    if min_rel < -WARN_REL {
        warnings.push(format!(
            "indefinite kernel: eigenvalue {min:e} is {min_rel:e} relative to the top"
        ));
    }
    let mut eigenvalues = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for &i in &order {
        let mut mu = eig.eigenvalues[i];
        if mu < 0.0 && mu >= -CLIP_REL * scale {
            mu = 0.0;
        }
        eigenvalues.push(mu);
        modes.push((0..n).map(|r| eig.eigenvectors[(r, i)] / sq[r]).collect());
    }
    Ok(MercerDecomposition {
        eigenvalues,
        modes,
        weights: weights.to_vec(),
        min_relative_eigenvalue: min_rel,
        warnings,
    })
}

pub fn mercer_decompose(
    kernel: &dyn Kernel,
    grid: &[Vec<f64>],
    weights: &[f64],
) -> Result<MercerDecomposition> {
    check_weights(weights, grid.len())?;
    let g = gram(kernel, grid)?;
    mercer_from_matrix(&g.values, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCheckReport {
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    /// `max_n |μ_n − 1|` over the top `m` and `max |μ_n|` beyond.
    pub max_deviation: f64,
    /// Largest principal angle between the top `m` modes and the input span.
    pub subspace_angle: f64,
}

/// Modified Gram–Schmidt (two passes) under `⟨u, v⟩_w`.
pub fn weighted_orthonormalize(vectors: &[Vec<f64>], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    };
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        let mut u = v.clone();
        let norm0 = ip(&u, &u).sqrt();
        for _ in 0..2 {
            for qj in &q {
                let c = ip(qj, &u);
                for (ui, qi) in u.iter_mut().zip(qj) {
                    *ui -= c * qi;
                }
            }
        }
        let norm = ip(&u, &u).sqrt();
        if !(norm > 1e-10 * norm0.max(f64::MIN_POSITIVE)) || norm0 == 0.0 {
            return Err(Error::Degenerate(format!(
                "eigenfunction {idx} is linearly dependent on the grid"
            )));
        }
        q.push(u.into_iter().map(|x| x / norm).collect());
    }
    Ok(q)
}

/// Builds `K = Σ φ_j φ_jᵀ` from orthonormalized inputs and checks its
/// weighted spectrum is `{1 (×m), 0, …}`.
pub fn koopman_mode_check(eigenfunctions: &[Vec<f64>], weights: &[f64]) -> Result<ModeCheckReport> {
    let n = weights.len();
    for v in eigenfunctions {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let m = eigenfunctions.len();
    if m > n {
        return Err(Error::InvalidParameter(format!(
            "{m} functions exceed the {n} grid points"
        )));
    }
    let q = weighted_orthonormalize(eigenfunctions, weights)?;
    let mut k = DMatrix::zeros(n, n);
    for qi in &q {
        let v = DVector::from_column_slice(qi);
        k += &v * v.transpose();
    }
    let dec = mercer_from_matrix(&k, weights)?;
    let mut dev = 0.0_f64;
    for (i, mu) in dec.eigenvalues.iter().enumerate() {
        let target = if i < m { 1.0 } else { 0.0 };
        dev = dev.max((mu - target).abs());
    }
    // sin θ_max = ‖(I − P_Q) Ψ‖ in the weighted norm, Ψ the top m modes.
    let mut angle = 0.0_f64;
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    };
    for psi in dec.modes.iter().take(m) {
        let mut r = psi.clone();
        for qi in &q {
            let c = ip(qi, psi);
            for (ri, qv) in r.iter_mut().zip(qi) {
                *ri -= c * qv;
            }
        }
        angle = angle.max(ip(&r, &r).sqrt().min(1.0).asin());
    }
    Ok(ModeCheckReport {
        m,
        eigenvalues: dec.eigenvalues,
        max_deviation: dev,
        subspace_angle: angle,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenrelationReport {
    /// `max |(Kφ)(x)·2λ/φ(x) − 1|` over retained probes.
    pub max_deviation: f64,
    pub deviations: Vec<Option<f64>>,
    pub excluded: usize,
    /// `e^{−2λT}`, the relative size of the neglected tail.
    pub truncation_bound: f64,
}

/// `(Kφ)(x) = ∫₀^T e^{−λt} φ(s_{−t}(x)) dt` by the midpoint rule on `M`
/// RK4 steps, compared against `φ(x)/(2λ)`.
pub fn trajectory_eigenrelation_check(
    system: &SystemDef,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    lambda: f64,
    probes: &[Vec<f64>],
    horizon: f64,
    steps: usize,
) -> Result<EigenrelationReport> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::InvalidParameter(
            "horizon and steps must be positive".into(),
        ));
    }
    let dt = horizon / steps as f64;
    let results: Vec<Result<Option<f64>>> = probes
        .par_iter()
        .map(|x| {
            let phi0 = phi(x);
            if phi0.abs() < 1e-8 {
                return Ok(None);
            }
            let mut stepper = Rk4Stepper::new(system);
            let mut xk = x.clone();
            let mut xn = x.clone();
            let mut mid = x.clone();
            let mut acc = 0.0;
            for k in 0..steps {
                xn.copy_from_slice(&xk);
                stepper.step(&mut xn, -dt);
                if escaped(&xn, DEFAULT_ESCAPE_RADIUS) {
                    return Err(Error::Inconclusive(format!(
                        "backward flow from {x:?} left radius {DEFAULT_ESCAPE_RADIUS:e} at t = {}",
                        (k + 1) as f64 * dt
                    )));
                }
                for i in 0..mid.len() {
                    mid[i] = 0.5 * (xk[i] + xn[i]);
                }
                acc += (-lambda * (k as f64 + 0.5) * dt).exp() * phi(&mid);
                std::mem::swap(&mut xk, &mut xn);
            }
            Ok(Some((acc * dt * 2.0 * lambda / phi0 - 1.0).abs()))
        })
        .collect();
    let deviations: Vec<Option<f64>> = results.into_iter().collect::<Result<_>>()?;
    let excluded = deviations.iter().filter(|d| d.is_none()).count();
    if excluded == deviations.len() {
        return Err(Error::Inconclusive("every probe has |phi| < 1e-8".into()));
    }
    let max_deviation = deviations.iter().flatten().copied().fold(0.0, f64::max);
    Ok(EigenrelationReport {
        max_deviation,
        deviations,
        excluded,
        truncation_bound: (-2.0 * lambda * horizon).exp(),
    })
}
