//! Tensor-product collocation grids and the rectangular domains they live in.

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "domain bounds must have equal, nonzero length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter(
                "domain requires lower < upper on every axis".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (b - a))
            .collect()
    }

    /// True when `|x_k − center_k| > frac · half_width_k` on some axis.
    pub fn in_layer(&self, x: &[f64], frac: f64) -> bool {
        let c = self.center();
        let h = self.half_width();
        x.iter()
            .zip(c.iter().zip(&h))
            .any(|(xi, (ci, hi))| (xi - ci).abs() > frac * hi)
    }
}

/// Uniform tensor grid including both endpoints on each axis. The last axis
/// varies fastest.
pub fn uniform_grid(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    if lower.len() != upper.len() || lower.len() != counts.len() || lower.is_empty() {
        return Err(Error::InvalidParameter(
            "grid bounds and counts must have equal, nonzero length".into(),
        ));
    }
    if counts.iter().any(|&n| n < 2) {
        return Err(Error::InvalidParameter(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidParameter(
            "grid requires lower < upper on every axis".into(),
        ));
    }
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .zip(counts)
        .map(|((&a, &b), &n)| {
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        points.push(idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect());
        for k in (0..counts.len()).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(points)
}

/// Indices of points sitting at the per-axis minimum or maximum of the set.
pub fn trace_indices(points: &[Vec<f64>]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let d = points[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..points.len())
        .filter(|&i| (0..d).any(|k| points[i][k] == lo[k] || points[i][k] == hi[k]))
        .collect()
}

/// Indices of points in the boundary layer of `domain`.
pub fn layer_indices(points: &[Vec<f64>], domain: &Domain, frac: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| domain.in_layer(&points[i], frac))
        .collect()
}

/// Equal probability weights `1/N`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
