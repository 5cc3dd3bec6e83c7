//! Baseline input-level defenses: simple random sampling and statistical
//! outlier removal. Both return order-preserving subsets; no coordinate is
//! ever modified. SOR doubles as the purifier's mandatory preprocessing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, PointCloud};
use crate::rng::{rng_from, sample_indices};
use crate::scalar::Real;

/// Baseline defense parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DefenseSpec {
    pub name: String,
    pub srs_drop_count: usize,
    pub sor_k: usize,
    pub sor_alpha: f64,
    pub seed: u64,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        Self {
            name: "sor".to_string(),
            // Half the default cloud; SOR parameters follow the common
            // statistical-outlier convention.
            srs_drop_count: 128,
            sor_k: 2,
            sor_alpha: 1.1,
            seed: 0,
        }
    }
}

/// Simple random sampling: removes `m` points uniformly without
/// replacement. Deterministic given `seed`.
pub fn srs<R: Real>(cloud: &PointCloud<R>, m: usize, seed: u64) -> Result<PointCloud<R>> {
    let n = cloud.len();
    if m >= n {
        return Err(Error::invalid(format!("cannot remove {m} of {n} points")));
    }
    if m == 0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng_from(seed);
    let removed = sample_indices(n, m, &mut rng);
    let mut is_removed = vec![false; n];
    for i in removed {
        is_removed[i] = true;
    }
    let points = cloud
        .points()
        .iter()
        .zip(&is_removed)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(points)
}

/// Statistical outlier removal: computes each point's mean distance to its
/// k nearest neighbors and removes points beyond mean + alpha * std of that
/// statistic. If the rule would empty the cloud, the input is returned
/// unchanged.
pub fn sor<R: Real>(cloud: &PointCloud<R>, k: usize, alpha: f64) -> Result<PointCloud<R>> {
    let n = cloud.len();
    if k < 1 || k >= n {
        return Err(Error::invalid(format!("sor k must satisfy 1 <= k <= N-1, got k={k}, N={n}")));
    }
    let d = sor_mean_distances(cloud, k)?;
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let threshold = mean + alpha * var.sqrt();
    let keep: Vec<bool> = d.iter().map(|&v| v <= threshold).collect();
    if keep.iter().all(|&k| !k) {
        return Ok(cloud.clone());
    }
    let points = cloud
        .points()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(points)
}

/// Per-point mean Euclidean distance to the k nearest neighbors; the
/// statistic SOR thresholds on. Exposed so tests can recompute the rule
/// independently.
pub fn sor_mean_distances<R: Real>(cloud: &PointCloud<R>, k: usize) -> Result<Vec<f64>> {
    let idx = knn_indices(cloud, k)?;
    Ok((0..cloud.len())
        .map(|i| {
            let p = cloud.point(i);
            idx.row(i)
                .iter()
                .map(|&j| {
                    let q = cloud.point(j);
                    (0..3)
                        .map(|d| (p[d].f64() - q[d].f64()).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / k as f64
        })
        .collect())
}
