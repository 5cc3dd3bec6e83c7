//! The purifier's training objective: cross-entropy on the frozen victim
//! plus geometric consistency in data space and semantic consistency in
//! feature space. Gradients are with respect to the purified coordinates;
//! the clean branch is a constant target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_in, PointCloud};
use crate::nn::softmax_ce;
use crate::scalar::Real;
use crate::victims::Classifier;

/// Distance used by the geometric consistency term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoMetric {
    Chamfer,
    Hausdorff,
}

/// Total loss and its components.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown<R: Real> {
    pub total: R,
    pub ce: R,
    pub geo: R,
    pub sem: R,
}

/// Geometric consistency: one-sided Chamfer from purified to clean.
pub fn loss_geo<R: Real>(purified: &PointCloud<R>, clean: &PointCloud<R>) -> Result<R> {
    crate::geometry::chamfer_one_sided(purified, clean)
}

/// Geometric consistency with its gradient w.r.t. the purified coordinates.
/// The nearest-pair selection is treated as fixed (subgradient at ties).
pub fn loss_geo_grad<R: Real>(
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
) -> Result<(R, Vec<[R; 3]>)> {
    geo_with_grad(purified, clean, GeoMetric::Chamfer, false)
}

/// Geometric term for a configurable metric, optionally symmetric. For
/// Chamfer the symmetric form sums both directions; for Hausdorff it takes
/// the larger direction.
pub fn geo_with_grad<R: Real>(
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
    metric: GeoMetric,
    symmetric: bool,
) -> Result<(R, Vec<[R; 3]>)> {
    if purified.is_empty() || clean.is_empty() {
        return Err(Error::invalid("geometric loss requires nonempty clouds"));
    }
    let n_p = purified.len();
    let mut grad = vec![[R::zero(); 3]; n_p];

    let forward: Vec<(usize, f64)> = purified
        .points()
        .iter()
        .map(|p| nearest_in(clean, *p))
        .collect();

    let loss = match metric {
        GeoMetric::Chamfer => {
            let scale = R::of(2.0 / n_p as f64);
            for (i, (j, _)) in forward.iter().enumerate() {
                let p = purified.point(i);
                let c = clean.point(*j);
                for d in 0..3 {
                    grad[i][d] += scale * (p[d] - c[d]);
                }
            }
            let mut loss =
                R::of(forward.iter().map(|(_, d)| *d).sum::<f64>() / n_p as f64);
            if symmetric {
                let scale = R::of(2.0 / clean.len() as f64);
                let mut back_sum = 0.0;
                for c in clean.points() {
                    let (j, dist) = nearest_in(purified, *c);
                    back_sum += dist;
                    let p = purified.point(j);
                    for d in 0..3 {
                        grad[j][d] += scale * (p[d] - c[d]);
                    }
                }
                loss = loss + R::of(back_sum / clean.len() as f64);
            }
            loss
        }
        GeoMetric::Hausdorff => {
            let (fwd_arg, fwd_max) = forward
                .iter()
                .enumerate()
                .fold((0usize, 0.0f64), |acc, (i, (_, d))| {
                    if *d > acc.1 {
                        (i, *d)
                    } else {
                        acc
                    }
                });
            let mut backward_best: Option<(usize, usize, f64)> = None;
            if symmetric {
                for (ci, c) in clean.points().iter().enumerate() {
                    let (j, dist) = nearest_in(purified, *c);
                    if backward_best.map_or(true, |(_, _, b)| dist > b) {
                        backward_best = Some((ci, j, dist));
                    }
                }
            }
            match backward_best {
                Some((ci, j, back_max)) if back_max > fwd_max => {
                    let p = purified.point(j);
                    let c = clean.point(ci);
                    for d in 0..3 {
                        grad[j][d] = R::of(2.0) * (p[d] - c[d]);
                    }
                    R::of(back_max)
                }
                _ => {
                    let p = purified.point(fwd_arg);
                    let c = clean.point(forward[fwd_arg].0);
                    for d in 0..3 {
                        grad[fwd_arg][d] = R::of(2.0) * (p[d] - c[d]);
                    }
                    R::of(fwd_max)
                }
            }
        }
    };
    Ok((loss, grad))
}

/// Semantic consistency: mean squared error between the victim's global
/// features of the purified and clean clouds.
pub fn loss_sem<R: Real>(
    victim: &dyn Classifier<R>,
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
) -> Result<R> {
    let (_, f_clean) = victim.forward(clean)?;
    let (_, f_pur) = victim.forward(purified)?;
    Ok(feature_mse(&f_pur, &f_clean))
}

fn feature_mse<R: Real>(a: &[R], b: &[R]) -> R {
    let d = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum();
    R::of(sum / d)
}

/// Semantic consistency with its gradient w.r.t. the purified coordinates.
/// The gradient flows through the frozen victim into the purified branch
/// only.
pub fn loss_sem_grad<R: Real>(
    victim: &dyn Classifier<R>,
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
) -> Result<(R, Vec<[R; 3]>)> {
    let (_, f_clean) = victim.forward(clean)?;
    let num_classes = victim.num_classes();
    let mut sem = R::zero();
    let back = victim.forward_backward_input(purified, &mut |_, feature| {
        sem = feature_mse(feature, &f_clean);
        let scale = R::of(2.0 / feature.len() as f64);
        let d_feature = feature
            .iter()
            .zip(f_clean.iter())
            .map(|(f, c)| scale * (*f - *c))
            .collect();
        (vec![R::zero(); num_classes], d_feature)
    })?;
    Ok((sem, back.input_grad))
}

/// Full objective: CE + alpha * geo + beta * sem, returning all components.
pub fn loss_total<R: Real>(
    victim: &dyn Classifier<R>,
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
    label: usize,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown<R>> {
    let (_, f_clean) = victim.forward(clean)?;
    let (logits, f_pur) = victim.forward(purified)?;
    let (ce, _) = softmax_ce(&logits, label);
    let geo = loss_geo(purified, clean)?;
    let sem = feature_mse(&f_pur, &f_clean);
    Ok(assemble(ce, geo, sem, alpha, beta))
}

fn assemble<R: Real>(ce: R, geo: R, sem: R, alpha: f64, beta: f64) -> LossBreakdown<R> {
    LossBreakdown { total: ce + R::of(alpha) * geo + R::of(beta) * sem, ce, geo, sem }
}

/// Full objective with its gradient w.r.t. the purified coordinates. One
/// fused victim pass carries both the CE and semantic upstreams.
pub fn loss_total_grad<R: Real>(
    victim: &dyn Classifier<R>,
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
    label: usize,
    alpha: f64,
    beta: f64,
) -> Result<(LossBreakdown<R>, Vec<[R; 3]>)> {
    let (_, f_clean) = victim.forward(clean)?;
    loss_total_grad_with(
        victim,
        purified,
        clean,
        &f_clean,
        label,
        alpha,
        beta,
        GeoMetric::Chamfer,
        false,
    )
}

/// As [`loss_total_grad`] but with a precomputed clean feature and a
/// configurable geometric metric; the trainer's inner loop.
#[allow(clippy::too_many_arguments)]
pub fn loss_total_grad_with<R: Real>(
    victim: &dyn Classifier<R>,
    purified: &PointCloud<R>,
    clean: &PointCloud<R>,
    f_clean: &[R],
    label: usize,
    alpha: f64,
    beta: f64,
    metric: GeoMetric,
    symmetric: bool,
) -> Result<(LossBreakdown<R>, Vec<[R; 3]>)> {
    if label >= victim.num_classes() {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let beta_r = R::of(beta);
    let mut ce = R::zero();
    let mut sem = R::zero();
    let back = victim.forward_backward_input(purified, &mut |logits, feature| {
        let (l, d_logits) = softmax_ce(logits, label);
        ce = l;
        sem = feature_mse(feature, f_clean);
        let scale = beta_r * R::of(2.0 / feature.len() as f64);
        let d_feature = feature
            .iter()
            .zip(f_clean.iter())
            .map(|(f, c)| scale * (*f - *c))
            .collect();
        (d_logits, d_feature)
    })?;

    let (geo, geo_grad) = geo_with_grad(purified, clean, metric, symmetric)?;
    let alpha_r = R::of(alpha);
    let mut grad = back.input_grad;
    for (g, gg) in grad.iter_mut().zip(geo_grad.iter()) {
        for d in 0..3 {
            g[d] += alpha_r * gg[d];
        }
    }
    Ok((assemble(ce, geo, sem, alpha, beta), grad))
}
