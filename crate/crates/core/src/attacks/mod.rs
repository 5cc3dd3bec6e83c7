//! White-box untargeted attacks covering the three strategies: shifting
//! (PGD, IFGM, C&W perturb, kNN-constrained perturb), dropping (saliency
//! drop), and adding (points or clusters). Every attack is a pure function
//! of (model parameters, example, spec, seed).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{store_pairs, DatasetSplit, LabeledCloud, PairRecord};
use crate::error::{Error, Result};
use crate::geometry::{knn_indices, PointCloud};
use crate::nn::argmax;
use crate::rng::{derive_seed, rng_from, sample_indices};
use crate::scalar::Real;
use crate::victims::{ce_input_backward, Classifier};

/// Attack hyperparameters. `extras` carries attack-specific knobs such as
/// the C&W trade-off `lambda`, the kNN penalty `gamma`, or drop/add counts.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AttackSpec {
    pub name: String,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl AttackSpec {
    pub fn extra(&self, key: &str, default: f64) -> f64 {
        self.extras.get(key).copied().unwrap_or(default)
    }

    fn with_extras(name: &str, epsilon: f64, steps: usize, step_size: f64, extras: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            epsilon,
            steps,
            step_size,
            extras: extras.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Default budgets, tuned so the toy victims fail hard without a defense.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "pgd" => Self::with_extras("pgd", 0.05, 50, 0.01, &[]),
            "ifgm" => Self::with_extras("ifgm", 0.8, 50, 0.032, &[]),
            "perturb" => Self::with_extras("perturb", 0.0, 100, 0.01, &[("lambda", 1.0)]),
            "knn" => Self::with_extras(
                "knn",
                0.0,
                100,
                0.01,
                &[("lambda", 1.0), ("gamma", 5.0), ("k_c", 5.0)],
            ),
            "drop" => Self::with_extras("drop", 0.0, 5, 0.0, &[("drop_count", 50.0), ("rounds", 5.0)]),
            "add" => Self::with_extras("add", 0.0, 100, 0.01, &[("lambda", 1.0), ("add_count", 32.0)]),
            "cluster" => Self::with_extras(
                "cluster",
                0.0,
                100,
                0.01,
                &[
                    ("lambda", 1.0),
                    ("add_count", 32.0),
                    ("clusters", 4.0),
                    ("cluster_radius", 0.05),
                    ("compactness", 1.0),
                ],
            ),
            other => return Err(Error::invalid(format!("unknown attack {other:?}"))),
        })
    }

    /// The standard benchmark set, in table order.
    pub fn standard_set() -> Vec<AttackSpec> {
        ["add", "cluster", "perturb", "knn", "ifgm", "pgd", "drop"]
            .iter()
            .map(|n| Self::default_for(n).expect("known name"))
            .collect()
    }
}

/// Outcome of one attack run. `success` means the victim misclassifies the
/// returned cloud.
#[derive(Clone, Debug)]
pub struct AttackResult<R: Real> {
    pub adversarial: PointCloud<R>,
    pub success: bool,
    pub iterations_used: usize,
}

fn misclassifies<R: Real>(
    model: &dyn Classifier<R>,
    cloud: &PointCloud<R>,
    label: usize,
) -> Result<bool> {
    let (logits, _) = model.forward(cloud)?;
    Ok(argmax(&logits) != label)
}

fn finish<R: Real>(
    model: &dyn Classifier<R>,
    adversarial: PointCloud<R>,
    label: usize,
    iterations_used: usize,
) -> Result<AttackResult<R>> {
    let success = misclassifies(model, &adversarial, label)?;
    Ok(AttackResult { adversarial, success, iterations_used })
}

#[inline]
fn sign<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::one()
    } else if x < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}

/// L-infinity projected gradient ascent on the cross-entropy, starting from
/// the clean cloud. Each coordinate displacement is clamped to [-eps, eps].
pub fn attack_pgd<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
) -> Result<AttackResult<R>> {
    let clean = example.cloud.points();
    let eps = R::of(spec.epsilon);
    let alpha = R::of(spec.step_size);
    let mut current = clean.to_vec();
    for _ in 0..spec.steps {
        let cloud = PointCloud::new(current)?;
        let (_, back) = ce_input_backward(model, &cloud, example.label)?;
        current = cloud.into_points();
        for (i, g) in back.input_grad.iter().enumerate() {
            for d in 0..3 {
                let stepped = current[i][d] + alpha * sign(g[d]);
                let delta = (stepped - clean[i][d]).max(-eps).min(eps);
                current[i][d] = clean[i][d] + delta;
            }
        }
    }
    finish(model, PointCloud::new(current)?, example.label, spec.steps)
}

/// L2 iterative gradient method: normalized-gradient steps with projection
/// of the full N x 3 displacement onto the eps ball. Zero-gradient steps are
/// skipped.
pub fn attack_ifgm<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
) -> Result<AttackResult<R>> {
    let clean = example.cloud.points();
    let eps = spec.epsilon;
    let alpha = R::of(spec.step_size);
    let mut current = clean.to_vec();
    for _ in 0..spec.steps {
        let cloud = PointCloud::new(current)?;
        let (_, back) = ce_input_backward(model, &cloud, example.label)?;
        current = cloud.into_points();
        let norm = back
            .input_grad
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 {
            continue;
        }
        let scale = alpha / R::of(norm);
        for (p, g) in current.iter_mut().zip(back.input_grad.iter()) {
            for d in 0..3 {
                p[d] += scale * g[d];
            }
        }
        // Project the total displacement onto the L2 ball.
        let disp: f64 = current
            .iter()
            .zip(clean.iter())
            .flat_map(|(p, c)| (0..3).map(move |d| (p[d] - c[d]).f64().powi(2)))
            .sum::<f64>()
            .sqrt();
        if disp > eps {
            let shrink = R::of(eps / disp);
            for (p, c) in current.iter_mut().zip(clean.iter()) {
                for d in 0..3 {
                    p[d] = c[d] + (p[d] - c[d]) * shrink;
                }
            }
        }
    }
    finish(model, PointCloud::new(current)?, example.label, spec.steps)
}

/// Margin loss max(z_true - max_{j != true} z_j, -kappa) with kappa = 0;
/// gradient is zero once the victim is fooled.
fn margin_upstream<R: Real>(logits: &[R], label: usize) -> Vec<R> {
    let mut d = vec![R::zero(); logits.len()];
    let mut runner_up = None;
    for (j, &z) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        if runner_up.map_or(true, |r: usize| z > logits[r]) {
            runner_up = Some(j);
        }
    }
    let ru = runner_up.expect("at least two classes");
    if logits[label] - logits[ru] > R::zero() {
        d[label] = R::one();
        d[ru] = -R::one();
    }
    d
}

fn delta_sqnorm<R: Real>(current: &[[R; 3]], clean: &[[R; 3]]) -> f64 {
    current
        .iter()
        .zip(clean.iter())
        .flat_map(|(p, c)| (0..3).map(move |d| (p[d] - c[d]).f64().powi(2)))
        .sum()
}

/// Shared first-order loop for the C&W perturb attack and its
/// kNN-constrained variant (`gamma > 0` adds the local-compactness
/// penalty, neighbors recomputed every step).
fn cw_shift_loop<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
    gamma: f64,
    k_c: usize,
) -> Result<AttackResult<R>> {
    let clean = example.cloud.points();
    let n = clean.len();
    let label = example.label;
    let lambda = R::of(spec.extra("lambda", 1.0));
    let alpha = R::of(spec.step_size);
    let two = R::of(2.0);

    let mut current = clean.to_vec();
    // Best = smallest-displacement successful iterate seen so far.
    let mut best: Option<(f64, Vec<[R; 3]>)> = None;

    for _ in 0..spec.steps {
        let cloud = PointCloud::new(current.clone())?;
        let feature_dim = model.feature_dim();
        let back = model.forward_backward_input(&cloud, &mut |logits, _| {
            (margin_upstream(logits, label), vec![R::zero(); feature_dim])
        })?;
        if argmax(&back.logits) != label {
            let sq = delta_sqnorm(&current, clean);
            if best.as_ref().map_or(true, |(b, _)| sq < *b) {
                best = Some((sq, current.clone()));
            }
        }

        let mut grad = back.input_grad;
        for (g, (p, c)) in grad.iter_mut().zip(current.iter().zip(clean.iter())) {
            for d in 0..3 {
                g[d] += two * lambda * (p[d] - c[d]);
            }
        }
        if gamma > 0.0 {
            let idx = knn_indices(&cloud, k_c)?;
            let coeff = R::of(2.0 * gamma / (n as f64 * k_c as f64));
            for (i, row) in idx.rows().enumerate() {
                for &j in row {
                    for d in 0..3 {
                        let diff = current[i][d] - current[j][d];
                        grad[i][d] += coeff * diff;
                        grad[j][d] -= coeff * diff;
                    }
                }
            }
        }
        for (p, g) in current.iter_mut().zip(grad.iter()) {
            for d in 0..3 {
                p[d] -= alpha * g[d];
            }
        }
    }

    // Final iterate competes too.
    let final_cloud = PointCloud::new(current.clone())?;
    if misclassifies(model, &final_cloud, label)? {
        let sq = delta_sqnorm(&current, clean);
        if best.as_ref().map_or(true, |(b, _)| sq < *b) {
            best = Some((sq, current));
        }
    }
    let chosen = match best {
        Some((_, pts)) => PointCloud::new(pts)?,
        None => final_cloud,
    };
    finish(model, chosen, label, spec.steps)
}

/// C&W-style point shifting: minimizes margin loss + lambda * |delta|^2,
/// returning the smallest-norm successful iterate (else the final one).
pub fn attack_perturb_cw<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
) -> Result<AttackResult<R>> {
    cw_shift_loop(model, example, spec, 0.0, 1)
}

/// Perturb with an additional kNN mean-squared-distance penalty weighted by
/// `gamma`, encouraging local compactness of the adversarial cloud.
pub fn attack_knn_constrained<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
) -> Result<AttackResult<R>> {
    let gamma = spec.extra("gamma", 5.0);
    let k_c = spec.extra("k_c", 5.0) as usize;
    if k_c < 1 || k_c >= example.cloud.len() {
        return Err(Error::invalid(format!("k_c {k_c} out of range")));
    }
    cw_shift_loop(model, example, spec, gamma, k_c)
}

/// Saliency-driven point removal over several rounds. Saliency of point i
/// is -<grad_i, x_i - centroid>: positive when moving the point toward the
/// centroid increases the loss.
pub fn attack_drop<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
) -> Result<AttackResult<R>> {
    let n = example.cloud.len();
    let m = spec.extra("drop_count", 50.0) as usize;
    if m >= n {
        return Err(Error::invalid(format!("cannot drop {m} of {n} points")));
    }
    if m == 0 {
        return finish(model, example.cloud.clone(), example.label, 0);
    }
    let rounds = (spec.extra("rounds", 5.0) as usize).max(1).min(m);
    let base = m / rounds;
    let extra = m % rounds;

    // Points carry their original indices so the output stays an
    // order-preserving subset of the input.
    let mut alive: Vec<(usize, [R; 3])> = example
        .cloud
        .points()
        .iter()
        .copied()
        .enumerate()
        .collect();

    for round in 0..rounds {
        let drop_now = base + usize::from(round < extra);
        if drop_now == 0 {
            continue;
        }
        let cloud = PointCloud::new(alive.iter().map(|(_, p)| *p).collect())?;
        let centroid = cloud.centroid();
        let (_, back) = ce_input_backward(model, &cloud, example.label)?;
        let mut saliency: Vec<(f64, usize)> = back
            .input_grad
            .iter()
            .zip(cloud.points())
            .enumerate()
            .map(|(i, (g, p))| {
                let s = -(g[0].f64() * (p[0].f64() - centroid[0])
                    + g[1].f64() * (p[1].f64() - centroid[1])
                    + g[2].f64() * (p[2].f64() - centroid[2]));
                (s, i)
            })
            .collect();
        saliency.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut doomed: Vec<usize> = saliency[..drop_now].iter().map(|&(_, i)| i).collect();
        doomed.sort_unstable_by(|a, b| b.cmp(a));
        for i in doomed {
            alive.remove(i);
        }
    }

    let result = PointCloud::new(alive.into_iter().map(|(_, p)| p).collect())?;
    finish(model, result, example.label, rounds)
}

/// Point/cluster insertion: new points start at randomly chosen existing
/// point locations (clusters scatter within `cluster_radius` around their
/// centers) and only the new points are optimized with the C&W objective.
/// Original points are bit-unchanged and come first in the output.
pub fn attack_add<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AttackResult<R>> {
    let n = example.cloud.len();
    let label = example.label;
    let m = spec.extra("add_count", 32.0) as usize;
    if m < 1 {
        return Err(Error::invalid("add_count must be at least 1"));
    }
    let cluster_mode = spec.name == "cluster" || spec.extras.contains_key("clusters");
    let lambda = R::of(spec.extra("lambda", 1.0));
    let alpha = R::of(spec.step_size);
    let compactness = R::of(spec.extra("compactness", 1.0));
    let two = R::of(2.0);

    let mut rng = rng_from(seed);
    let (init, cluster_size) = if cluster_mode {
        let mu = spec.extra("clusters", 4.0) as usize;
        if mu < 1 || m % mu != 0 {
            return Err(Error::invalid(format!(
                "cluster count {mu} must divide add_count {m}"
            )));
        }
        let nu = m / mu;
        let radius = spec.extra("cluster_radius", 0.05);
        let centers = sample_indices(n, mu.min(n), &mut rng);
        let mut pts = Vec::with_capacity(m);
        for c in 0..mu {
            let center = example.cloud.point(centers[c % centers.len()]);
            for _ in 0..nu {
                let dir: [f64; 3] = std::array::from_fn(|_| crate::rng::normal(&mut rng));
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let r = radius * rand::Rng::gen::<f64>(&mut rng).cbrt();
                pts.push(std::array::from_fn(|d| {
                    center[d] + R::of(dir[d] / norm * r)
                }));
            }
        }
        (pts, nu)
    } else {
        let chosen = sample_indices(n, m.min(n), &mut rng);
        let pts = (0..m)
            .map(|i| example.cloud.point(chosen[i % chosen.len()]))
            .collect();
        (pts, 0)
    };

    let mut added = init.clone();
    for _ in 0..spec.steps {
        let mut all = example.cloud.points().to_vec();
        all.extend_from_slice(&added);
        let cloud = PointCloud::new(all)?;
        let feature_dim = model.feature_dim();
        let back = model.forward_backward_input(&cloud, &mut |logits, _| {
            (margin_upstream(logits, label), vec![R::zero(); feature_dim])
        })?;

        let mut grad: Vec<[R; 3]> = back.input_grad[n..].to_vec();
        for (g, (y, y0)) in grad.iter_mut().zip(added.iter().zip(init.iter())) {
            for d in 0..3 {
                g[d] += two * lambda * (y[d] - y0[d]);
            }
        }
        if cluster_mode {
            // d/dy_i of mean-over-clusters mean-squared distance to the
            // cluster centroid is (2 / (mu * nu)) (y_i - centroid).
            let mu = m / cluster_size;
            let scale = two * compactness / R::of((mu * cluster_size) as f64);
            for c in 0..mu {
                let members = &added[c * cluster_size..(c + 1) * cluster_size];
                let mut centroid = [R::zero(); 3];
                for y in members {
                    for d in 0..3 {
                        centroid[d] += y[d];
                    }
                }
                for d in 0..3 {
                    centroid[d] = centroid[d] / R::of(cluster_size as f64);
                }
                for (slot, y) in members.iter().enumerate() {
                    for d in 0..3 {
                        grad[c * cluster_size + slot][d] += scale * (y[d] - centroid[d]);
                    }
                }
            }
        }
        for (y, g) in added.iter_mut().zip(grad.iter()) {
            for d in 0..3 {
                y[d] -= alpha * g[d];
            }
        }
    }

    let mut all = example.cloud.points().to_vec();
    all.extend_from_slice(&added);
    finish(model, PointCloud::new(all)?, label, spec.steps)
}

/// Dispatches by spec name. The seed feeds attacks with random
/// initialization (add/cluster); the others are deterministic already.
pub fn run_attack<R: Real>(
    model: &dyn Classifier<R>,
    example: &LabeledCloud<R>,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AttackResult<R>> {
    match spec.name.as_str() {
        "pgd" => attack_pgd(model, example, spec),
        "ifgm" => attack_ifgm(model, example, spec),
        "perturb" => attack_perturb_cw(model, example, spec),
        "knn" => attack_knn_constrained(model, example, spec),
        "drop" => attack_drop(model, example, spec),
        "add" | "cluster" => attack_add(model, example, spec, seed),
        other => Err(Error::invalid(format!("unknown attack {other:?}"))),
    }
}

/// Per-attack generation statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackStats {
    pub count: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttackSetSummary {
    pub per_attack: BTreeMap<String, AttackStats>,
}

/// Runs every example x spec, persisting one pair record each. Per-example
/// seeds derive from (master seed, attack name, example id), so reruns are
/// byte-identical. Progress is persisted after each spec.
pub fn generate_attack_set<R: Real>(
    model: &dyn Classifier<R>,
    split: &DatasetSplit<R>,
    specs: &[AttackSpec],
    store_path: &Path,
    master_seed: u64,
) -> Result<AttackSetSummary> {
    let mut summary = AttackSetSummary::default();
    for spec in specs {
        let results: Vec<(PairRecord<R>, bool)> = split
            .examples
            .par_iter()
            .map(|ex| {
                let seed = derive_seed(master_seed, &[&spec.name, &ex.example_id]);
                let res = run_attack(model, ex, spec, seed)?;
                let record = PairRecord {
                    example_id: ex.example_id.clone(),
                    attack_name: spec.name.clone(),
                    victim_name: model.name().to_string(),
                    clean: ex.cloud.clone(),
                    adversarial: res.adversarial,
                    label: ex.label,
                };
                Ok((record, res.success))
            })
            .collect::<Result<Vec<_>>>()?;
        let successes = results.iter().filter(|(_, s)| *s).count();
        let records: Vec<PairRecord<R>> = results.into_iter().map(|(r, _)| r).collect();
        store_pairs(store_path, &records)?;
        summary.per_attack.insert(
            spec.name.clone(),
            AttackStats {
                count: records.len(),
                success_rate: successes as f64 / records.len().max(1) as f64,
            },
        );
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victims::PointNetMini;
    use crate::Cloud;
    use rand::Rng;

    fn toy_example(n: usize, seed: u64) -> LabeledCloud<f64> {
        let mut rng = rng_from(seed);
        let pts = (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        LabeledCloud {
            cloud: PointCloud::new(pts).unwrap(),
            label: 1,
            example_id: format!("toy-{seed}"),
        }
    }

    fn toy_model(seed: u64) -> PointNetMini<f64> {
        PointNetMini::custom(&[3, 16, 16], &[16, 4], crate::nn::Act::Gelu, seed)
    }

    #[test]
    fn pgd_zero_budget_is_identity() {
        let model = toy_model(1);
        let ex = toy_example(12, 2);
        let mut spec = AttackSpec::default_for("pgd").unwrap();
        spec.epsilon = 0.0;
        spec.steps = 5;
        let res = attack_pgd(&model, &ex, &spec).unwrap();
        assert_eq!(res.adversarial, ex.cloud);
        let already_wrong = misclassifies(&model, &ex.cloud, ex.label).unwrap();
        assert_eq!(res.success, already_wrong);
    }

    #[test]
    fn pgd_one_step_matches_closed_form_on_linear_model() {
        // Linear two-class toy on a single point: logits = W_h W_b x + c.
        // One PGD step moves x by alpha * sign(d CE / d x), and for a single
        // step within budget the projection is inactive.
        let model = PointNetMini::<f64>::custom(&[3, 4], &[4, 2], crate::nn::Act::None, 3);
        let ex = LabeledCloud {
            cloud: PointCloud::new(vec![[0.2, -0.4, 0.1]]).unwrap(),
            label: 0,
            example_id: "lin".to_string(),
        };
        let spec = AttackSpec { epsilon: 0.5, steps: 1, step_size: 0.01, ..AttackSpec::default_for("pgd").unwrap() };
        let grad = crate::victims::input_gradient(&model, &ex.cloud, 0).unwrap()[0];
        let expect: Vec<f64> = (0..3)
            .map(|d| ex.cloud.point(0)[d] + 0.01 * grad[d].signum())
            .collect();
        let res = attack_pgd(&model, &ex, &spec).unwrap();
        for d in 0..3 {
            assert!((res.adversarial.point(0)[d] - expect[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn pgd_respects_linf_budget() {
        let model = toy_model(4);
        let ex = toy_example(20, 5);
        let spec = AttackSpec { epsilon: 0.03, steps: 10, step_size: 0.01, ..AttackSpec::default_for("pgd").unwrap() };
        let res = attack_pgd(&model, &ex, &spec).unwrap();
        for (p, c) in res.adversarial.points().iter().zip(ex.cloud.points()) {
            for d in 0..3 {
                assert!((p[d] - c[d]).abs() <= 0.03 + 1e-6);
            }
        }
    }

    #[test]
    fn ifgm_zero_budget_and_l2_bound() {
        let model = toy_model(6);
        let ex = toy_example(16, 7);
        let mut spec = AttackSpec::default_for("ifgm").unwrap();
        spec.epsilon = 0.0;
        spec.steps = 3;
        let res = attack_ifgm(&model, &ex, &spec).unwrap();
        assert_eq!(res.adversarial, ex.cloud);

        let spec = AttackSpec { epsilon: 0.4, steps: 12, step_size: 0.05, ..AttackSpec::default_for("ifgm").unwrap() };
        let res = attack_ifgm(&model, &ex, &spec).unwrap();
        let disp: f64 = res
            .adversarial
            .points()
            .iter()
            .zip(ex.cloud.points())
            .flat_map(|(p, c)| (0..3).map(move |d| (p[d] - c[d]).powi(2)))
            .sum::<f64>()
            .sqrt();
        assert!(disp <= 0.4 + 1e-6, "disp {disp}");
    }

    #[test]
    fn ifgm_constant_model_is_identity() {
        // Zero body weights: logits constant, gradient identically zero.
        let mut model = toy_model(8);
        let mut params = model.params();
        for p in params.iter_mut() {
            *p = 0.0;
        }
        model.set_params(&params).unwrap();
        let ex = toy_example(10, 9);
        let spec = AttackSpec { epsilon: 0.5, steps: 4, step_size: 0.05, ..AttackSpec::default_for("ifgm").unwrap() };
        let res = attack_ifgm(&model, &ex, &spec).unwrap();
        assert_eq!(res.adversarial, ex.cloud);
    }

    #[test]
    fn perturb_success_flag_matches_reevaluation() {
        let model = toy_model(10);
        for seed in 0..4 {
            let ex = toy_example(18, 20 + seed);
            let spec = AttackSpec { steps: 30, ..AttackSpec::default_for("perturb").unwrap() };
            let res = attack_perturb_cw(&model, &ex, &spec).unwrap();
            let wrong = misclassifies(&model, &res.adversarial, ex.label).unwrap();
            assert_eq!(res.success, wrong);
        }
    }

    #[test]
    fn knn_gamma_zero_reduces_to_perturb() {
        let model = toy_model(11);
        let ex = toy_example(14, 30);
        let spec_p = AttackSpec { steps: 12, ..AttackSpec::default_for("perturb").unwrap() };
        let mut spec_k = AttackSpec::default_for("knn").unwrap();
        spec_k.steps = 12;
        spec_k.extras.insert("gamma".to_string(), 0.0);
        let a = attack_perturb_cw(&model, &ex, &spec_p).unwrap();
        let b = attack_knn_constrained(&model, &ex, &spec_k).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
    }

    #[test]
    fn drop_respects_cardinality_and_subset() {
        let model = toy_model(12);
        let ex = toy_example(40, 31);
        let mut spec = AttackSpec::default_for("drop").unwrap();
        spec.extras.insert("drop_count".to_string(), 12.0);
        let res = attack_drop(&model, &ex, &spec).unwrap();
        assert_eq!(res.adversarial.len(), 28);
        for p in res.adversarial.points() {
            assert!(ex.cloud.points().contains(p));
        }

        spec.extras.insert("drop_count".to_string(), 0.0);
        let res = attack_drop(&model, &ex, &spec).unwrap();
        assert_eq!(res.adversarial, ex.cloud);

        spec.extras.insert("drop_count".to_string(), 40.0);
        assert!(attack_drop(&model, &ex, &spec).is_err());
    }

    #[test]
    fn add_keeps_originals_bit_unchanged() {
        let model = toy_model(13);
        let ex = toy_example(24, 32);
        let mut spec = AttackSpec::default_for("add").unwrap();
        spec.steps = 8;
        spec.extras.insert("add_count".to_string(), 6.0);
        let res = attack_add(&model, &ex, &spec, 99).unwrap();
        assert_eq!(res.adversarial.len(), 30);
        for (i, p) in ex.cloud.points().iter().enumerate() {
            assert_eq!(res.adversarial.point(i), *p);
        }
    }

    #[test]
    fn add_zero_steps_keeps_initialization_under_cluster_mode() {
        let model = toy_model(14);
        let ex = toy_example(24, 33);
        let mut spec = AttackSpec::default_for("cluster").unwrap();
        spec.steps = 0;
        spec.extras.insert("add_count".to_string(), 8.0);
        spec.extras.insert("clusters".to_string(), 2.0);
        let res = attack_add(&model, &ex, &spec, 5).unwrap();
        // All added points sit within the cluster radius of some original.
        for p in &res.adversarial.points()[24..] {
            let (_, d) = crate::geometry::nearest_in(&ex.cloud, *p);
            assert!(d.sqrt() <= 0.05 + 1e-9, "added point strayed: {d}");
        }
    }
}
