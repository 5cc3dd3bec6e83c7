//! Purifier training on stored clean-adversarial pairs. The victim stays
//! frozen; only APC parameters move. Hybrid training draws a subsampled
//! fraction of pairs per attack (plus clean pairs); IAPC is the
//! single-attack special case.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::store::{load_pairs, PairFilter, PairRecord, CLEAN_ATTACK};
use crate::defenses::sor;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::Adam;
use crate::rng::{derive_seed, rng_from, sample_indices};
use crate::scalar::Real;
use crate::victims::Classifier;

use super::losses::loss_total_grad_with;
use super::{ApcConfig, ApcModel};

/// Mean loss components over the training set.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossMeans {
    pub total: f64,
    pub ce: f64,
    pub geo: f64,
    pub sem: f64,
}

/// Per-epoch loss record. `initial` is an evaluation-only pass before any
/// update.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApcTrainLog {
    pub initial: LossMeans,
    pub epochs: Vec<LossMeans>,
    pub pairs_used: usize,
    pub pairs_per_attack: Vec<(String, usize)>,
}

struct TrainItem<R: Real> {
    /// SOR-preprocessed adversarial cloud, the purifier input.
    input: PointCloud<R>,
    clean: PointCloud<R>,
    clean_feature: Vec<R>,
    label: usize,
}

/// Trains APC against a frozen victim on the pair store. Deterministic
/// given the config seed; the victim is untouched throughout.
pub fn train_apc<R: Real>(
    victim: &dyn Classifier<R>,
    store_path: &Path,
    config: &ApcConfig,
) -> Result<(ApcModel<R>, ApcTrainLog)> {
    let tc = &config.train;
    if tc.attack_names.is_empty() {
        return Err(Error::invalid("training needs at least one attack name"));
    }

    // Assemble the subsampled pair set, one quota per attack name.
    let mut names: Vec<String> = tc.attack_names.clone();
    if tc.include_clean {
        names.push(CLEAN_ATTACK.to_string());
    }
    let mut items: Vec<TrainItem<R>> = Vec::new();
    let mut per_attack = Vec::new();
    for name in &names {
        let records: Vec<PairRecord<R>> =
            load_pairs(store_path, &PairFilter::attack_victim(name, victim.name()))?;
        if records.is_empty() {
            return Err(Error::invalid(format!(
                "store has no {:?} records for victim {:?}",
                name,
                victim.name()
            )));
        }
        let quota = tc
            .pairs_per_attack
            .unwrap_or_else(|| ((records.len() as f64) * tc.rho).floor() as usize)
            .clamp(1, records.len());
        let mut rng = rng_from(derive_seed(tc.seed, &["subsample", name]));
        let chosen = sample_indices(records.len(), quota, &mut rng);
        per_attack.push((name.clone(), quota));

        let selected: Vec<&PairRecord<R>> = chosen.iter().map(|&i| &records[i]).collect();
        let prepared: Vec<TrainItem<R>> = selected
            .par_iter()
            .map(|rec| {
                let input = sor(&rec.adversarial, config.sor_k, config.sor_alpha)?;
                if input.len() <= config.k {
                    return Err(Error::degenerate(format!(
                        "pair {} degenerates to {} points after preprocessing",
                        rec.key(),
                        input.len()
                    )));
                }
                let (_, clean_feature) = victim.forward(&rec.clean)?;
                Ok(TrainItem { input, clean: rec.clean.clone(), clean_feature, label: rec.label })
            })
            .collect::<Result<Vec<_>>>()?;
        items.extend(prepared);
    }

    let mut model = ApcModel::new(config.clone(), derive_seed(tc.seed, &["apc-init"]));
    let initial = mean_loss(&model, victim, &items, config)?;

    let mut params = model.params();
    let mut opt = Adam::<R>::new(tc.learning_rate, params.len());
    let mut epochs = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        let mut rng = rng_from(derive_seed(tc.seed, &["epoch", &epoch.to_string()]));
        let batches = cardinality_batches(&items, tc.batch_size, &mut rng);

        let mut sums = LossMeans::default();
        for batch in &batches {
            let results: Vec<(LossMeans, Vec<R>)> = batch
                .par_iter()
                .map(|&i| {
                    let item = &items[i];
                    let (result, cache) = model.purify_cached(&item.input)?;
                    let (breakdown, d_purified) = loss_total_grad_with(
                        victim,
                        &result.purified,
                        &item.clean,
                        &item.clean_feature,
                        item.label,
                        config.alpha,
                        config.beta,
                        config.geo_metric,
                        config.symmetric_geo,
                    )?;
                    // purified = input + C point-wise, so dL/dC = dL/dpurified.
                    let d_counter: Vec<R> =
                        d_purified.iter().flat_map(|g| g.iter().copied()).collect();
                    let grads = model.param_grads(&cache, &d_counter);
                    let means = LossMeans {
                        total: breakdown.total.f64(),
                        ce: breakdown.ce.f64(),
                        geo: breakdown.geo.f64(),
                        sem: breakdown.sem.f64(),
                    };
                    Ok((means, grads))
                })
                .collect::<Result<Vec<_>>>()?;

            let scale = R::of(1.0 / batch.len() as f64);
            let mut grads = vec![R::zero(); params.len()];
            for (means, g) in &results {
                sums.total += means.total;
                sums.ce += means.ce;
                sums.geo += means.geo;
                sums.sem += means.sem;
                for (acc, gi) in grads.iter_mut().zip(g.iter()) {
                    *acc += *gi * scale;
                }
            }
            opt.step(&mut params, &grads);
            model.set_params(&params)?;
        }
        let n = items.len() as f64;
        epochs.push(LossMeans {
            total: sums.total / n,
            ce: sums.ce / n,
            geo: sums.geo / n,
            sem: sums.sem / n,
        });
    }

    let log = ApcTrainLog { initial, epochs, pairs_used: items.len(), pairs_per_attack: per_attack };
    Ok((model, log))
}

/// Groups item indices into batches of equal cardinality (pairs with the
/// same point count train together), shuffling items within buckets and the
/// batch order itself.
fn cardinality_batches<R: Real, G: rand::Rng>(
    items: &[TrainItem<R>],
    batch_size: usize,
    rng: &mut G,
) -> Vec<Vec<usize>> {
    let mut buckets: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, item) in items.iter().enumerate() {
        buckets.entry(item.input.len()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for bucket in buckets.into_values() {
        let mut order = bucket;
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch_size.max(1)) {
            batches.push(chunk.to_vec());
        }
    }
    for i in (1..batches.len()).rev() {
        let j = rng.gen_range(0..=i);
        batches.swap(i, j);
    }
    batches
}

fn mean_loss<R: Real>(
    model: &ApcModel<R>,
    victim: &dyn Classifier<R>,
    items: &[TrainItem<R>],
    config: &ApcConfig,
) -> Result<LossMeans> {
    let parts: Vec<LossMeans> = items
        .par_iter()
        .map(|item| {
            let (result, _) = model.purify_cached(&item.input)?;
            let (b, _) = loss_total_grad_with(
                victim,
                &result.purified,
                &item.clean,
                &item.clean_feature,
                item.label,
                config.alpha,
                config.beta,
                config.geo_metric,
                config.symmetric_geo,
            )?;
            Ok(LossMeans { total: b.total.f64(), ce: b.ce.f64(), geo: b.geo.f64(), sem: b.sem.f64() })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    Ok(LossMeans {
        total: parts.iter().map(|p| p.total).sum::<f64>() / n,
        ce: parts.iter().map(|p| p.ce).sum::<f64>() / n,
        geo: parts.iter().map(|p| p.geo).sum::<f64>() / n,
        sem: parts.iter().map(|p| p.sem).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{generate_attack_set, AttackSpec};
    use crate::dataset::store::{clean_pairs, store_pairs};
    use crate::dataset::{build_dataset, DatasetConfig};
    use crate::victims::{param_hash, PointNetMini};

    #[test]
    fn hybrid_counts_and_frozen_victim() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset::<f64>(&DatasetConfig {
            train_per_class: 2,
            test_per_class: 1,
            points_per_cloud: 48,
            seed: 21,
        })
        .unwrap();
        let victim = PointNetMini::<f64>::new(8, 32, 3);
        let specs = vec![
            AttackSpec { steps: 2, ..AttackSpec::default_for("pgd").unwrap() },
            AttackSpec {
                steps: 2,
                extras: [("drop_count".to_string(), 8.0), ("rounds".to_string(), 2.0)]
                    .into_iter()
                    .collect(),
                ..AttackSpec::default_for("drop").unwrap()
            },
        ];
        generate_attack_set(&victim, &ds.train, &specs, dir.path(), 77).unwrap();
        store_pairs(dir.path(), &clean_pairs(&ds.train, victim.name())).unwrap();

        let config = ApcConfig {
            k: 4,
            feature_dim: 8,
            local_hidden: 8,
            decoder_hidden: [8, 8],
            train: crate::apc::ApcTrainConfig {
                epochs: 2,
                rho: 0.5,
                attack_names: vec!["pgd".into(), "drop".into()],
                batch_size: 4,
                seed: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let hash_before = param_hash(&victim);
        let (model, log) = train_apc(&victim, dir.path(), &config).unwrap();
        assert_eq!(param_hash(&victim), hash_before);
        // 16 train examples, rho = 0.5: 8 per attack, 8 clean.
        assert_eq!(log.pairs_used, 24);
        assert_eq!(log.epochs.len(), 2);
        assert!(model.param_count() > 0);
    }

    #[test]
    fn missing_attack_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset::<f64>(&DatasetConfig {
            train_per_class: 1,
            test_per_class: 1,
            points_per_cloud: 48,
            seed: 22,
        })
        .unwrap();
        let victim = PointNetMini::<f64>::new(8, 16, 4);
        store_pairs(dir.path(), &clean_pairs(&ds.train, victim.name())).unwrap();
        let config = ApcConfig {
            k: 4,
            feature_dim: 8,
            local_hidden: 8,
            decoder_hidden: [8, 8],
            train: crate::apc::ApcTrainConfig {
                attack_names: vec!["pgd".into()],
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(train_apc(&victim, dir.path(), &config).is_err());
    }
}
