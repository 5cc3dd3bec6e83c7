//! Point-cloud classifiers with an exposed global feature extractor and
//! exact input-coordinate gradients. Both architectures are permutation
//! invariant through max-pool aggregation and deliberately small enough to
//! train on a CPU in minutes.

mod dgcnn;
mod pointnet;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{argmax, softmax_ce, Adam};
use crate::rng::{hash_f64_bits, rng_from};
use crate::scalar::Real;

pub use dgcnn::DgcnnMini;
pub use pointnet::PointNetMini;

/// Result of a fused forward + input-backward pass.
pub struct InputBackward<R: Real> {
    pub logits: Vec<R>,
    pub feature: Vec<R>,
    pub input_grad: Vec<[R; 3]>,
}

/// A frozen-or-trainable victim network. `forward` returns `(logits, f(x))`
/// where `f(x)` is the single canonical global feature consumed by the
/// semantic consistency loss.
pub trait Classifier<R: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;

    fn forward(&self, cloud: &PointCloud<R>) -> Result<(Vec<R>, Vec<R>)>;

    /// Runs forward, asks `upstream` for `(d_logits, d_feature)` given the
    /// outputs, and backpropagates to the input coordinates.
    fn forward_backward_input(
        &self,
        cloud: &PointCloud<R>,
        upstream: &mut dyn FnMut(&[R], &[R]) -> (Vec<R>, Vec<R>),
    ) -> Result<InputBackward<R>>;

    /// Cross-entropy loss and flat parameter gradients for one example.
    fn ce_param_grads(&self, cloud: &PointCloud<R>, label: usize) -> Result<(R, Vec<R>)>;

    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<R>;
    fn set_params(&mut self, params: &[R]) -> Result<()>;

    /// Parameter arrays in flat layout order, named by layer.
    fn named_arrays(&self) -> Vec<(String, Vec<f64>)>;
    fn checkpoint_config(&self) -> serde_json::Value;
    fn seed(&self) -> u64;
}

/// Bit-exact fingerprint of the parameter vector.
pub fn param_hash<R: Real>(model: &dyn Classifier<R>) -> u64 {
    hash_f64_bits(model.params().iter().map(|p| p.f64()))
}

/// Exact gradient of `CE(Cls(f(cloud)), label)` w.r.t. each coordinate.
pub fn input_gradient<R: Real>(
    model: &dyn Classifier<R>,
    cloud: &PointCloud<R>,
    label: usize,
) -> Result<Vec<[R; 3]>> {
    Ok(ce_input_backward(model, cloud, label)?.1.input_grad)
}

/// Fused pass used by gradient-based attacks: CE loss, outputs, input grad.
pub fn ce_input_backward<R: Real>(
    model: &dyn Classifier<R>,
    cloud: &PointCloud<R>,
    label: usize,
) -> Result<(R, InputBackward<R>)> {
    if label >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    let feature_dim = model.feature_dim();
    let mut loss = R::zero();
    let back = model.forward_backward_input(cloud, &mut |logits, _| {
        let (l, d) = softmax_ce(logits, label);
        loss = l;
        (d, vec![R::zero(); feature_dim])
    })?;
    Ok((loss, back))
}

/// Exact total count of scalar parameters.
pub fn param_count<R: Real>(model: &dyn Classifier<R>) -> usize {
    model.param_count()
}

/// Top-1 accuracy over a split, in [0, 1].
pub fn evaluate<R: Real>(model: &dyn Classifier<R>, split: &DatasetSplit<R>) -> Result<f64> {
    let hits: usize = split
        .examples
        .par_iter()
        .map(|ex| {
            let (logits, _) = model.forward(&ex.cloud)?;
            Ok(usize::from(argmax(&logits) == ex.label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / split.len() as f64)
}

/// Victim training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 1e-3, batch_size: 32, seed: 0, weight_decay: 0.0 }
    }
}

/// Per-run training record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
}

/// Minimizes cross-entropy with Adam over shuffled mini-batches.
/// Deterministic given the config seed.
pub fn train_victim<R: Real>(
    model: &mut dyn Classifier<R>,
    train: &DatasetSplit<R>,
    test: Option<&DatasetSplit<R>>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut params = model.params();
    let mut opt = Adam::<R>::new(config.learning_rate, params.len());
    let mut rng = rng_from(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(R, Vec<R>)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train.examples[i];
                    model.ce_param_grads(&ex.cloud, ex.label)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = R::of(1.0 / batch.len() as f64);
            let mut grads = vec![R::zero(); params.len()];
            for (loss, g) in &results {
                epoch_loss += loss.f64();
                for (acc, gi) in grads.iter_mut().zip(g.iter()) {
                    *acc += *gi * scale;
                }
            }
            if config.weight_decay != 0.0 {
                let wd = R::of(config.weight_decay);
                for (gi, pi) in grads.iter_mut().zip(params.iter()) {
                    *gi += wd * *pi;
                }
            }
            opt.step(&mut params, &grads);
            model.set_params(&params)?;
        }
        epoch_losses.push(epoch_loss / train.len() as f64);
    }

    Ok(TrainLog {
        epoch_losses,
        final_train_accuracy: evaluate(model, train)?,
        final_test_accuracy: test.map(|t| evaluate(model, t)).transpose()?,
    })
}

/// Fisher-Yates shuffle with the crate RNG.
fn shuffle<G: rand::Rng>(xs: &mut [usize], rng: &mut G) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

/// Saves a victim checkpoint (manifest + per-layer f32 arrays).
pub fn save_victim<R: Real>(dir: &Path, model: &dyn Classifier<R>) -> Result<()> {
    crate::io::save_checkpoint(
        dir,
        model.name(),
        model.seed(),
        model.checkpoint_config(),
        &model.named_arrays(),
    )
}

/// Loads a victim checkpoint, dispatching on the stored architecture name.
pub fn load_victim<R: Real>(dir: &Path) -> Result<Box<dyn Classifier<R>>> {
    let (manifest, arrays) = crate::io::load_checkpoint(dir)?;
    let flat: Vec<R> = arrays
        .iter()
        .flat_map(|(_, vals)| vals.iter().map(|v| R::of(*v)))
        .collect();
    let cfg = &manifest.config;
    let classes = cfg["num_classes"].as_u64().unwrap_or(8) as usize;
    let feature_dim = cfg["feature_dim"].as_u64().unwrap_or(128) as usize;
    let mut model: Box<dyn Classifier<R>> = match manifest.arch.as_str() {
        "pointnet_mini" => Box::new(PointNetMini::new(classes, feature_dim, manifest.seed)),
        "dgcnn_mini" => {
            let k = cfg["k_graph"].as_u64().unwrap_or(8) as usize;
            Box::new(DgcnnMini::new(classes, feature_dim, k, manifest.seed))
        }
        other => return Err(Error::Unsupported(format!("unknown architecture {other:?}"))),
    };
    model.set_params(&flat)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, DatasetConfig};

    #[test]
    fn train_one_epoch_decreases_loss() {
        let cfg = DatasetConfig { train_per_class: 1, test_per_class: 1, points_per_cloud: 32, seed: 11 };
        let ds = build_dataset::<f64>(&cfg).unwrap();
        let mut model = PointNetMini::<f64>::new(8, 32, 1);

        // Mean loss at initialization.
        let init: f64 = ds
            .train
            .examples
            .iter()
            .map(|ex| {
                let (logits, _) = model.forward(&ex.cloud).unwrap();
                softmax_ce(&logits, ex.label).0
            })
            .sum::<f64>()
            / ds.train.len() as f64;

        let tc = TrainConfig { epochs: 1, batch_size: 4, seed: 2, ..Default::default() };
        let log = train_victim(&mut model, &ds.train, None, &tc).unwrap();
        let after: f64 = ds
            .train
            .examples
            .iter()
            .map(|ex| {
                let (logits, _) = model.forward(&ex.cloud).unwrap();
                softmax_ce(&logits, ex.label).0
            })
            .sum::<f64>()
            / ds.train.len() as f64;
        assert!(after < init, "loss {init} -> {after}");
        assert_eq!(log.epoch_losses.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = DatasetConfig { train_per_class: 2, test_per_class: 1, points_per_cloud: 32, seed: 13 };
        let ds = build_dataset::<f64>(&cfg).unwrap();
        let tc = TrainConfig { epochs: 2, batch_size: 4, seed: 3, ..Default::default() };

        let mut a = PointNetMini::<f64>::new(8, 32, 5);
        let mut b = PointNetMini::<f64>::new(8, 32, 5);
        train_victim(&mut a, &ds.train, None, &tc).unwrap();
        train_victim(&mut b, &ds.train, None, &tc).unwrap();
        assert_eq!(param_hash(&a), param_hash(&b));
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn checkpoint_round_trip_preserves_count_and_name() {
        let dir = tempfile::tempdir().unwrap();
        let model = PointNetMini::<f64>::new(8, 64, 9);
        save_victim(dir.path(), &model).unwrap();
        let back = load_victim::<f64>(dir.path()).unwrap();
        assert_eq!(back.name(), "pointnet_mini");
        assert_eq!(back.param_count(), model.param_count());
        assert_eq!(back.feature_dim(), 64);
    }

    #[test]
    fn empty_label_range_rejected() {
        let model = PointNetMini::<f64>::new(4, 16, 0);
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3]]).unwrap();
        assert!(ce_input_backward(&model, &cloud, 4).is_err());
    }
}
