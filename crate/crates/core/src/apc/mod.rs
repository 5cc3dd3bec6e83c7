//! The counter-perturbation purifier: a local/global/fusion encoder over
//! kNN-aggregated point features and a small decoder that emits a per-point
//! counter-perturbation C. Purification is a single forward pass:
//! purified = (SOR-preprocessed input) + C.

pub mod losses;
mod train;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::defenses::sor;
use crate::error::{Error, Result};
use crate::geometry::{gather_neighbors, knn_indices, PointCloud};
use crate::nn::{max_pool_backward, max_pool_groups, max_pool_rows, Act, Linear, Mlp, MlpCache};
use crate::rng::rng_from;
use crate::scalar::Real;

pub use losses::{
    loss_geo, loss_geo_grad, loss_sem, loss_sem_grad, loss_total, loss_total_grad, GeoMetric,
    LossBreakdown,
};
pub use train::{train_apc, ApcTrainLog, LossMeans};

/// Purifier architecture and training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ApcConfig {
    /// Neighbors aggregated per point.
    pub k: usize,
    /// Encoder feature width d.
    pub feature_dim: usize,
    /// Hidden width of the local block.
    pub local_hidden: usize,
    /// Decoder hidden widths (three layers total: d -> h0 -> h1 -> 3).
    pub decoder_hidden: [usize; 2],
    /// When set, the local block consumes the flattened (k+1)*3 neighborhood
    /// per point instead of pooling a shared MLP over neighbor pairs.
    pub flatten_local: bool,
    /// Weight of the geometric consistency term.
    pub alpha: f64,
    /// Weight of the semantic consistency term.
    pub beta: f64,
    /// Distance used by the geometric term.
    pub geo_metric: GeoMetric,
    /// Adds the reverse direction of the geometric distance.
    pub symmetric_geo: bool,
    /// SOR preprocessing parameters.
    pub sor_k: usize,
    pub sor_alpha: f64,
    pub train: ApcTrainConfig,
}

impl Default for ApcConfig {
    fn default() -> Self {
        Self {
            k: 8,
            feature_dim: 32,
            local_hidden: 64,
            decoder_hidden: [64, 32],
            flatten_local: false,
            alpha: 1.0,
            beta: 1.0,
            geo_metric: GeoMetric::Chamfer,
            symmetric_geo: false,
            sor_k: 2,
            sor_alpha: 1.1,
            train: ApcTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ApcTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Subsample fraction of pairs used per attack (and for clean pairs).
    pub rho: f64,
    pub attack_names: Vec<String>,
    pub include_clean: bool,
    /// Fixed per-attack pair budget; overrides `rho` when set (used by the
    /// hybrid-count ablation to keep the total budget constant).
    pub pairs_per_attack: Option<usize>,
    pub seed: u64,
}

impl Default for ApcTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 16,
            rho: 0.30,
            attack_names: vec!["pgd".into(), "knn".into(), "drop".into()],
            include_clean: true,
            pairs_per_attack: None,
            seed: 0,
        }
    }
}

/// Output of one purification pass.
#[derive(Clone, Debug)]
pub struct PurifyResult<R: Real> {
    pub purified: PointCloud<R>,
    /// The counter-perturbation C, one row per surviving point.
    pub counter: Vec<[R; 3]>,
    pub pre_sor_count: usize,
    pub post_sor_count: usize,
}

/// Forward record kept for parameter backprop during training.
pub struct ApcForwardCache<R: Real> {
    n: usize,
    local_cache: MlpCache<R>,
    local_arg: Vec<usize>,
    global_cache: MlpCache<R>,
    global_arg: Vec<usize>,
    fusion_cache: MlpCache<R>,
    decoder_cache: MlpCache<R>,
}

/// Encoder/decoder purifier. The decoder head is zero-initialized, so a
/// freshly constructed model is the identity purifier (C = 0).
#[derive(Debug)]
pub struct ApcModel<R: Real> {
    pub config: ApcConfig,
    pub g_local: Mlp<R>,
    pub g_global: Mlp<R>,
    pub g_fusion: Mlp<R>,
    pub decoder: Mlp<R>,
    seed: u64,
    forward_passes: AtomicU64,
}

impl<R: Real> Clone for ApcModel<R> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            g_local: self.g_local.clone(),
            g_global: self.g_global.clone(),
            g_fusion: self.g_fusion.clone(),
            decoder: self.decoder.clone(),
            seed: self.seed,
            forward_passes: AtomicU64::new(self.forward_passes.load(Ordering::Relaxed)),
        }
    }
}

impl<R: Real> ApcModel<R> {
    pub fn new(config: ApcConfig, seed: u64) -> Self {
        let d = config.feature_dim;
        let local_in = if config.flatten_local { (config.k + 1) * 3 } else { 6 };
        let mut rng = rng_from(seed);
        let g_local = Mlp::seeded(&[local_in, config.local_hidden, d], Act::Gelu, true, &mut rng);
        let g_global = Mlp::seeded(&[d, d], Act::Gelu, true, &mut rng);
        let g_fusion = Mlp::seeded(&[2 * d, d], Act::Gelu, true, &mut rng);
        let mut decoder = Mlp::seeded(
            &[d, config.decoder_hidden[0], config.decoder_hidden[1], 3],
            Act::Gelu,
            false,
            &mut rng,
        );
        // Identity at initialization: zero the decoder's final layer.
        let last = decoder.layers.last_mut().expect("decoder layers");
        *last = Linear::zeros(last.in_dim, last.out_dim);
        Self { config, g_local, g_global, g_fusion, decoder, seed, forward_passes: AtomicU64::new(0) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// How many purification forward passes this instance has run.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    pub fn param_count(&self) -> usize {
        self.g_local.param_count()
            + self.g_global.param_count()
            + self.g_fusion.param_count()
            + self.decoder.param_count()
    }

    pub fn params(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.param_count());
        self.g_local.params_extend(&mut out);
        self.g_global.params_extend(&mut out);
        self.g_fusion.params_extend(&mut out);
        self.decoder.params_extend(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[R]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        self.g_local.params_load(params, &mut offset);
        self.g_global.params_load(params, &mut offset);
        self.g_fusion.params_load(params, &mut offset);
        self.decoder.params_load(params, &mut offset);
        Ok(())
    }

    pub fn param_hash(&self) -> u64 {
        crate::rng::hash_f64_bits(self.params().iter().map(|p| p.f64()))
    }

    /// Per-point feature matrix E (flat, N x d) plus the forward record.
    pub fn encode(&self, cloud: &PointCloud<R>) -> Result<(Vec<R>, ApcForwardCache<R>)> {
        let n = cloud.len();
        let k = self.config.k;
        let d = self.config.feature_dim;
        if n <= k {
            return Err(Error::invalid(format!("encoder needs N > k ({k}), got N={n}")));
        }
        let idx = knn_indices(cloud, k)?;
        let neighbors = gather_neighbors(cloud, &idx)?;

        let (local_cache, local_arg, l_rows) = if self.config.flatten_local {
            // One row per point: [x_i, p_i1, ..., p_ik].
            let mut rows = Vec::with_capacity(n * (k + 1) * 3);
            for i in 0..n {
                rows.extend_from_slice(&cloud.point(i));
                for j in 0..k {
                    rows.extend_from_slice(&neighbors[i * k + j]);
                }
            }
            let cache = self.g_local.forward_cached(&rows, n);
            let l = cache.output().to_vec();
            (cache, Vec::new(), l)
        } else {
            // One row per (point, neighbor) pair: [x_i ; p_ij], max-pooled
            // over the k neighbors after the shared MLP.
            let mut rows = Vec::with_capacity(n * k * 6);
            for i in 0..n {
                let xi = cloud.point(i);
                for j in 0..k {
                    rows.extend_from_slice(&xi);
                    rows.extend_from_slice(&neighbors[i * k + j]);
                }
            }
            let cache = self.g_local.forward_cached(&rows, n * k);
            let (l, arg) = max_pool_groups(cache.output(), n, k, d);
            (cache, arg, l)
        };

        let global_cache = self.g_global.forward_cached(&l_rows, n);
        let (g_row, global_arg) = max_pool_rows(global_cache.output(), n, d);

        let mut fusion_in = Vec::with_capacity(n * 2 * d);
        for i in 0..n {
            fusion_in.extend_from_slice(&l_rows[i * d..(i + 1) * d]);
            fusion_in.extend_from_slice(&g_row);
        }
        let fusion_cache = self.g_fusion.forward_cached(&fusion_in, n);
        let e = fusion_cache.output().to_vec();

        let decoder_cache = self.decoder.forward_cached(&e, n);
        Ok((
            e,
            ApcForwardCache {
                n,
                local_cache,
                local_arg,
                global_cache,
                global_arg,
                fusion_cache,
                decoder_cache,
            },
        ))
    }

    /// Purifies a cloud: optional SOR preprocessing, then one encoder/decoder
    /// pass and a point-wise addition of the counter-perturbation.
    pub fn purify(&self, cloud: &PointCloud<R>, preprocess: bool) -> Result<PurifyResult<R>> {
        let input = if preprocess {
            sor(cloud, self.config.sor_k, self.config.sor_alpha)?
        } else {
            cloud.clone()
        };
        if input.len() <= self.config.k {
            return Err(Error::degenerate(format!(
                "cloud has {} points after preprocessing, need more than k={}",
                input.len(),
                self.config.k
            )));
        }
        let (result, _) = self.purify_cached(&input)?;
        Ok(PurifyResult { pre_sor_count: cloud.len(), ..result })
    }

    /// Purification on an already-preprocessed cloud, keeping the forward
    /// record for backprop. Counts as one forward pass.
    pub fn purify_cached(
        &self,
        input: &PointCloud<R>,
    ) -> Result<(PurifyResult<R>, ApcForwardCache<R>)> {
        let (_, cache) = self.encode(input)?;
        let counter_flat = cache.decoder_cache.output();
        let mut purified = Vec::with_capacity(input.len());
        let mut counter = Vec::with_capacity(input.len());
        for (i, p) in input.points().iter().enumerate() {
            let c = [counter_flat[i * 3], counter_flat[i * 3 + 1], counter_flat[i * 3 + 2]];
            counter.push(c);
            purified.push([p[0] + c[0], p[1] + c[1], p[2] + c[2]]);
        }
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        Ok((
            PurifyResult {
                purified: PointCloud::new(purified)?,
                counter,
                pre_sor_count: input.len(),
                post_sor_count: input.len(),
            },
            cache,
        ))
    }

    /// Backprop from d(loss)/d(counter) to flat parameter gradients.
    /// Layout matches [`Self::params`].
    pub fn param_grads(&self, cache: &ApcForwardCache<R>, d_counter: &[R]) -> Vec<R> {
        let n = cache.n;
        let d = self.config.feature_dim;
        let k = self.config.k;
        debug_assert_eq!(d_counter.len(), n * 3);

        let mut grads = vec![R::zero(); self.param_count()];
        let local_n = self.g_local.param_count();
        let global_n = self.g_global.param_count();
        let fusion_n = self.g_fusion.param_count();
        let (local_g, rest) = grads.split_at_mut(local_n);
        let (global_g, rest) = rest.split_at_mut(global_n);
        let (fusion_g, decoder_g) = rest.split_at_mut(fusion_n);

        let d_e = self
            .decoder
            .backward_batch(&cache.decoder_cache, d_counter, decoder_g, true)
            .expect("fusion grad");

        let d_fusion_in = self
            .g_fusion
            .backward_batch(&cache.fusion_cache, &d_e, fusion_g, true)
            .expect("local+global grad");

        // Split fusion input gradient into the direct local path and the
        // broadcast global path (summed over points).
        let mut d_l = vec![R::zero(); n * d];
        let mut d_g = vec![R::zero(); d];
        for i in 0..n {
            let row = &d_fusion_in[i * 2 * d..(i + 1) * 2 * d];
            d_l[i * d..(i + 1) * d].copy_from_slice(&row[..d]);
            for (acc, v) in d_g.iter_mut().zip(&row[d..]) {
                *acc += *v;
            }
        }

        let mut d_global_out = vec![R::zero(); n * d];
        max_pool_backward(&d_g, &cache.global_arg, d, &mut d_global_out);
        let d_l_from_global = self
            .g_global
            .backward_batch(&cache.global_cache, &d_global_out, global_g, true)
            .expect("l grad");
        for (acc, v) in d_l.iter_mut().zip(&d_l_from_global) {
            *acc += *v;
        }

        if self.config.flatten_local {
            self.g_local.backward_batch(&cache.local_cache, &d_l, local_g, false);
        } else {
            let mut d_local_out = vec![R::zero(); n * k * d];
            max_pool_backward(&d_l, &cache.local_arg, d, &mut d_local_out);
            self.g_local.backward_batch(&cache.local_cache, &d_local_out, local_g, false);
        }
        grads
    }

    pub fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = self.g_local.named_arrays("local");
        out.extend(self.g_global.named_arrays("global"));
        out.extend(self.g_fusion.named_arrays("fusion"));
        out.extend(self.decoder.named_arrays("decoder"));
        out
    }
}

/// Exact scalar-parameter total of the purifier.
pub fn apc_param_count<R: Real>(model: &ApcModel<R>) -> usize {
    model.param_count()
}

/// Saves an APC checkpoint (victim checkpoint format plus the config).
pub fn save_apc<R: Real>(dir: &Path, model: &ApcModel<R>) -> Result<()> {
    crate::io::save_checkpoint(
        dir,
        "apc",
        model.seed(),
        serde_json::to_value(&model.config)?,
        &model.named_arrays(),
    )
}

/// Loads an APC checkpoint saved by [`save_apc`].
pub fn load_apc<R: Real>(dir: &Path) -> Result<ApcModel<R>> {
    let (manifest, arrays) = crate::io::load_checkpoint(dir)?;
    if manifest.arch != "apc" {
        return Err(Error::Format(format!("expected apc checkpoint, found {:?}", manifest.arch)));
    }
    let config: ApcConfig = serde_json::from_value(manifest.config)?;
    let mut model = ApcModel::new(config, manifest.seed);
    let flat: Vec<R> = arrays
        .iter()
        .flat_map(|(_, vals)| vals.iter().map(|v| R::of(*v)))
        .collect();
    model.set_params(&flat)?;
    Ok(model)
}
