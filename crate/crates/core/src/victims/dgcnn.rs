//! Dynamic-graph classifier: one edge-convolution block over the kNN graph
//! (recomputed from input coordinates on every call), a per-point MLP, and
//! global max pooling into the classifier head.

use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, NeighborIndex, PointCloud};
use crate::nn::{max_pool_backward, max_pool_groups, max_pool_rows, softmax_ce, Act, Mlp};
use crate::rng::rng_from;
use crate::scalar::Real;

use super::{Classifier, InputBackward};

#[derive(Clone, Debug)]
pub struct DgcnnMini<R: Real> {
    pub edge_mlp: Mlp<R>,
    pub point_mlp: Mlp<R>,
    pub head: Mlp<R>,
    pub k_graph: usize,
    num_classes: usize,
    feature_dim: usize,
    seed: u64,
}

impl<R: Real> DgcnnMini<R> {
    /// Default widths: edge 6 -> 64, per-point 64 -> d_f, head d_f -> 128 -> C.
    pub fn new(num_classes: usize, feature_dim: usize, k_graph: usize, seed: u64) -> Self {
        Self::custom(
            &[6, 64],
            &[64, feature_dim],
            &[feature_dim, 128, num_classes],
            k_graph,
            Act::Gelu,
            seed,
        )
    }

    pub fn custom(
        edge_dims: &[usize],
        point_dims: &[usize],
        head_dims: &[usize],
        k_graph: usize,
        act: Act,
        seed: u64,
    ) -> Self {
        assert_eq!(edge_dims[0], 6, "edge features are [x_i ; x_j - x_i]");
        assert_eq!(edge_dims.last(), point_dims.first());
        assert_eq!(point_dims.last(), head_dims.first());
        let mut rng = rng_from(seed);
        let edge_mlp = Mlp::seeded(edge_dims, act, true, &mut rng);
        let point_mlp = Mlp::seeded(point_dims, act, true, &mut rng);
        let head = Mlp::seeded(head_dims, act, false, &mut rng);
        Self {
            num_classes: *head_dims.last().expect("head dims"),
            feature_dim: *point_dims.last().expect("point dims"),
            seed,
            k_graph,
            edge_mlp,
            point_mlp,
            head,
        }
    }

    fn graph(&self, cloud: &PointCloud<R>) -> Result<NeighborIndex> {
        if cloud.len() <= self.k_graph {
            return Err(Error::invalid(format!(
                "dgcnn needs N > k_graph ({}), got N={}",
                self.k_graph,
                cloud.len()
            )));
        }
        knn_indices(cloud, self.k_graph)
    }

    /// Edge feature rows `[x_i ; x_j - x_i]`, one per (point, neighbor).
    fn edge_features(cloud: &PointCloud<R>, idx: &NeighborIndex) -> Vec<R> {
        let k = idx.k();
        let mut rows = Vec::with_capacity(cloud.len() * k * 6);
        for (i, row) in idx.rows().enumerate() {
            let xi = cloud.point(i);
            for &j in row {
                let xj = cloud.point(j);
                rows.extend_from_slice(&xi);
                rows.push(xj[0] - xi[0]);
                rows.push(xj[1] - xi[1]);
                rows.push(xj[2] - xi[2]);
            }
        }
        rows
    }
}

impl<R: Real> Classifier<R> for DgcnnMini<R> {
    fn name(&self) -> &str {
        "dgcnn_mini"
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn forward(&self, cloud: &PointCloud<R>) -> Result<(Vec<R>, Vec<R>)> {
        let n = cloud.len();
        let idx = self.graph(cloud)?;
        let edge_in = Self::edge_features(cloud, &idx);
        let edge_out = self.edge_mlp.forward_batch(&edge_in, n * self.k_graph);
        let (h, _) = max_pool_groups(&edge_out, n, self.k_graph, self.edge_mlp.out_dim());
        let point_out = self.point_mlp.forward_batch(&h, n);
        let (feature, _) = max_pool_rows(&point_out, n, self.feature_dim);
        let logits = self.head.forward_batch(&feature, 1);
        Ok((logits, feature))
    }

    fn forward_backward_input(
        &self,
        cloud: &PointCloud<R>,
        upstream: &mut dyn FnMut(&[R], &[R]) -> (Vec<R>, Vec<R>),
    ) -> Result<InputBackward<R>> {
        let n = cloud.len();
        let k = self.k_graph;
        let edge_dim = self.edge_mlp.out_dim();

        let idx = self.graph(cloud)?;
        let edge_in = Self::edge_features(cloud, &idx);
        let edge_cache = self.edge_mlp.forward_cached(&edge_in, n * k);
        let (h, edge_arg) = max_pool_groups(edge_cache.output(), n, k, edge_dim);
        let point_cache = self.point_mlp.forward_cached(&h, n);
        let (feature, pool_arg) = max_pool_rows(point_cache.output(), n, self.feature_dim);
        let head_cache = self.head.forward_cached(&feature, 1);
        let logits = head_cache.output().to_vec();

        let (d_logits, d_feature_up) = upstream(&logits, &feature);
        let mut head_grads = vec![R::zero(); self.head.param_count()];
        let mut d_feature = self
            .head
            .backward_batch(&head_cache, &d_logits, &mut head_grads, true)
            .expect("feature grad");
        for (d, up) in d_feature.iter_mut().zip(d_feature_up.iter()) {
            *d += *up;
        }

        let mut d_point_out = vec![R::zero(); n * self.feature_dim];
        max_pool_backward(&d_feature, &pool_arg, self.feature_dim, &mut d_point_out);
        let mut point_grads = vec![R::zero(); self.point_mlp.param_count()];
        let d_h = self
            .point_mlp
            .backward_batch(&point_cache, &d_point_out, &mut point_grads, true)
            .expect("edge grad");

        let mut d_edge_out = vec![R::zero(); n * k * edge_dim];
        max_pool_backward(&d_h, &edge_arg, edge_dim, &mut d_edge_out);
        let mut edge_grads = vec![R::zero(); self.edge_mlp.param_count()];
        let d_edge_in = self
            .edge_mlp
            .backward_batch(&edge_cache, &d_edge_out, &mut edge_grads, true)
            .expect("coordinate grad");

        // The graph itself is treated as fixed: gradients flow through the
        // center term and the difference term, not the neighbor selection.
        let mut input_grad = vec![[R::zero(); 3]; n];
        for (i, row) in idx.rows().enumerate() {
            for (slot, &j) in row.iter().enumerate() {
                let e = &d_edge_in[(i * k + slot) * 6..(i * k + slot) * 6 + 6];
                for d in 0..3 {
                    input_grad[i][d] += e[d] - e[d + 3];
                    input_grad[j][d] += e[d + 3];
                }
            }
        }
        Ok(InputBackward { logits, feature, input_grad })
    }

    fn ce_param_grads(&self, cloud: &PointCloud<R>, label: usize) -> Result<(R, Vec<R>)> {
        if label >= self.num_classes {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        let n = cloud.len();
        let k = self.k_graph;
        let edge_dim = self.edge_mlp.out_dim();

        let idx = self.graph(cloud)?;
        let edge_in = Self::edge_features(cloud, &idx);
        let edge_cache = self.edge_mlp.forward_cached(&edge_in, n * k);
        let (h, edge_arg) = max_pool_groups(edge_cache.output(), n, k, edge_dim);
        let point_cache = self.point_mlp.forward_cached(&h, n);
        let (feature, pool_arg) = max_pool_rows(point_cache.output(), n, self.feature_dim);
        let head_cache = self.head.forward_cached(&feature, 1);
        let (loss, d_logits) = softmax_ce(head_cache.output(), label);

        let mut grads = vec![R::zero(); self.param_count()];
        let edge_n = self.edge_mlp.param_count();
        let point_n = self.point_mlp.param_count();
        let (edge_grads, rest) = grads.split_at_mut(edge_n);
        let (point_grads, head_grads) = rest.split_at_mut(point_n);

        let d_feature = self
            .head
            .backward_batch(&head_cache, &d_logits, head_grads, true)
            .expect("feature grad");
        let mut d_point_out = vec![R::zero(); n * self.feature_dim];
        max_pool_backward(&d_feature, &pool_arg, self.feature_dim, &mut d_point_out);
        let d_h = self
            .point_mlp
            .backward_batch(&point_cache, &d_point_out, point_grads, true)
            .expect("edge grad");
        let mut d_edge_out = vec![R::zero(); n * k * edge_dim];
        max_pool_backward(&d_h, &edge_arg, edge_dim, &mut d_edge_out);
        self.edge_mlp.backward_batch(&edge_cache, &d_edge_out, edge_grads, false);
        Ok((loss, grads))
    }

    fn param_count(&self) -> usize {
        self.edge_mlp.param_count() + self.point_mlp.param_count() + self.head.param_count()
    }

    fn params(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.param_count());
        self.edge_mlp.params_extend(&mut out);
        self.point_mlp.params_extend(&mut out);
        self.head.params_extend(&mut out);
        out
    }

    fn set_params(&mut self, params: &[R]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        self.edge_mlp.params_load(params, &mut offset);
        self.point_mlp.params_load(params, &mut offset);
        self.head.params_load(params, &mut offset);
        Ok(())
    }

    fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = self.edge_mlp.named_arrays("edge");
        out.extend(self.point_mlp.named_arrays("point"));
        out.extend(self.head.named_arrays("head"));
        out
    }

    fn checkpoint_config(&self) -> serde_json::Value {
        json!({
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "k_graph": self.k_graph,
        })
    }

    fn seed(&self) -> u64 {
        self.seed
    }
}
