//! PointNet-style classifier: a shared per-point MLP, coordinate-wise max
//! pooling into a global feature, and a small classifier head.

use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{max_pool_backward, max_pool_rows, softmax_ce, Act, Mlp};
use crate::rng::rng_from;
use crate::scalar::Real;

use super::{Classifier, InputBackward};

#[derive(Clone, Debug)]
pub struct PointNetMini<R: Real> {
    pub body: Mlp<R>,
    pub head: Mlp<R>,
    num_classes: usize,
    feature_dim: usize,
    seed: u64,
}

impl<R: Real> PointNetMini<R> {
    /// Default widths: per-point 3 -> 64 -> 128 -> d_f, head d_f -> 128 -> C.
    pub fn new(num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        Self::custom(
            &[3, 64, 128, feature_dim],
            &[feature_dim, 128, num_classes],
            Act::Gelu,
            seed,
        )
    }

    /// Arbitrary widths, used by tests and toy constructions. The body's
    /// last width is the feature dimension; the head's last is the class
    /// count.
    pub fn custom(body_dims: &[usize], head_dims: &[usize], act: Act, seed: u64) -> Self {
        assert_eq!(body_dims[0], 3, "body consumes raw coordinates");
        assert_eq!(
            body_dims.last(),
            head_dims.first(),
            "head must consume the pooled feature"
        );
        let mut rng = rng_from(seed);
        let body = Mlp::seeded(body_dims, act, true, &mut rng);
        let head = Mlp::seeded(head_dims, act, false, &mut rng);
        Self {
            num_classes: *head_dims.last().expect("head dims"),
            feature_dim: *body_dims.last().expect("body dims"),
            seed,
            body,
            head,
        }
    }

    fn flat_coords(cloud: &PointCloud<R>) -> Vec<R> {
        let mut x = Vec::with_capacity(cloud.len() * 3);
        for p in cloud.points() {
            x.extend_from_slice(p);
        }
        x
    }
}

impl<R: Real> Classifier<R> for PointNetMini<R> {
    fn name(&self) -> &str {
        "pointnet_mini"
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn forward(&self, cloud: &PointCloud<R>) -> Result<(Vec<R>, Vec<R>)> {
        let n = cloud.len();
        let per_point = self.body.forward_batch(&Self::flat_coords(cloud), n);
        let (feature, _) = max_pool_rows(&per_point, n, self.feature_dim);
        let logits = self.head.forward_batch(&feature, 1);
        Ok((logits, feature))
    }

    fn forward_backward_input(
        &self,
        cloud: &PointCloud<R>,
        upstream: &mut dyn FnMut(&[R], &[R]) -> (Vec<R>, Vec<R>),
    ) -> Result<InputBackward<R>> {
        let n = cloud.len();
        let body_cache = self.body.forward_cached(&Self::flat_coords(cloud), n);
        let (feature, pool_arg) = max_pool_rows(body_cache.output(), n, self.feature_dim);
        let head_cache = self.head.forward_cached(&feature, 1);
        let logits = head_cache.output().to_vec();

        let (d_logits, d_feature_up) = upstream(&logits, &feature);
        debug_assert_eq!(d_logits.len(), self.num_classes);
        debug_assert_eq!(d_feature_up.len(), self.feature_dim);

        let mut head_grads = vec![R::zero(); self.head.param_count()];
        let mut d_feature = self
            .head
            .backward_batch(&head_cache, &d_logits, &mut head_grads, true)
            .expect("input grad requested");
        for (d, up) in d_feature.iter_mut().zip(d_feature_up.iter()) {
            *d += *up;
        }

        let mut d_body_out = vec![R::zero(); n * self.feature_dim];
        max_pool_backward(&d_feature, &pool_arg, self.feature_dim, &mut d_body_out);

        let mut body_grads = vec![R::zero(); self.body.param_count()];
        let d_coords = self
            .body
            .backward_batch(&body_cache, &d_body_out, &mut body_grads, true)
            .expect("input grad requested");

        let input_grad = d_coords
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(InputBackward { logits, feature, input_grad })
    }

    fn ce_param_grads(&self, cloud: &PointCloud<R>, label: usize) -> Result<(R, Vec<R>)> {
        if label >= self.num_classes {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        let n = cloud.len();
        let body_cache = self.body.forward_cached(&Self::flat_coords(cloud), n);
        let (feature, pool_arg) = max_pool_rows(body_cache.output(), n, self.feature_dim);
        let head_cache = self.head.forward_cached(&feature, 1);
        let (loss, d_logits) = softmax_ce(head_cache.output(), label);

        let mut grads = vec![R::zero(); self.param_count()];
        let body_n = self.body.param_count();
        let (body_grads, head_grads) = grads.split_at_mut(body_n);
        let d_feature = self
            .head
            .backward_batch(&head_cache, &d_logits, head_grads, true)
            .expect("feature grad");
        let mut d_body_out = vec![R::zero(); n * self.feature_dim];
        max_pool_backward(&d_feature, &pool_arg, self.feature_dim, &mut d_body_out);
        self.body.backward_batch(&body_cache, &d_body_out, body_grads, false);
        Ok((loss, grads))
    }

    fn param_count(&self) -> usize {
        self.body.param_count() + self.head.param_count()
    }

    fn params(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.param_count());
        self.body.params_extend(&mut out);
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
        self.body.params_load(params, &mut offset);
        self.head.params_load(params, &mut offset);
        Ok(())
    }

    fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = self.body.named_arrays("body");
        out.extend(self.head.named_arrays("head"));
        out
    }

    fn checkpoint_config(&self) -> serde_json::Value {
        json!({ "num_classes": self.num_classes, "feature_dim": self.feature_dim })
    }

    fn seed(&self) -> u64 {
        self.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victims::input_gradient;
    use crate::Cloud;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> Cloud {
        let mut rng = rng_from(seed);
        let pts = (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn default_param_count_matches_layer_sum() {
        // body: 3*64+64 + 64*128+128 + 128*128+128; head: 128*128+128 + 128*8+8
        let expect = (3 * 64 + 64)
            + (64 * 128 + 128)
            + (128 * 128 + 128)
            + (128 * 128 + 128)
            + (128 * 8 + 8);
        let model = PointNetMini::<f64>::new(8, 128, 0);
        assert_eq!(model.param_count(), expect);
        assert_eq!(model.param_count(), 42_632);
    }

    #[test]
    fn permutation_invariance() {
        let model = PointNetMini::<f64>::new(8, 32, 3);
        let cloud = random_cloud(40, 1);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.reverse();
        perm.swap(3, 17);
        let permuted =
            PointCloud::new(perm.iter().map(|&i| cloud.point(i)).collect()).unwrap();
        let (la, fa) = model.forward(&cloud).unwrap();
        let (lb, fb) = model.forward(&permuted).unwrap();
        for (a, b) in la.iter().zip(&lb) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in fa.iter().zip(&fb) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn duplicating_points_keeps_feature() {
        let model = PointNetMini::<f64>::new(8, 32, 4);
        let cloud = random_cloud(20, 2);
        let mut doubled = cloud.points().to_vec();
        doubled.extend_from_slice(cloud.points());
        let doubled = PointCloud::new(doubled).unwrap();
        let (_, fa) = model.forward(&cloud).unwrap();
        let (_, fb) = model.forward(&doubled).unwrap();
        for (a, b) in fa.iter().zip(&fb) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_body_weights_give_zero_input_gradient() {
        let mut model = PointNetMini::<f64>::new(4, 16, 5);
        let mut params = model.params();
        let body_n = model.body.param_count();
        for p in params.iter_mut().take(body_n) {
            *p = 0.0;
        }
        model.set_params(&params).unwrap();
        let cloud = random_cloud(10, 3);
        let grad = input_gradient(&model, &cloud, 1).unwrap();
        for g in grad {
            assert_eq!(g, [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn temperature_scaling_preserves_gradient_signs() {
        // Linear two-class toy: identity-free body (no activation), so the
        // input gradient is p1 * (w1 - w0) for label 0; scaling the head by
        // 1/T rescales p1 > 0 and the head rows together, leaving the sign
        // pattern of the gradient unchanged.
        let mut model = PointNetMini::<f64>::custom(&[3, 4], &[4, 2], Act::None, 6);
        let cloud = PointCloud::new(vec![[0.3, -0.7, 0.2]]).unwrap();
        let g1 = input_gradient(&model, &cloud, 0).unwrap()[0];
        let mut params = model.params();
        let body_n = model.body.param_count();
        for p in params.iter_mut().skip(body_n) {
            *p *= 0.25; // temperature 4
        }
        model.set_params(&params).unwrap();
        let g2 = input_gradient(&model, &cloud, 0).unwrap()[0];
        for d in 0..3 {
            assert_eq!(g1[d].signum(), g2[d].signum(), "dim {d}: {g1:?} vs {g2:?}");
            assert!(g1[d] != 0.0);
        }
    }
}
