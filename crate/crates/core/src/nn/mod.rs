//! Minimal dense-network machinery: shared-MLP layers with hand-written
//! backprop, max pooling with argmax routing, Adam, and a stable softmax
//! cross-entropy. Everything operates on flat row-major buffers, one row
//! per point (or per edge), so the same code serves per-point and
//! per-neighbor shared MLPs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Pointwise activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    None,
    Relu,
    Gelu,
}

impl Act {
    #[inline]
    pub fn f<R: Real>(self, x: R) -> R {
        match self {
            Act::None => x,
            Act::Relu => {
                if x > R::zero() {
                    x
                } else {
                    R::zero()
                }
            }
            Act::Gelu => {
                // tanh approximation: 0.5 x (1 + tanh(c (x + a x^3)))
                let a = R::of(0.044715);
                let c = R::of(0.797_884_560_802_865_4);
                let u = c * (x + a * x * x * x);
                R::of(0.5) * x * (R::one() + u.tanh())
            }
        }
    }

    #[inline]
    pub fn df<R: Real>(self, x: R) -> R {
        match self {
            Act::None => R::one(),
            Act::Relu => {
                if x > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Act::Gelu => {
                let a = R::of(0.044715);
                let c = R::of(0.797_884_560_802_865_4);
                let half = R::of(0.5);
                let u = c * (x + a * x * x * x);
                let t = u.tanh();
                let du = c * (R::one() + R::of(3.0) * a * x * x);
                half * (R::one() + t) + half * x * (R::one() - t * t) * du
            }
        }
    }
}

/// Dense affine layer, weights stored row-major `[out][in]`.
#[derive(Clone, Debug)]
pub struct Linear<R: Real> {
    pub w: Vec<R>,
    pub b: Vec<R>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<R: Real> Linear<R> {
    /// Uniform init on (-1/sqrt(in), 1/sqrt(in)).
    pub fn seeded<G: Rng>(in_dim: usize, out_dim: usize, rng: &mut G) -> Self {
        let s = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| R::of((rng.gen::<f64>() * 2.0 - 1.0) * s))
            .collect();
        let b = (0..out_dim)
            .map(|_| R::of((rng.gen::<f64>() * 2.0 - 1.0) * s))
            .collect();
        Self { w, b, in_dim, out_dim }
    }

    /// All-zero layer (identity-at-init decoder heads).
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![R::zero(); in_dim * out_dim],
            b: vec![R::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `y[r] = W x[r] + b` for each of `n` rows.
    pub fn forward_batch(&self, x: &[R], n: usize, y: &mut [R]) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        debug_assert_eq!(y.len(), n * self.out_dim);
        for r in 0..n {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (wi, xi) in wrow.iter().zip(xr.iter()) {
                    acc = acc + *wi * *xi;
                }
                *yo = acc;
            }
        }
    }

    /// Accumulates parameter grads into `dw`/`db` (when given) and input
    /// grads into `dx` (when given; must be zeroed by the caller).
    pub fn backward_batch(
        &self,
        x: &[R],
        n: usize,
        dy: &[R],
        mut dwb: Option<(&mut [R], &mut [R])>,
        mut dx: Option<&mut [R]>,
    ) {
        for r in 0..n {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let dyr = &dy[r * self.out_dim..(r + 1) * self.out_dim];
            if let Some((dw, db)) = dwb.as_mut() {
                for (o, &g) in dyr.iter().enumerate() {
                    if g == R::zero() {
                        continue;
                    }
                    db[o] += g;
                    let dwrow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
                    for (dwi, xi) in dwrow.iter_mut().zip(xr.iter()) {
                        *dwi += g * *xi;
                    }
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxr = &mut dx[r * self.in_dim..(r + 1) * self.in_dim];
                for (o, &g) in dyr.iter().enumerate() {
                    if g == R::zero() {
                        continue;
                    }
                    let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                    for (dxi, wi) in dxr.iter_mut().zip(wrow.iter()) {
                        *dxi += g * *wi;
                    }
                }
            }
        }
    }
}

/// A stack of [`Linear`] layers with a shared activation. The final layer
/// is activated only when `activate_last` is set.
#[derive(Clone, Debug)]
pub struct Mlp<R: Real> {
    pub layers: Vec<Linear<R>>,
    pub act: Act,
    pub activate_last: bool,
}

/// Forward-pass record needed by [`Mlp::backward_batch`].
pub struct MlpCache<R: Real> {
    /// `xs[0]` is the input batch; `xs[l+1]` the activated output of layer `l`.
    xs: Vec<Vec<R>>,
    /// Pre-activation outputs per layer.
    pres: Vec<Vec<R>>,
    n: usize,
}

impl<R: Real> MlpCache<R> {
    pub fn output(&self) -> &[R] {
        self.xs.last().expect("mlp has layers")
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

impl<R: Real> Mlp<R> {
    pub fn seeded<G: Rng>(dims: &[usize], act: Act, activate_last: bool, rng: &mut G) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| Linear::seeded(w[0], w[1], rng))
            .collect();
        Self { layers, act, activate_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("layers").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("layers").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    fn activated(&self, layer: usize) -> bool {
        self.activate_last || layer + 1 < self.layers.len()
    }

    /// Applies the stack to `n` rows, keeping the per-layer record.
    pub fn forward_cached(&self, x: &[R], n: usize) -> MlpCache<R> {
        let mut xs = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        xs.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = vec![R::zero(); n * layer.out_dim];
            layer.forward_batch(xs.last().expect("input"), n, &mut pre);
            let post = if self.activated(l) {
                pre.iter().map(|&v| self.act.f(v)).collect()
            } else {
                pre.clone()
            };
            pres.push(pre);
            xs.push(post);
        }
        MlpCache { xs, pres, n }
    }

    /// Forward without a cache.
    pub fn forward_batch(&self, x: &[R], n: usize) -> Vec<R> {
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![R::zero(); n * layer.out_dim];
            layer.forward_batch(&cur, n, &mut next);
            if self.activated(l) {
                for v in next.iter_mut() {
                    *v = self.act.f(*v);
                }
            }
            cur = next;
        }
        cur
    }

    /// Backprop through the stack. When `grads` is given, parameter grads
    /// are accumulated into it (layout: per layer, weights then bias, in
    /// order). Returns the gradient w.r.t. the input batch when `want_dx`.
    pub fn backward_batch(
        &self,
        cache: &MlpCache<R>,
        d_out: &[R],
        mut grads: Option<&mut [R]>,
        want_dx: bool,
    ) -> Option<Vec<R>> {
        if let Some(g) = grads.as_ref() {
            debug_assert_eq!(g.len(), self.param_count());
        }
        let n = cache.n;
        let mut dz = d_out.to_vec();
        let mut offset = self.param_count();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(l) {
                for (d, &pre) in dz.iter_mut().zip(cache.pres[l].iter()) {
                    *d = *d * self.act.df(pre);
                }
            }
            offset -= layer.param_count();
            let dwb = grads.as_deref_mut().map(|g| {
                let (dw, db) =
                    g[offset..offset + layer.param_count()].split_at_mut(layer.w.len());
                (dw, db)
            });
            let need_dx = l > 0 || want_dx;
            let mut dx = if need_dx {
                Some(vec![R::zero(); n * layer.in_dim])
            } else {
                None
            };
            layer.backward_batch(&cache.xs[l], n, &dz, dwb, dx.as_deref_mut());
            match dx {
                Some(v) => dz = v,
                None => return None,
            }
        }
        Some(dz)
    }

    pub fn params_extend(&self, out: &mut Vec<R>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
    }

    pub fn params_load(&mut self, src: &[R], offset: &mut usize) {
        for layer in &mut self.layers {
            let wn = layer.w.len();
            layer.w.copy_from_slice(&src[*offset..*offset + wn]);
            *offset += wn;
            let bn = layer.b.len();
            layer.b.copy_from_slice(&src[*offset..*offset + bn]);
            *offset += bn;
        }
    }

    /// Named parameter arrays in layout order, for checkpoints.
    pub fn named_arrays(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{l}.w"), layer.w.iter().map(|v| v.f64()).collect()));
            out.push((format!("{prefix}.{l}.b"), layer.b.iter().map(|v| v.f64()).collect()));
        }
        out
    }
}

/// Coordinate-wise max over `n` rows of width `dim`. Returns the pooled row
/// and the argmax row per coordinate (ties: lowest row).
pub fn max_pool_rows<R: Real>(x: &[R], n: usize, dim: usize) -> (Vec<R>, Vec<usize>) {
    debug_assert_eq!(x.len(), n * dim);
    let mut out = x[..dim].to_vec();
    let mut arg = vec![0usize; dim];
    for r in 1..n {
        let row = &x[r * dim..(r + 1) * dim];
        for d in 0..dim {
            if row[d] > out[d] {
                out[d] = row[d];
                arg[d] = r;
            }
        }
    }
    (out, arg)
}

/// Max over consecutive groups of `group_size` rows; `groups * group_size`
/// rows in, `groups` rows out. Argmax indices are global row numbers.
pub fn max_pool_groups<R: Real>(
    x: &[R],
    groups: usize,
    group_size: usize,
    dim: usize,
) -> (Vec<R>, Vec<usize>) {
    debug_assert_eq!(x.len(), groups * group_size * dim);
    let mut out = vec![R::zero(); groups * dim];
    let mut arg = vec![0usize; groups * dim];
    for g in 0..groups {
        let base = g * group_size;
        let o = &mut out[g * dim..(g + 1) * dim];
        let a = &mut arg[g * dim..(g + 1) * dim];
        o.copy_from_slice(&x[base * dim..(base + 1) * dim]);
        for slot in a.iter_mut() {
            *slot = base;
        }
        for r in base + 1..base + group_size {
            let row = &x[r * dim..(r + 1) * dim];
            for d in 0..dim {
                if row[d] > o[d] {
                    o[d] = row[d];
                    a[d] = r;
                }
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the argmax rows. `dx` must be zeroed.
pub fn max_pool_backward<R: Real>(d_pooled: &[R], arg: &[usize], dim: usize, dx: &mut [R]) {
    debug_assert_eq!(d_pooled.len(), arg.len());
    for (slot, (&g, &r)) in d_pooled.iter().zip(arg.iter()).enumerate() {
        let d = slot % dim;
        dx[r * dim + d] += g;
    }
}

/// Stable softmax cross-entropy; returns the loss and d(loss)/d(logits).
pub fn softmax_ce<R: Real>(logits: &[R], label: usize) -> (R, Vec<R>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = logits.iter().map(|&z| (z - max).exp()).collect();
    let z_sum: R = exps.iter().cloned().sum();
    let loss = z_sum.ln() + max - logits[label];
    let mut d: Vec<R> = exps.iter().map(|&e| e / z_sum).collect();
    d[label] = d[label] - R::one();
    (loss, d)
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax<R: Real>(xs: &[R]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Adam optimizer over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam<R: Real> {
    pub lr: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
    t: u64,
    m: Vec<R>,
    v: Vec<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr: R::of(lr),
            beta1: R::of(0.9),
            beta2: R::of(0.999),
            eps: R::of(1e-8),
            t: 0,
            m: vec![R::zero(); dim],
            v: vec![R::zero(); dim],
        }
    }

    pub fn step(&mut self, params: &mut [R], grads: &[R]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = R::one() - self.beta1.powi(self.t as i32);
        let b2t = R::one() - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (R::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (R::one() - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] = params[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn linear_param_count_example() {
        // A single 3 -> 64 affine layer: 3*64 + 64 = 256.
        let l = Linear::<f64>::zeros(3, 64);
        assert_eq!(l.param_count(), 256);
    }

    #[test]
    fn linear_forward_known_values() {
        let mut l = Linear::<f64>::zeros(2, 2);
        l.w = vec![1.0, 2.0, 3.0, 4.0]; // rows: [1 2], [3 4]
        l.b = vec![0.5, -0.5];
        let mut y = vec![0.0; 2];
        l.forward_batch(&[1.0, 1.0], 1, &mut y);
        assert_eq!(y, vec![3.5, 6.5]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // Values of the tanh-form GeLU.
        let g = Act::Gelu;
        assert!((g.f(0.0f64)).abs() < 1e-12);
        assert!((g.f(1.0f64) - 0.841_192).abs() < 1e-4);
        assert!((g.f(-1.0f64) + 0.158_808).abs() < 1e-4);
    }

    #[test]
    fn activations_match_finite_differences() {
        for act in [Act::Relu, Act::Gelu] {
            for &x in &[-1.7f64, -0.3, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (act.f(x + h) - act.f(x - h)) / (2.0 * h);
                assert!((act.df(x) - fd).abs() < 1e-6, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = rng_from(5);
        let mlp = Mlp::<f64>::seeded(&[3, 5, 2], Act::Gelu, false, &mut rng);
        let x = vec![0.3, -0.2, 0.8, -0.5, 0.1, 0.4];
        let n = 2;
        // Scalar objective: sum of outputs squared.
        let object = |m: &Mlp<f64>, x: &[f64]| -> f64 {
            m.forward_batch(x, n).iter().map(|v| v * v).sum()
        };
        let cache = mlp.forward_cached(&x, n);
        let d_out: Vec<f64> = cache.output().iter().map(|v| 2.0 * v).collect();
        let mut grads = vec![0.0; mlp.param_count()];
        let dx = mlp.backward_batch(&cache, &d_out, &mut grads, true).unwrap();

        // Input gradient check.
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (object(&mlp, &xp) - object(&mlp, &xm)) / (2.0 * h);
            assert!((dx[i] - fd).abs() < 1e-6, "dx[{i}]: {} vs {}", dx[i], fd);
        }

        // Parameter gradient check (spot-check a few entries per layer).
        let mut params = Vec::new();
        mlp.params_extend(&mut params);
        for &i in &[0usize, 3, 7, params.len() - 1, params.len() - 2] {
            let mut mp = mlp.clone();
            let mut pm = params.clone();
            pm[i] += h;
            let mut off = 0;
            mp.params_load(&pm, &mut off);
            let fp = object(&mp, &x);
            pm[i] -= 2.0 * h;
            let mut off = 0;
            mp.params_load(&pm, &mut off);
            let fm = object(&mp, &x);
            let fd = (fp - fm) / (2.0 * h);
            assert!((grads[i] - fd).abs() < 1e-6, "grads[{i}]: {} vs {}", grads[i], fd);
        }
    }

    #[test]
    fn max_pool_routes_ties_to_lowest_row() {
        let x = vec![1.0, 5.0, 1.0, 5.0, 2.0, 0.0];
        let (out, arg) = max_pool_rows(&x, 3, 2);
        assert_eq!(out, vec![2.0, 5.0]);
        assert_eq!(arg, vec![2, 0]);
        let mut dx = vec![0.0; 6];
        max_pool_backward(&[1.0, 1.0], &arg, 2, &mut dx);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn grouped_pool_matches_rowwise() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        let (out, arg) = max_pool_groups(&x, 2, 3, 2);
        let (r0, a0) = max_pool_rows(&x[..6], 3, 2);
        let (r1, a1) = max_pool_rows(&x[6..], 3, 2);
        assert_eq!(&out[..2], &r0[..]);
        assert_eq!(&out[2..], &r1[..]);
        assert_eq!(arg[0], a0[0]);
        assert_eq!(arg[2], a1[0] + 3);
    }

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let logits = vec![1.0f64, -0.5, 2.0, 0.1];
        let (loss, d) = softmax_ce(&logits, 2);
        assert!(loss > 0.0);
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
        assert!(d[2] < 0.0);
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut p = vec![5.0f64, -3.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 0.05), "{p:?}");
    }
}
