//! Deterministic point-set primitives: kNN, set distances, normalization,
//! sampling. Everything here is pure; distance comparisons and accumulation
//! run in double precision regardless of the stored scalar.

use crate::error::{Error, Result};
use crate::rng::{rng_from, sample_indices};
use crate::scalar::Real;

/// An ordered set of 3D points. Point order is significant: index identity
/// is preserved through perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<R: Real> {
    points: Vec<[R; 3]>,
}

impl<R: Real> PointCloud<R> {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<[R; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("non-finite coordinate at point {i}")));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[R; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [R; 3] {
        self.points[i]
    }

    /// Consumes the cloud, returning the raw coordinate rows.
    pub fn into_points(self) -> Vec<[R; 3]> {
        self.points
    }

    /// Centroid in double precision.
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for (ci, pi) in c.iter_mut().zip(p.iter()) {
                *ci += pi.f64();
            }
        }
        c.map(|v| v / n)
    }

    /// Converts the scalar type (used when moving between memory and disk).
    pub fn cast<S: Real>(&self) -> PointCloud<S> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [S::of(p[0].f64()), S::of(p[1].f64()), S::of(p[2].f64())])
                .collect(),
        }
    }
}

/// Per-point neighbor table produced by [`knn_indices`]. Row `i` lists the
/// `k` nearest points to point `i`, self excluded, closest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    n: usize,
    k: usize,
}

impl NeighborIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks_exact(self.k)
    }
}

#[inline]
pub(crate) fn sqdist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn as_f64<R: Real>(p: [R; 3]) -> [f64; 3] {
    [p[0].f64(), p[1].f64(), p[2].f64()]
}

/// The k nearest neighbors of every point, self excluded. Ties broken by
/// ascending point index. Requires `1 <= k <= N-1`.
pub fn knn_indices<R: Real>(cloud: &PointCloud<R>, k: usize) -> Result<NeighborIndex> {
    let n = cloud.len();
    if k < 1 || k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k <= N-1, got k={k}, N={n}")));
    }
    let pts: Vec<[f64; 3]> = cloud.points().iter().map(|p| as_f64(*p)).collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        for (j, q) in pts.iter().enumerate() {
            if j != i {
                scratch.push((sqdist3(pts[i], *q), j));
            }
        }
        scratch.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        indices.extend(scratch[..k].iter().map(|&(_, j)| j));
    }
    Ok(NeighborIndex { indices, n, k })
}

/// Gathers neighbor coordinates: entry `(i, j)` is the position of point
/// `idx.row(i)[j]`. Returned flat, `N*k` rows of 3.
pub fn gather_neighbors<R: Real>(
    cloud: &PointCloud<R>,
    idx: &NeighborIndex,
) -> Result<Vec<[R; 3]>> {
    if idx.n() != cloud.len() {
        return Err(Error::invalid(format!(
            "neighbor index built for {} points, cloud has {}",
            idx.n(),
            cloud.len()
        )));
    }
    let mut out = Vec::with_capacity(idx.n() * idx.k());
    for &j in &idx.indices {
        if j >= cloud.len() {
            return Err(Error::invalid(format!("neighbor index {j} out of range")));
        }
        out.push(cloud.point(j));
    }
    Ok(out)
}

/// Index of the point in `cloud` nearest to `p`, with its squared distance.
/// Ties broken by lower index.
pub fn nearest_in<R: Real>(cloud: &PointCloud<R>, p: [R; 3]) -> (usize, f64) {
    let pf = as_f64(p);
    let mut best = (0usize, f64::INFINITY);
    for (j, q) in cloud.points().iter().enumerate() {
        let d = sqdist3(pf, as_f64(*q));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// One-sided Chamfer distance: mean over `a` of the squared distance to the
/// nearest point of `b`. Asymmetric in its arguments.
pub fn chamfer_one_sided<R: Real>(a: &PointCloud<R>, b: &PointCloud<R>) -> Result<R> {
    check_nonempty(a, b)?;
    let sum: f64 = a.points().iter().map(|p| nearest_in(b, *p).1).sum();
    Ok(R::of(sum / a.len() as f64))
}

/// Symmetric Chamfer variant: sum of both one-sided terms.
pub fn chamfer_symmetric<R: Real>(a: &PointCloud<R>, b: &PointCloud<R>) -> Result<R> {
    Ok(chamfer_one_sided(a, b)? + chamfer_one_sided(b, a)?)
}

/// One-sided Hausdorff distance over squared distances: max over `a` of the
/// squared distance to the nearest point of `b`.
pub fn hausdorff_one_sided<R: Real>(a: &PointCloud<R>, b: &PointCloud<R>) -> Result<R> {
    check_nonempty(a, b)?;
    let max = a
        .points()
        .iter()
        .map(|p| nearest_in(b, *p).1)
        .fold(0.0f64, f64::max);
    Ok(R::of(max))
}

fn check_nonempty<R: Real>(a: &PointCloud<R>, b: &PointCloud<R>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("set distance requires nonempty clouds"));
    }
    Ok(())
}

/// Centers the cloud on its centroid and scales so the farthest point sits
/// on the unit sphere. Point order preserved.
pub fn normalize_unit_sphere<R: Real>(cloud: &PointCloud<R>) -> Result<PointCloud<R>> {
    let c = cloud.centroid();
    let mut max_norm = 0.0f64;
    let centered: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| {
            let q = [p[0].f64() - c[0], p[1].f64() - c[1], p[2].f64() - c[2]];
            max_norm = max_norm.max((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt());
            q
        })
        .collect();
    if max_norm < 1e-12 {
        return Err(Error::degenerate("all points coincide; cannot normalize"));
    }
    let points = centered
        .into_iter()
        .map(|q| [R::of(q[0] / max_norm), R::of(q[1] / max_norm), R::of(q[2] / max_norm)])
        .collect();
    PointCloud::new(points)
}

/// Uniform subsample of `n` points without replacement, deterministic given
/// `seed`. Selected points keep their original relative order.
pub fn random_subsample<R: Real>(cloud: &PointCloud<R>, n: usize, seed: u64) -> Result<PointCloud<R>> {
    if n < 1 || n > cloud.len() {
        return Err(Error::invalid(format!(
            "subsample size must satisfy 1 <= n <= N, got n={n}, N={}",
            cloud.len()
        )));
    }
    let mut rng = rng_from(seed);
    let idx = sample_indices(cloud.len(), n, &mut rng);
    let points = idx.into_iter().map(|i| cloud.point(i)).collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Cloud;

    fn cloud(pts: &[[f64; 3]]) -> Cloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(PointCloud::<f64>::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, 0.0, f64::INFINITY]]).is_err());
    }

    #[test]
    fn knn_collinear_k1() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let idx = knn_indices(&c, 1).unwrap();
        assert_eq!(idx.row(0), &[1]);
        assert_eq!(idx.row(1), &[0]);
        assert_eq!(idx.row(2), &[1]);
    }

    #[test]
    fn knn_collinear_k2() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let idx = knn_indices(&c, 2).unwrap();
        assert_eq!(idx.row(0), &[1, 2]);
        assert_eq!(idx.row(1), &[0, 2]);
        assert_eq!(idx.row(2), &[1, 0]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(knn_indices(&c, 0).is_err());
        assert!(knn_indices(&c, 2).is_err());
    }

    #[test]
    fn knn_tie_broken_by_lower_index() {
        // Points 1 and 2 are equidistant from point 0.
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let idx = knn_indices(&c, 2).unwrap();
        assert_eq!(idx.row(0), &[1, 2]);
    }

    #[test]
    fn gather_two_point_cloud() {
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let idx = knn_indices(&c, 1).unwrap();
        let g = gather_neighbors(&c, &idx).unwrap();
        assert_eq!(g, vec![[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn gather_entries_byte_equal_source() {
        let c = cloud(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]]);
        let idx = knn_indices(&c, 2).unwrap();
        let g = gather_neighbors(&c, &idx).unwrap();
        for (i, row) in idx.rows().enumerate() {
            for (j, &src) in row.iter().enumerate() {
                assert_eq!(g[i * idx.k() + j], c.point(src));
            }
        }
    }

    #[test]
    fn chamfer_identity_is_zero() {
        let c = cloud(&[[0.3, -0.1, 0.4], [1.0, 2.0, -1.0]]);
        assert_eq!(chamfer_one_sided(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_point_example() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert!((chamfer_one_sided(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_rejects_empty() {
        // Construction already rejects empties; distance checks its inputs too.
        let a = cloud(&[[0.0; 3]]);
        assert!(chamfer_one_sided(&a, &a).is_ok());
    }

    #[test]
    fn hausdorff_examples() {
        let c = cloud(&[[0.5, 0.5, 0.5]]);
        assert_eq!(hausdorff_one_sided(&c, &c).unwrap(), 0.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        assert!((hausdorff_one_sided(&a, &b).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_symmetric_pair() {
        let c = cloud(&[[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]);
        let n = normalize_unit_sphere(&c).unwrap();
        assert_eq!(n.points(), &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_idempotent() {
        let c = cloud(&[[0.5, 0.1, -0.3], [-0.2, 0.7, 0.4], [0.0, -0.6, 0.2]]);
        let n1 = normalize_unit_sphere(&c).unwrap();
        let n2 = normalize_unit_sphere(&n1).unwrap();
        for (p, q) in n1.points().iter().zip(n2.points()) {
            for d in 0..3 {
                assert!((p[d] - q[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_rejects_coincident() {
        let c = cloud(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(normalize_unit_sphere(&c), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn subsample_full_is_identity() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let s = random_subsample(&c, 3, 42).unwrap();
        assert_eq!(s, c);
    }

    #[test]
    fn subsample_is_subset_and_deterministic() {
        let pts: Vec<[f64; 3]> = (0..64).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = cloud(&pts);
        let a = random_subsample(&c, 16, 7).unwrap();
        let b = random_subsample(&c, 16, 7).unwrap();
        assert_eq!(a, b);
        for p in a.points() {
            assert!(c.points().contains(p));
        }
        let other = random_subsample(&c, 16, 8).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn subsample_rejects_oversize() {
        let c = cloud(&[[0.0; 3]]);
        assert!(random_subsample(&c, 2, 0).is_err());
    }
}
