//! Synthetic labeled point clouds: eight parametric surface classes with
//! per-instance pose/scale variation, balanced train/test splits, and the
//! persistent clean-adversarial pair store.

mod shapes;
pub mod store;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, PointCloud};
use crate::io;
use crate::rng::{derive_seed, normal, rng_from};
use crate::scalar::Real;

pub use store::{clean_pairs, load_pairs, store_pairs, PairFilter, PairRecord};

/// The eight surface classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    PlaneCross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Pyramid,
        ShapeKind::Ellipsoid,
        ShapeKind::PlaneCross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::PlaneCross => "plane-cross",
        }
    }

    pub fn label(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("member")
    }

    pub fn from_label(label: usize) -> Option<ShapeKind> {
        Self::ALL.get(label).copied()
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown shape kind {s:?}")))
    }
}

/// A cloud with its class label and a split-unique identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud<R: Real> {
    pub cloud: PointCloud<R>,
    pub label: usize,
    pub example_id: String,
}

/// An ordered collection of labeled examples.
#[derive(Clone, Debug)]
pub struct DatasetSplit<R: Real> {
    pub examples: Vec<LabeledCloud<R>>,
    pub split_name: String,
    pub num_classes: usize,
}

impl<R: Real> DatasetSplit<R> {
    pub fn new(examples: Vec<LabeledCloud<R>>, split_name: &str, num_classes: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("dataset split must be nonempty"));
        }
        let mut seen = std::collections::HashSet::new();
        for ex in &examples {
            if ex.label >= num_classes {
                return Err(Error::invalid(format!(
                    "label {} out of range for {num_classes} classes",
                    ex.label
                )));
            }
            if !seen.insert(ex.example_id.as_str()) {
                return Err(Error::invalid(format!("duplicate example_id {:?}", ex.example_id)));
            }
        }
        Ok(Self { examples, split_name: split_name.to_string(), num_classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn find(&self, example_id: &str) -> Option<&LabeledCloud<R>> {
        self.examples.iter().find(|e| e.example_id == example_id)
    }
}

/// Generation parameters for the synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points_per_cloud: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_per_class: 100, test_per_class: 25, points_per_cloud: 256, seed: 7 }
    }
}

/// Train and test splits produced by [`build_dataset`].
pub struct Dataset<R: Real> {
    pub train: DatasetSplit<R>,
    pub test: DatasetSplit<R>,
}

/// Minimum points per generated cloud.
pub const MIN_POINTS: usize = 32;
const JITTER_SIGMA: f64 = 0.005;

/// Samples one labeled cloud: surface points, anisotropic scale in
/// [0.7, 1.3] per axis, a uniform random rotation, Gaussian jitter
/// (sigma 0.005), then unit-sphere normalization. Deterministic in `seed`.
pub fn generate_shape<R: Real>(kind: ShapeKind, n: usize, seed: u64) -> Result<LabeledCloud<R>> {
    if n < MIN_POINTS {
        return Err(Error::invalid(format!("need at least {MIN_POINTS} points, got {n}")));
    }
    let mut rng = rng_from(seed);
    let mut pts = shapes::sample_surface(kind, n, &mut rng);

    let scale: [f64; 3] = std::array::from_fn(|_| 0.7 + 0.6 * rand::Rng::gen::<f64>(&mut rng));
    let rot = random_rotation(&mut rng);
    for p in pts.iter_mut() {
        let s = [p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]];
        let mut q = [0.0f64; 3];
        for (r, row) in rot.iter().enumerate() {
            q[r] = row[0] * s[0] + row[1] * s[1] + row[2] * s[2];
        }
        for (c, qc) in p.iter_mut().zip(q.iter()) {
            *c = *qc + JITTER_SIGMA * normal(&mut rng);
        }
    }

    let cloud = normalize_unit_sphere(&PointCloud::new(pts)?)?;
    Ok(LabeledCloud {
        cloud: cloud.cast(),
        label: kind.label(),
        example_id: String::new(),
    })
}

/// Uniform random rotation matrix from a unit quaternion.
fn random_rotation<G: rand::Rng>(rng: &mut G) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| normal(rng));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let [w, x, y, z] = q.map(|v| v / norm);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Builds balanced train/test splits with per-example seeds derived from the
/// master seed, so rebuilding is byte-identical.
pub fn build_dataset<R: Real>(config: &DatasetConfig) -> Result<Dataset<R>> {
    if config.train_per_class == 0 || config.test_per_class == 0 {
        return Err(Error::invalid("per-class counts must be positive"));
    }
    let build_split = |name: &str, per_class: usize| -> Result<DatasetSplit<R>> {
        let mut examples = Vec::with_capacity(per_class * ShapeKind::ALL.len());
        for kind in ShapeKind::ALL {
            for i in 0..per_class {
                let seed = derive_seed(config.seed, &[name, kind.name(), &i.to_string()]);
                let mut ex = generate_shape(kind, config.points_per_cloud, seed)?;
                ex.example_id = format!("{name}-{}-{i:04}", kind.name());
                examples.push(ex);
            }
        }
        DatasetSplit::new(examples, name, ShapeKind::ALL.len())
    };
    Ok(Dataset {
        train: build_split("train", config.train_per_class)?,
        test: build_split("test", config.test_per_class)?,
    })
}

/// Persists a split as coordinate files plus sidecars under `dir`.
pub fn save_split<R: Real>(dir: &Path, split: &DatasetSplit<R>) -> Result<()> {
    let records = io::records_dir(dir);
    std::fs::create_dir_all(&records)?;
    let mut keys = Vec::with_capacity(split.len());
    for ex in &split.examples {
        let meta = io::RecordMeta {
            format_version: io::FORMAT_VERSION.to_string(),
            example_id: ex.example_id.clone(),
            label: ex.label,
            n_points: ex.cloud.len(),
            attack_name: None,
            victim_name: None,
            n_adversarial: None,
        };
        io::write_json(&records.join(format!("{}.json", ex.example_id)), &meta)?;
        io::write_coords(&records.join(format!("{}.f32", ex.example_id)), &ex.cloud)?;
        keys.push(ex.example_id.clone());
    }
    io::upsert_manifest(dir, &keys, Some((&split.split_name, split.num_classes)))
}

/// Loads a split saved by [`save_split`].
pub fn load_split<R: Real>(dir: &Path) -> Result<DatasetSplit<R>> {
    let manifest = io::load_manifest(dir)?;
    let records = io::records_dir(dir);
    let mut examples = Vec::with_capacity(manifest.keys.len());
    for key in &manifest.keys {
        let meta: io::RecordMeta = io::read_json(&records.join(format!("{key}.json")))?;
        let cloud = io::read_coords(&records.join(format!("{key}.f32")))?;
        examples.push(LabeledCloud {
            cloud: cloud.cast(),
            label: meta.label,
            example_id: meta.example_id,
        });
    }
    DatasetSplit::new(
        examples,
        manifest.split_name.as_deref().unwrap_or("unknown"),
        manifest.num_classes.unwrap_or(ShapeKind::ALL.len()),
    )
}
