//! On-disk formats: little-endian single-precision coordinate arrays with
//! JSON sidecar metadata, and layer-named checkpoint directories.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::Real;
use crate::Cloud32;

/// Version tag written into every manifest and sidecar.
pub const FORMAT_VERSION: &str = "1";

/// Writes N*3 coordinates as little-endian f32.
pub fn write_coords<R: Real>(path: &Path, cloud: &PointCloud<R>) -> Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 12);
    for p in cloud.points() {
        for c in p {
            buf.extend_from_slice(&(c.f64() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a little-endian f32 coordinate array written by [`write_coords`].
pub fn read_coords(path: &Path) -> Result<Cloud32> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.len() % 12 != 0 {
        return Err(Error::Format(format!(
            "coordinate file {} has {} bytes, expected a positive multiple of 12",
            path.display(),
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 12);
    for chunk in bytes.chunks_exact(12) {
        let x = f32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes"));
        let y = f32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes"));
        let z = f32::from_le_bytes(chunk[8..12].try_into().expect("4 bytes"));
        points.push([x, y, z]);
    }
    PointCloud::new(points)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Sidecar metadata for a single stored cloud or clean-adversarial pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RecordMeta {
    pub format_version: String,
    pub example_id: String,
    pub label: usize,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_adversarial: Option<usize>,
}

/// Directory manifest listing record keys in sorted order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DirManifest {
    pub format_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub keys: Vec<String>,
}

impl DirManifest {
    pub fn new() -> Self {
        Self { format_version: FORMAT_VERSION.to_string(), split_name: None, num_classes: None, keys: Vec::new() }
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn records_dir(dir: &Path) -> PathBuf {
    dir.join("records")
}

/// Loads a manifest, surfacing a missing store as an I/O error.
pub fn load_manifest(dir: &Path) -> Result<DirManifest> {
    let path = manifest_path(dir);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no manifest at {}", path.display()),
        )));
    }
    let m: DirManifest = read_json(&path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported store format version {:?}",
            m.format_version
        )));
    }
    Ok(m)
}

/// Inserts keys into a (possibly existing) manifest and rewrites it.
pub fn upsert_manifest(dir: &Path, new_keys: &[String], split: Option<(&str, usize)>) -> Result<()> {
    let mut manifest = if manifest_path(dir).exists() {
        load_manifest(dir)?
    } else {
        DirManifest::new()
    };
    if let Some((name, classes)) = split {
        manifest.split_name = Some(name.to_string());
        manifest.num_classes = Some(classes);
    }
    manifest.keys.extend(new_keys.iter().cloned());
    manifest.keys.sort_unstable();
    manifest.keys.dedup();
    write_json(&manifest_path(dir), &manifest)
}

/// Checkpoint manifest: architecture, seed, arbitrary config, array order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub arch: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayInfo>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub len: usize,
}

/// Writes a checkpoint directory: manifest plus one `params/<name>.f32`
/// little-endian single-precision file per named array.
pub fn save_checkpoint(
    dir: &Path,
    arch: &str,
    seed: u64,
    config: serde_json::Value,
    arrays: &[(String, Vec<f64>)],
) -> Result<()> {
    let params = dir.join("params");
    fs::create_dir_all(&params)?;
    let mut infos = Vec::with_capacity(arrays.len());
    for (name, values) in arrays {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(params.join(format!("{name}.f32")), buf)?;
        infos.push(ArrayInfo { name: name.clone(), len: values.len() });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION.to_string(),
        arch: arch.to_string(),
        seed,
        config,
        arrays: infos,
    };
    write_json(&manifest_path(dir), &manifest)
}

/// Reads a checkpoint directory back into (manifest, named arrays).
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<(String, Vec<f64>)>)> {
    let manifest: CheckpointManifest = read_json(&manifest_path(dir))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {:?}",
            manifest.format_version
        )));
    }
    let params = dir.join("params");
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for info in &manifest.arrays {
        let bytes = fs::read(params.join(format!("{}.f32", info.name)))?;
        if bytes.len() != info.len * 4 {
            return Err(Error::Format(format!(
                "array {} has {} bytes, expected {}",
                info.name,
                bytes.len(),
                info.len * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        arrays.push((info.name.clone(), values));
    }
    Ok((manifest, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn coords_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.f32");
        let cloud: Cloud32 =
            PointCloud::new(vec![[0.1f32, -2.5, 3.25], [f32::MIN_POSITIVE, 1.0, -0.0]]).unwrap();
        write_coords(&path, &cloud).unwrap();
        let back = read_coords(&path).unwrap();
        for (a, b) in cloud.points().iter().zip(back.points()) {
            for d in 0..3 {
                assert_eq!(a[d].to_bits(), b[d].to_bits());
            }
        }
    }

    #[test]
    fn truncated_coord_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.f32");
        std::fs::write(&path, [0u8; 10]).unwrap();
        assert!(read_coords(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let arrays = vec![
            ("layer.0.w".to_string(), vec![1.0f64, 0.5, -0.25]),
            ("layer.0.b".to_string(), vec![2.0f64]),
        ];
        save_checkpoint(dir.path(), "toy", 7, serde_json::json!({"d": 3}), &arrays).unwrap();
        let (manifest, loaded) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.arch, "toy");
        assert_eq!(manifest.seed, 7);
        assert_eq!(loaded, arrays);
    }
}
