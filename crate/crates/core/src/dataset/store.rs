//! Persistent keyed store of clean-adversarial pairs. One record per
//! (example, attack, victim); writes overwrite on duplicate keys and the
//! manifest keeps keys sorted so load order is stable across runs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::io;
use crate::scalar::Real;

use super::DatasetSplit;

/// Attack name used for degenerate clean pairs (adversarial == clean).
pub const CLEAN_ATTACK: &str = "clean";

/// A clean cloud paired with its attacked version under a named attack and
/// victim. The label is the clean ground truth; untargeted attacks never
/// change it.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord<R: Real> {
    pub example_id: String,
    pub attack_name: String,
    pub victim_name: String,
    pub clean: PointCloud<R>,
    pub adversarial: PointCloud<R>,
    pub label: usize,
}

impl<R: Real> PairRecord<R> {
    pub fn key(&self) -> String {
        pair_key(&self.example_id, &self.attack_name, &self.victim_name)
    }
}

pub fn pair_key(example_id: &str, attack: &str, victim: &str) -> String {
    format!("{example_id}__{attack}__{victim}")
}

/// Optional attack/victim filter for [`load_pairs`].
#[derive(Clone, Debug, Default)]
pub struct PairFilter {
    pub attack: Option<String>,
    pub victim: Option<String>,
}

impl PairFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn attack(name: &str) -> Self {
        Self { attack: Some(name.to_string()), victim: None }
    }

    pub fn attack_victim(attack: &str, victim: &str) -> Self {
        Self { attack: Some(attack.to_string()), victim: Some(victim.to_string()) }
    }

    fn matches(&self, meta: &io::RecordMeta) -> bool {
        let attack_ok = self
            .attack
            .as_deref()
            .map_or(true, |want| meta.attack_name.as_deref() == Some(want));
        let victim_ok = self
            .victim
            .as_deref()
            .map_or(true, |want| meta.victim_name.as_deref() == Some(want));
        attack_ok && victim_ok
    }
}

/// Persists records keyed by (example_id, attack, victim), overwriting on
/// duplicate keys. Returns the number written.
pub fn store_pairs<R: Real>(store_path: &Path, records: &[PairRecord<R>]) -> Result<usize> {
    let dir = io::records_dir(store_path);
    std::fs::create_dir_all(&dir)?;
    let mut keys = Vec::with_capacity(records.len());
    for rec in records {
        let key = rec.key();
        let meta = io::RecordMeta {
            format_version: io::FORMAT_VERSION.to_string(),
            example_id: rec.example_id.clone(),
            label: rec.label,
            n_points: rec.clean.len(),
            attack_name: Some(rec.attack_name.clone()),
            victim_name: Some(rec.victim_name.clone()),
            n_adversarial: Some(rec.adversarial.len()),
        };
        io::write_json(&dir.join(format!("{key}.json")), &meta)?;
        io::write_coords(&dir.join(format!("{key}.clean.f32")), &rec.clean)?;
        io::write_coords(&dir.join(format!("{key}.adv.f32")), &rec.adversarial)?;
        keys.push(key);
    }
    io::upsert_manifest(store_path, &keys, None)?;
    Ok(records.len())
}

/// Loads matching records in sorted-key order. A filter with no matches
/// yields an empty collection; a missing store is an I/O error.
pub fn load_pairs<R: Real>(store_path: &Path, filter: &PairFilter) -> Result<Vec<PairRecord<R>>> {
    let manifest = io::load_manifest(store_path)?;
    let dir = io::records_dir(store_path);
    let mut out = Vec::new();
    for key in &manifest.keys {
        let meta: io::RecordMeta = io::read_json(&dir.join(format!("{key}.json")))?;
        if !filter.matches(&meta) {
            continue;
        }
        let clean = io::read_coords(&dir.join(format!("{key}.clean.f32")))?;
        let adv = io::read_coords(&dir.join(format!("{key}.adv.f32")))?;
        out.push(PairRecord {
            example_id: meta.example_id,
            attack_name: meta.attack_name.ok_or_else(|| {
                Error::Format(format!("record {key} missing attack_name"))
            })?,
            victim_name: meta.victim_name.ok_or_else(|| {
                Error::Format(format!("record {key} missing victim_name"))
            })?,
            clean: clean.cast(),
            adversarial: adv.cast(),
            label: meta.label,
        });
    }
    Ok(out)
}

/// Degenerate (x, x) pairs for every example of a split, under the
/// reserved attack name `clean`.
pub fn clean_pairs<R: Real>(split: &DatasetSplit<R>, victim_name: &str) -> Vec<PairRecord<R>> {
    split
        .examples
        .iter()
        .map(|ex| PairRecord {
            example_id: ex.example_id.clone(),
            attack_name: CLEAN_ATTACK.to_string(),
            victim_name: victim_name.to_string(),
            clean: ex.cloud.clone(),
            adversarial: ex.cloud.clone(),
            label: ex.label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, DatasetConfig};
    use crate::Cloud;
    use tempfile::tempdir;

    fn record(id: &str, attack: &str, x: f64) -> PairRecord<f64> {
        let clean: Cloud = PointCloud::new(vec![[x, 0.0, 0.0], [0.0, x, 0.0]]).unwrap();
        let adv: Cloud = PointCloud::new(vec![[x + 0.5, 0.0, 0.0], [0.0, x, 0.0]]).unwrap();
        PairRecord {
            example_id: id.to_string(),
            attack_name: attack.to_string(),
            victim_name: "toy".to_string(),
            clean,
            adversarial: adv,
            label: 1,
        }
    }

    #[test]
    fn round_trip_and_filters() {
        let dir = tempdir().unwrap();
        let recs: Vec<_> = (0..10)
            .map(|i| record(&format!("e{i:02}"), if i % 2 == 0 { "pgd" } else { "drop" }, i as f64))
            .collect();
        assert_eq!(store_pairs(dir.path(), &recs).unwrap(), 10);

        let all: Vec<PairRecord<f64>> = load_pairs(dir.path(), &PairFilter::all()).unwrap();
        assert_eq!(all.len(), 10);

        let pgd: Vec<PairRecord<f64>> = load_pairs(dir.path(), &PairFilter::attack("pgd")).unwrap();
        assert_eq!(pgd.len(), 5);
        assert!(pgd.iter().all(|r| r.attack_name == "pgd"));

        let none: Vec<PairRecord<f64>> =
            load_pairs(dir.path(), &PairFilter::attack("missing")).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn duplicate_key_last_wins() {
        let dir = tempdir().unwrap();
        store_pairs(dir.path(), &[record("a", "pgd", 1.0)]).unwrap();
        store_pairs(dir.path(), &[record("a", "pgd", 2.0)]).unwrap();
        let all: Vec<PairRecord<f64>> = load_pairs(dir.path(), &PairFilter::all()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].clean.point(0)[0], 2.0);
    }

    #[test]
    fn load_order_stable() {
        let dir = tempdir().unwrap();
        // Insert out of order; manifest sorts keys.
        store_pairs(dir.path(), &[record("zz", "pgd", 1.0), record("aa", "pgd", 2.0)]).unwrap();
        let all: Vec<PairRecord<f64>> = load_pairs(dir.path(), &PairFilter::all()).unwrap();
        assert_eq!(all[0].example_id, "aa");
        assert_eq!(all[1].example_id, "zz");
    }

    #[test]
    fn missing_store_is_io_error() {
        let dir = tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(
            load_pairs::<f64>(&missing, &PairFilter::all()),
            Err(crate::Error::Io(_))
        ));
    }

    #[test]
    fn clean_pairs_are_degenerate() {
        let cfg = DatasetConfig { train_per_class: 1, test_per_class: 1, points_per_cloud: 32, seed: 5 };
        let ds = build_dataset::<f64>(&cfg).unwrap();
        let pairs = clean_pairs(&ds.train, "toy");
        assert_eq!(pairs.len(), ds.train.len());
        for (p, ex) in pairs.iter().zip(&ds.train.examples) {
            assert_eq!(p.clean, p.adversarial);
            assert_eq!(p.clean, ex.cloud);
            assert_eq!(p.attack_name, CLEAN_ATTACK);
        }
    }
}
