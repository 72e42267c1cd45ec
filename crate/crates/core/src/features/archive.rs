//! Feature archives: one little-endian f32 blob per entry plus a JSON
//! index `{name: {rows, cols, modality}}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix, Modality};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub rows: usize,
    pub cols: usize,
    pub modality: Modality,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !name.starts_with('.')
}

/// Writes `features` under the directory `dir`.
pub fn save_archive(dir: &Path, features: &BTreeMap<String, FeatureMatrix>) -> Result<(), FeatureError> {
    let mut rows = features.values().map(FeatureMatrix::rows);
    if let Some(first) = rows.next() {
        if rows.any(|r| r != first) {
            return Err(FeatureError::Archive("all matrices in an archive must share N".into()));
        }
    }
    fs::create_dir_all(dir)?;
    let mut index = BTreeMap::new();
    for (name, m) in features {
        if !valid_name(name) {
            return Err(FeatureError::Archive(format!("invalid entry name `{name}`")));
        }
        let mut bytes = Vec::with_capacity(m.values.len() * 4);
        for v in m.values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.f32")), bytes)?;
        index.insert(name.clone(), EntryInfo { rows: m.rows(), cols: m.cols(), modality: m.modality });
    }
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_archive(dir: &Path) -> Result<BTreeMap<String, FeatureMatrix>, FeatureError> {
    let index: BTreeMap<String, EntryInfo> = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
    let mut out = BTreeMap::new();
    for (name, info) in index {
        if !valid_name(&name) {
            return Err(FeatureError::Corrupt { entry: name, message: "invalid entry name".into() });
        }
        let bytes = fs::read(dir.join(format!("{name}.f32")))
            .map_err(|e| FeatureError::Corrupt { entry: name.clone(), message: e.to_string() })?;
        let expected = info.rows * info.cols * 4;
        if bytes.len() != expected {
            return Err(FeatureError::Corrupt {
                entry: name,
                message: format!("blob has {} bytes, index implies {expected}", bytes.len()),
            });
        }
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let values = Array2::from_shape_vec((info.rows, info.cols), values).expect("size checked");
        out.insert(name, FeatureMatrix::new(values, info.modality));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_matrix_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FeatureMatrix::new(Array2::from_shape_fn((7, 5), |_| rng.random::<f32>() * 100.0 - 50.0), Modality::Text);
        let mut set = BTreeMap::new();
        set.insert("text".to_string(), m.clone());
        save_archive(dir.path(), &set).unwrap();
        let back = load_archive(dir.path()).unwrap();
        let got = &back["text"];
        assert_eq!(got.modality, Modality::Text);
        assert!(got.values.iter().zip(m.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_archive() {
        let dir = tempfile::tempdir().unwrap();
        save_archive(dir.path(), &BTreeMap::new()).unwrap();
        let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(serde_json::from_str::<serde_json::Value>(&index).unwrap(), serde_json::json!({}));
        assert!(load_archive(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn truncated_blob_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = BTreeMap::new();
        set.insert("audio".to_string(), FeatureMatrix::zeros(3, 2, Modality::Audio));
        save_archive(dir.path(), &set).unwrap();
        let blob = dir.path().join("audio.f32");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        match load_archive(dir.path()) {
            Err(FeatureError::Corrupt { entry, .. }) => assert_eq!(entry, "audio"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = BTreeMap::new();
        set.insert("a".to_string(), FeatureMatrix::zeros(3, 2, Modality::Audio));
        set.insert("b".to_string(), FeatureMatrix::zeros(4, 2, Modality::Text));
        assert!(matches!(save_archive(dir.path(), &set), Err(FeatureError::Archive(_))));
    }
}
