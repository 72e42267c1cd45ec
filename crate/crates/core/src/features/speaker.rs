//! Learned per-speaker style vectors.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix, Modality};

pub const SPEAKER_DIM: usize = 8;

/// Speaker label → embedding row. Row 0 is reserved for unseen speakers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTable {
    pub id_to_index: BTreeMap<String, usize>,
    /// V × 8, V = known speakers + 1.
    pub embedding: Array2<f64>,
}

impl SpeakerTable {
    pub fn new<R: Rng>(labels: impl IntoIterator<Item = String>, rng: &mut R) -> Self {
        let mut id_to_index = BTreeMap::new();
        for label in labels {
            let next = id_to_index.len() + 1;
            id_to_index.entry(label).or_insert(next);
        }
        let rows = id_to_index.len() + 1;
        let embedding = Array2::from_shape_fn((rows, SPEAKER_DIM), |_| rng.random_range(-1.0..1.0));
        Self { id_to_index, embedding }
    }

    pub fn rows(&self) -> usize {
        self.embedding.nrows()
    }

    /// Embedding row for `label`; unknown labels map to the reserved row.
    pub fn index_of(&self, label: &str) -> usize {
        self.id_to_index.get(label).copied().unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let table: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if table.embedding.ncols() != SPEAKER_DIM || table.id_to_index.values().any(|&i| i == 0 || i >= table.rows()) {
            return Err(FeatureError::Archive("speaker table is inconsistent".into()));
        }
        Ok(table)
    }
}

/// The speaker's vector repeated for `n_frames` rows.
pub fn speaker_rows(table: &SpeakerTable, speaker_id: &str, n_frames: usize) -> FeatureMatrix {
    let row = table.embedding.row(table.index_of(speaker_id)).mapv(|v| v as f32);
    let values = row.insert_axis(Axis(0)).broadcast((n_frames, SPEAKER_DIM)).expect("row broadcast").to_owned();
    FeatureMatrix::new(values, Modality::Speaker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> SpeakerTable {
        SpeakerTable::new(["alice".to_string(), "bob".to_string()], &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn known_speaker_repeated() {
        let t = table();
        let m = speaker_rows(&t, "bob", 4);
        assert_eq!(m.values.dim(), (4, SPEAKER_DIM));
        for r in 1..4 {
            assert_eq!(m.values.row(r), m.values.row(0));
        }
        assert_eq!(m.values.row(0).mapv(f64::from), t.embedding.row(2).mapv(|v| v as f32 as f64));
    }

    #[test]
    fn unknown_speaker_uses_reserved_row() {
        let t = table();
        assert_eq!(t.rows(), 3);
        let m = speaker_rows(&t, "carol", 2);
        assert_eq!(m.values.row(0).mapv(f64::from), t.embedding.row(0).mapv(|v| v as f32 as f64));
    }

    #[test]
    fn equal_ids_equal_matrices() {
        let t = table();
        assert_eq!(speaker_rows(&t, "alice", 3), speaker_rows(&t, "alice", 3));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let p = dir.path().join("speaker_table.json");
        t.save(&p).unwrap();
        assert_eq!(SpeakerTable::load(&p).unwrap(), t);
    }
}
