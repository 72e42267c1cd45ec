//! Window autoencoder whose latent space backs the gesture distance.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::generator::{AdamW, AdamWConfig};
use crate::pose::{MotionSequence, Standardizer};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const STANDARDIZER_FILE: &str = "standardizer.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub window: usize,
    pub stride: usize,
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { window: 30, stride: 10, hidden: 128, latent: 32, epochs: 40, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

/// Everything needed to reproduce or compare a fitted autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderManifest {
    pub architecture: String,
    pub config: AutoencoderConfig,
    pub pose_dim: usize,
    pub n_windows: usize,
    pub n_sequences: usize,
    /// Description of the data the model was fitted on.
    pub data: String,
    pub final_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseAutoencoder {
    pub manifest: AutoencoderManifest,
    pub standardizer: Standardizer,
    store: ParamStore,
    layers: [Layer; 4],
}

/// Flattened `window`-frame windows taken every `stride` frames.
pub fn windows(seq: &MotionSequence, window: usize, stride: usize) -> Vec<Array2<f64>> {
    if seq.len() < window {
        return Vec::new();
    }
    (0..=seq.len() - window)
        .step_by(stride.max(1))
        .map(|start| seq.poses.slice(s![start..start + window, ..]).to_owned())
        .collect()
}

fn build(pose_dim: usize, config: &AutoencoderConfig) -> (ParamStore, [Layer; 4]) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let input = pose_dim * config.window;
    let dims = [(input, config.hidden), (config.hidden, config.latent), (config.latent, config.hidden), (config.hidden, input)];
    let names = ["encoder.0", "encoder.1", "decoder.0", "decoder.1"];
    let layers = std::array::from_fn(|i| {
        let (a, b) = dims[i];
        Layer {
            weight: store.add_uniform(format!("{}.weight", names[i]), a, b, a, &mut rng),
            bias: store.add(format!("{}.bias", names[i]), Array2::zeros((1, b)), false),
        }
    });
    (store, layers)
}

impl PoseAutoencoder {
    fn dense(&self, tape: &Tape, x: Var, layer: Layer) -> Var {
        tape.linear(x, tape.param(&self.store, layer.weight), Some(tape.param(&self.store, layer.bias)))
    }

    fn encode_tape(&self, tape: &Tape, x: Var) -> Var {
        let h = tape.gelu(self.dense(tape, x, self.layers[0]));
        self.dense(tape, h, self.layers[1])
    }

    fn decode_tape(&self, tape: &Tape, z: Var) -> Var {
        let h = tape.gelu(self.dense(tape, z, self.layers[2]));
        self.dense(tape, h, self.layers[3])
    }

    fn window_matrix(&self, sequences: &[MotionSequence]) -> Result<Array2<f64>, MetricsError> {
        let c = &self.manifest.config;
        let p = self.manifest.pose_dim;
        let mut rows = Vec::new();
        for seq in sequences {
            if seq.standardized {
                return Err(MetricsError::Usage("autoencoder expects de-standardized motion".into()));
            }
            if seq.poses.ncols() != p {
                return Err(MetricsError::Usage(format!("pose width {} but the autoencoder expects {p}", seq.poses.ncols())));
            }
            let standardized = MotionSequence { poses: self.standardizer.forward(&seq.poses), ..seq.clone() };
            for w in windows(&standardized, c.window, c.stride) {
                rows.push(w.into_shape_with_order(c.window * p).expect("contiguous window"));
            }
        }
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        if views.is_empty() {
            return Ok(Array2::zeros((0, c.window * p)));
        }
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    /// Fits on `sequences` with a fixed seed. The standardizer is fitted on
    /// the same frames.
    pub fn fit(sequences: &[MotionSequence], config: AutoencoderConfig, data: &str) -> Result<Self, MetricsError> {
        let first = sequences.first().ok_or(MetricsError::TooFewSamples(0))?;
        let pose_dim = first.poses.ncols();
        let standardizer = Standardizer::fit(sequences)?;
        let (store, layers) = build(pose_dim, &config);
        let manifest = AutoencoderManifest {
            architecture: format!(
                "mlp {}x{} -> {} gelu -> {} -> {} gelu -> {}x{}; l1 reconstruction; adamw",
                config.window, pose_dim, config.hidden, config.latent, config.hidden, config.window, pose_dim
            ),
            config: config.clone(),
            pose_dim,
            n_windows: 0,
            n_sequences: sequences.len(),
            data: data.to_string(),
            final_loss: f64::NAN,
        };
        let mut ae = Self { manifest, standardizer, store, layers };
        let x = ae.window_matrix(sequences)?;
        if x.nrows() < 2 {
            return Err(MetricsError::TooFewSamples(x.nrows()));
        }
        ae.manifest.n_windows = x.nrows();
        let mut opt = AdamW::new(AdamWConfig { lr: config.lr, ..AdamWConfig::default() }, &ae.store);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xae00);
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        let mut last = f64::NAN;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut seen) = (0.0, 0usize);
            for batch in order.chunks(config.batch_size.max(1)) {
                let xb = x.select(Axis(0), batch);
                let tape = Tape::new();
                let input = tape.constant(xb);
                let recon = ae.decode_tape(&tape, ae.encode_tape(&tape, input));
                let loss = tape.mean_abs(tape.sub(recon, input));
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(MetricsError::NonFinite("autoencoder loss"));
                }
                tape.backward(loss);
                opt.step(&mut ae.store, &tape.param_grads());
                sum += value * batch.len() as f64;
                seen += batch.len();
            }
            last = sum / seen as f64;
        }
        ae.manifest.final_loss = last;
        Ok(ae)
    }

    /// Latent codes of every window of every sequence, one row each.
    pub fn encode(&self, sequences: &[MotionSequence]) -> Result<Array2<f64>, MetricsError> {
        let x = self.window_matrix(sequences)?;
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, self.manifest.config.latent)));
        }
        let tape = Tape::new();
        let input = tape.constant(x);
        let z = self.encode_tape(&tape, input);
        Ok(tape.value(z))
    }

    /// Mean L1 reconstruction error over the windows of `sequences`, in
    /// standardized units.
    pub fn reconstruction_error(&self, sequences: &[MotionSequence]) -> Result<f64, MetricsError> {
        let x = self.window_matrix(sequences)?;
        let tape = Tape::new();
        let input = tape.constant(x);
        let recon = self.decode_tape(&tape, self.encode_tape(&tape, input));
        Ok(tape.scalar(tape.mean_abs(tape.sub(recon, input))))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.store.flatten()
    }

    pub fn save(&self, dir: &Path) -> Result<(), MetricsError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?)?;
        let bytes: Vec<u8> = self.store.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(WEIGHTS_FILE), bytes)?;
        self.standardizer.save(&dir.join(STANDARDIZER_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, MetricsError> {
        let manifest: AutoencoderManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let standardizer = Standardizer::load(&dir.join(STANDARDIZER_FILE))?;
        let (mut store, layers) = build(manifest.pose_dim, &manifest.config);
        let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
        if bytes.len() % 8 != 0 {
            return Err(MetricsError::Usage("autoencoder weights are truncated".into()));
        }
        let flat: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.load_flat(&flat).map_err(MetricsError::Usage)?;
        Ok(Self { manifest, standardizer, store, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::tests::chain_skeleton;
    use rand::Rng;

    pub(crate) fn wavy(n: usize, phase: f64, amp: f64) -> MotionSequence {
        let skel = chain_skeleton(&[[0.0; 3], [0.0, 1.0, 0.0]]);
        let poses = Array2::from_shape_fn((n, 15), |(i, c)| {
            let t = i as f64 / 30.0 + phase;
            match c {
                0 => amp * t.sin(),
                3 | 7 | 9 => 1.0,
                13 => (amp * t).cos(),
                14 => (amp * t).sin(),
                _ => 0.0,
            }
        });
        MotionSequence::new(poses, skel, 30.0).unwrap()
    }

    fn small() -> AutoencoderConfig {
        AutoencoderConfig { window: 10, stride: 5, hidden: 16, latent: 4, epochs: 30, batch_size: 8, lr: 3e-3, seed: 3 }
    }

    #[test]
    fn window_counts() {
        let s = wavy(40, 0.0, 1.0);
        assert_eq!(windows(&s, 30, 10).len(), 2);
        assert_eq!(windows(&s, 41, 10).len(), 0);
        assert_eq!(windows(&s, 10, 10).len(), 4);
    }

    #[test]
    fn fit_is_deterministic_and_learns() {
        let data: Vec<_> = (0..4).map(|k| wavy(60, k as f64, 1.0 + 0.2 * k as f64)).collect();
        let a = PoseAutoencoder::fit(&data, small(), "test").unwrap();
        let b = PoseAutoencoder::fit(&data, small(), "test").unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.encode(&data).unwrap(), b.encode(&data).unwrap());
        let untrained = PoseAutoencoder::fit(&data, AutoencoderConfig { epochs: 0, ..small() }, "test").unwrap();
        assert!(a.reconstruction_error(&data).unwrap() < untrained.reconstruction_error(&data).unwrap());
        assert_eq!(a.manifest.n_windows, 4 * 11);
        assert_eq!(a.encode(&data).unwrap().dim(), (44, 4));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<_> = (0..2).map(|k| wavy(40, k as f64, 1.0)).collect();
        let a = PoseAutoencoder::fit(&data, AutoencoderConfig { epochs: 2, ..small() }, "test").unwrap();
        a.save(dir.path()).unwrap();
        let b = PoseAutoencoder::load(dir.path()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = wavy(10, 0.0, 1.0);
        s.poses.mapv_inplace(|v| v + rng.random_range(-0.01..0.01));
        assert!(matches!(PoseAutoencoder::fit(&[s], small(), "x"), Err(MetricsError::TooFewSamples(1))));
    }
}
