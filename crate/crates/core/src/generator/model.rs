//! Segment-recurrent transformer over fused speech features.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorConfig, GeneratorError};
use crate::autodiff::{Mat, ParamId, ParamStore, Tape, Var};

/// Cached hidden states of previous frames, one block per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMemory {
    pub layers: Vec<Array2<f64>>,
}

impl SegmentMemory {
    pub fn empty(config: &GeneratorConfig) -> Self {
        Self { layers: vec![Array2::zeros((0, config.d_model)); config.n_layers] }
    }

    /// Cached frame count (identical across layers).
    pub fn frames(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn zeroed(&self) -> Self {
        Self { layers: self.layers.iter().map(|m| Array2::zeros(m.dim())).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn init(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array2::ones((1, d)), false),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, d)), false),
        }
    }

    fn apply(&self, tape: &Tape, store: &ParamStore, x: Var) -> Var {
        tape.layer_norm(x, tape.param(store, self.gain), tape.param(store, self.bias))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Dense {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Dense {
    fn init<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), input, output, input, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array2::zeros((1, output)), false));
        Self { weight, bias }
    }

    fn apply(&self, tape: &Tape, store: &ParamStore, x: Var) -> Var {
        tape.linear(x, tape.param(store, self.weight), self.bias.map(|b| tape.param(store, b)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    norm_self: Norm,
    q: Dense,
    k: Dense,
    v: Dense,
    r: Dense,
    u_bias: ParamId,
    v_bias: ParamId,
    out: Dense,
    norm_cross: Norm,
    norm_inter: Norm,
    cq: Dense,
    ck: Dense,
    cv: Dense,
    cout: Dense,
    norm_ffn: Norm,
    ff1: Dense,
    ff2: Dense,
}

/// Parameter layout of the generator inside a shared [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub config: GeneratorConfig,
    layers: Vec<Layer>,
    final_norm: Norm,
    head: Dense,
}

/// Sinusoidal encodings for relative distances `lo..=hi`, one row each.
pub fn relative_encoding(lo: isize, hi: isize, d: usize) -> Mat {
    let rows = (hi - lo + 1).max(0) as usize;
    Array2::from_shape_fn((rows, d), |(r, c)| {
        let dist = (lo + r as isize) as f64;
        let freq = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
        if c % 2 == 0 {
            (dist * freq).sin()
        } else {
            (dist * freq).cos()
        }
    })
}

impl Generator {
    pub fn init<R: Rng>(config: GeneratorConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self, GeneratorError> {
        config.validate()?;
        let d = config.d_model;
        let hidden = d * config.ffn_mult;
        let layers = (0..config.n_layers)
            .map(|l| {
                let n = |part: &str| format!("generator.layer{l}.{part}");
                Layer {
                    norm_self: Norm::init(store, &n("norm_self"), d),
                    q: Dense::init(store, &n("q"), d, d, false, rng),
                    k: Dense::init(store, &n("k"), d, d, false, rng),
                    v: Dense::init(store, &n("v"), d, d, false, rng),
                    r: Dense::init(store, &n("r"), d, d, false, rng),
                    u_bias: store.add(n("u_bias"), Array2::zeros((1, d)), false),
                    v_bias: store.add(n("v_bias"), Array2::zeros((1, d)), false),
                    out: Dense::init(store, &n("out"), d, d, true, rng),
                    norm_cross: Norm::init(store, &n("norm_cross"), d),
                    norm_inter: Norm::init(store, &n("norm_inter"), d),
                    cq: Dense::init(store, &n("cross_q"), d, d, false, rng),
                    ck: Dense::init(store, &n("cross_k"), d, d, false, rng),
                    cv: Dense::init(store, &n("cross_v"), d, d, false, rng),
                    cout: Dense::init(store, &n("cross_out"), d, d, true, rng),
                    norm_ffn: Norm::init(store, &n("norm_ffn"), d),
                    ff1: Dense::init(store, &n("ff1"), d, hidden, true, rng),
                    ff2: Dense::init(store, &n("ff2"), hidden, d, true, rng),
                }
            })
            .collect();
        let final_norm = Norm::init(store, "generator.final_norm", d);
        let head = Dense::init(store, "generator.head", d, config.pose_dim, true, rng);
        Ok(Self { config, layers, final_norm, head })
    }

    fn check_inputs(&self, main: (usize, usize), inter: (usize, usize), memory: &SegmentMemory) -> Result<(), GeneratorError> {
        let c = &self.config;
        if main.1 != c.d_model || inter.1 != c.d_model {
            return Err(GeneratorError::Width { expected: c.d_model, main: main.1, inter: inter.1 });
        }
        if main.0 != inter.0 || main.0 == 0 || main.0 > c.segment_len {
            return Err(GeneratorError::SegmentShape { main: main.0, inter: inter.0, segment_len: c.segment_len });
        }
        if memory.layers.len() != c.n_layers || memory.layers.iter().any(|m| m.ncols() != c.d_model) {
            return Err(GeneratorError::Memory);
        }
        Ok(())
    }

    fn self_attention(&self, tape: &Tape, store: &ParamStore, layer: &Layer, x: Var, memory: &Array2<f64>) -> Var {
        let c = &self.config;
        let (len, d) = tape.shape(x);
        let mem_len = memory.nrows();
        let keys_len = mem_len + len;
        let context = if mem_len > 0 {
            let mem = layer.norm_self.apply(tape, store, tape.constant(memory.clone()));
            tape.concat_rows(&[mem, x])
        } else {
            x
        };
        let q = layer.q.apply(tape, store, x);
        let k = layer.k.apply(tape, store, context);
        let v = layer.v.apply(tape, store, context);
        // Query i sits at absolute position mem_len + i, key j at j.
        let lo = -(len as isize - 1);
        let hi = keys_len as isize - 1;
        let rel = tape.constant(relative_encoding(lo, hi, d));
        let rk = layer.r.apply(tape, store, rel);
        let qu = tape.add_row(q, tape.param(store, layer.u_bias));
        let qv = tape.add_row(q, tape.param(store, layer.v_bias));
        let idx: Vec<usize> = (0..len)
            .flat_map(|i| (0..keys_len).map(move |j| mem_len + i + len - 1 - j))
            .collect();
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..c.n_heads)
            .map(|h| {
                let cols = |m: Var| tape.slice_cols(m, h * dh, dh);
                let content = tape.matmul_t(cols(qu), cols(k));
                let position = tape.gather_in_row(tape.matmul_t(cols(qv), cols(rk)), idx.clone(), keys_len);
                let logits = tape.scale(tape.add(content, position), scale);
                tape.matmul(tape.softmax_rows(logits), cols(v))
            })
            .collect();
        layer.out.apply(tape, store, tape.concat_cols(&heads))
    }

    fn cross_attention(&self, tape: &Tape, store: &ParamStore, layer: &Layer, x: Var, inter: Var) -> Var {
        let c = &self.config;
        let q = layer.cq.apply(tape, store, x);
        let k = layer.ck.apply(tape, store, inter);
        let v = layer.cv.apply(tape, store, inter);
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..c.n_heads)
            .map(|h| {
                let cols = |m: Var| tape.slice_cols(m, h * dh, dh);
                let logits = tape.scale(tape.matmul_t(cols(q), cols(k)), scale);
                tape.matmul(tape.softmax_rows(logits), cols(v))
            })
            .collect();
        layer.cout.apply(tape, store, tape.concat_cols(&heads))
    }

    /// Records one segment on `tape`. Returns standardized pose predictions
    /// (len × pose_dim) and the memory for the next segment. Memory blocks
    /// enter as constants, so gradients stop at the segment boundary.
    pub fn forward_tape(
        &self,
        tape: &Tape,
        store: &ParamStore,
        x_main: Var,
        x_inter: Var,
        memory: &SegmentMemory,
    ) -> Result<(Var, SegmentMemory), GeneratorError> {
        self.check_inputs(tape.shape(x_main), tape.shape(x_inter), memory)?;
        let mut h = x_main;
        let mut next = Vec::with_capacity(self.layers.len());
        for (layer, mem) in self.layers.iter().zip(&memory.layers) {
            let hv = tape.value(h);
            let joined = concatenate(Axis(0), &[mem.view(), hv.view()]).expect("memory width checked");
            let keep = joined.nrows().min(self.config.memory_len);
            next.push(joined.slice(s![joined.nrows() - keep.., ..]).to_owned());

            let normed = layer.norm_self.apply(tape, store, h);
            h = tape.add(h, self.self_attention(tape, store, layer, normed, mem));
            let q = layer.norm_cross.apply(tape, store, h);
            let kv = layer.norm_inter.apply(tape, store, x_inter);
            h = tape.add(h, self.cross_attention(tape, store, layer, q, kv));
            let f = layer.norm_ffn.apply(tape, store, h);
            let f = layer.ff2.apply(tape, store, tape.gelu(layer.ff1.apply(tape, store, f)));
            h = tape.add(h, f);
        }
        let out = self.head.apply(tape, store, self.final_norm.apply(tape, store, h));
        Ok((out, SegmentMemory { layers: next }))
    }

    /// Untracked evaluation of one segment.
    pub fn forward_segment(
        &self,
        store: &ParamStore,
        x_main: &Array2<f64>,
        x_inter: &Array2<f64>,
        memory: &SegmentMemory,
    ) -> Result<(Array2<f64>, SegmentMemory), GeneratorError> {
        let tape = Tape::new();
        let (out, mem) = self.forward_tape(&tape, store, tape.constant(x_main.clone()), tape.constant(x_inter.clone()), memory)?;
        Ok((tape.value(out), mem))
    }
}
