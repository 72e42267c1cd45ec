//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations as they are evaluated. Trainable tensors
//! live in a [`ParamStore`] and enter a tape through [`Tape::param`]; after
//! [`Tape::backward`] their gradients are collected with
//! [`Tape::param_grads`]. Everything is double precision so analytic
//! gradients can be compared against finite differences.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pose::kinematics::FkPlan;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. `decay` marks whether AdamW weight decay applies.
    pub fn add(&mut self, name: impl Into<String>, value: Mat, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    /// Weight matrix of shape `rows × cols` drawn from U(-1/√fan_in, 1/√fan_in).
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.add(name, value, true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Concatenates every parameter in id order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), String> {
        if flat.len() != self.scalar_count() {
            return Err(format!(
                "expected {} parameters, got {}",
                self.scalar_count(),
                flat.len()
            ));
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            for (dst, src) in v.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a + broadcast of the 1×n row b
    AddRow(Var, Var),
    /// a ⊙ broadcast of the 1×n row b
    MulRow(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    /// Row-wise zero-mean unit-variance normalization (no affine part).
    Normalize(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    /// out[i] = a[idx[i]]
    GatherRows(Var, Rc<Vec<usize>>),
    /// out[i][j] = a[i][idx[i * cols + j]]
    GatherInRow(Var, Rc<Vec<usize>>),
    MeanAbs(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, f64)>),
    ForwardKinematics(Var, Rc<FkPlan>),
}

struct Node {
    value: Mat,
    op: Op,
}

const NORM_EPS: f64 = 1e-5;

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Mat>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Mat, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input. Gradients do not flow past it.
    pub fn constant(&self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn value(&self, v: Var) -> Mat {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[[0, 0]]
    }

    fn unary(&self, a: Var, f: impl FnOnce(ArrayView2<f64>) -> Mat, op: Op) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(nodes[a.0].value.view())
        };
        self.push(value, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl FnOnce(ArrayView2<f64>, ArrayView2<f64>) -> Mat, op: Op) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(nodes[a.0].value.view(), nodes[b.0].value.view())
        };
        self.push(value, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.dot(&y), Op::MatMul(a, b))
    }

    pub fn matmul_t(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.dot(&y.t()), Op::MatMulT(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| &x + &y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| &x - &y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| &x * &y, Op::Mul(a, b))
    }

    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, |x, r| &x + &r.row(0), Op::AddRow(a, row))
    }

    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, |x, r| &x * &r.row(0), Op::MulRow(a, row))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.unary(a, |x| &x * k, Op::Scale(a, k))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| v * v), Op::Square(a))
    }

    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(gelu), Op::Gelu(a))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let mut out = x.to_owned();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            out
        }, Op::SoftmaxRows(a))
    }

    pub fn normalize_rows(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let mut out = x.to_owned();
            let n = out.ncols() as f64;
            for mut row in out.rows_mut() {
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                row.mapv_inplace(|v| (v - mean) * inv);
            }
            out
        }, Op::Normalize(a))
    }

    /// Layer normalization with learned gain and bias rows.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var) -> Var {
        let n = self.normalize_rows(a);
        let g = self.mul_row(n, gain);
        self.add_row(g, bias)
    }

    /// `a · weight + bias` with a row-vector bias.
    pub fn linear(&self, a: Var, weight: Var, bias: Option<Var>) -> Var {
        let y = self.matmul(a, weight);
        match bias {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            concatenate(Axis(1), &views).expect("concat_cols: row counts differ")
        };
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            concatenate(Axis(0), &views).expect("concat_rows: column counts differ")
        };
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, |x| x.slice(s![start..start + len, ..]).to_owned(), Op::SliceRows(a, start))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, |x| x.slice(s![.., start..start + len]).to_owned(), Op::SliceCols(a, start))
    }

    pub fn gather_rows(&self, a: Var, idx: Vec<usize>) -> Var {
        let idx = Rc::new(idx);
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.select(Axis(0), &idx)
        };
        self.push(value, Op::GatherRows(a, idx))
    }

    /// Per-row gather: `out[i][j] = a[i][idx[i * cols + j]]`.
    pub fn gather_in_row(&self, a: Var, idx: Vec<usize>, cols: usize) -> Var {
        let idx = Rc::new(idx);
        let value = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.0].value;
            let rows = src.nrows();
            assert_eq!(idx.len(), rows * cols, "gather_in_row: index length");
            Array2::from_shape_fn((rows, cols), |(i, j)| src[[i, idx[i * cols + j]]])
        };
        self.push(value, Op::GatherInRow(a, idx))
    }

    /// Mean absolute value, as a 1×1 node. Empty input yields 0.
    pub fn mean_abs(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let v = if x.is_empty() { 0.0 } else { x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64 };
            Array2::from_elem((1, 1), v)
        }, Op::MeanAbs(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let v = if x.is_empty() { 0.0 } else { x.sum() / x.len() as f64 };
            Array2::from_elem((1, 1), v)
        }, Op::Mean(a))
    }

    /// Σ wᵢ·xᵢ over 1×1 nodes.
    pub fn weighted_sum(&self, terms: &[(Var, f64)]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let v: f64 = terms.iter().map(|(t, w)| w * nodes[t.0].value[[0, 0]]).sum();
            Array2::from_elem((1, 1), v)
        };
        self.push(value, Op::WeightedSum(terms.to_vec()))
    }

    /// Joint positions (N × 3J) from pose rows (N × (3 + 6J)).
    pub fn forward_kinematics(&self, poses: Var, plan: Rc<FkPlan>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            plan.positions(nodes[poses.0].value.view())
        };
        self.push(value, Op::ForwardKinematics(poses, plan))
    }

    /// Back-propagates from the scalar node `out`.
    pub fn backward(&self, out: Var) {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones(nodes[out.0].value.dim()));

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, d: Mat| accumulate(&mut grads, v, d);
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.dot(val(*b)));
                    acc(*b, g.t().dot(val(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, &g * &val(*r).row(0));
                    acc(*r, gr);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::Square(a) => acc(*a, &g * &(val(*a) * 2.0)),
                Op::Gelu(a) => acc(*a, &g * &val(*a).mapv(gelu_grad)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                    }
                    acc(*a, d);
                }
                Op::Normalize(a) => {
                    let y = &node.value;
                    let x = val(*a);
                    let n = x.ncols() as f64;
                    let mut d = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let xr = x.row(r);
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + NORM_EPS).sqrt();
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.sum() / n;
                        let mean_gy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..x.ncols() {
                            d[[r, c]] = inv * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (i, &src) in idx.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(i);
                    }
                    acc(*a, d);
                }
                Op::GatherInRow(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    let cols = g.ncols();
                    for ((i, j), gv) in g.indexed_iter() {
                        d[[i, idx[i * cols + j]]] += gv;
                    }
                    acc(*a, d);
                }
                Op::MeanAbs(a) => {
                    let x = val(*a);
                    let k = if x.is_empty() { 0.0 } else { g[[0, 0]] / x.len() as f64 };
                    acc(*a, x.mapv(|v| k * v.signum() * f64::from(v != 0.0)));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let k = if x.is_empty() { 0.0 } else { g[[0, 0]] / x.len() as f64 };
                    acc(*a, Array2::from_elem(x.dim(), k));
                }
                Op::WeightedSum(terms) => {
                    for (t, w) in terms {
                        acc(*t, Array2::from_elem((1, 1), g[[0, 0]] * w));
                    }
                }
                Op::ForwardKinematics(p, plan) => {
                    acc(*p, plan.backward(val(*p).view(), g.view()));
                }
            }
        }
        *self.grads.borrow_mut() = grads;
    }

    /// Gradient of a node after [`Tape::backward`], if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<Mat> {
        self.grads.borrow().get(v.0).cloned().flatten()
    }

    /// Gradients summed per parameter. Parameters that received no
    /// gradient are omitted.
    pub fn param_grads(&self) -> Vec<(ParamId, Mat)> {
        let nodes = self.nodes.borrow();
        let grads = self.grads.borrow();
        let mut out: Vec<(ParamId, Mat)> = Vec::new();
        for (node, g) in nodes.iter().zip(grads.iter()) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                match out.iter_mut().find(|(pid, _)| pid == id) {
                    Some((_, acc)) => *acc += g,
                    None => out.push((*id, g.clone())),
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(g) => *g += &d,
        slot @ None => *slot = Some(d),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}
