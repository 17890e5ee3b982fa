//! The autodiff tape: a flat list of nodes in topological order.

use ndarray::{s, Array2};

use super::ParamStore;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { param: Option<String> },
    MatMul(Var, Var),
    Add(Var, Var),
    /// m x n plus a broadcast 1 x n row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    /// 1 x n row repeated to m rows.
    RepeatRow(Var, usize),
    SegmentMax { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Mse { pred: Var, target: Array2<f64> },
    SumAll(Var),
    Ln(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-6;

/// Computation tape. Build a graph with the op methods, then call
/// [`Tape::backward`] on a scalar node to collect parameter gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input: participates in the forward pass only.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Named parameter leaf; its gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        self.push(store.get(name).clone(), Op::Leaf { param: Some(name.to_string()) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        let g = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let g = self.ng(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let g = self.ng(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu_tanh);
        let g = self.ng(a);
        self.push(v, Op::Gelu(a), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        let g = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), g)
    }

    /// Row-wise layer norm with learned gain and bias (both 1 x n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let n = xv.ncols() as f64;
        let mut out = Array2::zeros(xv.raw_dim());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &e) in row.iter().enumerate() {
                out[[i, j]] = (e - mean) * inv * gv[[0, j]] + bv[[0, j]];
            }
        }
        let g = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias }, g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut v = Array2::zeros((rows, cols));
        let mut r = 0;
        for &p in parts {
            let pv = self.value(p);
            v.slice_mut(s![r..r + pv.nrows(), ..]).assign(pv);
            r += pv.nrows();
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::zeros((rows, cols));
        let mut c = 0;
        for &p in parts {
            let pv = self.value(p);
            v.slice_mut(s![.., c..c + pv.ncols()]).assign(pv);
            c += pv.ncols();
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let v = self.value(a).slice(s![r0..r1, ..]).to_owned();
        let g = self.ng(a);
        self.push(v, Op::SliceRows(a, r0, r1), g)
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let v = self.value(a).slice(s![.., c0..c1]).to_owned();
        let g = self.ng(a);
        self.push(v, Op::SliceCols(a, c0, c1), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let g = self.ng(a);
        self.push(v, Op::Transpose(a), g)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut v = Array2::zeros((idx.len(), av.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).assign(&av.row(r));
        }
        let g = self.ng(a);
        self.push(v, Op::GatherRows(a, idx.to_vec()), g)
    }

    pub fn repeat_row(&mut self, a: Var, m: usize) -> Var {
        debug_assert_eq!(self.value(a).nrows(), 1);
        let row = self.value(a).row(0).to_owned();
        let mut v = Array2::zeros((m, row.len()));
        for mut r in v.rows_mut() {
            r.assign(&row);
        }
        let g = self.ng(a);
        self.push(v, Op::RepeatRow(a, m), g)
    }

    /// Per-column max within each contiguous-id segment. `seg[i]` maps row
    /// `i` of `x` to an output row; every segment in `0..nseg` must be hit.
    /// Gradient flows to the first row attaining each maximum.
    pub fn segment_max(&mut self, x: Var, seg: &[usize], nseg: usize) -> Var {
        let xv = self.value(x);
        debug_assert_eq!(seg.len(), xv.nrows());
        let cols = xv.ncols();
        let mut v = Array2::from_elem((nseg, cols), f64::NEG_INFINITY);
        let mut argmax = vec![usize::MAX; nseg * cols];
        for (i, &sid) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = xv[[i, c]];
                if e > v[[sid, c]] {
                    v[[sid, c]] = e;
                    argmax[sid * cols + c] = i;
                }
            }
        }
        debug_assert!(argmax.iter().all(|&a| a != usize::MAX), "empty segment");
        let g = self.ng(x);
        self.push(v, Op::SegmentMax { x, argmax }, g)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.nrows() as f64;
        let v = av.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)) / m;
        let g = self.ng(a);
        self.push(v, Op::MeanRows(a), g)
    }

    /// Mean squared error against a constant target, returning a 1 x 1 node.
    pub fn mse(&mut self, pred: Var, target: &Array2<f64>) -> Var {
        let pv = self.value(pred);
        debug_assert_eq!(pv.dim(), target.dim());
        let n = pv.len() as f64;
        let loss = pv
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let g = self.ng(pred);
        self.push(Array2::from_elem((1, 1), loss), Op::Mse { pred, target: target.clone() }, g)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.ng(a);
        self.push(v, Op::SumAll(a), g)
    }

    /// Elementwise natural log; inputs must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let g = self.ng(a);
        self.push(v, Op::Ln(a), g)
    }

    /// Linear layer: `x W + b` with `W` named `{prefix}.w`, `b` `{prefix}.b`.
    pub fn linear(&mut self, store: &ParamStore, prefix: &str, x: Var) -> Var {
        let w = self.param(store, &format!("{prefix}.w"));
        let b = self.param(store, &format!("{prefix}.b"));
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Reverse pass from a scalar node; returns parameter gradients by name.
    pub fn backward(&mut self, loss: Var) -> std::collections::BTreeMap<String, Array2<f64>> {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out = std::collections::BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = grads[i].take() {
                    out.entry(name.clone())
                        .and_modify(|acc: &mut Array2<f64>| *acc += &g)
                        .or_insert(g);
                }
            }
        }
        out
    }

    fn add_grad(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn accumulate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    Self::add_grad(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    Self::add_grad(grads, *b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g.clone());
                }
                if self.ng(*row) {
                    let gr = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    Self::add_grad(grads, *row, gr);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    Self::add_grad(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    Self::add_grad(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, c) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g * *c);
                }
            }
            Op::Relu(a) => {
                if self.ng(*a) {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    Self::add_grad(grads, *a, g * &mask);
                }
            }
            Op::Gelu(a) => {
                if self.ng(*a) {
                    let d = self.value(*a).mapv(gelu_tanh_grad);
                    Self::add_grad(grads, *a, g * &d);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let y = &self.nodes[i].value;
                    let mut ga = g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        for (e, &ye) in row.iter_mut().zip(yrow.iter()) {
                            *e -= dot * ye;
                        }
                    }
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = xv.ncols() as f64;
                let mut xhat = Array2::zeros(xv.raw_dim());
                let mut inv_sigma = vec![0.0; xv.nrows()];
                for (r, row) in xv.rows().into_iter().enumerate() {
                    let mean = row.sum() / n;
                    let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_sigma[r] = inv;
                    for (c, &e) in row.iter().enumerate() {
                        xhat[[r, c]] = (e - mean) * inv;
                    }
                }
                if self.ng(*gain) {
                    let gg = (g * &xhat).sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    Self::add_grad(grads, *gain, gg);
                }
                if self.ng(*bias) {
                    let gb = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    Self::add_grad(grads, *bias, gb);
                }
                if self.ng(*x) {
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for r in 0..xv.nrows() {
                        let mut mean_gh = 0.0;
                        let mut mean_ghx = 0.0;
                        for c in 0..xv.ncols() {
                            let gh = g[[r, c]] * gv[[0, c]];
                            mean_gh += gh;
                            mean_ghx += gh * xhat[[r, c]];
                        }
                        mean_gh /= n;
                        mean_ghx /= n;
                        for c in 0..xv.ncols() {
                            let gh = g[[r, c]] * gv[[0, c]];
                            gx[[r, c]] =
                                inv_sigma[r] * (gh - mean_gh - xhat[[r, c]] * mean_ghx);
                        }
                    }
                    Self::add_grad(grads, *x, gx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let rows = self.value(p).nrows();
                    if self.ng(p) {
                        Self::add_grad(grads, p, g.slice(s![r..r + rows, ..]).to_owned());
                    }
                    r += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let cols = self.value(p).ncols();
                    if self.ng(p) {
                        Self::add_grad(grads, p, g.slice(s![.., c..c + cols]).to_owned());
                    }
                    c += cols;
                }
            }
            Op::SliceRows(a, r0, _r1) => {
                if self.ng(*a) {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*r0..*r0 + g.nrows(), ..]).assign(g);
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::SliceCols(a, c0, _c1) => {
                if self.ng(*a) {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *c0..*c0 + g.ncols()]).assign(g);
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::Transpose(a) => {
                if self.ng(*a) {
                    Self::add_grad(grads, *a, g.t().to_owned());
                }
            }
            Op::GatherRows(a, idx) => {
                if self.ng(*a) {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (i, &r) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(r);
                        row += &g.row(i);
                    }
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::RepeatRow(a, _m) => {
                if self.ng(*a) {
                    let gr = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    Self::add_grad(grads, *a, gr);
                }
            }
            Op::SegmentMax { x, argmax } => {
                if self.ng(*x) {
                    let cols = g.ncols();
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for sid in 0..g.nrows() {
                        for c in 0..cols {
                            gx[[argmax[sid * cols + c], c]] += g[[sid, c]];
                        }
                    }
                    Self::add_grad(grads, *x, gx);
                }
            }
            Op::MeanRows(a) => {
                if self.ng(*a) {
                    let m = self.value(*a).nrows();
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    let scaled = g / m as f64;
                    for mut row in ga.rows_mut() {
                        row += &scaled.row(0);
                    }
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::Mse { pred, target } => {
                if self.ng(*pred) {
                    let pv = self.value(*pred);
                    let n = pv.len() as f64;
                    let gp = (pv - target) * (2.0 * g[[0, 0]] / n);
                    Self::add_grad(grads, *pred, gp);
                }
            }
            Op::SumAll(a) => {
                if self.ng(*a) {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    Self::add_grad(grads, *a, ga);
                }
            }
            Op::Ln(a) => {
                if self.ng(*a) {
                    let inv = self.value(*a).mapv(|x| 1.0 / x);
                    Self::add_grad(grads, *a, g * &inv);
                }
            }
        }
    }
}

fn gelu_tanh(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
