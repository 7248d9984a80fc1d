//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters are borrowed
//! from a [`ParamStore`] rather than copied, so a graph lives only as long as one
//! forward/backward pass. Calling [`Graph::backward`] on a scalar node walks the tape in
//! reverse and returns per-node gradients.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Square,
    Sqrt,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Binary(Binary, Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    BroadcastCols {
        a: Var,
        n: usize,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Unary, Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SumAll(Var),
    SumCols(Var),
    Pick {
        a: Var,
        idx: Vec<usize>,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    Im2Col {
        x: Var,
        geo: ConvGeometry,
    },
    LstmCell {
        gates: Var,
        c_prev: Var,
    },
    RowNorm(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only leaves can feed it.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (gradient checks, saliency probes).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.store.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let m = ta.rows();
        let n = if trans_b { tb.rows() } else { tb.cols() };
        let mut out = vec![0.0; m * n];
        gemm(
            ta.data(),
            ta.rows(),
            ta.cols(),
            false,
            tb.data(),
            tb.rows(),
            tb.cols(),
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new(&[m, n], out).expect("matmul shape"),
            Op::MatMul { a, b, trans_b },
            rg,
        )
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "elementwise {kind:?} shape mismatch"
        );
        let out = match kind {
            Binary::Add => ta.zip_map(tb, |x, y| x + y),
            Binary::Sub => ta.zip_map(tb, |x, y| x - y),
            Binary::Mul => ta.zip_map(tb, |x, y| x * y),
            Binary::Div => ta.zip_map(tb, |x, y| x / y),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Binary(kind, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    /// `a[m,n] + row[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        assert_eq!(tr.len(), n, "add_row width mismatch");
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, r) in chunk.iter_mut().zip(tr.data()) {
                *o += r;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow { a, row }, rg)
    }

    /// `[m,1] -> [m,n]` by repeating the column.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.cols(), 1, "broadcast_cols expects a column");
        let m = ta.rows();
        let data = ta
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, n], data).expect("shape"),
            Op::BroadcastCols { a, n },
            rg,
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v + k);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let ta = self.value(a);
        let out = match kind {
            Unary::Exp => ta.map(f64::exp),
            Unary::Log => ta.map(f64::ln),
            Unary::Tanh => ta.map(f64::tanh),
            Unary::Sigmoid => ta.map(sigmoid),
            Unary::Relu => ta.map(|v| v.max(0.0)),
            Unary::Square => ta.map(|v| v * v),
            Unary::Sqrt => ta.map(f64::sqrt),
        };
        let rg = self.rg(a);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    // ---- row-wise normalisers ------------------------------------------

    /// Row softmax. With `causal`, entry `(i, j)` for `j > i` is masked to exactly zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut out = ta.clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            let visible = if causal { (i + 1).min(n) } else { n };
            let max = row[..visible]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in &mut row[..visible] {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in &mut row[..visible] {
                *v /= total;
            }
            for v in &mut row[visible..] {
                *v = 0.0;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            let lse = logsumexp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// `[m,n] -> [m,1]`
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let data: Vec<f64> = ta.data().chunks(n).map(logsumexp).collect();
        let m = data.len();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, 1], data).expect("shape"),
            Op::LogSumExp(a),
            rg,
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let (tg, tb) = (self.value(gain), self.value(bias));
        assert_eq!(tg.len(), n);
        assert_eq!(tb.len(), n);
        let mut xhat = tx.clone();
        let mut inv_std = Vec::with_capacity(tx.rows());
        for row in xhat.data_mut().chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(n) {
            for ((v, g), b) in row.iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Euclidean norm of each row, `[m,n] -> [m,1]`. The gradient at a zero row is taken as zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let data: Vec<f64> = ta
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let m = data.len();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, 1], data).expect("shape"),
            Op::RowNorm(a),
            rg,
        )
    }

    // ---- structural -----------------------------------------------------

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        assert!(start + len <= n, "slice_cols out of range");
        let data: Vec<f64> = ta
            .data()
            .chunks(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let m = ta.rows();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, len], data).expect("shape"),
            Op::SliceCols { a, start },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), m, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[m, total], data).expect("shape"),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        assert!(start + len <= ta.rows(), "slice_rows out of range");
        let data = ta.data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[len, n], data).expect("shape"),
            Op::SliceRows { a, start },
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), n, "concat_rows width mismatch");
            data.extend_from_slice(t.data());
            m += t.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[m, n], data).expect("shape"),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape).expect("reshape");
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// `[m,n] -> [m,1]`
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let data: Vec<f64> = ta.data().chunks(n).map(|r| r.iter().sum()).collect();
        let m = data.len();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, 1], data).expect("shape"),
            Op::SumCols(a),
            rg,
        )
    }

    /// `out[i] = a[i, idx[i]]`, shape `[m,1]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.rows(), idx.len(), "pick index count");
        let data: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| ta.get(i, j)).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[idx.len(), 1], data).expect("shape"),
            Op::Pick {
                a,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Embedding lookup: rows of `table` selected by `idx`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(&[idx.len(), n], data).expect("shape"),
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    // ---- fused kernels --------------------------------------------------

    /// Unfolds channels-last images `[batch*h*w, c]` into convolution patches
    /// `[batch*oh*ow, k*k*c]`; zero padding outside the image.
    pub fn im2col(&mut self, x: Var, geo: ConvGeometry) -> Var {
        let tx = self.value(x);
        assert_eq!(tx.rows(), geo.batch * geo.height * geo.width, "im2col rows");
        assert_eq!(tx.cols(), geo.channels, "im2col channels");
        let (oh, ow) = (geo.out_height(), geo.out_width());
        let k = geo.kernel;
        let c = geo.channels;
        let width = k * k * c;
        let mut data = vec![0.0; geo.batch * oh * ow * width];
        for b in 0..geo.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let orow = ((b * oh + oy) * ow + ox) * width;
                    for ky in 0..k {
                        let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                        if iy < 0 || iy >= geo.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                            if ix < 0 || ix >= geo.width as isize {
                                continue;
                            }
                            let src = (b * geo.height + iy as usize) * geo.width + ix as usize;
                            let dst = orow + (ky * k + kx) * c;
                            data[dst..dst + c].copy_from_slice(tx.row(src));
                        }
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(&[geo.batch * oh * ow, width], data).expect("shape"),
            Op::Im2Col { x, geo },
            rg,
        )
    }

    /// LSTM cell nonlinearity. `gates` is `[B, 4H]` pre-activations in (input, forget,
    /// cell, output) order; returns `[B, 2H]` holding the new `h` then the new `c`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let (tg, tc) = (self.value(gates), self.value(c_prev));
        let h = tc.cols();
        let b = tc.rows();
        assert_eq!(tg.cols(), 4 * h, "lstm gates width");
        assert_eq!(tg.rows(), b, "lstm batch");
        let mut out = vec![0.0; b * 2 * h];
        for r in 0..b {
            let g = tg.row(r);
            let cp = tc.row(r);
            for j in 0..h {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[h + j]);
                let cell = g[2 * h + j].tanh();
                let o = sigmoid(g[3 * h + j]);
                let c = f * cp[j] + i * cell;
                out[r * 2 * h + j] = o * c.tanh();
                out[r * 2 * h + h + j] = c;
            }
        }
        let rg = self.rg(gates) || self.rg(c_prev);
        self.push(
            Tensor::new(&[b, 2 * h], out).expect("shape"),
            Op::LstmCell { gates, c_prev },
            rg,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar root, got {:?}",
                rt.shape()
            )));
        }
        self.backward_with(root, Tensor::full(rt.shape(), 1.0))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(NnError::Shape("seed shape differs from root".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { nodes: grads })
    }

    /// Collects the parameter gradients of a finished backward pass.
    pub fn param_grads(&self, g: &Gradients) -> Grads {
        let mut out = Grads::new(self.store.map_or(0, ParamStore::len));
        for (id, v) in &self.param_vars {
            if let Some(t) = g.wrt(*v) {
                out.accumulate(*id, t);
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut da = vec![0.0; ta.len()];
                    // dA = dY · B   (trans_b)   or   dY · Bᵀ
                    gemm(
                        dy.data(),
                        dy.rows(),
                        dy.cols(),
                        false,
                        tb.data(),
                        tb.rows(),
                        tb.cols(),
                        !*trans_b,
                        &mut da,
                        false,
                    );
                    self.acc(grads, *a, Tensor::new(ta.shape(), da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; tb.len()];
                    if *trans_b {
                        // dB = dYᵀ · A
                        gemm(
                            dy.data(),
                            dy.rows(),
                            dy.cols(),
                            true,
                            ta.data(),
                            ta.rows(),
                            ta.cols(),
                            false,
                            &mut db,
                            false,
                        );
                    } else {
                        // dB = Aᵀ · dY
                        gemm(
                            ta.data(),
                            ta.rows(),
                            ta.cols(),
                            true,
                            dy.data(),
                            dy.rows(),
                            dy.cols(),
                            false,
                            &mut db,
                            false,
                        );
                    }
                    self.acc(grads, *b, Tensor::new(tb.shape(), db).expect("shape"));
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                match kind {
                    Binary::Add => {
                        self.acc(grads, *a, dy.clone());
                        self.acc(grads, *b, dy.clone());
                    }
                    Binary::Sub => {
                        self.acc(grads, *a, dy.clone());
                        self.acc(grads, *b, dy.map(|v| -v));
                    }
                    Binary::Mul => {
                        if self.rg(*a) {
                            self.acc(grads, *a, dy.zip_map(tb, |g, v| g * v));
                        }
                        if self.rg(*b) {
                            self.acc(grads, *b, dy.zip_map(ta, |g, v| g * v));
                        }
                    }
                    Binary::Div => {
                        if self.rg(*a) {
                            self.acc(grads, *a, dy.zip_map(tb, |g, v| g / v));
                        }
                        if self.rg(*b) {
                            // d(a/b)/db = -y/b
                            let t = y.zip_map(tb, |q, v| q / v);
                            self.acc(grads, *b, dy.zip_map(&t, |g, v| -g * v));
                        }
                    }
                }
            }
            Op::AddRow { a, row } => {
                self.acc(grads, *a, dy.clone());
                if self.rg(*row) {
                    let n = dy.cols();
                    let mut dr = vec![0.0; n];
                    for chunk in dy.data().chunks(n) {
                        for (d, g) in dr.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.acc(grads, *row, Tensor::new(&shape, dr).expect("shape"));
                }
            }
            Op::BroadcastCols { a, n } => {
                let data: Vec<f64> = dy.data().chunks(*n).map(|r| r.iter().sum()).collect();
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, Tensor::new(&shape, data).expect("shape"));
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.acc(grads, *a, dy.map(|v| v * k));
            }
            Op::AddScalar(a) => self.acc(grads, *a, dy.clone()),
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let dx = match kind {
                    Unary::Exp => dy.zip_map(y, |g, v| g * v),
                    Unary::Log => dy.zip_map(x, |g, v| g / v),
                    Unary::Tanh => dy.zip_map(y, |g, v| g * (1.0 - v * v)),
                    Unary::Sigmoid => dy.zip_map(y, |g, v| g * v * (1.0 - v)),
                    Unary::Relu => dy.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 }),
                    Unary::Square => dy.zip_map(x, |g, v| 2.0 * g * v),
                    Unary::Sqrt => dy.zip_map(y, |g, v| g / (2.0 * v)),
                };
                self.acc(grads, *a, dx);
            }
            Op::Softmax(a) => {
                let n = y.cols();
                let mut dx = dy.clone();
                for (dxr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = dxr.iter().zip(yr).map(|(g, p)| g * p).sum();
                    for (d, p) in dxr.iter_mut().zip(yr) {
                        *d = p * (*d - dot);
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::LogSoftmax(a) => {
                let n = y.cols();
                let mut dx = dy.clone();
                for (dxr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let total: f64 = dxr.iter().sum();
                    for (d, ly) in dxr.iter_mut().zip(yr) {
                        *d -= ly.exp() * total;
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut dx = x.clone();
                for (r, row) in dx.data_mut().chunks_mut(n).enumerate() {
                    let lse = y.data()[r];
                    let g = dy.data()[r];
                    row.iter_mut().for_each(|v| *v = g * (*v - lse).exp());
                }
                self.acc(grads, *a, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = xhat.cols();
                let tg = self.value(*gain);
                if self.rg(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for r in 0..xhat.rows() {
                        let xh = xhat.row(r);
                        let g = dy.row(r);
                        let dxhat: Vec<f64> = g.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n as f64;
                        for j in 0..n {
                            dx[r * n + j] = k * (n as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    let shape = self.value(*x).shape().to_vec();
                    self.acc(grads, *x, Tensor::new(&shape, dx).expect("shape"));
                }
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for r in 0..xhat.rows() {
                        for j in 0..n {
                            dg[j] += dy.get(r, j) * xhat.get(r, j);
                            db[j] += dy.get(r, j);
                        }
                    }
                    let gshape = tg.shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    self.acc(grads, *gain, Tensor::new(&gshape, dg).expect("shape"));
                    self.acc(grads, *bias, Tensor::new(&bshape, db).expect("shape"));
                }
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut dx = x.clone();
                for (r, row) in dx.data_mut().chunks_mut(n).enumerate() {
                    let norm = y.data()[r];
                    let g = dy.data()[r];
                    if norm > 0.0 {
                        row.iter_mut().for_each(|v| *v = g * *v / norm);
                    } else {
                        row.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::SliceCols { a, start } => {
                let ta = self.value(*a);
                let (n, w) = (ta.cols(), dy.cols());
                let mut dx = Tensor::zeros(ta.shape());
                for (r, row) in dx.data_mut().chunks_mut(n).enumerate() {
                    row[*start..*start + w].copy_from_slice(dy.row(r));
                }
                self.acc(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let data: Vec<f64> = dy
                            .data()
                            .chunks(dy.cols())
                            .flat_map(|r| r[off..off + w].iter().copied())
                            .collect();
                        let shape = self.value(p).shape().to_vec();
                        self.acc(grads, p, Tensor::new(&shape, data).expect("shape"));
                    }
                    off += w;
                }
            }
            Op::SliceRows { a, start } => {
                let ta = self.value(*a);
                let n = ta.cols();
                let mut dx = Tensor::zeros(ta.shape());
                dx.data_mut()[start * n..start * n + dy.len()].copy_from_slice(dy.data());
                self.acc(grads, *a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.rg(p) {
                        let shape = self.value(p).shape().to_vec();
                        let data = dy.data()[off..off + len].to_vec();
                        self.acc(grads, p, Tensor::new(&shape, data).expect("shape"));
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, dy.clone().reshaped(&shape).expect("reshape"));
            }
            Op::SumAll(a) => {
                let g = dy.item();
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, Tensor::full(&shape, g));
            }
            Op::SumCols(a) => {
                let ta = self.value(*a);
                let n = ta.cols();
                let data: Vec<f64> = dy
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g, n))
                    .collect();
                self.acc(grads, *a, Tensor::new(ta.shape(), data).expect("shape"));
            }
            Op::Pick { a, idx } => {
                let ta = self.value(*a);
                let n = ta.cols();
                let mut dx = Tensor::zeros(ta.shape());
                for (r, &j) in idx.iter().enumerate() {
                    dx.data_mut()[r * n + j] += dy.data()[r];
                }
                self.acc(grads, *a, dx);
            }
            Op::GatherRows { table, idx } => {
                let tt = self.value(*table);
                let n = tt.cols();
                let mut dt = Tensor::zeros(tt.shape());
                for (r, &j) in idx.iter().enumerate() {
                    for (d, g) in dt.data_mut()[j * n..(j + 1) * n].iter_mut().zip(dy.row(r)) {
                        *d += g;
                    }
                }
                self.acc(grads, *table, dt);
            }
            Op::Im2Col { x, geo } => {
                let tx = self.value(*x);
                let (oh, ow) = (geo.out_height(), geo.out_width());
                let k = geo.kernel;
                let c = geo.channels;
                let width = k * k * c;
                let mut dx = Tensor::zeros(tx.shape());
                let d = dx.data_mut();
                for b in 0..geo.batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let orow = ((b * oh + oy) * ow + ox) * width;
                            for ky in 0..k {
                                let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                                if iy < 0 || iy >= geo.height as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                                    if ix < 0 || ix >= geo.width as isize {
                                        continue;
                                    }
                                    let dst = ((b * geo.height + iy as usize) * geo.width
                                        + ix as usize)
                                        * c;
                                    let src = orow + (ky * k + kx) * c;
                                    for ch in 0..c {
                                        d[dst + ch] += dy.data()[src + ch];
                                    }
                                }
                            }
                        }
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LstmCell { gates, c_prev } => {
                let (tg, tc) = (self.value(*gates), self.value(*c_prev));
                let h = tc.cols();
                let b = tc.rows();
                let mut dg = vec![0.0; b * 4 * h];
                let mut dc_prev = vec![0.0; b * h];
                for r in 0..b {
                    let g = tg.row(r);
                    for j in 0..h {
                        let i = sigmoid(g[j]);
                        let f = sigmoid(g[h + j]);
                        let cell = g[2 * h + j].tanh();
                        let o = sigmoid(g[3 * h + j]);
                        let c = y.get(r, h + j);
                        let tc_ = c.tanh();
                        let dh = dy.get(r, j);
                        let dc = dy.get(r, h + j) + dh * o * (1.0 - tc_ * tc_);
                        let base = r * 4 * h;
                        dg[base + j] = dc * cell * i * (1.0 - i);
                        dg[base + h + j] = dc * tc.get(r, j) * f * (1.0 - f);
                        dg[base + 2 * h + j] = dc * i * (1.0 - cell * cell);
                        dg[base + 3 * h + j] = dh * tc_ * o * (1.0 - o);
                        dc_prev[r * h + j] = dc * f;
                    }
                }
                if self.rg(*gates) {
                    self.acc(grads, *gates, Tensor::new(tg.shape(), dg).expect("shape"));
                }
                if self.rg(*c_prev) {
                    self.acc(
                        grads,
                        *c_prev,
                        Tensor::new(tc.shape(), dc_prev).expect("shape"),
                    );
                }
            }
        }
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_softmax_masks_future_exactly() {
        let mut g = Graph::detached();
        let a = g.constant(
            Tensor::from_rows(&[
                vec![1.0, 2.0, 3.0],
                vec![0.5, 0.1, 9.0],
                vec![0.0, 0.0, 0.0],
            ])
            .unwrap(),
        );
        let s = g.softmax_rows(a, true);
        let t = g.value(s);
        assert_eq!(t.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(t.get(1, 2), 0.0);
        for r in 0..3 {
            assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_root_required() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::zeros(&[2, 2]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn simple_chain_rule() {
        // d/dx sum(tanh(x)^2)
        let mut g = Graph::detached();
        let x = g.input(Tensor::row_vector(&[0.3, -1.2]));
        let t = g.tanh(x);
        let s = g.square(t);
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        let dx = grads.wrt(x).unwrap();
        for (i, &v) in [0.3f64, -1.2].iter().enumerate() {
            let th = v.tanh();
            assert!((dx.data()[i] - 2.0 * th * (1.0 - th * th)).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::detached();
        let x = g.input(Tensor::row_vector(&[1.0, 2.0]));
        let c = g.constant(Tensor::row_vector(&[3.0, 4.0]));
        let m = g.mul(x, c);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().data(), &[3.0, 4.0]);
    }
}
