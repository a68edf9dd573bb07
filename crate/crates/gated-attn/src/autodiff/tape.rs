//! Reverse-mode autodiff on a Wengert tape.
//!
//! Every operation goes through a [`Tape`]. A recording tape stores one node
//! per op whose inputs touch the gradient path; `Tape::inference()` records
//! nothing, so the same model code serves training and evaluation. Gradients
//! accumulate additively into leaf tensors created with
//! [`Tensor::requires_grad`]; callers zero them between steps.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use super::kernels;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    /// a[m×k] @ b[k×n]
    MatMul,
    /// a[m×k] @ b[n×k]ᵀ
    MatMulT,
    /// Elementwise with suffix broadcast of rhs.
    Bin(BinKind),
    /// lhs is rows×cols over its last axis; rhs holds one scalar per row.
    RowBin(BinKind),
    Neg,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    AddScalar,
    MulScalar(f64),
    Clamp { lo: f64, hi: f64 },
    /// Sum over the last axis.
    RowSum,
    SumAll,
    MeanAll,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize, len: usize },
    Reshape,
    /// Embedding lookup: table[v×d] indexed by `ids`.
    Gather { ids: Vec<usize> },
    /// states[b×t×d] weighted by weights[b×t] → [b×d].
    Attend,
}

struct Node {
    op: Op,
    inputs: Vec<Tensor>,
    output: Tensor,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    on_path: RefCell<HashSet<usize>>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            on_path: RefCell::new(HashSet::new()),
            recording: true,
        }
    }

    /// A tape that records nothing; use for evaluation.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            on_path: RefCell::new(HashSet::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn tracked(&self, t: &Tensor) -> bool {
        t.needs_grad() || self.on_path.borrow().contains(&t.id())
    }

    fn push(&self, op: Op, inputs: Vec<Tensor>, output: Tensor) {
        if !self.recording || !inputs.iter().any(|t| self.tracked(t)) {
            return;
        }
        self.on_path.borrow_mut().insert(output.id());
        self.nodes.borrow_mut().push(Node { op, inputs, output });
    }

    // ---- primitives ----

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = dims2(a, "matmul lhs");
        let (k2, n) = dims2(b, "matmul rhs");
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let out = Tensor::new(
            kernels::matmul(&a.data(), &b.data(), m, k, n),
            &[m, n],
        );
        self.push(Op::MatMul, vec![a.clone(), b.clone()], out.clone());
        out
    }

    pub fn matmul_t(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = dims2(a, "matmul_t lhs");
        let (n, k2) = dims2(b, "matmul_t rhs");
        assert_eq!(k, k2, "matmul_t: inner dims {k} vs {k2}");
        let out = Tensor::new(
            kernels::matmul_nt(&a.data(), &b.data(), m, k, n),
            &[m, n],
        );
        self.push(Op::MatMulT, vec![a.clone(), b.clone()], out.clone());
        out
    }

    fn bin(&self, kind: BinKind, a: &Tensor, b: &Tensor) -> Tensor {
        let bl = b.len();
        assert!(
            suffix_broadcastable(a.shape(), b.shape()),
            "{kind:?}: rhs shape {:?} is not a suffix of lhs shape {:?}",
            b.shape(),
            a.shape()
        );
        let ad = a.data();
        let bd = b.data();
        let data: Vec<f64> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| apply(kind, x, bd[i % bl]))
            .collect();
        drop(ad);
        drop(bd);
        let out = Tensor::new(data, a.shape());
        self.push(Op::Bin(kind), vec![a.clone(), b.clone()], out.clone());
        out
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.bin(BinKind::Mul, a, b)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.bin(BinKind::Div, a, b)
    }

    fn row_bin(&self, kind: BinKind, a: &Tensor, b: &Tensor) -> Tensor {
        let cols = *a.shape().last().expect("row op on 0-d tensor");
        let rows = a.len() / cols;
        assert_eq!(
            b.len(),
            rows,
            "{kind:?} (row): rhs has {} entries for {} rows",
            b.len(),
            rows
        );
        let ad = a.data();
        let bd = b.data();
        let data: Vec<f64> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| apply(kind, x, bd[i / cols]))
            .collect();
        drop(ad);
        drop(bd);
        let out = Tensor::new(data, a.shape());
        self.push(Op::RowBin(kind), vec![a.clone(), b.clone()], out.clone());
        out
    }

    pub fn row_add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.row_bin(BinKind::Add, a, b)
    }

    pub fn row_sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.row_bin(BinKind::Sub, a, b)
    }

    pub fn row_mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.row_bin(BinKind::Mul, a, b)
    }

    pub fn row_div(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.row_bin(BinKind::Div, a, b)
    }

    fn unary(&self, op: Op, a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(data, a.shape());
        self.push(op, vec![a.clone()], out.clone());
        out
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.unary(Op::Neg, a, |x| -x)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.unary(Op::Sigmoid, a, kernels::sigmoid)
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.unary(Op::Tanh, a, f64::tanh)
    }

    pub fn exp(&self, a: &Tensor) -> Tensor {
        self.unary(Op::Exp, a, f64::exp)
    }

    pub fn log(&self, a: &Tensor) -> Tensor {
        self.unary(Op::Log, a, f64::ln)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary(Op::AddScalar, a, |x| x + c)
    }

    pub fn mul_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary(Op::MulScalar(c), a, |x| x * c)
    }

    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        self.unary(Op::Clamp { lo, hi }, a, |x| x.clamp(lo, hi))
    }

    pub fn row_sum(&self, a: &Tensor) -> Tensor {
        let cols = *a.shape().last().expect("row_sum on 0-d tensor");
        let rows = a.len() / cols;
        let ad = a.data();
        let data: Vec<f64> = (0..rows)
            .map(|r| ad[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        drop(ad);
        let shape: Vec<usize> = if a.shape().len() > 1 {
            a.shape()[..a.shape().len() - 1].to_vec()
        } else {
            vec![1]
        };
        let out = Tensor::new(data, &shape);
        self.push(Op::RowSum, vec![a.clone()], out.clone());
        out
    }

    pub fn sum_all(&self, a: &Tensor) -> Tensor {
        let out = Tensor::new(vec![a.data().iter().sum()], &[1]);
        self.push(Op::SumAll, vec![a.clone()], out.clone());
        out
    }

    pub fn mean_all(&self, a: &Tensor) -> Tensor {
        let n = a.len() as f64;
        let out = Tensor::new(vec![a.data().iter().sum::<f64>() / n], &[1]);
        self.push(Op::MeanAll, vec![a.clone()], out.clone());
        out
    }

    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let base = parts[0].shape();
        assert!(axis < base.len(), "concat axis {axis} out of range");
        for p in parts {
            assert_eq!(p.shape().len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in base.iter().zip(p.shape()).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat: shape {:?} vs {:?} differ off axis {axis}",
                    base,
                    p.shape()
                );
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let blocks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut shape = base.to_vec();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (p, &blk) in parts.iter().zip(&blocks) {
                let d = p.data();
                data.extend_from_slice(&d[o * blk..(o + 1) * blk]);
            }
        }
        let out = Tensor::new(data, &shape);
        let inputs: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        self.push(Op::Concat { axis }, inputs, out.clone());
        out
    }

    pub fn narrow(&self, a: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = a.shape();
        assert!(axis < shape.len(), "narrow axis {axis} out of range");
        assert!(
            start + len <= shape[axis],
            "narrow [{start}, {start}+{len}) exceeds dim {} on axis {axis}",
            shape[axis]
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_blk = shape[axis] * inner;
        let dst_blk = len * inner;
        let ad = a.data();
        let mut data = Vec::with_capacity(outer * dst_blk);
        for o in 0..outer {
            let off = o * src_blk + start * inner;
            data.extend_from_slice(&ad[off..off + dst_blk]);
        }
        drop(ad);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(data, &out_shape);
        self.push(
            Op::Narrow { axis, start, len },
            vec![a.clone()],
            out.clone(),
        );
        out
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Tensor {
        assert_eq!(
            a.len(),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {:?} changes element count",
            a.shape(),
            shape
        );
        let out = Tensor::new(a.to_vec(), shape);
        self.push(Op::Reshape, vec![a.clone()], out.clone());
        out
    }

    pub fn gather(&self, table: &Tensor, ids: &[usize]) -> Tensor {
        let (v, d) = dims2(table, "gather table");
        let td = table.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            assert!(i < v, "gather id {i} out of vocabulary {v}");
            data.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        drop(td);
        let out = Tensor::new(data, &[ids.len(), d]);
        self.push(
            Op::Gather { ids: ids.to_vec() },
            vec![table.clone()],
            out.clone(),
        );
        out
    }

    pub fn attend(&self, states: &Tensor, weights: &Tensor) -> Tensor {
        let s = states.shape();
        assert_eq!(s.len(), 3, "attend states must be [b, t, d], got {s:?}");
        let (b, t, d) = (s[0], s[1], s[2]);
        assert_eq!(
            weights.shape(),
            &[b, t],
            "attend weights {:?} vs states {s:?}",
            weights.shape()
        );
        let sd = states.data();
        let wd = weights.data();
        let mut data = vec![0.0; b * d];
        for bi in 0..b {
            let orow = &mut data[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let w = wd[bi * t + ti];
                if w == 0.0 {
                    continue;
                }
                let srow = &sd[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (o, &sv) in orow.iter_mut().zip(srow) {
                    *o += w * sv;
                }
            }
        }
        drop(sd);
        drop(wd);
        let out = Tensor::new(data, &[b, d]);
        self.push(
            Op::Attend,
            vec![states.clone(), weights.clone()],
            out.clone(),
        );
        out
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Accumulates into the grad buffers of
    /// every reachable leaf; leaves the tape intact.
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(loss.len(), 1, "backward from non-scalar loss");
        let nodes = self.nodes.borrow();
        let mut adj: HashMap<usize, Vec<f64>> = HashMap::new();
        adj.insert(loss.id(), vec![1.0]);
        for node in nodes.iter().rev() {
            let Some(g) = adj.remove(&node.output.id()) else {
                continue;
            };
            let grads = node_backward(node, &g);
            for (input, ig) in node.inputs.iter().zip(grads) {
                let Some(ig) = ig else { continue };
                if input.needs_grad() {
                    let mut buf = input.grad_mut();
                    for (b, v) in buf.iter_mut().zip(&ig) {
                        *b += v;
                    }
                } else if self.on_path.borrow().contains(&input.id()) {
                    match adj.entry(input.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (b, v) in e.get_mut().iter_mut().zip(&ig) {
                                *b += v;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(ig);
                        }
                    }
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Per-input gradients for one node; `None` marks inputs that cannot carry
/// gradient (nothing upstream of them needs it badly enough to compute).
fn node_backward(node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let out = &node.output;
    match &node.op {
        Op::MatMul => {
            // c = a @ b, so da = g @ bᵀ and db = aᵀ @ g.
            let a = &node.inputs[0];
            let b = &node.inputs[1];
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = kernels::matmul_nt(g, &b.data(), m, n, k);
            let mut db = vec![0.0; k * n];
            kernels::matmul_tn_acc(&a.data(), g, &mut db, k, m, n);
            vec![Some(da), Some(db)]
        }
        Op::MatMulT => {
            // c = a @ bᵀ, so da = g @ b and db = gᵀ @ a.
            let a = &node.inputs[0];
            let b = &node.inputs[1];
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[0];
            let da = kernels::matmul(g, &b.data(), m, n, k);
            let mut db = vec![0.0; n * k];
            kernels::matmul_tn_acc(g, &a.data(), &mut db, n, m, k);
            vec![Some(da), Some(db)]
        }
        Op::Bin(kind) => {
            let a = &node.inputs[0];
            let b = &node.inputs[1];
            let ad = a.data();
            let bd = b.data();
            let bl = bd.len();
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bl];
            for i in 0..ad.len() {
                let (la, lb) = pair_grads(*kind, ad[i], bd[i % bl]);
                da[i] = g[i] * la;
                db[i % bl] += g[i] * lb;
            }
            vec![Some(da), Some(db)]
        }
        Op::RowBin(kind) => {
            let a = &node.inputs[0];
            let b = &node.inputs[1];
            let ad = a.data();
            let bd = b.data();
            let cols = ad.len() / bd.len();
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bd.len()];
            for i in 0..ad.len() {
                let r = i / cols;
                let (la, lb) = pair_grads(*kind, ad[i], bd[r]);
                da[i] = g[i] * la;
                db[r] += g[i] * lb;
            }
            vec![Some(da), Some(db)]
        }
        Op::Neg => vec![Some(g.iter().map(|&v| -v).collect())],
        Op::Sigmoid => {
            let y = out.data();
            vec![Some(
                g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect(),
            )]
        }
        Op::Tanh => {
            let y = out.data();
            vec![Some(
                g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect(),
            )]
        }
        Op::Exp => {
            let y = out.data();
            vec![Some(g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv).collect())]
        }
        Op::Log => {
            let x = node.inputs[0].data();
            vec![Some(g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect())]
        }
        Op::AddScalar => vec![Some(g.to_vec())],
        Op::MulScalar(c) => vec![Some(g.iter().map(|&v| v * c).collect())],
        Op::Clamp { lo, hi } => {
            let x = node.inputs[0].data();
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { 0.0 })
                    .collect(),
            )]
        }
        Op::RowSum => {
            let a = &node.inputs[0];
            let cols = *a.shape().last().unwrap();
            let mut da = vec![0.0; a.len()];
            for (i, v) in da.iter_mut().enumerate() {
                *v = g[i / cols];
            }
            vec![Some(da)]
        }
        Op::SumAll => vec![Some(vec![g[0]; node.inputs[0].len()])],
        Op::MeanAll => {
            let n = node.inputs[0].len();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::Concat { axis } => {
            let base = node.inputs[0].shape();
            let outer: usize = base[..*axis].iter().product();
            let inner: usize = base[*axis + 1..].iter().product();
            let blocks: Vec<usize> = node
                .inputs
                .iter()
                .map(|p| p.shape()[*axis] * inner)
                .collect();
            let total: usize = blocks.iter().sum();
            let mut grads: Vec<Option<Vec<f64>>> = node
                .inputs
                .iter()
                .map(|p| Some(vec![0.0; p.len()]))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (gi, &blk) in grads.iter_mut().zip(&blocks) {
                    let dst = gi.as_mut().unwrap();
                    dst[o * blk..(o + 1) * blk].copy_from_slice(&g[off..off + blk]);
                    off += blk;
                }
            }
            grads
        }
        Op::Narrow { axis, start, len } => {
            let a = &node.inputs[0];
            let shape = a.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let src_blk = shape[*axis] * inner;
            let dst_blk = len * inner;
            let mut da = vec![0.0; a.len()];
            for o in 0..outer {
                let off = o * src_blk + start * inner;
                da[off..off + dst_blk].copy_from_slice(&g[o * dst_blk..(o + 1) * dst_blk]);
            }
            vec![Some(da)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Gather { ids } => {
            let table = &node.inputs[0];
            let d = table.shape()[1];
            let mut dt = vec![0.0; table.len()];
            for (n, &i) in ids.iter().enumerate() {
                let dst = &mut dt[i * d..(i + 1) * d];
                let src = &g[n * d..(n + 1) * d];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
            vec![Some(dt)]
        }
        Op::Attend => {
            let states = &node.inputs[0];
            let weights = &node.inputs[1];
            let s = states.shape();
            let (b, t, d) = (s[0], s[1], s[2]);
            let sd = states.data();
            let wd = weights.data();
            let mut ds = vec![0.0; states.len()];
            let mut dw = vec![0.0; weights.len()];
            for bi in 0..b {
                let grow = &g[bi * d..(bi + 1) * d];
                for ti in 0..t {
                    let base = (bi * t + ti) * d;
                    let srow = &sd[base..base + d];
                    let w = wd[bi * t + ti];
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += grow[i] * srow[i];
                        ds[base + i] += w * grow[i];
                    }
                    dw[bi * t + ti] += acc;
                }
            }
            vec![Some(ds), Some(dw)]
        }
    }
}

fn apply(kind: BinKind, a: f64, b: f64) -> f64 {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
    }
}

/// (∂out/∂lhs, ∂out/∂rhs) for one element pair.
fn pair_grads(kind: BinKind, a: f64, b: f64) -> (f64, f64) {
    match kind {
        BinKind::Add => (1.0, 1.0),
        BinKind::Sub => (1.0, -1.0),
        BinKind::Mul => (b, a),
        BinKind::Div => (1.0 / b, -a / (b * b)),
    }
}

fn dims2(t: &Tensor, what: &str) -> (usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 2, "{what} must be 2-d, got {s:?}");
    (s[0], s[1])
}

fn suffix_broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    if rhs.iter().product::<usize>() == 1 {
        return true;
    }
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}
