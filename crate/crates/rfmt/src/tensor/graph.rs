//! The autodiff tape: eager forward ops appended to a graph, backward in
//! strict reverse append order.

use rand::Rng;

use super::{GradientMap, Tensor, TensorError};
use crate::util::derive_rng;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId, broadcast_rows: bool },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Softmax { a: NodeId, axis: usize },
    LogSoftmax { a: NodeId, axis: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Gelu { a: NodeId },
    EmbeddingGather { table: NodeId, ids: Vec<usize> },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, len: usize },
    // multiplier = mask / (1 - p), saved for backward
    Dropout { a: NodeId, multiplier: Vec<f64> },
    CrossEntropyLs { logits: NodeId, targets: Vec<usize>, eps: f64 },
    Pick { a: NodeId, coords: Vec<(usize, usize)> },
    Sum { a: NodeId },
    Mean { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only computation tape. Inputs of node `i` always have ids `< i`,
/// so backward is a single reverse sweep.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn lane_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    // (outer, axis_size, inner) decomposition used by softmax-style ops
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// out[i,p] = sum_j a[i,j] * b[p,j]   (a: [m,n], b: [k,n] -> [m,k])
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (p, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *cv = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// out[p,j] = sum_i a[i,p] * g[i,j]   (a: [m,k], g: [m,n] -> [k,n])
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let c_row = &mut c[p * n..(p + 1) * n];
                for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                    *cv += av * gv;
                }
            }
        }
    }
    c
}

fn softmax_lanes(data: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, size, inner) = lane_view(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |s: usize| o * size * inner + s * inner + i;
            let mut max_v = f64::NEG_INFINITY;
            for s in 0..size {
                max_v = max_v.max(data[at(s)]);
            }
            let mut sum = 0.0;
            for s in 0..size {
                sum += (data[at(s)] - max_v).exp();
            }
            if log {
                let lse = max_v + sum.ln();
                for s in 0..size {
                    out[at(s)] = data[at(s)] - lse;
                }
            } else {
                for s in 0..size {
                    out[at(s)] = (data[at(s)] - max_v).exp() / sum;
                }
            }
        }
    }
    out
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

impl Graph {
    /// New tape in inference mode (dropout is the identity).
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), training: false }
    }

    /// New tape in training mode (dropout active).
    pub fn new_training() -> Self {
        Graph { nodes: Vec::new(), training: true }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Insert a constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, kind: &'static str) -> Result<NodeId, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: kind });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad });
        Ok(id)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul { a, b }, Tensor::matrix(m, n, data), ng, "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data()[i * c + j];
            }
        }
        let ng = self.needs(a);
        self.push(Op::Transpose { a }, Tensor::matrix(c, r, data), ng, "transpose")
    }

    /// Elementwise addition. `b` may also be a vector (or `[1, c]` matrix)
    /// broadcast across the rows of a rank-2 `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let same = ta.shape() == tb.shape();
        let (ar, ac) = ta.rows_cols();
        let (br, bc) = tb.rows_cols();
        let broadcast = !same && br == 1 && ac == bc && ta.shape().len() == 2;
        if !same && !broadcast {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut data = ta.data().to_vec();
        if same {
            for (x, y) in data.iter_mut().zip(tb.data()) {
                *x += *y;
            }
        } else {
            for r in 0..ar {
                let row = &mut data[r * ac..(r + 1) * ac];
                for (x, y) in row.iter_mut().zip(tb.data()) {
                    *x += *y;
                }
            }
        }
        let shape = ta.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b, broadcast_rows: broadcast }, Tensor::new(shape, data), ng, "add")
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} * {:?}", ta.shape(), tb.shape()),
            });
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul { a, b }, Tensor::new(shape, data), ng, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        if !c.is_finite() {
            return Err(TensorError::InvalidArg { op: "scale", detail: format!("factor {c}") });
        }
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a);
        self.push(Op::Scale { a, c }, Tensor::new(shape, data), ng, "scale")
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        if axis >= ta.shape().len() {
            return Err(TensorError::InvalidArg {
                op: "softmax",
                detail: format!("axis {axis} for shape {:?}", ta.shape()),
            });
        }
        let data = softmax_lanes(ta.data(), ta.shape(), axis, false);
        let shape = ta.shape().to_vec();
        let ng = self.needs(a);
        self.push(Op::Softmax { a, axis }, Tensor::new(shape, data), ng, "softmax")
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        if axis >= ta.shape().len() {
            return Err(TensorError::InvalidArg {
                op: "log_softmax",
                detail: format!("axis {axis} for shape {:?}", ta.shape()),
            });
        }
        let data = softmax_lanes(ta.data(), ta.shape(), axis, true);
        let shape = ta.shape().to_vec();
        let ng = self.needs(a);
        self.push(Op::LogSoftmax { a, axis }, Tensor::new(shape, data), ng, "log_softmax")
    }

    /// Layer normalization over the last dimension, with learnable `gamma`
    /// and `beta` vectors.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = *tx.shape().last().ok_or(TensorError::InvalidArg {
            op: "layernorm",
            detail: "rank-0 input".into(),
        })?;
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                detail: format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    tx.shape(),
                    tg.shape(),
                    tb.shape()
                ),
            });
        }
        let rows = tx.numel() / d;
        let mut data = vec![0.0; tx.numel()];
        for r in 0..rows {
            let xs = &tx.data()[r * d..(r + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (xs[j] - mean) * inv_std * tg.data()[j] + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Op::LayerNorm { x, gamma, beta, eps }, Tensor::new(shape, data), ng, "layernorm")
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| gelu_scalar(x)).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a);
        self.push(Op::Gelu { a }, Tensor::new(shape, data), ng, "gelu")
    }

    /// Gather rows of an embedding table: `table` is `[V, D]`, output is
    /// `[ids.len(), D]`.
    pub fn embedding_gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let tt = self.value(table);
        let s = tt.shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding_gather",
                detail: format!("table shape {s:?}"),
            });
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::InvalidArg {
                op: "embedding_gather",
                detail: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let ng = self.needs(table);
        self.push(
            Op::EmbeddingGather { table, ids: ids.to_vec() },
            Tensor::matrix(ids.len(), d, data),
            ng,
            "embedding_gather",
        )
    }

    /// Concatenate tensors along `axis` (0 or 1). Rank-0 scalars concatenate
    /// along axis 0 into a vector; rank-1 inputs concatenate along axis 0.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArg { op: "concat", detail: "no inputs".into() });
        }
        let rank = self.value(parts[0]).shape().len();
        if axis >= rank.max(1) {
            return Err(TensorError::InvalidArg {
                op: "concat",
                detail: format!("axis {axis} for rank {rank}"),
            });
        }
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("mixed ranks: {rank} vs {}", s.len()),
                });
            }
            for (dim, (&x, &y)) in self.value(parts[0]).shape().iter().zip(s).enumerate() {
                if dim != axis && x != y {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        detail: format!("dim {dim} differs: {x} vs {y}"),
                    });
                }
            }
        }
        let value = if rank <= 1 {
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::vector(data)
        } else if axis == 0 {
            let cols = self.value(parts[0]).shape()[1];
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                rows += self.value(p).shape()[0];
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(rows, cols, data)
        } else {
            let rows = self.value(parts[0]).shape()[0];
            let total_cols: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
            let mut data = vec![0.0; rows * total_cols];
            let mut col_off = 0;
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                for r in 0..rows {
                    data[r * total_cols + col_off..r * total_cols + col_off + c]
                        .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
                col_off += c;
            }
            Tensor::matrix(rows, total_cols, data)
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat { parts: parts.to_vec(), axis }, value, ng, "concat")
    }

    /// Contiguous slice of `len` indices starting at `start` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        let s = ta.shape();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::InvalidArg {
                op: "slice",
                detail: format!("axis {axis}, range {start}..{} of shape {s:?}", start + len),
            });
        }
        let value = if s.len() == 1 {
            Tensor::vector(ta.data()[start..start + len].to_vec())
        } else if axis == 0 {
            let c = s[1];
            Tensor::matrix(len, c, ta.data()[start * c..(start + len) * c].to_vec())
        } else {
            let (r, c) = (s[0], s[1]);
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&ta.data()[i * c + start..i * c + start + len]);
            }
            Tensor::matrix(r, len, data)
        };
        let ng = self.needs(a);
        self.push(Op::Slice { a, axis, start, len }, value, ng, "slice")
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. With `p == 0`
    /// or in inference mode this is exactly the identity (no RNG is drawn).
    /// Deterministic for a fixed `seed`.
    pub fn dropout(&mut self, a: NodeId, p: f64, seed: u64) -> Result<NodeId, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArg { op: "dropout", detail: format!("p = {p}") });
        }
        let ta = self.value(a);
        let n = ta.numel();
        let multiplier: Vec<f64> = if self.training && p > 0.0 {
            let mut rng = derive_rng(seed, &[0x64726f70]);
            let keep = 1.0 / (1.0 - p);
            (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
        } else {
            vec![1.0; n]
        };
        let data: Vec<f64> = ta.data().iter().zip(&multiplier).map(|(x, m)| x * m).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a);
        self.push(Op::Dropout { a, multiplier }, Tensor::new(shape, data), ng, "dropout")
    }

    /// Label-smoothed negative log-likelihood per row of `logits` (`[T, V]`):
    /// `(1-eps) * nll + eps * mean_v(-log p_v)`. Returns a `[T]` vector.
    pub fn cross_entropy_ls(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let tl = self.value(logits);
        let s = tl.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_ls",
                detail: format!("logits {s:?} vs {} targets", targets.len()),
            });
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(TensorError::InvalidArg {
                op: "cross_entropy_ls",
                detail: format!("smoothing {eps}"),
            });
        }
        let (t, v) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(TensorError::InvalidArg {
                op: "cross_entropy_ls",
                detail: format!("target {bad} out of range for vocab {v}"),
            });
        }
        let ls = softmax_lanes(tl.data(), s, 1, true);
        let mut data = vec![0.0; t];
        for (r, &y) in targets.iter().enumerate() {
            let row = &ls[r * v..(r + 1) * v];
            let nll = -row[y];
            let uniform = -row.iter().sum::<f64>() / v as f64;
            data[r] = (1.0 - eps) * nll + eps * uniform;
        }
        let ng = self.needs(logits);
        self.push(
            Op::CrossEntropyLs { logits, targets: targets.to_vec(), eps },
            Tensor::vector(data),
            ng,
            "cross_entropy_ls",
        )
    }

    /// Gather single elements `a[r, c]` for each `(r, c)` pair into a vector.
    pub fn pick(&mut self, a: NodeId, coords: &[(usize, usize)]) -> Result<NodeId, TensorError> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        if let Some(&(br, bc)) = coords.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(TensorError::InvalidArg {
                op: "pick",
                detail: format!("({br}, {bc}) out of range for {s:?}"),
            });
        }
        let data: Vec<f64> = coords.iter().map(|&(i, j)| ta.data()[i * c + j]).collect();
        let ng = self.needs(a);
        self.push(Op::Pick { a, coords: coords.to_vec() }, Tensor::vector(data), ng, "pick")
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let total: f64 = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Op::Sum { a }, Tensor::scalar(total), ng, "sum")
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(TensorError::InvalidArg { op: "mean", detail: "empty tensor".into() });
        }
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(a);
        self.push(Op::Mean { a }, Tensor::scalar(m), ng, "mean")
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// `requires_grad` leaf (zeros included), leaving the graph untouched —
    /// repeated calls return identical maps.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap, TensorError> {
        let loss_t = self.value(loss);
        if !loss_t.is_scalar() {
            return Err(TensorError::NonScalarLoss { shape: loss_t.shape().to_vec() });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g); // keep leaf gradients for the result map
            }
        }

        let mut map = GradientMap::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let shape = node.value.shape().to_vec();
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                map.insert(NodeId(i), Tensor::new(shape, data));
            }
        }
        Ok(map)
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], target: NodeId, update: Vec<f64>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (a, b) in existing.iter_mut().zip(&update) {
                    *a += *b;
                }
            }
            slot => *slot = Some(update),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::MatMul { a, b } => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.needs(*a) {
                    self.accum(grads, *a, matmul_nt(g, tb.data(), m, n, k));
                }
                if self.needs(*b) {
                    self.accum(grads, *b, matmul_tn(ta.data(), g, m, k, n));
                }
            }

            Op::Transpose { a } => {
                let out_shape = self.nodes[i].value.shape();
                let (r, c) = (out_shape[0], out_shape[1]);
                let mut da = vec![0.0; r * c];
                for x in 0..r {
                    for y in 0..c {
                        da[y * r + x] = g[x * c + y];
                    }
                }
                self.accum(grads, *a, da);
            }

            Op::Add { a, b, broadcast_rows } => {
                if self.needs(*a) {
                    self.accum(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    if *broadcast_rows {
                        let cols = self.value(*b).numel();
                        let mut db = vec![0.0; cols];
                        for chunk in g.chunks(cols) {
                            for (d, x) in db.iter_mut().zip(chunk) {
                                *d += *x;
                            }
                        }
                        self.accum(grads, *b, db);
                    } else {
                        self.accum(grads, *b, g.to_vec());
                    }
                }
            }

            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let db: Vec<f64> =
                        g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    self.accum(grads, *a, db);
                }
                if self.needs(*b) {
                    let da: Vec<f64> =
                        g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    self.accum(grads, *b, da);
                }
            }

            Op::Scale { a, c } => {
                self.accum(grads, *a, g.iter().map(|x| x * c).collect());
            }

            Op::Softmax { a, axis } => {
                // ds_i = s_i * (g_i - sum_j g_j s_j) per lane
                let s = self.nodes[i].value.data();
                let shape = self.nodes[i].value.shape();
                let (outer, size, inner) = lane_view(shape, *axis);
                let mut da = vec![0.0; s.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |k: usize| o * size * inner + k * inner + ii;
                        let dot: f64 = (0..size).map(|k| g[at(k)] * s[at(k)]).sum();
                        for k in 0..size {
                            da[at(k)] = s[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accum(grads, *a, da);
            }

            Op::LogSoftmax { a, axis } => {
                // d/dz_j = g_j - p_j * sum_i g_i per lane
                let ls = self.nodes[i].value.data();
                let shape = self.nodes[i].value.shape();
                let (outer, size, inner) = lane_view(shape, *axis);
                let mut da = vec![0.0; ls.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |k: usize| o * size * inner + k * inner + ii;
                        let gsum: f64 = (0..size).map(|k| g[at(k)]).sum();
                        for k in 0..size {
                            da[at(k)] = g[at(k)] - ls[at(k)].exp() * gsum;
                        }
                    }
                }
                self.accum(grads, *a, da);
            }

            Op::LayerNorm { x, gamma, beta, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let d = *tx.shape().last().unwrap();
                let rows = tx.numel() / d;
                let mut dx = vec![0.0; tx.numel()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let xs = &tx.data()[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mean = xs.iter().sum::<f64>() / d as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        dgamma[j] += gs[j] * xhat[j];
                        dbeta[j] += gs[j];
                        dxhat[j] = gs[j] * tg.data()[j];
                    }
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    let df = d as f64;
                    for j in 0..d {
                        dx[r * d + j] =
                            inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accum(grads, *x, dx);
                self.accum(grads, *gamma, dgamma);
                self.accum(grads, *beta, dbeta);
            }

            Op::Gelu { a } => {
                let xs = self.value(*a).data();
                let da: Vec<f64> =
                    g.iter().zip(xs).map(|(gv, &x)| gv * gelu_grad_scalar(x)).collect();
                self.accum(grads, *a, da);
            }

            Op::EmbeddingGather { table, ids } => {
                let tt = self.value(*table);
                let d = tt.shape()[1];
                let mut dt = vec![0.0; tt.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g[row * d..(row + 1) * d];
                    let dst = &mut dt[id * d..(id + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += *b;
                    }
                }
                self.accum(grads, *table, dt);
            }

            Op::Concat { parts, axis } => {
                let rank = self.value(parts[0]).shape().len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        self.accum(grads, p, g[off..off + n].to_vec());
                        off += n;
                    }
                } else {
                    let rows = self.value(parts[0]).shape()[0];
                    let total_cols: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
                    let mut col_off = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        let mut dp = vec![0.0; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c].copy_from_slice(
                                &g[r * total_cols + col_off..r * total_cols + col_off + c],
                            );
                        }
                        self.accum(grads, p, dp);
                        col_off += c;
                    }
                }
            }

            Op::Slice { a, axis, start, len } => {
                let ta = self.value(*a);
                let s = ta.shape();
                let mut da = vec![0.0; ta.numel()];
                if s.len() == 1 {
                    da[*start..start + len].copy_from_slice(g);
                } else if *axis == 0 {
                    let c = s[1];
                    da[start * c..(start + len) * c].copy_from_slice(g);
                } else {
                    let (r, c) = (s[0], s[1]);
                    for i in 0..r {
                        da[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                }
                self.accum(grads, *a, da);
            }

            Op::Dropout { a, multiplier } => {
                let da: Vec<f64> = g.iter().zip(multiplier).map(|(x, m)| x * m).collect();
                self.accum(grads, *a, da);
            }

            Op::CrossEntropyLs { logits, targets, eps } => {
                // d loss_r / d z_j = p_j - (1-eps) * onehot_j - eps / V
                let tl = self.value(*logits);
                let v = tl.shape()[1];
                let probs = softmax_lanes(tl.data(), tl.shape(), 1, false);
                let mut dl = vec![0.0; tl.numel()];
                for (r, &y) in targets.iter().enumerate() {
                    let gr = g[r];
                    for j in 0..v {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        dl[r * v + j] =
                            gr * (probs[r * v + j] - (1.0 - eps) * onehot - eps / v as f64);
                    }
                }
                self.accum(grads, *logits, dl);
            }

            Op::Pick { a, coords } => {
                let ta = self.value(*a);
                let c = ta.shape()[1];
                let mut da = vec![0.0; ta.numel()];
                for (out_idx, &(r, col)) in coords.iter().enumerate() {
                    da[r * c + col] += g[out_idx];
                }
                self.accum(grads, *a, da);
            }

            Op::Sum { a } => {
                let n = self.value(*a).numel();
                self.accum(grads, *a, vec![g[0]; n]);
            }

            Op::Mean { a } => {
                let n = self.value(*a).numel();
                self.accum(grads, *a, vec![g[0] / n as f64; n]);
            }
        }
    }
}
