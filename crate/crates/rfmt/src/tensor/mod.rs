//! Dense 64-bit tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Forward values are computed eagerly as operations are appended to a
//! [`Graph`]; [`Graph::backward`] walks the tape in reverse append order and
//! returns a [`GradientMap`] for the parameter leaves. Every op validates its
//! output for NaN/Inf so numerical blowups surface at the op that produced
//! them, and [`grad_check`] compares analytic gradients against central
//! finite differences.

mod graph;

pub use graph::{Graph, NodeId};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("graph builder is non-deterministic: repeated forward passes disagree")]
    NonDeterministicBuilder,
}

/// A dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1, and 2 are
/// supported; that is all the toy models need.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "shape {shape:?} does not match data length {}", data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows × cols view of a rank-2 tensor; rank-1 is treated as a single row.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            2 => (self.shape[0], self.shape[1]),
            1 => (1, self.shape[0]),
            _ => (1, 1),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Gradients keyed by the node id of each `requires_grad` leaf. An absent
/// entry means the gradient is zero.
#[derive(Debug, Default, Clone)]
pub struct GradientMap {
    grads: HashMap<usize, Tensor>,
}

impl GradientMap {
    pub(crate) fn insert(&mut self, id: NodeId, grad: Tensor) {
        self.grads.insert(id.0, grad);
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Sum another gradient map into this one (used when accumulating
    /// per-sentence gradients over a batch). Shapes must agree.
    pub fn accumulate(&mut self, other: &GradientMap) {
        for (&id, g) in &other.grads {
            match self.grads.get_mut(&id) {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(g.data.iter()) {
                        *a += *b;
                    }
                }
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }
}

/// Relative error used by [`grad_check`]: |a − n| / max(|a|, |n|, 1e-8).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central finite differences.
///
/// `builder` must deterministically rebuild the same forward graph from the
/// given parameter leaves and return the scalar loss node. Returns the
/// maximum relative error over all parameter elements (0.0 when `params` is
/// empty). The builder is run twice up front; if the two losses disagree
/// bitwise the builder is rejected as non-deterministic.
pub fn grad_check<F>(builder: F, params: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let run = |values: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId), TensorError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = builder(&mut g, &ids)?;
        if !g.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss { shape: g.value(loss).shape().to_vec() });
        }
        Ok((g, ids, loss))
    };

    let (g1, ids, loss1) = run(params)?;
    let (g2, _, loss2) = run(params)?;
    if g1.value(loss1).item().to_bits() != g2.value(loss2).item().to_bits() {
        return Err(TensorError::NonDeterministicBuilder);
    }

    let grads = g1.backward(loss1)?;

    let mut max_err: f64 = 0.0;
    for (p_idx, base) in params.iter().enumerate() {
        let analytic = grads
            .get(ids[p_idx])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape().to_vec()));
        for i in 0..base.numel() {
            let mut plus = params.to_vec();
            plus[p_idx].data[i] += eps;
            let (gp, _, lp) = run(&plus)?;
            let f_plus = gp.value(lp).item();

            let mut minus = params.to_vec();
            minus[p_idx].data[i] -= eps;
            let (gm, _, lm) = run(&minus)?;
            let f_minus = gm.value(lm).item();

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            max_err = max_err.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(max_err)
}
