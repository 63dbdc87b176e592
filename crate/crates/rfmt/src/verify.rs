//! Public numerical verification hooks: finite-difference gradient checks
//! for the model losses, runnable from outside the crate.

use crate::model::{BoundParams, Forward, MaskedLm, ModelError, NmtModel};
use crate::tensor::{grad_check, NodeId, Tensor, TensorError};
use crate::text::TokenSeq;
use crate::training::RiskMode;

fn as_tensor_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::InvalidArg { op: "model", detail: other.to_string() },
    }
}

/// Max relative error between analytic and central finite-difference
/// gradients of the summed teacher-forced log-likelihood over a batch.
pub fn grad_check_nmt(
    model: &NmtModel,
    batch: &[(TokenSeq, TokenSeq)],
    eps: f64,
) -> Result<f64, TensorError> {
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Vec<Tensor> = model.params.tensors().cloned().collect();
    grad_check(
        |g, ids| {
            let bound = BoundParams::from_ids(names.iter().cloned(), ids.to_vec());
            let mut fwd = Forward::new(g, &bound, 0.0, 0);
            let mut total: Option<NodeId> = None;
            for (src, tgt) in batch {
                let scores = model.score_nodes(&mut fwd, src, tgt).map_err(as_tensor_error)?;
                let s = fwd.g.sum(scores)?;
                total = Some(match total {
                    Some(t) => fwd.g.add(t, s)?,
                    None => s,
                });
            }
            total.ok_or(TensorError::InvalidArg { op: "grad_check_nmt", detail: "empty batch".into() })
        },
        &tensors,
        eps,
    )
}

/// Gradient check of the masked-LM loss (mean NLL at the given masked
/// positions of each sequence).
pub fn grad_check_mlm(
    mlm: &MaskedLm,
    batch: &[(TokenSeq, Vec<usize>)],
    eps: f64,
) -> Result<f64, TensorError> {
    let names: Vec<String> = mlm.params.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Vec<Tensor> = mlm.params.tensors().cloned().collect();
    grad_check(
        |g, ids| {
            let bound = BoundParams::from_ids(names.iter().cloned(), ids.to_vec());
            let mut total: Option<NodeId> = None;
            for (seq, positions) in batch {
                let mut masked = seq.ids.clone();
                for &p in positions {
                    masked[p] = crate::text::MASK;
                }
                let wrapped = mlm.wrap_ids(&masked);
                let mut fwd = Forward::new(g, &bound, 0.0, 0);
                let logits = mlm.logits(&mut fwd, &wrapped).map_err(as_tensor_error)?;
                let lsm = fwd.g.log_softmax(logits, 1)?;
                let coords: Vec<(usize, usize)> =
                    positions.iter().map(|&p| (p + 1, seq.ids[p] as usize)).collect();
                let picked = fwd.g.pick(lsm, &coords)?;
                let s = fwd.g.sum(picked)?;
                let nll = fwd.g.scale(s, -1.0)?;
                total = Some(match total {
                    Some(t) => fwd.g.add(t, nll)?,
                    None => nll,
                });
            }
            total.ok_or(TensorError::InvalidArg { op: "grad_check_mlm", detail: "empty batch".into() })
        },
        &tensors,
        eps,
    )
}

/// Gradient check of the minimum-risk loss for one sentence with fixed
/// candidates and risks, in either the literal or the normalized form.
pub fn grad_check_mrt(
    model: &NmtModel,
    src: &TokenSeq,
    candidates: &[(TokenSeq, f64)],
    mode: RiskMode,
    eps: f64,
) -> Result<f64, TensorError> {
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Vec<Tensor> = model.params.tensors().cloned().collect();
    grad_check(
        |g, ids| {
            let bound = BoundParams::from_ids(names.iter().cloned(), ids.to_vec());
            let mut fwd = Forward::new(g, &bound, 0.0, 0);
            let src_ids = model.encoder_ids(src);
            let memory = model.encode(&mut fwd, &src_ids).map_err(as_tensor_error)?;
            let mut sums = Vec::with_capacity(candidates.len());
            for (tokens, _) in candidates {
                let scores = model
                    .score_nodes_with_memory(&mut fwd, memory, tokens)
                    .map_err(as_tensor_error)?;
                sums.push(fwd.g.sum(scores)?);
            }
            match mode {
                RiskMode::Literal => {
                    let mut total: Option<NodeId> = None;
                    for (node, (_, risk)) in sums.iter().zip(candidates) {
                        let term = fwd.g.scale(*node, *risk)?;
                        total = Some(match total {
                            Some(t) => fwd.g.add(t, term)?,
                            None => term,
                        });
                    }
                    Ok(total.expect("non-empty candidate set"))
                }
                RiskMode::Normalized => {
                    let stacked = fwd.g.concat(&sums, 0)?;
                    let q = fwd.g.softmax(stacked, 0)?;
                    let risks = fwd
                        .g
                        .constant(Tensor::vector(candidates.iter().map(|(_, r)| *r).collect()));
                    let weighted = fwd.g.mul(q, risks)?;
                    fwd.g.sum(weighted)
                }
            }
        },
        &tensors,
        eps,
    )
}
