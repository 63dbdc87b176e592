//! Versioned binary checkpoints: magic "RFMT", a format version byte, the
//! architecture hash, the training-step counter, then named tensors as
//! (name length, name, shape rank, dims, little-endian 64-bit floats).
//!
//! The architecture description itself rides along as a reserved "::arch"
//! tensor so checkpoints are self-describing.

use std::path::Path;

use thiserror::Error;

use super::mlm::{MaskedLm, MlmConfig};
use super::params::ParamSet;
use super::transformer::{NmtConfig, NmtModel};
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"RFMT";
pub const VERSION: u8 = 1;
const ARCH_TENSOR: &str = "::arch";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("architecture hash mismatch")]
    ArchHashMismatch,
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("trailing bytes after the last tensor")]
    TrailingBytes,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds non-finite parameters")]
    NonFinite,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nmt,
    Mlm,
}

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub version: u8,
    pub arch_hash: [u8; 32],
    pub step: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode(arch_hash: [u8; 32], step: u64, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&arch_hash);
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(buf: &[u8]) -> Result<(CheckpointMeta, Vec<(String, Tensor)>), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let arch_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt(format!("tensor name of {name_len} bytes")));
        }
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
        let rank = r.u8()? as usize;
        if rank > 2 {
            return Err(CheckpointError::Corrupt(format!("tensor {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        tensors.push((name, Tensor::new(shape, data)));
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes);
    }
    Ok((CheckpointMeta { version, arch_hash, step }, tensors))
}

fn arch_tensor(kind: ModelKind, layers: usize, heads: usize, d_model: usize, d_ff: usize, vocab: usize, max_len: usize, dropout: f64) -> Tensor {
    let kind = match kind {
        ModelKind::Nmt => 0.0,
        ModelKind::Mlm => 1.0,
    };
    Tensor::vector(vec![
        kind,
        layers as f64,
        heads as f64,
        d_model as f64,
        d_ff as f64,
        vocab as f64,
        max_len as f64,
        dropout,
    ])
}

fn write_file(
    path: &Path,
    arch_hash: [u8; 32],
    step: u64,
    arch: Tensor,
    params: &ParamSet,
) -> Result<(), CheckpointError> {
    if !params.all_finite() {
        return Err(CheckpointError::NonFinite);
    }
    let mut tensors: Vec<(&str, &Tensor)> = vec![(ARCH_TENSOR, &arch)];
    tensors.extend(params.iter());
    let bytes = encode(arch_hash, step, &tensors);
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn save_nmt(path: &Path, model: &NmtModel) -> Result<(), CheckpointError> {
    let c = &model.cfg;
    let arch = arch_tensor(ModelKind::Nmt, c.layers, c.heads, c.d_model, c.d_ff, c.vocab_size, c.max_len, c.dropout);
    write_file(path, c.arch_hash(), model.step, arch, &model.params)
}

pub fn save_mlm(path: &Path, model: &MaskedLm) -> Result<(), CheckpointError> {
    let c = &model.cfg;
    let arch = arch_tensor(ModelKind::Mlm, c.layers, c.heads, c.d_model, c.d_ff, c.vocab_size, c.max_len, c.dropout);
    write_file(path, c.arch_hash(), model.step, arch, &model.params)
}

/// Read only the header of a checkpoint.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let arch_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let step = r.u64()?;
    Ok(CheckpointMeta { version, arch_hash, step })
}

fn unpack(
    tensors: Vec<(String, Tensor)>,
) -> Result<(Tensor, Vec<(String, Tensor)>), CheckpointError> {
    let mut arch = None;
    let mut rest = Vec::with_capacity(tensors.len().saturating_sub(1));
    for (name, t) in tensors {
        if name == ARCH_TENSOR {
            arch = Some(t);
        } else {
            rest.push((name, t));
        }
    }
    let arch = arch.ok_or_else(|| CheckpointError::Corrupt("missing ::arch tensor".into()))?;
    if arch.numel() != 8 {
        return Err(CheckpointError::Corrupt("bad ::arch tensor".into()));
    }
    Ok((arch, rest))
}

fn fill_params(expected: &mut ParamSet, loaded: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
    use std::collections::HashMap;
    let mut by_name: HashMap<String, Tensor> = loaded.into_iter().collect();
    for (name, slot) in expected.iter_mut() {
        let t = by_name
            .remove(name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {name:?}")))?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        if !t.all_finite() {
            return Err(CheckpointError::NonFinite);
        }
        *slot = t;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(CheckpointError::Corrupt(format!("unexpected tensor {name:?}")));
    }
    Ok(())
}

/// Load a translation model; `expected_hash` (when given) must match the
/// stored architecture hash, e.g. when fine-tuning must start from a
/// compatible baseline.
pub fn load_nmt(path: &Path, expected_hash: Option<[u8; 32]>) -> Result<NmtModel, CheckpointError> {
    let buf = std::fs::read(path)?;
    let (meta, tensors) = decode(&buf)?;
    let (arch, rest) = unpack(tensors)?;
    let a = arch.data();
    if a[0] != 0.0 {
        return Err(CheckpointError::Corrupt("checkpoint holds a different model kind".into()));
    }
    let cfg = NmtConfig {
        vocab_size: a[5] as usize,
        layers: a[1] as usize,
        heads: a[2] as usize,
        d_model: a[3] as usize,
        d_ff: a[4] as usize,
        dropout: a[7],
        max_len: a[6] as usize,
    };
    if cfg.arch_hash() != meta.arch_hash {
        return Err(CheckpointError::ArchHashMismatch);
    }
    if let Some(h) = expected_hash {
        if h != meta.arch_hash {
            return Err(CheckpointError::ArchHashMismatch);
        }
    }
    let mut model = NmtModel::new(cfg, 0).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    fill_params(&mut model.params, rest)?;
    model.step = meta.step;
    Ok(model)
}

pub fn load_mlm(path: &Path, expected_hash: Option<[u8; 32]>) -> Result<MaskedLm, CheckpointError> {
    let buf = std::fs::read(path)?;
    let (meta, tensors) = decode(&buf)?;
    let (arch, rest) = unpack(tensors)?;
    let a = arch.data();
    if a[0] != 1.0 {
        return Err(CheckpointError::Corrupt("checkpoint holds a different model kind".into()));
    }
    let cfg = MlmConfig {
        vocab_size: a[5] as usize,
        layers: a[1] as usize,
        heads: a[2] as usize,
        d_model: a[3] as usize,
        d_ff: a[4] as usize,
        dropout: a[7],
        max_len: a[6] as usize,
    };
    if cfg.arch_hash() != meta.arch_hash {
        return Err(CheckpointError::ArchHashMismatch);
    }
    if let Some(h) = expected_hash {
        if h != meta.arch_hash {
            return Err(CheckpointError::ArchHashMismatch);
        }
    }
    let mut model = MaskedLm::new(cfg, 0).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    fill_params(&mut model.params, rest)?;
    model.step = meta.step;
    Ok(model)
}

/// Load either model kind.
pub fn load_any(path: &Path) -> Result<(ModelKind, Option<NmtModel>, Option<MaskedLm>), CheckpointError> {
    let buf = std::fs::read(path)?;
    let (_, tensors) = decode(&buf)?;
    let (arch, _) = unpack(tensors)?;
    if arch.data()[0] == 0.0 {
        Ok((ModelKind::Nmt, Some(load_nmt(path, None)?), None))
    } else {
        Ok((ModelKind::Mlm, None, Some(load_mlm(path, None)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> NmtModel {
        let cfg = NmtConfig { vocab_size: 12, layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout: 0.1, max_len: 16 };
        let mut m = NmtModel::new(cfg, 5).unwrap();
        m.step = 750;
        m
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfmt");
        let m = model();
        save_nmt(&path, &m).unwrap();
        let loaded = load_nmt(&path, Some(m.cfg.arch_hash())).unwrap();
        assert_eq!(loaded.step, 750);
        assert_eq!(loaded.cfg, m.cfg);
        for ((n1, t1), (n2, t2)) in m.params.iter().zip(loaded.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data(), "parameter {n1} not bitwise equal");
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfmt");
        let m = model();
        save_nmt(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_nmt(&path, None), Err(CheckpointError::Truncated)));
    }

    #[test]
    fn bad_magic_and_version_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfmt");
        let m = model();
        save_nmt(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_nmt(&path, None), Err(CheckpointError::BadMagic)));
        let mut vbytes = good.clone();
        vbytes[4] = 99;
        std::fs::write(&path, &vbytes).unwrap();
        assert!(matches!(
            load_nmt(&path, None),
            Err(CheckpointError::VersionMismatch { found: 99, .. })
        ));
        let mut tail = good;
        tail.push(0);
        std::fs::write(&path, &tail).unwrap();
        assert!(matches!(load_nmt(&path, None), Err(CheckpointError::TrailingBytes)));
    }

    #[test]
    fn wrong_architecture_hash_refuses_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfmt");
        let m = model();
        save_nmt(&path, &m).unwrap();
        let other = NmtConfig { d_model: 16, d_ff: 32, ..m.cfg.clone() };
        assert!(matches!(
            load_nmt(&path, Some(other.arch_hash())),
            Err(CheckpointError::ArchHashMismatch)
        ));
    }

    #[test]
    fn mlm_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlm.rfmt");
        let cfg = MlmConfig { vocab_size: 10, layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout: 0.0, max_len: 16 };
        let m = MaskedLm::new(cfg, 9).unwrap();
        save_mlm(&path, &m).unwrap();
        let back = load_mlm(&path, None).unwrap();
        assert_eq!(back.cfg, m.cfg);
        assert!(matches!(load_nmt(&path, None), Err(CheckpointError::Corrupt(_))));
        let (kind, nmt, mlm) = load_any(&path).unwrap();
        assert_eq!(kind, ModelKind::Mlm);
        assert!(nmt.is_none() && mlm.is_some());
    }
}
