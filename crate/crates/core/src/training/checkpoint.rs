//! Binary checkpoint layout: `LAWN`, a little-endian `u32` version, a
//! `u32`-length-prefixed JSON header, the named tensors (`u16` name length,
//! name, `u8` rank, `u32` dims, `f32` data, all little-endian) and a trailing
//! CRC32 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputPipeline, OptimizerState, TargetScale, TrainConfig, TrainedModel};
use crate::neuralnet::{check_parameters, ModelSpec, ParamKey, Parameters, Tensor};
use crate::{CheckpointError, Error, Result};

const MAGIC: &[u8; 4] = b"LAWN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    train_config: TrainConfig,
    input: InputPipeline,
    target: TargetScale,
    optimizer_step: u64,
    tensors: usize,
}

fn tensor_names(ck: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = ck.model.params.iter().map(|(k, t)| (format!("param/{k}"), t)).collect();
    let slots = OptimizerState::slot_names(&ck.config.optimizer);
    for (key, tensors) in &ck.optimizer.slots {
        for (name, t) in slots.iter().zip(tensors) {
            out.push((format!("{name}/{key}"), t));
        }
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = tensor_names(ck);
    let header = Header {
        spec: ck.model.spec.clone(),
        train_config: ck.config.clone(),
        input: ck.model.input,
        target: ck.model.target,
        optimizer_step: ck.optimizer.step,
        tensors: tensors.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    // the checksum excludes its own four bytes
    let body = &bytes[..bytes.len() - 4];
    let mut r = Reader { bytes: body, at: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::Checksum);
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut named = Vec::with_capacity(header.tensors);
    for _ in 0..header.tensors {
        let nlen = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| CheckpointError::Tensor("name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Tensor(format!("{name}: {e}")))?;
        named.push((name, t));
    }
    if r.at != body.len() {
        return Err(CheckpointError::Tensor(format!(
            "{} unexpected trailing bytes",
            body.len() - r.at
        )));
    }

    let slots = OptimizerState::slot_names(&header.train_config.optimizer);
    let mut params = Parameters::new();
    let mut opt = OptimizerState {
        step: header.optimizer_step,
        slots: Default::default(),
    };
    for (name, t) in named {
        let bad = || CheckpointError::Tensor(name.clone());
        let (kind, key) = name.split_once('/').ok_or_else(bad)?;
        let key: ParamKey = key.parse().map_err(|_| bad())?;
        if kind == "param" {
            params.insert(key, t);
        } else {
            let pos = slots.iter().position(|s| *s == kind).ok_or_else(bad)?;
            let entry = opt.slots.entry(key).or_insert_with(|| Vec::with_capacity(slots.len()));
            if entry.len() != pos {
                return Err(bad());
            }
            entry.push(t);
        }
    }
    check_parameters(&header.spec, &params).map_err(|e| CheckpointError::Header(e.to_string()))?;
    for (key, tensors) in &opt.slots {
        let ok = tensors.len() == slots.len()
            && params
                .get(key)
                .is_some_and(|p| tensors.iter().all(|t| t.shape() == p.shape()));
        if !ok {
            return Err(CheckpointError::Tensor(format!("optimizer state for {key}")));
        }
    }
    Ok(Checkpoint {
        model: TrainedModel {
            spec: header.spec,
            params,
            target: header.target,
            input: header.input,
        },
        config: header.train_config,
        optimizer: opt,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ck)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|kind| Error::Checkpoint {
        path: path.to_path_buf(),
        kind,
    })
}
