//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "APCK"
//! version    u32
//! config     u64 byte length, then RunConfig as UTF-8 JSON
//! count      u32 number of tensors
//! tensor     repeated `count` times:
//!   name     u32 byte length, then UTF-8
//!   rank     u32
//!   dims     rank × u64
//!   values   product(dims) × f64
//! ```
//!
//! Tensors are written in name order. Loading checks every shape against the
//! architecture described by the embedded config and rejects trailing bytes.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{parameter_shapes, ApModel, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"APCK";
pub const VERSION: u32 = 1;

/// Serialises a model and its run configuration.
pub fn encode(model: &ApModel, config: &RunConfig) -> Result<Vec<u8>> {
    if config.model != *model.config() || config.variant != model.variant() {
        return Err(Error::contract("run config does not describe the model being saved"));
    }
    let json = serde_json::to_vec(config).map_err(|e| Error::Numeric(format!("serialising config: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + model.params().num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::checkpoint(field, "file is truncated")),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, field: &str) -> Result<usize> {
        let n = self.u64(field)?;
        usize::try_from(n).map_err(|_| Error::checkpoint(field, format!("length {n} is too large")))
    }
}

/// Parses a checkpoint, validating it against the embedded architecture.
pub fn decode(bytes: &[u8]) -> Result<(RunConfig, ApModel)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::checkpoint("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::checkpoint(
            "version",
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let clen = r.len("config")?;
    let config: RunConfig = serde_json::from_slice(r.take(clen, "config")?)
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;
    config
        .validate()
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;
    let expected = parameter_shapes(&config.model, config.variant);
    let count = r.u32("count")? as usize;
    if count != expected.len() {
        return Err(Error::checkpoint(
            "count",
            format!("{count} tensors, architecture has {}", expected.len()),
        ));
    }
    let mut tensors = std::collections::BTreeMap::new();
    for i in 0..count {
        let nlen = r.u32(&format!("tensor[{i}].name"))? as usize;
        let name = std::str::from_utf8(r.take(nlen, &format!("tensor[{i}].name"))?)
            .map_err(|_| Error::checkpoint(format!("tensor[{i}].name"), "not UTF-8"))?
            .to_string();
        let shape_expected = expected
            .get(&name)
            .ok_or_else(|| Error::checkpoint(&name, "unexpected tensor for this architecture"))?;
        let rank = r.u32(&name)? as usize;
        if rank != shape_expected.len() {
            return Err(Error::checkpoint(
                &name,
                format!("rank {rank} does not match architecture {shape_expected:?}"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len(&name)?);
        }
        if shape != *shape_expected {
            return Err(Error::checkpoint(
                &name,
                format!("shape {shape:?} does not match architecture {shape_expected:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::checkpoint(&name, "tensor appears twice"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::checkpoint(
            "trailer",
            format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        ));
    }
    let model = ApModel::new(config.model.clone(), config.variant, ModelParams::from_map(tensors))?;
    Ok((config, model))
}

pub fn save(path: &Path, model: &ApModel, config: &RunConfig) -> Result<()> {
    let bytes = encode(model, config)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(RunConfig, ApModel)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint { field, message } => Error::Checkpoint {
            field,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    })
}
