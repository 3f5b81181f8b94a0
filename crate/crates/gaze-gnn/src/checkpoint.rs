//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, u32 LE format version, u64 LE header length, a JSON
//! header (model config, seed, config hash, parameter names + shapes in
//! canonical order), then each parameter's values as little-endian f64 in
//! header order. Everything is written deterministically, so saving the same
//! model twice yields byte-identical files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"GAZEGNN\0";
const VERSION: u32 = 1;

/// Provenance carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    seed: u64,
    config_hash: String,
    params: Vec<ParamInfo>,
}

#[derive(Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn save_model<W: Write>(mut w: W, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let params = model.params();
    let header = Header {
        model: model.cfg.clone(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        params: params
            .iter()
            .map(|(name, t)| ParamInfo { name: name.clone(), shape: t.shape.clone() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in &params {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model<R: Read>(mut r: R) -> Result<(Model, CheckpointMeta)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic: not a model checkpoint"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|_| bad("missing version"))?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(|_| bad("missing header length"))?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    if header_len > 64 << 20 {
        return Err(bad("unreasonable header length"));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| bad(&format!("header JSON: {e}")))?;

    // Rebuild the model skeleton from the stored config, then overwrite every
    // parameter; the header must list exactly the canonical parameters.
    let mut model = Model::init(header.model.clone(), header.seed)?;
    {
        let mut params = model.params_mut();
        if params.len() != header.params.len() {
            return Err(bad(&format!(
                "parameter count mismatch: file lists {}, model has {}",
                header.params.len(),
                params.len()
            )));
        }
        for ((name, tensor), info) in params.iter_mut().zip(&header.params) {
            if *name != info.name {
                return Err(bad(&format!(
                    "parameter order mismatch: file lists {:?}, expected {:?}",
                    info.name, name
                )));
            }
            if tensor.shape != info.shape {
                return Err(bad(&format!(
                    "shape mismatch for {name}: file {:?}, model {:?}",
                    info.shape, tensor.shape
                )));
            }
            let mut bytes = vec![0u8; tensor.numel() * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| bad(&format!("truncated data for {name}")))?;
            for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                tensor.data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            if !tensor.data.iter().all(|v| v.is_finite()) {
                return Err(bad(&format!("non-finite values in {name}")));
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok((model, CheckpointMeta { seed: header.seed, config_hash: header.config_hash }))
}

fn bad(detail: &str) -> Error {
    Error::Checkpoint(detail.to_string())
}
