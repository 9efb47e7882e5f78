//! Model checkpoint files.
//!
//! Layout: magic `STCK`, format version, model shape (embedding dim, class
//! count), the normalize flag and temperature used at training time, then
//! every tensor as (name, shape, row-major f64 data) in the fixed parameter
//! order. Loading restores the values bit-exactly.

use super::{ModelDims, ModelParams};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"STCK";
const VERSION: u32 = 1;

/// Inference-time settings carried alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    pub normalize: bool,
    pub temperature: f64,
}

/// A loaded checkpoint: weights plus the settings they were trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint<S = f64> {
    pub params: ModelParams<S>,
    pub meta: ModelMeta,
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &ModelParams<S>,
    meta: &ModelMeta,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut file, params, meta)
}

pub fn write_checkpoint<S: Scalar, W: Write>(
    w: &mut W,
    params: &ModelParams<S>,
    meta: &ModelMeta,
) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, params.dims.embed_dim as u32)?;
    write_u32(w, params.dims.class_count as u32)?;
    write_u8(w, meta.normalize as u8)?;
    write_f64(w, meta.temperature)?;
    let tensors = params.visit();
    write_u32(w, tensors.len() as u32)?;
    for (name, data) in tensors {
        write_str(w, &name)?;
        write_u64(w, data.len() as u64)?;
        for v in data {
            write_f64(w, v.to_f64().expect("scalar converts to f64"))?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open '{}': {e}", path.display())))?,
    );
    read_checkpoint(&mut file)
}

pub fn read_checkpoint<S: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<S>> {
    expect_magic(r, MAGIC, "checkpoint")?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let embed_dim = read_u32(r)? as usize;
    let class_count = read_u32(r)? as usize;
    let normalize = match read_u8(r)? {
        0 => false,
        1 => true,
        v => return Err(Error::format(format!("bad normalize flag {v}"))),
    };
    let temperature = read_f64(r)?;
    let mut params = ModelParams::zeros(ModelDims { embed_dim, class_count });
    let tensor_count = read_u32(r)? as usize;
    let expected = params.visit().len();
    if tensor_count != expected {
        return Err(Error::format(format!(
            "checkpoint lists {tensor_count} tensors, model has {expected}"
        )));
    }
    for (name, slot) in params.visit_mut() {
        let stored = read_str(r)?;
        if stored != name {
            return Err(Error::format(format!(
                "tensor order mismatch: expected '{name}', found '{stored}'"
            )));
        }
        let len = read_usize(r)?;
        if len != slot.len() {
            return Err(Error::format(format!(
                "tensor '{name}' has {len} values, expected {}",
                slot.len()
            )));
        }
        for v in slot.iter_mut() {
            *v = real(read_f64(r)?);
        }
    }
    Ok(Checkpoint { params, meta: ModelMeta { normalize, temperature } })
}
