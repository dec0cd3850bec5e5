//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!   magic "RFNW" | version u32 | config | tensor count u32 | tensors
//! where config is
//!   vocab_size u32 | d_model u32 | n_layers u32 | d_fast u32 | eta f32 |
//!   update_mode u8 | chunk_size u32 | max_seq_len u32
//! and each tensor is
//!   name_len u32 | name bytes | rank u32 | dims u32... | data f32...
//! Loading validates the magic, the version, every declared length, and that
//! the file ends exactly where the last tensor does.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, UpdateMode};
use crate::numerics::Array;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFNW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(w: &mut impl Write, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("file truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn get_f32(r: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("file truncated".into()))?;
    Ok(f32::from_le_bytes(buf))
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;

    let c = &params.config;
    put_u32(&mut w, c.vocab_size as u32)?;
    put_u32(&mut w, c.d_model as u32)?;
    put_u32(&mut w, c.n_layers as u32)?;
    put_u32(&mut w, c.d_fast as u32)?;
    put_f32(&mut w, c.eta)?;
    w.write_all(&[match c.update_mode {
        UpdateMode::PerTokenDelta => 0u8,
        UpdateMode::Chunked => 1u8,
    }])?;
    put_u32(&mut w, c.chunk_size as u32)?;
    put_u32(&mut w, c.max_seq_len as u32)?;

    let named = params.named_tensors();
    put_u32(&mut w, named.len() as u32)?;
    for (name, tensor) in named {
        put_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, tensor.shape().len() as u32)?;
        for &dim in tensor.shape() {
            put_u32(&mut w, dim as u32)?;
        }
        for &v in tensor.data() {
            put_f32(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file truncated".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }

    let vocab_size = get_u32(&mut r)? as usize;
    let d_model = get_u32(&mut r)? as usize;
    let n_layers = get_u32(&mut r)? as usize;
    let d_fast = get_u32(&mut r)? as usize;
    let eta = get_f32(&mut r)?;
    let mut mode = [0u8; 1];
    r.read_exact(&mut mode)
        .map_err(|_| Error::Checkpoint("file truncated".into()))?;
    let update_mode = match mode[0] {
        0 => UpdateMode::PerTokenDelta,
        1 => UpdateMode::Chunked,
        m => return Err(Error::Checkpoint(format!("unknown update mode {m}"))),
    };
    let chunk_size = get_u32(&mut r)? as usize;
    let max_seq_len = get_u32(&mut r)? as usize;
    let config = ModelConfig {
        vocab_size,
        d_model,
        n_layers,
        d_fast,
        eta,
        update_mode,
        chunk_size,
        max_seq_len,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let n_tensors = get_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = get_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("file truncated".into()))?;
        let rank = get_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint("file truncated".into()))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Array::new(shape, data).map_err(|e| {
            Error::Checkpoint(format!("tensor {}: {e}", String::from_utf8_lossy(&name)))
        })?;
        tensors.push(tensor);
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }

    ModelParams::from_tensors(&config, tensors).map_err(|e| Error::Checkpoint(e.to_string()))
}
