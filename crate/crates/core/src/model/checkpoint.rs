//! Versioned binary checkpoints.
//!
//! Layout: 8 magic bytes, u32 format version, u32 JSON config length, the
//! config JSON, u32 tensor count, then per tensor a length-prefixed name,
//! u32 rows, u32 cols, and row-major 32-bit little-endian floats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{init_params, ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GENRETCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let config_json =
        serde_json::to_vec(&params.config).map_err(|e| Error::Config(e.to_string()))?;
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);

    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                line: 0,
                msg: "checkpoint truncated".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Load a checkpoint; returns the stored config together with the params.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut r = Reader {
        buf: &raw,
        pos: 0,
        path: path.display().to_string(),
    };
    let bad = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.into(),
    };

    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| bad(&format!("bad config block: {e}")))?;

    let mut params = init_params(&config)?;
    let mut remaining: std::collections::HashMap<String, &mut crate::tensor::Tensor> =
        params.tensors_mut().into_iter().collect();

    let n_tensors = r.u32()? as usize;
    if n_tensors != remaining.len() {
        return Err(bad(&format!(
            "tensor count {n_tensors} does not match config ({})",
            remaining.len()
        )));
    }
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not utf-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let t = remaining
            .remove(&name)
            .ok_or_else(|| bad(&format!("unknown or duplicate tensor '{name}'")))?;
        if t.rows != rows || t.cols != cols {
            return Err(bad(&format!(
                "tensor '{name}' shape {rows}x{cols} does not match config ({}x{})",
                t.rows, t.cols
            )));
        }
        let bytes = r.take(rows * cols * 4)?;
        for (i, v) in t.data.iter_mut().enumerate() {
            let f = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            *v = f as f64;
        }
    }
    Ok((config, params))
}

/// Load and reject the checkpoint unless its config matches `expected`.
pub fn load_checkpoint_checked(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<ModelParams> {
    let (config, params) = load_checkpoint(&path)?;
    if config != *expected {
        return Err(Error::Config(format!(
            "checkpoint config mismatch: stored {config:?}, expected {expected:?}"
        )));
    }
    Ok(params)
}
