//! Binary model checkpoint.
//!
//! Little-endian layout: 8-byte magic `CARP3DM1`, `u32` version, the model
//! configuration (`u32` feature_dim, embed_dim, attn_dim, n_classes, `u8`
//! pooling code, `u32` m, `u32` d_slices, `f64` pitch_um), `u32` tensor
//! count, then per tensor `u32` name length, name bytes, `u32` rows,
//! `u32` cols and rows×cols `f64` values.

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, NeighborhoodSpec, Pooling};
use super::params::ModelParams;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CARP3DM1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(config: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, CHECKPOINT_VERSION as usize);
    u32le(&mut out, config.feature_dim);
    u32le(&mut out, config.embed_dim);
    u32le(&mut out, config.attn_dim);
    u32le(&mut out, config.n_classes);
    out.push(config.pooling.code());
    u32le(&mut out, config.neighborhood.m);
    u32le(&mut out, config.neighborhood.d_slices);
    out.extend_from_slice(&config.neighborhood.pitch_um.to_le_bytes());
    let named = params.named();
    u32le(&mut out, named.len());
    for (name, m) in named {
        u32le(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        u32le(&mut out, m.rows());
        u32le(&mut out, m.cols());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("ran out of bytes reading {what} at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<(ModelConfig, ModelParams)> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "CARP3DM1",
        });
    }
    let mut r = Reader { bytes, pos: 8, path };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            version,
        });
    }
    let feature_dim = r.usize("feature_dim")?;
    let embed_dim = r.usize("embed_dim")?;
    let attn_dim = r.usize("attn_dim")?;
    let n_classes = r.usize("n_classes")?;
    let code = r.take(1, "pooling")?[0];
    let pooling = Pooling::from_code(code)
        .ok_or_else(|| Error::Config(format!("unknown pooling code {code} in {}", path.display())))?;
    let m = r.usize("m")?;
    let d_slices = r.usize("d_slices")?;
    let pitch_um = r.f64("pitch_um")?;
    let config = ModelConfig {
        feature_dim,
        embed_dim,
        attn_dim,
        n_classes,
        pooling,
        neighborhood: NeighborhoodSpec { m, d_slices, pitch_um },
    };
    config.validate()?;
    let count = r.usize("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let len = r.usize("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Config(format!("non-UTF-8 tensor name in {}", path.display())))?;
        let rows = r.usize("rows")?;
        let cols = r.usize("cols")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Config(format!("tensor {name} too large")))?;
        let raw = r.take(n.saturating_mul(8), name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Matrix::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: r.pos,
            found: bytes.len(),
        });
    }
    let params = ModelParams::from_named(&config, tensors)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}
