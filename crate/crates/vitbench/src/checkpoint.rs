//! `VITW` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"VITW"  u32 version (= 1)
//! u32 image_size  u32 patch_size  u32 embed_dim  u32 depth  u32 num_heads
//! f64 mlp_ratio   u32 num_classes f64 dropout_rate
//! u32 tensor_count
//! tensor_count × { u32 rank, rank × u32 dim, product(dims) × f64 }
//! ```
//!
//! Tensors follow [`VitConfig::param_shapes`] order. Externally converted
//! pretrained weights are imported by writing this layout.

use std::fs;
use std::path::Path;

use vitbench_core::vit::{VitConfig, VitParams};
use vitbench_core::Tensor;

use crate::error::{CheckpointError, IoContext, Result};

pub const MAGIC: [u8; 4] = *b"VITW";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(config: &VitConfig, params: &VitParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_values() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [config.image_size, config.patch_size, config.embed_dim, config.depth, config.num_heads] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&config.mlp_ratio.to_le_bytes());
    put_u32(&mut out, config.num_classes);
    out.extend_from_slice(&config.dropout_rate.to_le_bytes());
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len());
    for t in tensors {
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], CheckpointError> {
        if self.buf.len() < N {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(what)?) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }
}

/// Structural fields only; dropout is a training setting and may differ.
fn same_architecture(a: &VitConfig, b: &VitConfig) -> bool {
    VitConfig { dropout_rate: 0.0, ..*a } == VitConfig { dropout_rate: 0.0, ..*b }
}

/// Parse a checkpoint; with `expected`, the stored architecture must match.
pub fn decode(bytes: &[u8], expected: Option<&VitConfig>) -> Result<(VitConfig, VitParams)> {
    let mut c = Cursor { buf: bytes };
    let magic: [u8; 4] = c.take("magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = c.u32("version")? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, expected: VERSION }.into());
    }
    let config = VitConfig {
        image_size: c.u32("config")?,
        patch_size: c.u32("config")?,
        embed_dim: c.u32("config")?,
        depth: c.u32("config")?,
        num_heads: c.u32("config")?,
        mlp_ratio: c.f64("config")?,
        num_classes: c.u32("config")?,
        dropout_rate: c.f64("config")?,
    };
    if let Some(exp) = expected {
        if !same_architecture(&config, exp) {
            return Err(CheckpointError::ConfigMismatch { found: format!("{config:?}"), expected: format!("{exp:?}") }.into());
        }
    }
    config.validate()?;
    let shapes = config.param_shapes();
    let count = c.u32("tensor count")?;
    if count != shapes.len() {
        return Err(CheckpointError::ConfigMismatch {
            found: format!("{count} tensors"),
            expected: format!("{} tensors", shapes.len()),
        }
        .into());
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in shapes {
        let rank = c.u32(&name)?;
        let dims = (0..rank).map(|_| c.u32(&name)).collect::<Result<Vec<_>, _>>()?;
        if dims != shape {
            return Err(CheckpointError::Shape { name, expected: shape, found: dims }.into());
        }
        let n: usize = dims.iter().product();
        if c.buf.len() < n * 8 {
            return Err(CheckpointError::Truncated(name).into());
        }
        let data = (0..n).map(|_| c.f64(&name)).collect::<Result<Vec<_>, _>>()?;
        tensors.push(Tensor::new(&dims, data)?);
    }
    if !c.buf.is_empty() {
        return Err(CheckpointError::Trailing(c.buf.len()).into());
    }
    Ok((config, VitParams::from_tensors(&config, tensors)?))
}

pub fn save(path: &Path, config: &VitConfig, params: &VitParams) -> Result<()> {
    fs::write(path, encode(config, params)).at(path)
}

pub fn load(path: &Path, expected: Option<&VitConfig>) -> Result<(VitConfig, VitParams)> {
    decode(&fs::read(path).at(path)?, expected)
}
