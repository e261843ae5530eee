//! Binary critic checkpoints.
//!
//! Layout, all little-endian:
//! `DRUMCRIT` | version u32 | arch hash u64 | arch block | counts | tensors.
//! The arch block holds input coeffs, input frames, channel count, each
//! channel width and dense units (u32), kernel and stride (u32 x 4), then
//! leaky slope, bn epsilon and bn momentum (f32). The hash is the first
//! eight bytes of SHA-256 over that block. Counts are the parameter and
//! batch-norm channel totals (u64); tensors are the flat parameters, running
//! means and running variances as f32.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CriticArch, CriticParams, BN_EPS, BN_MOMENTUM, KERNEL, LEAKY_SLOPE, STRIDE};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DRUMCRIT";

fn arch_block(arch: &CriticArch) -> Vec<u8> {
    let mut b = Vec::new();
    let mut u = |x: usize| b.extend_from_slice(&(x as u32).to_le_bytes());
    u(arch.input_coeffs);
    u(arch.input_frames);
    u(arch.channels.len());
    arch.channels.iter().for_each(|&c| u(c));
    u(arch.dense_units);
    for x in [KERNEL.0, KERNEL.1, STRIDE.0, STRIDE.1] {
        u(x);
    }
    for x in [LEAKY_SLOPE, BN_EPS, BN_MOMENTUM] {
        b.extend_from_slice(&(x as f32).to_le_bytes());
    }
    b
}

fn arch_hash(block: &[u8]) -> u64 {
    let digest = Sha256::digest(block);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl CriticParams<f32> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let block = arch_block(&self.arch);
        let mut out = Vec::with_capacity(64 + 4 * (self.values.len() + 2 * self.running_mean.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&arch_hash(&block).to_le_bytes());
        out.extend_from_slice(&block);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.running_mean.len() as u64).to_le_bytes());
        for x in self.values.iter().chain(&self.running_mean).chain(&self.running_var) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hash = r.u64()?;
        let block_start = r.at;
        let input_coeffs = r.u32()? as usize;
        let input_frames = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        if n_layers > 64 {
            return Err(Error::Checkpoint("implausible layer count".into()));
        }
        let channels = (0..n_layers).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
        let dense_units = r.u32()? as usize;
        r.take(4 * 4 + 3 * 4)?;
        let block = &bytes[block_start..r.at];
        if arch_hash(block) != hash {
            return Err(Error::Checkpoint("architecture hash mismatch".into()));
        }
        let arch = CriticArch {
            input_coeffs,
            input_frames,
            channels,
            dense_units,
        };
        if arch_block(&arch) != block {
            return Err(Error::Checkpoint("checkpoint was written with different layer constants".into()));
        }
        arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n_values = r.u64()? as usize;
        let n_bn = r.u64()? as usize;
        let expected = (n_values + 2 * n_bn).checked_mul(4).and_then(|t| t.checked_add(r.at));
        if expected != Some(bytes.len()) {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes, found {}",
                expected.map_or("overflowing".to_string(), |e| e.to_string()),
                bytes.len()
            )));
        }
        let values = r.f32s(n_values)?;
        let mean = r.f32s(n_bn)?;
        let var = r.f32s(n_bn)?;
        CriticParams::from_parts(arch, values, mean, var)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Write atomically (temp file then rename).
pub fn save_checkpoint(params: &CriticParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, params.to_checkpoint_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CriticParams<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    CriticParams::from_checkpoint_bytes(&bytes)
}
