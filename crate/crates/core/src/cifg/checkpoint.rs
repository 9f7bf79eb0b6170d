//! `FKLM` checkpoints: magic, u32 version, u32 V/D/H, then every tensor as
//! row-major little-endian f32 in the order W, Wi, Ui, bi, Wc, Uc, bc, Wo,
//! Uo, bo, P.

use std::fs;
use std::path::Path;

use super::quant::{self, QUANTIZED_MAGIC};
use super::{CifgConfig, CifgModel};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FKLM";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], config: &CifgConfig) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [config.vocab_size, config.embed_dim, config.hidden] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
}

/// Cursor over a checkpoint byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Reads magic, version and dimensions.
pub(crate) fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<CifgConfig> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (v, d, h) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    CifgConfig::new(v, d, h).map_err(|_| Error::Format(format!("bad dimensions V={v} D={d} H={h}")))
}

pub fn checkpoint_bytes<T: Real>(model: &CifgModel<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * model.num_params());
    write_header(&mut out, CHECKPOINT_MAGIC, model.config());
    for t in model.tensors() {
        for &v in t.as_slice() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CifgModel<f32>> {
    let mut r = Reader::new(bytes);
    let config = read_header(&mut r, CHECKPOINT_MAGIC)?;
    let mut tensors = Vec::with_capacity(11);
    for (rows, cols) in config.tensor_shapes() {
        let data = (0..rows * cols).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    r.finish()?;
    CifgModel::from_tensors(config, tensors)
}

pub fn save_checkpoint<T: Real>(model: &CifgModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CifgModel<f32>> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Loads either a float (`FKLM`) or a quantized (`FKLQ`) checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<CifgModel<f32>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(QUANTIZED_MAGIC) {
        let q = quant::quantized_from_bytes(&bytes)?;
        Ok(quant::dequantize(&q))
    } else {
        checkpoint_from_bytes(&bytes)
    }
}
