//! Per-tensor affine 8-bit quantization and the `FKLQ` file format.
//!
//! `scale = (max - min) / 255`, `zero_point = round(-min / scale)`; a value
//! `x` is stored as `q = clamp(round(x / scale + zero_point), 0, 255)`
//! shifted into `i8`, and restored as `(q - zero_point) * scale`. A constant
//! tensor gets `scale = 1`, all-zero codes and `zero_point = -value`.
//!
//! File layout: `FKLQ`, u32 version, u32 V/D/H, then per tensor in checkpoint
//! order the f32 scale, f32 zero point and `rows * cols` signed bytes.

use std::fs;
use std::path::Path;

use super::checkpoint::{read_header, write_header, Reader};
use super::{CifgConfig, CifgModel};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

pub const QUANTIZED_MAGIC: &[u8; 4] = b"FKLQ";

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    pub scale: f32,
    pub zero_point: f32,
    pub data: Vec<i8>,
}

impl QuantizedTensor {
    pub fn dequantize<T: Real>(&self) -> Matrix<T> {
        let scale = self.scale as f64;
        let zp = self.zero_point as f64;
        let data = self
            .data
            .iter()
            .map(|&q| T::from_f64((q as i16 as f64 + 128.0 - zp) * scale))
            .collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("stored shape")
    }
}

pub fn quantize_tensor<T: Real>(m: &Matrix<T>) -> QuantizedTensor {
    let (min, max) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
    if m.is_empty() || max <= min {
        let value = if m.is_empty() { 0.0 } else { min };
        return QuantizedTensor {
            rows: m.rows(),
            cols: m.cols(),
            scale: 1.0,
            zero_point: (-value) as f32,
            data: vec![-128; m.len()],
        };
    }
    // quantize against the stored f32 scale so that decode matches encode
    let scale = ((max - min) / 255.0) as f32;
    let s = scale as f64;
    let zero_point = (-min / s).round() as f32;
    let zp = zero_point as f64;
    let data = m
        .as_slice()
        .iter()
        .map(|&v| {
            let q = (v.as_f64() / s + zp).round().clamp(0.0, 255.0);
            (q as i16 - 128) as i8
        })
        .collect();
    QuantizedTensor {
        rows: m.rows(),
        cols: m.cols(),
        scale,
        zero_point,
        data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub config: CifgConfig,
    pub tensors: Vec<QuantizedTensor>,
}

impl QuantizedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size());
        write_header(&mut out, QUANTIZED_MAGIC, &self.config);
        for t in &self.tensors {
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&t.zero_point.to_le_bytes());
            out.extend(t.data.iter().map(|&q| q as u8));
        }
        out
    }

    /// Size in bytes of [`QuantizedModel::to_bytes`].
    pub fn serialized_size(&self) -> usize {
        20 + self.tensors.iter().map(|t| 8 + t.data.len()).sum::<usize>()
    }
}

pub fn quantize<T: Real>(model: &CifgModel<T>) -> QuantizedModel {
    QuantizedModel {
        config: *model.config(),
        tensors: model.tensors().iter().map(|t| quantize_tensor(t)).collect(),
    }
}

pub fn dequantize<T: Real>(q: &QuantizedModel) -> CifgModel<T> {
    let tensors = q.tensors.iter().map(|t| t.dequantize()).collect();
    CifgModel::from_tensors(q.config, tensors).expect("quantized model has consistent shapes")
}

pub fn quantized_from_bytes(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader::new(bytes);
    let config = read_header(&mut r, QUANTIZED_MAGIC)?;
    let mut tensors = Vec::with_capacity(11);
    for (rows, cols) in config.tensor_shapes() {
        let scale = r.f32()?;
        let zero_point = r.f32()?;
        if !scale.is_finite() || !zero_point.is_finite() {
            return Err(Error::Format("non-finite quantization parameters".into()));
        }
        let data = r.take(rows * cols)?.iter().map(|&b| b as i8).collect();
        tensors.push(QuantizedTensor {
            rows,
            cols,
            scale,
            zero_point,
            data,
        });
    }
    r.finish()?;
    Ok(QuantizedModel { config, tensors })
}

pub fn save_quantized(q: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, q.to_bytes())?;
    Ok(())
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    quantized_from_bytes(&fs::read(path)?)
}
