//! `PFT1` tensor files.
//!
//! Layout: magic `PFT1`, little-endian `u32` dtype code (0 = f32, 1 = u16),
//! `u32` ndim, `ndim` little-endian `u32` dims, then the raw row-major payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PFT1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let t = Self { dims, data: TensorData::F32(data) };
        t.check_len()?;
        Ok(t)
    }

    pub fn u16(dims: Vec<u32>, data: Vec<u16>) -> Result<Self> {
        let t = Self { dims, data: TensorData::U16(data) };
        t.check_len()?;
        Ok(t)
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    fn check_len(&self) -> Result<()> {
        let len = match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        };
        if len != self.element_count() {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {:?} need {} elements, payload has {len}",
                self.dims,
                self.element_count()
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let code: u32 = match self.data {
            TensorData::F32(_) => 0,
            TensorData::U16(_) => 1,
        };
        w.write_all(&code.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::new();
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("truncated tensor file".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let code = u32_at(take(4)?);
        let ndim = u32_at(take(4)?) as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            dims.push(u32_at(take(4)?));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
        let tensor = match code {
            0 => {
                let raw = take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
                let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                Tensor { dims, data: TensorData::F32(v) }
            }
            1 => {
                let raw = take(count.checked_mul(2).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
                let v = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
                Tensor { dims, data: TensorData::U16(v) }
            }
            other => return Err(Error::Format(format!("unknown tensor dtype code {other}"))),
        };
        if !cur.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after tensor payload", cur.len())));
        }
        Ok(tensor)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
