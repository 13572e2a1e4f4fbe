//! `UPST` raw tensor files.
//!
//! Layout: magic `b"UPST"`, version `0x01`, dtype `0x00` (f32), one byte with
//! the number of dims, the dims as little-endian `u32`, then the row-major
//! little-endian payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::LogitTensor;

pub const MAGIC: &[u8; 4] = b"UPST";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;

/// An n-dimensional f32 array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let expected: usize = self.dims.iter().map(|&d| d as usize).product();
        if expected != self.data.len() || self.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "dims {:?} do not describe {} values",
                self.dims,
                self.data.len()
            )));
        }
        let mut buf = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[VERSION, DTYPE_F32, self.dims.len() as u8]);
        for d in &self.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(fmt("missing UPST magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(fmt(format!("unsupported UPST version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(fmt(format!("unsupported UPST dtype {}", bytes[5])));
        }
        let ndim = bytes[6] as usize;
        let header = 7 + 4 * ndim;
        if bytes.len() < header {
            return Err(fmt("truncated UPST header".into()));
        }
        let dims: Vec<u32> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| fmt("UPST dims overflow".into()))?;
        let payload = &bytes[header..];
        if Some(payload.len()) != count.checked_mul(4) {
            return Err(fmt(format!(
                "UPST payload has {} bytes, dims {:?} need {}",
                payload.len(),
                dims,
                count * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn into_logits(self) -> Result<LogitTensor<f32>> {
        match self.dims[..] {
            [c, h, w] => LogitTensor::new(c as usize, h as usize, w as usize, self.data),
            _ => Err(Error::Format(format!(
                "logit tensor must be 3-D (C x H x W), got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&LogitTensor<f32>> for RawTensor {
    fn from(t: &LogitTensor<f32>) -> Self {
        Self {
            dims: vec![t.channels() as u32, t.height() as u32, t.width() as u32],
            data: t.as_slice().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = RawTensor {
            dims: vec![1, 2],
            data: vec![1.0, -2.5],
        };
        let bytes = t.to_bytes().unwrap();
        assert_eq!(&bytes[..7], b"UPST\x01\x00\x02");
        assert_eq!(&bytes[7..15], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(RawTensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let t = RawTensor {
            dims: vec![3],
            data: vec![1.0, 2.0, 3.0],
        };
        let bytes = t.to_bytes().unwrap();
        assert!(RawTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(RawTensor::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[5] = 1;
        assert!(RawTensor::from_bytes(&bad).is_err());
        assert!(RawTensor::from_bytes(&bytes).unwrap().into_logits().is_err());
    }
}
