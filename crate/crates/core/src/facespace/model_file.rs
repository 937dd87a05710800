//! Binary container for [`EigenfaceModel`].
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content                                 |
//! |-------|-----------------------------------------|
//! | 4     | magic `LLEF`                            |
//! | 4     | format version (`u32`, currently 1)     |
//! | 4     | latent dimension `d` (`u32`)            |
//! | 4     | image side `s` (`u32`)                  |
//! | 8     | total training variance (`f64`)         |
//! | 8·d   | scales                                  |
//! | 8·3s² | mean image, row-major RGB               |
//! | 8·3s²·d | basis vectors, one after another     |

use std::io::{Read, Write};
use std::path::Path;

use super::{EigenfaceModel, FaceSpaceError, Result};
use crate::imagecore::{Image, CHANNELS};

pub const MODEL_MAGIC: [u8; 4] = *b"LLEF";
pub const MODEL_VERSION: u32 = 1;

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl EigenfaceModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.mean.data().len();
        let mut out = Vec::with_capacity(24 + 8 * (self.dim() + p * (self.dim() + 1)));
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.image_side as u32).to_le_bytes());
        out.extend_from_slice(&self.total_variance.to_le_bytes());
        put_f64s(&mut out, &self.scales);
        put_f64s(&mut out, self.mean.data());
        for b in &self.basis {
            put_f64s(&mut out, b);
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| FaceSpaceError::Format(msg.to_string());
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = bytes.split_at(n);
            bytes = rest;
            Ok(head)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != MODEL_VERSION {
            return Err(FaceSpaceError::Format(format!("unsupported version {version}")));
        }
        let d = u32_at(take(4)?) as usize;
        let side = u32_at(take(4)?) as usize;
        let p = side
            .checked_mul(side)
            .and_then(|v| v.checked_mul(CHANNELS))
            .ok_or_else(|| bad("image side overflows"))?;
        let mut f64s = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n.checked_mul(8).ok_or_else(|| bad("size overflows"))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let total_variance = f64s(1)?[0];
        let scales = f64s(d)?;
        let mean = f64s(p)?;
        let basis = (0..d).map(|_| f64s(p)).collect::<Result<Vec<_>>>()?;
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || basis.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(bad("non-finite or negative values"));
        }
        Ok(EigenfaceModel {
            image_side: side,
            mean: Image::new(side, side, mean)?,
            basis,
            scales,
            total_variance,
        })
    }
}

pub fn write_model(path: impl AsRef<Path>, model: &EigenfaceModel) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&model.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<EigenfaceModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    EigenfaceModel::from_bytes(&buf)
}
