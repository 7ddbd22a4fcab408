//! `LPOMCKPT` version 1 weight files.
//!
//! ```text
//! magic    8 bytes  "LPOMCKPT"
//! layers   u32 LE
//! per layer: rows u32 LE, cols u32 LE, rows·cols f64 LE in row-major order
//! kind     u8       activation tag
//! param    f64 LE   activation parameter (0 when the activation has none)
//! bias     u8       1 when every layer carries a trailing bias column
//! ```

use std::fs;
use std::path::Path;

use crate::activation::Activation;
use crate::error::{LpomError, Result};
use crate::network::Weights;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"LPOMCKPT";
const FORMAT: &str = "LPOMCKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: Weights,
    pub activation: Activation,
}

impl Checkpoint {
    pub fn new(weights: Weights, activation: Activation) -> Self {
        Checkpoint { weights, activation }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let layers = self.weights.layers();
        let mut out = Vec::with_capacity(8 + 4 + layers.iter().map(|w| 8 + 8 * w.len()).sum::<usize>() + 10);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for w in layers {
            out.extend_from_slice(&(w.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(w.cols() as u32).to_le_bytes());
            for v in w.to_row_major() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.push(self.activation.tag());
        out.extend_from_slice(&self.activation.param().unwrap_or(0.0).to_le_bytes());
        out.push(u8::from(self.weights.has_bias()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(LpomError::format(FORMAT, "bad magic"));
        }
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(LpomError::format(FORMAT, "no layers"));
        }
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(
                rows.checked_mul(cols)
                    .and_then(|n| n.checked_mul(8))
                    .ok_or_else(|| LpomError::format(FORMAT, "layer size overflows"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            layers.push(Matrix::new(rows, cols, data).map_err(|e| LpomError::format(FORMAT, e.to_string()))?);
        }
        let tag = r.take(1)?[0];
        let param = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let bias = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(LpomError::format(FORMAT, format!("bias flag {b}"))),
        };
        if r.at != bytes.len() {
            return Err(LpomError::format(FORMAT, "trailing bytes"));
        }
        let activation = Activation::from_tag(tag, param).map_err(|e| LpomError::format(FORMAT, e.to_string()))?;
        let weights = Weights::new(layers, bias).map_err(|e| LpomError::format(FORMAT, e.to_string()))?;
        Ok(Checkpoint { weights, activation })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LpomError::format(FORMAT, "truncated"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
