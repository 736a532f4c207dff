use serde::{Deserialize, Serialize};

use super::FrameSequence;
use crate::error::{invalid, Result};

/// Per-dimension affine map sending the fitted min to −1 and max to +1.
///
/// Dimensions that were constant on the fitting data map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &[FrameSequence]) -> Result<Self> {
        let first = data.first().ok_or_else(|| invalid("cannot fit a scaler on no recordings"))?;
        let p = first.dims();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for seq in data {
            if seq.dims() != p {
                return Err(invalid(format!(
                    "recording `{}` has {} dims, expected {p}",
                    seq.recording_id,
                    seq.dims()
                )));
            }
            for row in seq.values().chunks_exact(p) {
                for d in 0..p {
                    min[d] = min[d].min(row[d]);
                    max[d] = max[d].max(row[d]);
                }
            }
        }
        let s = Self { min, max };
        for d in s.constant_dims() {
            log::warn!("dimension {d} is constant on the fitting data; it will be mapped to 0");
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn constant_dims(&self) -> Vec<usize> {
        (0..self.dims()).filter(|&d| !(self.max[d] > self.min[d])).collect()
    }

    /// `(gain, offset)` per dimension: `scaled = gain·x + offset`.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.dims())
            .map(|d| {
                let span = self.max[d] - self.min[d];
                if span > 0.0 {
                    let gain = 2.0 / span;
                    (gain, -1.0 - gain * self.min[d])
                } else {
                    (0.0, 0.0)
                }
            })
            .collect()
    }

    pub fn apply(&self, seq: &FrameSequence) -> Result<FrameSequence> {
        if seq.dims() != self.dims() {
            return Err(invalid(format!(
                "scaler fitted on {} dims cannot scale `{}` with {}",
                self.dims(),
                seq.recording_id,
                seq.dims()
            )));
        }
        let map = self.affine();
        let p = self.dims();
        let values = seq
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % p;
                if map[d].0 == 0.0 {
                    0.0
                } else {
                    2.0 * (v - self.min[d]) / (self.max[d] - self.min[d]) - 1.0
                }
            })
            .collect();
        seq.with_values(values)
    }
}

/// Fits a [`Scaler`] on `fit_on` and applies it to `data`.
pub fn scale_to_unit(data: &[FrameSequence], fit_on: &[FrameSequence]) -> Result<(Vec<FrameSequence>, Scaler)> {
    let scaler = Scaler::fit(fit_on)?;
    let scaled = data.iter().map(|s| scaler.apply(s)).collect::<Result<Vec<_>>>()?;
    Ok((scaled, scaler))
}
