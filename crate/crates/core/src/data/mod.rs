//! Frame sequences, the synthetic generator, `[-1, 1]` scaling and the
//! on-disk formats.

pub mod io;
mod scale;
mod synth;

pub use scale::{scale_to_unit, Scaler};
pub use synth::{generate, AnomalyKind, SynthData, SynthSpec};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Ground-truth label of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomaly" => Ok(Label::Anomaly),
            "unknown" => Ok(Label::Unknown),
            other => Err(invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// A `T × P` time-major matrix of feature frames plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub recording_id: String,
    pub machine_id: String,
    pub label: Label,
    frames: usize,
    dims: usize,
    values: Vec<f64>,
}

impl FrameSequence {
    pub fn new(
        recording_id: impl Into<String>,
        machine_id: impl Into<String>,
        label: Label,
        frames: usize,
        dims: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || dims == 0 {
            return Err(invalid(format!("frame sequence must be non-empty, got {frames} × {dims}")));
        }
        if values.len() != frames * dims {
            return Err(invalid(format!("{} values for a {frames} × {dims} sequence", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at frame {}, dim {}", i / dims, i % dims)));
        }
        Ok(Self { recording_id: recording_id.into(), machine_id: machine_id.into(), label, frames, dims, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    /// Rows `start..start + len` as one contiguous slice.
    pub fn rows(&self, start: usize, len: usize) -> &[f64] {
        &self.values[start * self.dims..(start + len) * self.dims]
    }

    /// Same metadata, new values of the same shape.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.recording_id.clone(), self.machine_id.clone(), self.label, self.frames, self.dims, values)
    }
}
