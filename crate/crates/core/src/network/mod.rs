//! The recurrent mixture-density network.
//!
//! A window of `seq_len` frames feeds one or more streams. Stream 0 runs
//! stacked GRU layers over the raw frames; each further stream first applies
//! a strided depthwise 1-D convolution to the previous stream's input,
//! lowering the temporal resolution. Every stream is summarised into one
//! vector by attention pooling (or by its last hidden state), the summaries
//! are concatenated, passed through a ReLU trunk and split into the five
//! mixture heads.

mod attention;
pub mod checkpoint;
mod conv;
mod gru;
mod model;
mod weights;

pub use attention::{attention_pool, attention_scores, AttentionCell};
pub use conv::{conv_output_len, conv_stream};
pub use gru::{gru_step, GruCell};
pub use model::{backward, backward_into, forward, forward_heads, loss_and_grad, window_nll, ForwardTrace};
pub use weights::{ModelWeights, Tensor};

use serde::{Deserialize, Serialize};

use crate::density::{Family, NuBounds};
use crate::error::{invalid, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Frame dimension.
    pub p: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seq_len: usize,
    /// Mixture components.
    pub components: usize,
    pub family: Family,
    pub multires: bool,
    pub attention: bool,
    /// Total number of temporal resolutions when `multires` is set.
    pub resolutions: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Only zero is supported.
    pub conv_padding: usize,
    pub nu_bounds: NuBounds,
    /// Width of the shared ReLU layer; defaults to `hidden`.
    pub trunk: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 8,
            hidden: 64,
            layers: 2,
            seq_len: 70,
            components: 3,
            family: Family::StudentT,
            multires: true,
            attention: true,
            resolutions: 2,
            conv_kernel: 10,
            conv_stride: 3,
            conv_padding: 0,
            nu_bounds: NuBounds::default(),
            trunk: None,
        }
    }
}

impl ModelConfig {
    pub fn num_streams(&self) -> usize {
        if self.multires {
            self.resolutions
        } else {
            1
        }
    }

    pub fn trunk_width(&self) -> usize {
        self.trunk.unwrap_or(self.hidden)
    }

    /// Sequence length seen by each stream.
    pub fn stream_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.seq_len];
        for _ in 1..self.num_streams() {
            let prev = *lens.last().unwrap();
            lens.push(conv_output_len(prev, self.conv_kernel, self.conv_stride).unwrap_or(0));
        }
        lens
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.hidden == 0 || self.layers == 0 || self.components == 0 {
            return Err(invalid("p, hidden, layers and components must all be at least 1"));
        }
        if self.seq_len == 0 {
            return Err(invalid("seq_len must be at least 1"));
        }
        if self.trunk == Some(0) {
            return Err(invalid("trunk width must be at least 1"));
        }
        if self.conv_padding != 0 {
            return Err(invalid("only conv_padding = 0 is supported"));
        }
        if self.conv_kernel == 0 || self.conv_stride == 0 {
            return Err(invalid("conv kernel and stride must be at least 1"));
        }
        if !(self.nu_bounds.lo > 0.0 && self.nu_bounds.lo < self.nu_bounds.hi && self.nu_bounds.hi.is_finite()) {
            return Err(invalid(format!(
                "degrees-of-freedom bounds {:?} must satisfy 0 < lo < hi < inf",
                self.nu_bounds
            )));
        }
        if self.multires {
            if self.resolutions < 2 {
                return Err(invalid("multires needs at least 2 resolutions"));
            }
            if self.seq_len <= self.conv_kernel {
                return Err(invalid(format!(
                    "seq_len {} must exceed conv_kernel {} when multires is on",
                    self.seq_len, self.conv_kernel
                )));
            }
            let lens = self.stream_lengths();
            if lens.iter().any(|&l| l == 0) {
                return Err(invalid(format!("window too short for {} resolutions: {lens:?}", self.resolutions)));
            }
        }
        Ok(())
    }
}
