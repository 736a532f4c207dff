use std::sync::atomic::{AtomicU64, Ordering};

use crate::density::{lower_len, Family};
use crate::error::{invalid, Error, Result};

use super::ModelConfig;

/// A named, row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self { name: name.into(), dims, data: vec![0.0; len] }
    }

    pub fn from_parts(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(invalid(format!("tensor dims {dims:?} need {len} values, got {}", data.len())));
        }
        Ok(Self { name: name.into(), dims, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GruIdx {
    pub w_u: usize,
    pub u_u: usize,
    pub b_u: usize,
    pub w_r: usize,
    pub u_r: usize,
    pub b_r: usize,
    pub w_h: usize,
    pub u_h: usize,
    pub b_h: usize,
}

impl GruIdx {
    pub fn all(&self) -> [usize; 9] {
        [self.w_u, self.u_u, self.b_u, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AttnIdx {
    pub w_a: usize,
    pub b_a: usize,
    pub w_q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvIdx {
    pub filters: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StreamIdx {
    pub conv: Option<ConvIdx>,
    pub layers: Vec<GruIdx>,
    pub attn: Option<AttnIdx>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Affine {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeadIdx {
    pub trunk: Affine,
    pub mu: Affine,
    pub nu: Option<Affine>,
    pub alpha: Affine,
    pub diag: Affine,
    pub lower: Affine,
}

/// Where each named tensor lives in the flat tensor list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub streams: Vec<StreamIdx>,
    pub heads: HeadIdx,
}

impl Layout {
    fn build(cfg: &ModelConfig) -> (Layout, Vec<Tensor>) {
        let mut tensors = Vec::new();
        let mut push = |name: String, dims: Vec<usize>| {
            tensors.push(Tensor::zeros(name, dims));
            tensors.len() - 1
        };
        let (p, h) = (cfg.p, cfg.hidden);
        let mut streams = Vec::new();
        for s in 0..cfg.num_streams() {
            let conv = (s > 0).then(|| ConvIdx {
                filters: push(format!("stream{s}.conv.filters"), vec![p, cfg.conv_kernel]),
                bias: push(format!("stream{s}.conv.bias"), vec![p]),
            });
            let layers = (0..cfg.layers)
                .map(|l| {
                    let input = if l == 0 { p } else { h };
                    let mut gate = |g: &str| {
                        (
                            push(format!("stream{s}.gru{l}.w_{g}"), vec![h, h]),
                            push(format!("stream{s}.gru{l}.u_{g}"), vec![h, input]),
                            push(format!("stream{s}.gru{l}.b_{g}"), vec![h]),
                        )
                    };
                    let (w_u, u_u, b_u) = gate("u");
                    let (w_r, u_r, b_r) = gate("r");
                    let (w_h, u_h, b_h) = gate("h");
                    GruIdx { w_u, u_u, b_u, w_r, u_r, b_r, w_h, u_h, b_h }
                })
                .collect();
            let attn = cfg.attention.then(|| AttnIdx {
                w_a: push(format!("stream{s}.attn.w_a"), vec![h, h]),
                b_a: push(format!("stream{s}.attn.b_a"), vec![h]),
                w_q: push(format!("stream{s}.attn.w_q"), vec![h]),
            });
            streams.push(StreamIdx { conv, layers, attn });
        }
        let trunk_in = h * cfg.num_streams();
        let trunk_w = cfg.trunk_width();
        let c = cfg.components;
        let mut affine = |name: &str, out: usize, input: usize| Affine {
            w: push(format!("head.{name}.w"), vec![out, input]),
            b: push(format!("head.{name}.b"), vec![out]),
        };
        let heads = HeadIdx {
            trunk: affine("trunk", trunk_w, trunk_in),
            mu: affine("mu", c * p, trunk_w),
            nu: (cfg.family == Family::StudentT).then(|| affine("nu", c, trunk_w)),
            alpha: affine("alpha", c, trunk_w),
            diag: affine("sigma_diag", c * p, trunk_w),
            lower: affine("sigma_lower", c * lower_len(p), trunk_w),
        };
        (Layout { streams, heads }, tensors)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// All trainable tensors of a model, in a fixed canonical order.
///
/// The same type doubles as the gradient accumulator. Each instance carries
/// an identity and a revision counter, bumped on every mutable access, so a
/// [`ForwardTrace`](super::ForwardTrace) can detect that the weights it was
/// computed from have changed.
#[derive(Debug)]
pub struct ModelWeights {
    config: ModelConfig,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
    id: u64,
    revision: u64,
}

impl Clone for ModelWeights {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            tensors: self.tensors.clone(),
            layout: self.layout.clone(),
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            revision: 0,
        }
    }
}

impl PartialEq for ModelWeights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl ModelWeights {
    /// All-zero weights shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, tensors) = Layout::build(config);
        Ok(Self {
            config: config.clone(),
            tensors,
            layout,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            revision: 0,
        })
    }

    /// Zero tensor set with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// Rebuilds weights from a tensor list; names and shapes must match `config`'s layout.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        if tensors.len() != w.tensors.len() {
            return Err(invalid(format!(
                "expected {} tensors for this configuration, got {}",
                w.tensors.len(),
                tensors.len()
            )));
        }
        for (slot, t) in w.tensors.iter_mut().zip(tensors) {
            if slot.name != t.name || slot.dims != t.dims {
                return Err(invalid(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.dims, slot.name, slot.dims
                )));
            }
            *slot = t;
        }
        Ok(w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.revision += 1;
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn data(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].data
    }

    pub(crate) fn tag(&self) -> (u64, u64) {
        (self.id, self.revision)
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &ModelWeights) -> Result<()> {
        if self.layout != other.layout {
            return Err(invalid("cannot add weights of different layouts"));
        }
        for (a, b) in self.tensors_mut().iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Name of the first tensor containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::Numerical(format!("tensor `{name}` has non-finite entries"))),
            None => Ok(()),
        }
    }
}
