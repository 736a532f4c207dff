use crate::density::{grad_logpdf, HeadOutputs, MixtureParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{matvec_acc, matvec_t_acc, outer_acc};

use super::attention::{self, AttentionCell, AttentionGrad, AttentionTrace};
use super::conv;
use super::gru::{self, GruCell, GruGrad, GruTrace};
use super::weights::{Affine, AttnIdx, GruIdx, ModelWeights, Tensor};

/// Intermediate activations of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    tag: (u64, u64),
    streams: Vec<StreamTrace>,
    concat: Vec<f64>,
    trunk_pre: Vec<f64>,
    trunk: Vec<f64>,
    heads: HeadOutputs,
}

#[derive(Debug, Clone)]
struct StreamTrace {
    /// `steps × P` input of the first GRU layer.
    input: Vec<f64>,
    steps: usize,
    layers: Vec<GruTrace>,
    attention: Option<AttentionTrace>,
}

impl ForwardTrace {
    /// Attention weights of each stream (empty when attention is off).
    pub fn attention_weights(&self) -> Vec<&[f64]> {
        self.streams.iter().filter_map(|s| s.attention.as_ref().map(|a| &a.beta[..])).collect()
    }

    /// Unconstrained head outputs.
    pub fn heads(&self) -> &HeadOutputs {
        &self.heads
    }

    /// Concatenated pooled stream summaries fed to the trunk.
    pub fn pooled(&self) -> &[f64] {
        &self.concat
    }

    /// Top-layer hidden states of stream `s`, row-major `steps × hidden`.
    pub fn hidden_states(&self, s: usize) -> Option<&[f64]> {
        self.streams.get(s).and_then(|st| st.layers.last()).map(|l| &l.h[..])
    }
}

fn gru_cell<'a>(w: &'a ModelWeights, idx: &GruIdx, input: usize) -> GruCell<'a> {
    GruCell {
        hidden: w.config().hidden,
        input,
        w_u: w.data(idx.w_u),
        u_u: w.data(idx.u_u),
        b_u: w.data(idx.b_u),
        w_r: w.data(idx.w_r),
        u_r: w.data(idx.u_r),
        b_r: w.data(idx.b_r),
        w_h: w.data(idx.w_h),
        u_h: w.data(idx.u_h),
        b_h: w.data(idx.b_h),
    }
}

fn attention_cell<'a>(w: &'a ModelWeights, idx: &AttnIdx) -> AttentionCell<'a> {
    AttentionCell { hidden: w.config().hidden, w_a: w.data(idx.w_a), b_a: w.data(idx.b_a), w_q: w.data(idx.w_q) }
}

fn affine(w: &ModelWeights, a: Affine, x: &[f64]) -> Vec<f64> {
    let mut y = w.data(a.b).to_vec();
    matvec_acc(w.data(a.w), x.len(), x, &mut y);
    y
}

/// Unconstrained head outputs for one `seq_len × P` window (row-major).
pub fn forward_heads(window: &[f64], weights: &ModelWeights) -> Result<(HeadOutputs, ForwardTrace)> {
    let cfg = weights.config();
    let (p, hd) = (cfg.p, cfg.hidden);
    if window.len() != cfg.seq_len * p {
        return Err(invalid(format!(
            "window has {} values, expected seq_len × P = {} × {}",
            window.len(),
            cfg.seq_len,
            p
        )));
    }
    let lens = cfg.stream_lengths();
    let mut streams: Vec<StreamTrace> = Vec::with_capacity(lens.len());
    let mut concat = Vec::with_capacity(hd * lens.len());
    for (s, idx) in weights.layout.streams.iter().enumerate() {
        let input = match &idx.conv {
            None => window.to_vec(),
            Some(c) => {
                let prev = &streams[s - 1];
                conv::bank_forward(&prev.input, prev.steps, p, weights.data(c.filters), weights.data(c.bias), cfg.conv_stride)
            }
        };
        let steps = lens[s];
        let mut layers: Vec<GruTrace> = Vec::with_capacity(idx.layers.len());
        for (l, li) in idx.layers.iter().enumerate() {
            let (x, width) = if l == 0 { (&input[..], p) } else { (&layers[l - 1].h[..], hd) };
            let tr = gru::forward_sequence(&gru_cell(weights, li, width), x, steps);
            layers.push(tr);
        }
        let top = &layers.last().expect("at least one layer").h;
        let attention = match &idx.attn {
            Some(a) => {
                let (pooled, tr) = attention::forward(top, &attention_cell(weights, a));
                concat.extend_from_slice(&pooled);
                Some(tr)
            }
            None => {
                concat.extend_from_slice(&top[(steps - 1) * hd..]);
                None
            }
        };
        streams.push(StreamTrace { input, steps, layers, attention });
    }

    let h = &weights.layout.heads;
    let trunk_pre = affine(weights, h.trunk, &concat);
    let trunk: Vec<f64> = trunk_pre.iter().map(|v| v.max(0.0)).collect();
    let heads = HeadOutputs {
        alpha_logits: affine(weights, h.alpha, &trunk),
        mu: affine(weights, h.mu, &trunk),
        diag_raw: affine(weights, h.diag, &trunk),
        lower: affine(weights, h.lower, &trunk),
        nu_logits: h.nu.map(|a| affine(weights, a, &trunk)).unwrap_or_default(),
    };
    let trace = ForwardTrace { tag: weights.tag(), streams, concat, trunk_pre, trunk, heads: heads.clone() };
    Ok((heads, trace))
}

/// Predicted next-frame density for one window.
pub fn forward(window: &[f64], weights: &ModelWeights) -> Result<(MixtureParams, ForwardTrace)> {
    let (heads, trace) = forward_heads(window, weights)?;
    let cfg = weights.config();
    let params = heads.to_mixture(cfg.family, cfg.p, cfg.nu_bounds)?;
    Ok((params, trace))
}

fn grads_at<const N: usize>(g: &mut [Tensor], idx: [usize; N]) -> [&mut [f64]; N] {
    g.get_disjoint_mut(idx).expect("distinct tensor indices").map(|t| t.data_mut())
}

/// Reverse-mode gradient of a scalar loss given its gradient with respect to
/// the unconstrained head outputs; returns a fresh gradient set.
pub fn backward(trace: &ForwardTrace, d_heads: &HeadOutputs, weights: &ModelWeights) -> Result<ModelWeights> {
    let mut grads = weights.zeros_like();
    backward_into(trace, d_heads, weights, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], accumulating into `grads`.
pub fn backward_into(
    trace: &ForwardTrace,
    d_heads: &HeadOutputs,
    weights: &ModelWeights,
    grads: &mut ModelWeights,
) -> Result<()> {
    if trace.tag != weights.tag() {
        return Err(Error::InvalidState("trace was produced by different or since-modified weights".into()));
    }
    if grads.layout != weights.layout {
        return Err(invalid("gradient buffer layout does not match the weights"));
    }
    let th = &trace.heads;
    if d_heads.alpha_logits.len() != th.alpha_logits.len()
        || d_heads.mu.len() != th.mu.len()
        || d_heads.diag_raw.len() != th.diag_raw.len()
        || d_heads.lower.len() != th.lower.len()
        || d_heads.nu_logits.len() != th.nu_logits.len()
    {
        return Err(invalid("head gradient shape does not match the trace"));
    }
    let cfg = weights.config();
    let (p, hd) = (cfg.p, cfg.hidden);
    let layout = &weights.layout;
    let g = grads.tensors_mut();

    // heads and trunk
    let mut d_trunk = vec![0.0; trace.trunk.len()];
    let mut head = |a: Affine, d: &[f64]| {
        if d.is_empty() {
            return;
        }
        let [gw, gb] = grads_at(g, [a.w, a.b]);
        outer_acc(d, &trace.trunk, gw);
        gb.iter_mut().zip(d).for_each(|(b, v)| *b += v);
        matvec_t_acc(weights.data(a.w), trace.trunk.len(), d, &mut d_trunk);
    };
    let hi = &layout.heads;
    head(hi.alpha, &d_heads.alpha_logits);
    head(hi.mu, &d_heads.mu);
    head(hi.diag, &d_heads.diag_raw);
    head(hi.lower, &d_heads.lower);
    if let Some(nu) = hi.nu {
        head(nu, &d_heads.nu_logits);
    }
    for (d, pre) in d_trunk.iter_mut().zip(&trace.trunk_pre) {
        if *pre <= 0.0 {
            *d = 0.0;
        }
    }
    let mut d_concat = vec![0.0; trace.concat.len()];
    {
        let [gw, gb] = grads_at(g, [hi.trunk.w, hi.trunk.b]);
        outer_acc(&d_trunk, &trace.concat, gw);
        gb.iter_mut().zip(&d_trunk).for_each(|(b, v)| *b += v);
        matvec_t_acc(weights.data(hi.trunk.w), trace.concat.len(), &d_trunk, &mut d_concat);
    }

    // streams, last to first: a conv stream hands its input gradient to the
    // previous stream's input.
    let mut carry: Option<Vec<f64>> = None;
    for (s, idx) in layout.streams.iter().enumerate().rev() {
        let st = &trace.streams[s];
        let steps = st.steps;
        let d_pooled = &d_concat[s * hd..(s + 1) * hd];
        let top = &st.layers.last().expect("at least one layer").h;
        let mut dh = vec![0.0; steps * hd];
        match (&idx.attn, &st.attention) {
            (Some(a), Some(tr)) => {
                let [w_a, b_a, w_q] = grads_at(g, [a.w_a, a.b_a, a.w_q]);
                let mut ag = AttentionGrad { w_a, b_a, w_q };
                attention::backward(top, &attention_cell(weights, a), tr, d_pooled, &mut ag, &mut dh);
            }
            _ => dh[(steps - 1) * hd..].copy_from_slice(d_pooled),
        }
        let mut d_input = carry.take().unwrap_or_else(|| vec![0.0; steps * p]);
        let needs_input_grad = idx.conv.is_some();
        for l in (0..idx.layers.len()).rev() {
            let li = &idx.layers[l];
            let (x, width) = if l == 0 { (&st.input[..], p) } else { (&st.layers[l - 1].h[..], hd) };
            let [w_u, u_u, b_u, w_r, u_r, b_r, w_h, u_h, b_h] = grads_at(g, li.all());
            let mut gg = GruGrad { w_u, u_u, b_u, w_r, u_r, b_r, w_h, u_h, b_h };
            let mut dx = vec![0.0; steps * width];
            gru::backward_sequence(&gru_cell(weights, li, width), x, &st.layers[l], &dh, &mut gg, &mut dx);
            if l == 0 {
                if needs_input_grad {
                    d_input.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                }
            } else {
                dh = dx;
            }
        }
        if let Some(c) = &idx.conv {
            let prev = &trace.streams[s - 1];
            let mut d_prev = vec![0.0; prev.steps * p];
            let [gf, gb] = grads_at(g, [c.filters, c.bias]);
            // the raw window needs no gradient
            let dx = (s > 1).then_some(&mut d_prev[..]);
            conv::bank_backward(&prev.input, p, weights.data(c.filters), cfg.conv_stride, &d_input, gf, gb, dx);
            carry = (s > 1).then_some(d_prev);
        }
    }
    Ok(())
}

/// Negative log-likelihood of `target` under the window's predicted density.
pub fn window_nll(weights: &ModelWeights, window: &[f64], target: &[f64]) -> Result<f64> {
    let cfg = weights.config();
    let (heads, _) = forward_heads(window, weights)?;
    let (logpdf, _) = grad_logpdf(target, &heads, cfg.family, cfg.nu_bounds)?;
    Ok(-logpdf)
}

/// Forward + backward for one `(window, target)` pair; adds the NLL gradient
/// to `grads` and returns the NLL.
pub fn loss_and_grad(weights: &ModelWeights, window: &[f64], target: &[f64], grads: &mut ModelWeights) -> Result<f64> {
    let cfg = weights.config();
    if target.len() != cfg.p {
        return Err(invalid(format!("target has {} values, expected {}", target.len(), cfg.p)));
    }
    let (heads, trace) = forward_heads(window, weights)?;
    let (logpdf, mut d) = grad_logpdf(target, &heads, cfg.family, cfg.nu_bounds)?;
    d.scale(-1.0);
    backward_into(&trace, &d, weights, grads)?;
    Ok(-logpdf)
}
