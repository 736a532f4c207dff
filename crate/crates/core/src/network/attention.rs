use crate::density::simplex_softmax;
use crate::linalg::{axpy, dot, gemm_acc, transpose, Strided};

/// Borrowed attention weights for one stream: `w_a` is `hidden × hidden`,
/// `b_a` and `w_q` have `hidden` entries.
#[derive(Debug, Clone, Copy)]
pub struct AttentionCell<'a> {
    pub hidden: usize,
    pub w_a: &'a [f64],
    pub b_a: &'a [f64],
    pub w_q: &'a [f64],
}

pub(crate) struct AttentionGrad<'a> {
    pub w_a: &'a mut [f64],
    pub b_a: &'a mut [f64],
    pub w_q: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionTrace {
    /// `tanh(W_a h_l + b_a)`, `steps × hidden`.
    pub q: Vec<f64>,
    pub beta: Vec<f64>,
}

fn embed(h_seq: &[f64], cell: &AttentionCell) -> (Vec<f64>, Vec<f64>) {
    let hd = cell.hidden;
    let steps = h_seq.len() / hd;
    let mut q: Vec<f64> = cell.b_a.iter().copied().cycle().take(steps * hd).collect();
    let w_t = transpose(cell.w_a, hd, hd);
    gemm_acc(steps, hd, hd, Strided { data: h_seq, rs: hd, cs: 1 }, &w_t, hd, &mut q, hd);
    q.iter_mut().for_each(|v| *v = v.tanh());
    let scores = q.chunks_exact(hd).map(|ql| dot(cell.w_q, ql)).collect();
    (q, scores)
}

/// Pre-softmax scores `w_q · tanh(W_a h_l + b_a)` for each step of a
/// row-major `steps × hidden` state sequence.
pub fn attention_scores(h_seq: &[f64], cell: &AttentionCell) -> Vec<f64> {
    embed(h_seq, cell).1
}

/// Softmax-weighted average of the states; returns `(pooled, β)`.
pub fn attention_pool(h_seq: &[f64], cell: &AttentionCell) -> (Vec<f64>, Vec<f64>) {
    let (pooled, tr) = forward(h_seq, cell);
    (pooled, tr.beta)
}

pub(crate) fn forward(h_seq: &[f64], cell: &AttentionCell) -> (Vec<f64>, AttentionTrace) {
    let hd = cell.hidden;
    let (q, scores) = embed(h_seq, cell);
    let beta = simplex_softmax(&scores);
    let mut pooled = vec![0.0; hd];
    for (l, b) in beta.iter().enumerate() {
        axpy(*b, &h_seq[l * hd..(l + 1) * hd], &mut pooled);
    }
    (pooled, AttentionTrace { q, beta })
}

/// Adds the gradient with respect to the state sequence to `dh_seq`.
pub(crate) fn backward(
    h_seq: &[f64],
    cell: &AttentionCell,
    tr: &AttentionTrace,
    d_pooled: &[f64],
    grad: &mut AttentionGrad,
    dh_seq: &mut [f64],
) {
    let hd = cell.hidden;
    let steps = tr.beta.len();
    let dbeta: Vec<f64> = (0..steps).map(|l| dot(d_pooled, &h_seq[l * hd..(l + 1) * hd])).collect();
    let mean: f64 = tr.beta.iter().zip(&dbeta).map(|(b, d)| b * d).sum();
    let mut d_pre = vec![0.0; steps * hd];
    for l in 0..steps {
        let span = l * hd..(l + 1) * hd;
        axpy(tr.beta[l], d_pooled, &mut dh_seq[span.clone()]);
        let ds = tr.beta[l] * (dbeta[l] - mean);
        let ql = &tr.q[span.clone()];
        axpy(ds, ql, grad.w_q);
        for (k, d) in d_pre[span].iter_mut().enumerate() {
            *d = ds * cell.w_q[k] * (1.0 - ql[k] * ql[k]);
            grad.b_a[k] += *d;
        }
    }
    gemm_acc(hd, hd, steps, Strided { data: &d_pre, rs: 1, cs: hd }, h_seq, hd, grad.w_a, hd);
    gemm_acc(steps, hd, hd, Strided { data: &d_pre, rs: hd, cs: 1 }, cell.w_a, hd, dh_seq, hd);
}
