use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{invalid, Result};
use crate::linalg::{cholesky, cholesky_solve};

/// Relative ridge added to the normal equations when they are singular.
const RIDGE: f64 = 1e-8;

/// Least-squares linear predictor `x(t+1) ≈ Wᵀ X(t)`, where `X(t)` stacks
/// the `context` most recent frames, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAr {
    pub context: usize,
    pub p: usize,
    /// `(context·p) × p`, row-major.
    pub w: Vec<f64>,
    /// Set when the ridge fallback was needed.
    pub ridged: bool,
}

fn regressor(seq: &FrameSequence, t: usize, context: usize, out: &mut Vec<f64>) {
    out.clear();
    for k in 0..context {
        out.extend_from_slice(seq.row(t - k));
    }
}

impl LinearAr {
    pub fn fit(train: &[FrameSequence], context: usize) -> Result<Self> {
        if context == 0 {
            return Err(invalid("context must be at least 1"));
        }
        let p = train.first().ok_or_else(|| invalid("no training recordings"))?.dims();
        let d = context * p;
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d * p];
        let mut rows = 0usize;
        let mut x = Vec::with_capacity(d);
        for seq in train {
            if seq.dims() != p {
                return Err(invalid(format!("recording `{}` has {} dims, expected {p}", seq.recording_id, seq.dims())));
            }
            for t in context - 1..seq.frames().saturating_sub(1) {
                regressor(seq, t, context, &mut x);
                let y = seq.row(t + 1);
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] += x[i] * x[j];
                    }
                    for j in 0..p {
                        b[i * p + j] += x[i] * y[j];
                    }
                }
                rows += 1;
            }
        }
        if rows == 0 {
            return Err(invalid(format!("recordings too short for a context of {context}")));
        }
        let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max);
        let well_posed = cholesky(&a, d).filter(|l| {
            let min_pivot = (0..d).map(|i| l[i * d + i] * l[i * d + i]).fold(f64::INFINITY, f64::min);
            min_pivot > 1e-12 * max_diag
        });
        let (l, ridged) = match well_posed {
            Some(l) => (l, false),
            None => {
                log::warn!("normal equations are singular; adding a {RIDGE:e} ridge");
                let jitter = RIDGE * max_diag.max(1.0);
                for i in 0..d {
                    a[i * d + i] += jitter;
                }
                let l = cholesky(&a, d).ok_or_else(|| crate::Error::Numerical("ridge normal equations not positive definite".into()))?;
                (l, true)
            }
        };
        let mut w = vec![0.0; d * p];
        let mut col = vec![0.0; d];
        for j in 0..p {
            for i in 0..d {
                col[i] = b[i * p + j];
            }
            let sol = cholesky_solve(&l, d, &col);
            for i in 0..d {
                w[i * p + j] = sol[i];
            }
        }
        Ok(Self { context, p, w, ridged })
    }

    pub fn predict(&self, seq: &FrameSequence, t: usize) -> Vec<f64> {
        let mut x = Vec::new();
        regressor(seq, t, self.context, &mut x);
        let mut y = vec![0.0; self.p];
        for (i, xi) in x.iter().enumerate() {
            for j in 0..self.p {
                y[j] += xi * self.w[i * self.p + j];
            }
        }
        y
    }

    /// Mean squared innovation `‖x(t+1) − Wᵀ X(t)‖²` over the recording.
    pub fn score(&self, seq: &FrameSequence) -> Result<f64> {
        if seq.dims() != self.p {
            return Err(invalid(format!("recording `{}` has {} dims, expected {}", seq.recording_id, seq.dims(), self.p)));
        }
        if seq.frames() <= self.context {
            return Err(invalid(format!("recording `{}` is shorter than context + 1", seq.recording_id)));
        }
        let mut sum = 0.0;
        let mut n = 0;
        for t in self.context - 1..seq.frames() - 1 {
            let pred = self.predict(seq, t);
            sum += seq.row(t + 1).iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += 1;
        }
        Ok(sum / n as f64)
    }
}
