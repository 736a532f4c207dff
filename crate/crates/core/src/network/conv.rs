use crate::error::{invalid, Result};

/// Output length of a valid strided correlation, `⌊(T − k)/s⌋ + 1`, or `None` when `T < k`.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize) -> Option<usize> {
    (t >= kernel && kernel > 0 && stride > 0).then(|| (t - kernel) / stride + 1)
}

/// Valid (unpadded) strided cross-correlation of one univariate series.
pub fn conv_stream(x: &[f64], filter: &[f64], stride: usize) -> Result<Vec<f64>> {
    let k = filter.len();
    let out = conv_output_len(x.len(), k, stride).ok_or_else(|| {
        invalid(format!("series of length {} is shorter than the kernel ({k})", x.len()))
    })?;
    Ok((0..out)
        .map(|o| filter.iter().zip(&x[o * stride..o * stride + k]).map(|(f, v)| f * v).sum())
        .collect())
}

/// Depthwise bank: dimension `d` of the `t × p` input is filtered by row `d`
/// of the `p × k` filter matrix plus `bias[d]`, giving a `t' × p` output.
pub(crate) fn bank_forward(x: &[f64], t: usize, p: usize, filters: &[f64], bias: &[f64], stride: usize) -> Vec<f64> {
    let k = filters.len() / p;
    let out_len = conv_output_len(t, k, stride).expect("validated stream lengths");
    let mut out = vec![0.0; out_len * p];
    for o in 0..out_len {
        for d in 0..p {
            let f = &filters[d * k..(d + 1) * k];
            let mut s = bias[d];
            for (j, fj) in f.iter().enumerate() {
                s += fj * x[(o * stride + j) * p + d];
            }
            out[o * p + d] = s;
        }
    }
    out
}

/// Accumulates filter/bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bank_backward(
    x: &[f64],
    p: usize,
    filters: &[f64],
    stride: usize,
    d_out: &[f64],
    d_filters: &mut [f64],
    d_bias: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let k = filters.len() / p;
    let out_len = d_out.len() / p;
    for o in 0..out_len {
        for d in 0..p {
            let g = d_out[o * p + d];
            if g == 0.0 {
                continue;
            }
            d_bias[d] += g;
            for j in 0..k {
                let xi = (o * stride + j) * p + d;
                d_filters[d * k + j] += g * x[xi];
                if let Some(dx) = dx.as_deref_mut() {
                    dx[xi] += g * filters[d * k + j];
                }
            }
        }
    }
}
