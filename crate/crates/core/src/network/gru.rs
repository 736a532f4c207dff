use crate::density::sigmoid;
use crate::error::{invalid, Result};
use crate::linalg::{gemm_acc, matvec_acc, matvec_t_acc, Strided};

/// Borrowed weights of one GRU layer.
///
/// `w_*` are `hidden × hidden` (applied to the previous state), `u_*` are
/// `hidden × input` (applied to the layer input), `b_*` have `hidden` entries.
#[derive(Debug, Clone, Copy)]
pub struct GruCell<'a> {
    pub hidden: usize,
    pub input: usize,
    pub w_u: &'a [f64],
    pub u_u: &'a [f64],
    pub b_u: &'a [f64],
    pub w_r: &'a [f64],
    pub u_r: &'a [f64],
    pub b_r: &'a [f64],
    pub w_h: &'a [f64],
    pub u_h: &'a [f64],
    pub b_h: &'a [f64],
}

impl GruCell<'_> {
    fn check(&self) -> Result<()> {
        let (h, i) = (self.hidden, self.input);
        let ok = [self.w_u, self.w_r, self.w_h].iter().all(|m| m.len() == h * h)
            && [self.u_u, self.u_r, self.u_h].iter().all(|m| m.len() == h * i)
            && [self.b_u, self.b_r, self.b_h].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("GRU weights inconsistent with hidden={h}, input={i}")))
        }
    }
}

/// Gradient slots matching a [`GruCell`].
pub(crate) struct GruGrad<'a> {
    pub w_u: &'a mut [f64],
    pub u_u: &'a mut [f64],
    pub b_u: &'a mut [f64],
    pub w_r: &'a mut [f64],
    pub u_r: &'a mut [f64],
    pub b_r: &'a mut [f64],
    pub w_h: &'a mut [f64],
    pub u_h: &'a mut [f64],
    pub b_h: &'a mut [f64],
}

/// Activations of one layer over a sequence, each `steps × hidden`.
#[derive(Debug, Clone)]
pub(crate) struct GruTrace {
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    /// `W_h h_{t−1}` before the reset gate is applied.
    pub m: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// One step of
///
/// ```text
/// u = σ(W_u h_prev + U_u x + b_u)
/// r = σ(W_r h_prev + U_r x + b_r)
/// h̃ = tanh(r ∘ (W_h h_prev) + U_h x + b_h)
/// h = u ∘ h_prev + (1 − u) ∘ h̃
/// ```
pub fn gru_step(h_prev: &[f64], x_in: &[f64], cell: &GruCell) -> Result<Vec<f64>> {
    cell.check()?;
    if h_prev.len() != cell.hidden || x_in.len() != cell.input {
        return Err(invalid(format!(
            "GRU step got state {} / input {}, expected {} / {}",
            h_prev.len(),
            x_in.len(),
            cell.hidden,
            cell.input
        )));
    }
    Ok(forward_from(cell, h_prev, x_in, 1).h)
}

/// Input projections `U_g x_t + b_g` for every step, `steps × 3·hidden`
/// with gate blocks in the order u, r, h.
fn input_projections(cell: &GruCell, x: &[f64], steps: usize) -> Vec<f64> {
    let (hd, inp) = (cell.hidden, cell.input);
    let w = 3 * hd;
    let mut ut = vec![0.0; inp * w];
    for (g, u) in [cell.u_u, cell.u_r, cell.u_h].into_iter().enumerate() {
        for i in 0..hd {
            for j in 0..inp {
                ut[j * w + g * hd + i] = u[i * inp + j];
            }
        }
    }
    let mut xp = vec![0.0; steps * w];
    for row in xp.chunks_exact_mut(w) {
        row[..hd].copy_from_slice(cell.b_u);
        row[hd..2 * hd].copy_from_slice(cell.b_r);
        row[2 * hd..].copy_from_slice(cell.b_h);
    }
    gemm_acc(steps, w, inp, Strided { data: x, rs: inp, cs: 1 }, &ut, w, &mut xp, w);
    xp
}

/// Runs the layer over `steps` inputs (row-major `steps × input`) from a zero state.
pub(crate) fn forward_sequence(cell: &GruCell, x: &[f64], steps: usize) -> GruTrace {
    forward_from(cell, &vec![0.0; cell.hidden], x, steps)
}

fn forward_from(cell: &GruCell, h0: &[f64], x: &[f64], steps: usize) -> GruTrace {
    let hd = cell.hidden;
    let xp = input_projections(cell, x, steps);
    let mut tr = GruTrace {
        u: vec![0.0; steps * hd],
        r: vec![0.0; steps * hd],
        m: vec![0.0; steps * hd],
        candidate: vec![0.0; steps * hd],
        h: vec![0.0; steps * hd],
    };
    let mut h_prev = h0.to_vec();
    for t in 0..steps {
        let span = t * hd..(t + 1) * hd;
        let pre = &xp[t * 3 * hd..(t + 1) * 3 * hd];
        let u = &mut tr.u[span.clone()];
        u.copy_from_slice(&pre[..hd]);
        matvec_acc(cell.w_u, hd, &h_prev, u);
        let r = &mut tr.r[span.clone()];
        r.copy_from_slice(&pre[hd..2 * hd]);
        matvec_acc(cell.w_r, hd, &h_prev, r);
        let m = &mut tr.m[span.clone()];
        matvec_acc(cell.w_h, hd, &h_prev, m);
        let c = &mut tr.candidate[span.clone()];
        let h = &mut tr.h[span];
        for k in 0..hd {
            let uk = sigmoid(u[k]);
            let rk = sigmoid(r[k]);
            let ck = (rk * m[k] + pre[2 * hd + k]).tanh();
            u[k] = uk;
            r[k] = rk;
            c[k] = ck;
            h[k] = uk * h_prev[k] + (1.0 - uk) * ck;
        }
        h_prev.copy_from_slice(h);
    }
    tr
}

/// Backpropagation through time.
///
/// `dh` holds the gradient of the loss with respect to every output state
/// (`steps × hidden`); the gradient with respect to the inputs is added to
/// `dx` and weight gradients are added to `grad`.
pub(crate) fn backward_sequence(
    cell: &GruCell,
    x: &[f64],
    tr: &GruTrace,
    dh: &[f64],
    grad: &mut GruGrad,
    dx: &mut [f64],
) {
    let (hd, inp) = (cell.hidden, cell.input);
    let w = 3 * hd;
    let steps = tr.h.len() / hd;
    let zero = vec![0.0; hd];
    // pre-activation gradients: [a_u | a_r | a_h] and the recurrent view [a_u | a_r | m]
    let mut d_in = vec![0.0; steps * w];
    let mut d_rec = vec![0.0; steps * w];
    let mut carry = vec![0.0; hd];
    for t in (0..steps).rev() {
        let span = t * hd..(t + 1) * hd;
        let h_prev = if t == 0 { &zero[..] } else { &tr.h[(t - 1) * hd..t * hd] };
        let (u, r, m, c) = (&tr.u[span.clone()], &tr.r[span.clone()], &tr.m[span.clone()], &tr.candidate[span.clone()]);
        let dh_t = &dh[span];
        let din = &mut d_in[t * w..(t + 1) * w];
        let drec = &mut d_rec[t * w..(t + 1) * w];
        for k in 0..hd {
            let g = dh_t[k] + carry[k];
            let du = g * (h_prev[k] - c[k]);
            let dc = g * (1.0 - u[k]);
            let dpre_h = dc * (1.0 - c[k] * c[k]);
            let da_u = du * u[k] * (1.0 - u[k]);
            let da_r = dpre_h * m[k] * r[k] * (1.0 - r[k]);
            din[k] = da_u;
            din[hd + k] = da_r;
            din[2 * hd + k] = dpre_h;
            drec[k] = da_u;
            drec[hd + k] = da_r;
            drec[2 * hd + k] = dpre_h * r[k];
            carry[k] = g * u[k];
        }
        if t > 0 {
            matvec_t_acc(cell.w_u, hd, &drec[..hd], &mut carry);
            matvec_t_acc(cell.w_r, hd, &drec[hd..2 * hd], &mut carry);
            matvec_t_acc(cell.w_h, hd, &drec[2 * hd..], &mut carry);
        }
    }
    for row in d_in.chunks_exact(w) {
        for k in 0..hd {
            grad.b_u[k] += row[k];
            grad.b_r[k] += row[hd + k];
            grad.b_h[k] += row[2 * hd + k];
        }
    }
    let gates: [(&[f64], &mut [f64], &mut [f64]); 3] = [
        (cell.u_u, &mut *grad.w_u, &mut *grad.u_u),
        (cell.u_r, &mut *grad.w_r, &mut *grad.u_r),
        (cell.u_h, &mut *grad.w_h, &mut *grad.u_h),
    ];
    for (g, (u_g, gw, gu)) in gates.into_iter().enumerate() {
        if steps > 1 {
            // Σ_{t≥1} d_rec[t] h_{t−1}ᵀ
            let a = Strided { data: &d_rec[w + g * hd..], rs: 1, cs: w };
            gemm_acc(hd, hd, steps - 1, a, &tr.h, hd, gw, hd);
        }
        let a = Strided { data: &d_in[g * hd..], rs: 1, cs: w };
        gemm_acc(hd, inp, steps, a, x, inp, gu, inp);
        let a = Strided { data: &d_in[g * hd..], rs: w, cs: 1 };
        gemm_acc(steps, inp, hd, a, u_g, inp, dx, inp);
    }
}
