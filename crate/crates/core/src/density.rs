//! Log-densities of Gaussian and Student-t mixtures with Cholesky-factored
//! scale matrices, the constrained transforms that map unconstrained network
//! outputs onto valid parameters, and analytic gradients of the mixture
//! log-density in that unconstrained parameterization.
//!
//! Densities are only ever evaluated in log space. Scale matrices are carried
//! as their lower Cholesky factor `L` (`Σ = L Lᵀ`), so `log|Σ| = 2 Σ log Lᵢᵢ`
//! and the Mahalanobis form is obtained from one triangular solve.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::linalg::{log_sum_exp, solve_lower, solve_lower_transpose};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Added to every softplus-produced Cholesky diagonal entry so the factor
/// stays invertible when the softplus underflows.
pub const CHOL_DIAG_FLOOR: f64 = 1e-6;

/// Component density family of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Gaussian,
    StudentT,
}

/// Range the degrees-of-freedom head is squashed into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for NuBounds {
    fn default() -> Self {
        Self { lo: 1.0, hi: 10.0 }
    }
}

/// Location, Cholesky factor and degrees of freedom of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub mu: Vec<f64>,
    /// Row-major `P × P` lower-triangular factor; entries above the diagonal are ignored.
    pub chol_lower: Vec<f64>,
    /// Ignored for [`Family::Gaussian`].
    pub nu: f64,
}

impl ComponentParams {
    pub fn new(mu: Vec<f64>, chol_lower: Vec<f64>, nu: f64) -> Result<Self> {
        let c = Self { mu, chol_lower, nu };
        c.check()?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 {
            return Err(invalid("component dimension must be at least 1"));
        }
        if self.chol_lower.len() != p * p {
            return Err(invalid(format!(
                "Cholesky factor has {} entries, expected {}",
                self.chol_lower.len(),
                p * p
            )));
        }
        for i in 0..p {
            let d = self.chol_lower[i * p + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(invalid(format!("Cholesky diagonal entry {i} is {d}, must be > 0")));
            }
        }
        Ok(())
    }

    /// Dense `Σ = L Lᵀ`.
    pub fn scale_matrix(&self) -> Vec<f64> {
        let p = self.dim();
        let mut s = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                s[i * p + j] = (0..=i.min(j))
                    .map(|k| self.chol_lower[i * p + k] * self.chol_lower[j * p + k])
                    .sum();
            }
        }
        s
    }
}

/// One time step's predicted conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub alpha: Vec<f64>,
    pub components: Vec<ComponentParams>,
    pub family: Family,
}

impl MixtureParams {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, ComponentParams::dim)
    }

    /// Checks the simplex, shared-dimension and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.components.len() {
            return Err(invalid(format!(
                "{} responsibilities for {} components",
                self.alpha.len(),
                self.components.len()
            )));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(invalid("responsibilities must be non-negative"));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("responsibilities sum to {sum}, not 1")));
        }
        let p = self.dim();
        for c in &self.components {
            c.check()?;
            if c.dim() != p {
                return Err(invalid("mixture components disagree on dimension"));
            }
            if self.family == Family::StudentT && !(c.nu > 0.0 && c.nu.is_finite()) {
                return Err(invalid(format!("degrees of freedom {} must be > 0", c.nu)));
            }
        }
        Ok(())
    }
}

/// ε-contamination settings: fraction of contaminated frames and outlier variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub sigma2: f64,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, sigma2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if !(sigma2 > 0.0) {
            return Err(invalid(format!("sigma2 {sigma2} must be > 0")));
        }
        Ok(Self { epsilon, sigma2 })
    }
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        Self { epsilon: 0.10, sigma2: 5.0 }
    }
}

// ---------------------------------------------------------------------------
// transforms

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `lo + (hi − lo)·σ(x)`.
#[inline]
pub fn scaled_sigmoid(x: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(x)
}

/// Softmax with max subtraction.
pub fn simplex_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

// ---------------------------------------------------------------------------
// component densities

fn check_point(y: &[f64], comp: &ComponentParams) -> Result<()> {
    comp.check()?;
    if y.len() != comp.dim() {
        return Err(invalid(format!(
            "observation has {} entries, component has dimension {}",
            y.len(),
            comp.dim()
        )));
    }
    Ok(())
}

/// Whitened residual `z = L⁻¹(y − μ)`, its squared norm, and `Σ log Lᵢᵢ`.
fn whiten(y: &[f64], mu: &[f64], chol: &[f64]) -> (Vec<f64>, f64, f64) {
    let p = y.len();
    let e: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let z = solve_lower(chol, p, &e);
    let maha = z.iter().map(|v| v * v).sum::<f64>().max(0.0);
    let half_logdet = (0..p).map(|i| chol[i * p + i].ln()).sum();
    (z, maha, half_logdet)
}

fn gaussian_from_parts(p: usize, maha: f64, half_logdet: f64) -> f64 {
    -0.5 * p as f64 * LN_2PI - half_logdet - 0.5 * maha
}

/// `ln Γ(a + p/2) − ln Γ(a)`, stepping the recurrence `Γ(x + 1) = x Γ(x)`
/// so that even `p` needs no log-gamma evaluation at all.
fn ln_gamma_ratio(a: f64, p: usize) -> f64 {
    let (start, rest) = if p % 2 == 0 { (a, 0.0) } else { (a + 0.5, ln_gamma(a + 0.5) - ln_gamma(a)) };
    rest + (0..p / 2).map(|j| (start + j as f64).ln()).sum::<f64>()
}

/// `ψ(a + p/2) − ψ(a)`, the derivative of [`ln_gamma_ratio`] in `a`.
fn digamma_ratio(a: f64, p: usize) -> f64 {
    let (start, rest) = if p % 2 == 0 { (a, 0.0) } else { (a + 0.5, digamma(a + 0.5) - digamma(a)) };
    rest + (0..p / 2).map(|j| 1.0 / (start + j as f64)).sum::<f64>()
}

fn student_from_parts(p: usize, nu: f64, maha: f64, half_logdet: f64) -> f64 {
    let pf = p as f64;
    ln_gamma_ratio(0.5 * nu, p) - 0.5 * pf * (nu * std::f64::consts::PI).ln()
        - half_logdet
        - 0.5 * (nu + pf) * (maha / nu).ln_1p()
}

/// `log N(y | μ, L Lᵀ)`.
pub fn gaussian_logpdf(y: &[f64], comp: &ComponentParams) -> Result<f64> {
    check_point(y, comp)?;
    let (_, maha, hld) = whiten(y, &comp.mu, &comp.chol_lower);
    Ok(gaussian_from_parts(y.len(), maha, hld))
}

/// Multivariate Student-t log-density with location `μ`, scale `L Lᵀ` and `ν` degrees of freedom.
pub fn student_t_logpdf(y: &[f64], comp: &ComponentParams) -> Result<f64> {
    if !(comp.nu > 0.0) || !comp.nu.is_finite() {
        return Err(invalid(format!("degrees of freedom {} must be > 0", comp.nu)));
    }
    check_point(y, comp)?;
    let (_, maha, hld) = whiten(y, &comp.mu, &comp.chol_lower);
    Ok(student_from_parts(y.len(), comp.nu, maha, hld))
}

/// Student-t log-density computed as the Gaussian scale mixture
/// `∫ N(y | μ, Σ/z) Ga(z | ν/2, ν/2) dz`, integrated with the trapezoid rule
/// on `u = ln z`.
///
/// The integrand is log-concave in `u`, so the integration window is the
/// interval where it stays within `e⁻⁶⁰` of its peak. The result is checked
/// against a run with twice the nodes; a disagreement above `1e-8` is an
/// error.
pub fn scale_mixture_logpdf_quadrature(
    y: &[f64],
    comp: &ComponentParams,
    nodes: usize,
) -> Result<f64> {
    if nodes < 64 {
        return Err(invalid(format!("quadrature needs at least 64 nodes, got {nodes}")));
    }
    if !(comp.nu > 0.0) || !comp.nu.is_finite() {
        return Err(invalid(format!("degrees of freedom {} must be > 0", comp.nu)));
    }
    check_point(y, comp)?;
    let p = y.len() as f64;
    let (_, maha, hld) = whiten(y, &comp.mu, &comp.chol_lower);
    let a = 0.5 * comp.nu;

    // log integrand in u: const + k u − c eᵘ
    let k = a + 0.5 * p;
    let c = a + 0.5 * maha;
    let constant = -0.5 * p * LN_2PI - hld + a * a.ln() - ln_gamma(a);
    let phi = |u: f64| k * u - c * u.exp();

    let mode = (k / c).ln();
    let peak = phi(mode);
    const DROP: f64 = 60.0;
    let target = |u: f64| phi(u) - (peak - DROP);
    let bisect = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if target(mid) > 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        outside
    };
    let lo = bisect(mode, mode - DROP / k - 1.0);
    let hi = bisect(mode, mode + (2.0 + 2.0 * DROP / k).ln() + 1.0);

    let trapezoid = |n: usize| {
        let h = (hi - lo) / (n - 1) as f64;
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let u = lo + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                phi(u) + w.ln()
            })
            .collect();
        constant + log_sum_exp(&terms)
    };

    let coarse = trapezoid(nodes);
    let fine = trapezoid(2 * nodes);
    if (coarse - fine).abs() > 1e-8 {
        return Err(Error::NumericalAccuracy(format!(
            "{nodes} nodes give {coarse}, {} give {fine}",
            2 * nodes
        )));
    }
    Ok(coarse)
}

/// `log Σᵢ αᵢ fᵢ(y)` with log-sum-exp stabilization.
pub fn mixture_logpdf(y: &[f64], params: &MixtureParams) -> Result<f64> {
    params.validate()?;
    let mut terms = Vec::with_capacity(params.alpha.len());
    for (a, comp) in params.alpha.iter().zip(&params.components) {
        let l = match params.family {
            Family::Gaussian => gaussian_logpdf(y, comp)?,
            Family::StudentT => student_t_logpdf(y, comp)?,
        };
        terms.push(a.ln() + l);
    }
    Ok(log_sum_exp(&terms))
}

/// Negative log-likelihood of one observation.
pub fn nll(y: &[f64], params: &MixtureParams) -> Result<f64> {
    mixture_logpdf(y, params).map(|l| -l)
}

// ---------------------------------------------------------------------------
// unconstrained head outputs and gradients

/// Unconstrained mixture parameters as emitted by the network heads, and
/// also the shape of gradients with respect to them.
///
/// Component `i` owns `mu[i*P..(i+1)*P]`, `diag_raw[i*P..(i+1)*P]`, the
/// `P(P−1)/2` strictly-lower entries `lower[i*m..(i+1)*m]` (row-major, `i > j`)
/// and `nu_logits[i]` (empty for Gaussian mixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs {
    pub alpha_logits: Vec<f64>,
    pub mu: Vec<f64>,
    pub diag_raw: Vec<f64>,
    pub lower: Vec<f64>,
    pub nu_logits: Vec<f64>,
}

/// Number of strictly-lower entries in a `P × P` factor.
pub fn lower_len(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

impl HeadOutputs {
    pub fn zeros(family: Family, components: usize, p: usize) -> Self {
        Self {
            alpha_logits: vec![0.0; components],
            mu: vec![0.0; components * p],
            diag_raw: vec![0.0; components * p],
            lower: vec![0.0; components * lower_len(p)],
            nu_logits: match family {
                Family::Gaussian => Vec::new(),
                Family::StudentT => vec![0.0; components],
            },
        }
    }

    pub fn components(&self) -> usize {
        self.alpha_logits.len()
    }

    fn check(&self, family: Family, p: usize) -> Result<()> {
        let c = self.components();
        let nu_len = match family {
            Family::Gaussian => 0,
            Family::StudentT => c,
        };
        if c == 0
            || self.mu.len() != c * p
            || self.diag_raw.len() != c * p
            || self.lower.len() != c * lower_len(p)
            || self.nu_logits.len() != nu_len
        {
            return Err(invalid("head outputs inconsistent with (family, components, P)"));
        }
        Ok(())
    }

    fn chol(&self, i: usize, p: usize) -> Vec<f64> {
        let m = lower_len(p);
        let mut l = vec![0.0; p * p];
        let mut k = i * m;
        for r in 0..p {
            for c in 0..r {
                l[r * p + c] = self.lower[k];
                k += 1;
            }
            l[r * p + r] = softplus(self.diag_raw[i * p + r]) + CHOL_DIAG_FLOOR;
        }
        l
    }

    /// Applies softmax / softplus / scaled-sigmoid to obtain valid parameters.
    pub fn to_mixture(&self, family: Family, p: usize, bounds: NuBounds) -> Result<MixtureParams> {
        self.check(family, p)?;
        let c = self.components();
        let components = (0..c)
            .map(|i| ComponentParams {
                mu: self.mu[i * p..(i + 1) * p].to_vec(),
                chol_lower: self.chol(i, p),
                nu: match family {
                    Family::Gaussian => f64::INFINITY,
                    Family::StudentT => scaled_sigmoid(self.nu_logits[i], bounds.lo, bounds.hi),
                },
            })
            .collect();
        Ok(MixtureParams { alpha: simplex_softmax(&self.alpha_logits), components, family })
    }

    /// Sets every entry to zero.
    pub fn fill_zero(&mut self) {
        for v in [
            &mut self.alpha_logits,
            &mut self.mu,
            &mut self.diag_raw,
            &mut self.lower,
            &mut self.nu_logits,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Multiplies every entry by `s`.
    pub fn scale(&mut self, s: f64) {
        for v in [
            &mut self.alpha_logits,
            &mut self.mu,
            &mut self.diag_raw,
            &mut self.lower,
            &mut self.nu_logits,
        ] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Mixture log-density at `y` and its gradient with respect to every
/// unconstrained head output.
pub fn grad_logpdf(
    y: &[f64],
    raw: &HeadOutputs,
    family: Family,
    bounds: NuBounds,
) -> Result<(f64, HeadOutputs)> {
    let p = y.len();
    raw.check(family, p)?;
    let c = raw.components();
    let m = lower_len(p);
    let pf = p as f64;

    let max_logit = raw.alpha_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let logit_lse = log_sum_exp(&raw.alpha_logits.iter().map(|x| x - max_logit).collect::<Vec<_>>())
        + max_logit;

    struct Parts {
        z: Vec<f64>,
        v: Vec<f64>,
        chol: Vec<f64>,
        weight: f64,
        dnu: f64,
    }

    let mut terms = Vec::with_capacity(c);
    let mut parts = Vec::with_capacity(c);
    for i in 0..c {
        let chol = raw.chol(i, p);
        let (z, maha, hld) = whiten(y, &raw.mu[i * p..(i + 1) * p], &chol);
        let v = solve_lower_transpose(&chol, p, &z);
        let (logpdf, weight, dnu) = match family {
            Family::Gaussian => (gaussian_from_parts(p, maha, hld), 1.0, 0.0),
            Family::StudentT => {
                let nu = scaled_sigmoid(raw.nu_logits[i], bounds.lo, bounds.hi);
                let l = student_from_parts(p, nu, maha, hld);
                let dnu = 0.5 * digamma_ratio(0.5 * nu, p)
                    - 0.5 * pf / nu
                    - 0.5 * (maha / nu).ln_1p()
                    + 0.5 * (nu + pf) * maha / (nu * (nu + maha));
                (l, (nu + pf) / (nu + maha), dnu)
            }
        };
        terms.push(raw.alpha_logits[i] - logit_lse + logpdf);
        parts.push(Parts { z, v, chol, weight, dnu });
    }
    let total = log_sum_exp(&terms);
    if !total.is_finite() {
        return Err(Error::Numerical(format!("mixture log-density is {total}")));
    }

    let mut g = HeadOutputs::zeros(family, c, p);
    for (i, part) in parts.iter().enumerate() {
        let gamma = (terms[i] - total).exp();
        let alpha = (raw.alpha_logits[i] - logit_lse).exp();
        g.alpha_logits[i] = gamma - alpha;
        let gw = gamma * part.weight;
        let mut k = i * m;
        for r in 0..p {
            g.mu[i * p + r] = gw * part.v[r];
            for col in 0..r {
                g.lower[k] = gw * part.v[r] * part.z[col];
                k += 1;
            }
            let d = part.chol[r * p + r];
            let dl_ddiag = gw * part.v[r] * part.z[r] - gamma / d;
            g.diag_raw[i * p + r] = dl_ddiag * sigmoid(raw.diag_raw[i * p + r]);
        }
        if family == Family::StudentT {
            let s = sigmoid(raw.nu_logits[i]);
            g.nu_logits[i] = gamma * part.dnu * (bounds.hi - bounds.lo) * s * (1.0 - s);
        }
    }
    Ok((total, g))
}
