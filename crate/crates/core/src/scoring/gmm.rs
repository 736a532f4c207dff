use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{invalid, Result};
use crate::linalg::{cholesky, log_sum_exp, solve_lower};
use crate::rng::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Stops once the relative log-likelihood change falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Smallest covariance eigenvalue allowed, as a multiple of the mean
    /// per-dimension variance of the data.
    pub cov_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { components: 10, max_iter: 200, tol: 1e-6, seed: 0, cov_floor: 1e-6 }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub p: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// `p × p` row-major covariances.
    pub covs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Total data log-likelihood before each M-step.
    pub history: Vec<f64>,
    /// Components whose weight fell to zero; they stay in the mixture with weight 0.
    pub dormant: usize,
    pub converged: bool,
}

struct Factor {
    chol: Vec<f64>,
    log_norm: f64,
}

fn factor(cov: &[f64], p: usize) -> Option<Factor> {
    let chol = cholesky(cov, p)?;
    let log_det = 2.0 * (0..p).map(|i| chol[i * p + i].ln()).sum::<f64>();
    Some(Factor { log_norm: -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + log_det), chol })
}

fn log_gauss(x: &[f64], mean: &[f64], f: &Factor, p: usize) -> f64 {
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let z = solve_lower(&f.chol, p, &diff);
    f.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

impl Gmm {
    fn factors(&self) -> Result<Vec<Factor>> {
        self.covs
            .iter()
            .map(|c| factor(c, self.p).ok_or_else(|| crate::Error::Numerical("singular GMM covariance".into())))
            .collect()
    }

    /// Per-frame log-density of a row-major `n × p` matrix.
    pub fn log_density(&self, frames: &[f64]) -> Result<Vec<f64>> {
        if frames.len() % self.p != 0 {
            return Err(invalid("frame matrix width does not match the mixture"));
        }
        let fs = self.factors()?;
        let mut terms = vec![0.0; self.weights.len()];
        Ok(frames
            .chunks_exact(self.p)
            .map(|x| {
                for (k, f) in fs.iter().enumerate() {
                    terms[k] = self.weights[k].ln() + log_gauss(x, &self.means[k], f, self.p);
                }
                log_sum_exp(&terms)
            })
            .collect())
    }

    /// Mean per-frame NLL of a recording.
    pub fn score(&self, seq: &FrameSequence) -> Result<f64> {
        let ll = self.log_density(seq.values())?;
        Ok(-ll.iter().sum::<f64>() / ll.len() as f64)
    }
}

fn sample_covariance(frames: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (frames.len() / p) as f64;
    let mut mean = vec![0.0; p];
    for x in frames.chunks_exact(p) {
        for d in 0..p {
            mean[d] += x[d] / n;
        }
    }
    let mut cov = vec![0.0; p * p];
    for x in frames.chunks_exact(p) {
        for i in 0..p {
            for j in 0..p {
                cov[i * p + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

/// Raises every eigenvalue of the symmetric `cov` to at least `floor`.
/// Among covariances with that floor this is the one that maximizes the
/// Gaussian likelihood of scatter `cov`, so EM stays monotone.
fn floor_eigenvalues(cov: &mut [f64], p: usize, floor: f64) {
    let eig = DMatrix::from_row_slice(p, p, cov).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    for a in 0..p {
        for b in 0..p {
            cov[a * p + b] = 0.5 * (rebuilt[(a, b)] + rebuilt[(b, a)]);
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Fits a full-covariance GMM by EM on a row-major `n × p` frame matrix,
/// starting from k-means++ centers and the pooled covariance.
///
/// Covariances are kept at or above an eigenvalue floor (see
/// [`GmmConfig::cov_floor`]), which bounds the likelihood and keeps it
/// non-decreasing from one iteration to the next.
pub fn gmm_em(frames: &[f64], p: usize, cfg: &GmmConfig) -> Result<GmmFit> {
    let c = cfg.components;
    if p == 0 || c == 0 || frames.len() % p != 0 {
        return Err(invalid("need p ≥ 1, at least one component and a whole number of frames"));
    }
    let n = frames.len() / p;
    if n < c * (p + 1) {
        return Err(invalid(format!("{n} frames are too few for {c} components of dimension {p}")));
    }
    let rows: Vec<&[f64]> = frames.chunks_exact(p).collect();
    if !(cfg.cov_floor > 0.0) {
        return Err(invalid(format!("covariance floor {} must be > 0", cfg.cov_floor)));
    }
    let (_, mut pooled) = sample_covariance(frames, p);
    let mean_var = (0..p).map(|d| pooled[d * p + d]).sum::<f64>() / p as f64;
    let floor = cfg.cov_floor * if mean_var > 0.0 { mean_var } else { 1.0 };
    floor_eigenvalues(&mut pooled, p, floor);
    let mut rng = keyed_rng(cfg.seed, "gmm/init");

    // k-means++ seeding
    let mut means: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|x| sq_dist(x, &means[0])).collect();
    while means.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d2.iter().position(|&d| {
                u -= d;
                u < 0.0
            })
            .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        means.push(rows[next].to_vec());
        let m = means.last().unwrap();
        for (d, x) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(x, m));
        }
    }
    let mut gmm = Gmm { p, weights: vec![1.0 / c as f64; c], means, covs: vec![pooled.clone(); c] };

    let mut history = Vec::new();
    let mut converged = false;
    let mut resp = vec![0.0; n * c];
    let mut terms = vec![0.0; c];
    for _ in 0..cfg.max_iter {
        let factors = gmm.factors()?;
        let mut ll = 0.0;
        for (i, x) in rows.iter().enumerate() {
            for k in 0..c {
                terms[k] = gmm.weights[k].ln() + log_gauss(x, &gmm.means[k], &factors[k], p);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for k in 0..c {
                resp[i * c + k] = (terms[k] - lse).exp();
            }
        }
        let done = history.last().is_some_and(|prev: &f64| (ll - prev).abs() < cfg.tol * prev.abs());
        history.push(ll);
        if done {
            converged = true;
            break;
        }

        // M-step
        for k in 0..c {
            let nk: f64 = (0..n).map(|i| resp[i * c + k]).sum();
            gmm.weights[k] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            let mut mean = vec![0.0; p];
            for (i, x) in rows.iter().enumerate() {
                let r = resp[i * c + k];
                for d in 0..p {
                    mean[d] += r * x[d];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut cov = vec![0.0; p * p];
            for (i, x) in rows.iter().enumerate() {
                let r = resp[i * c + k];
                for a in 0..p {
                    let da = r * (x[a] - mean[a]);
                    for b in 0..=a {
                        cov[a * p + b] += da * (x[b] - mean[b]);
                    }
                }
            }
            for a in 0..p {
                for b in 0..=a {
                    let v = cov[a * p + b] / nk;
                    cov[a * p + b] = v;
                    cov[b * p + a] = v;
                }
            }
            floor_eigenvalues(&mut cov, p, floor);
            gmm.means[k] = mean;
            gmm.covs[k] = cov;
        }
    }
    let dormant = gmm.weights.iter().filter(|w| **w == 0.0).count();
    if dormant > 0 {
        log::warn!("{dormant} GMM component(s) ended with zero weight");
    }
    Ok(GmmFit { gmm, history, dormant, converged })
}
