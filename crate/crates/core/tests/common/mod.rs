#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rmdn::density::Family;
use rmdn::network::{loss_and_grad, window_nll, ModelConfig, ModelWeights};
use rmdn::training::init_weights_scaled;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// P=2, hidden=4, c=2, seq_len=12 with a kernel-3 stride-2 second stream of 5 steps.
pub fn tiny(family: Family, multires: bool, attention: bool) -> ModelConfig {
    ModelConfig {
        p: 2,
        hidden: 4,
        layers: 2,
        seq_len: 12,
        components: 2,
        family,
        multires,
        attention,
        conv_kernel: 3,
        conv_stride: 2,
        ..ModelConfig::default()
    }
}

/// Every (family, multires, attention) cell.
pub fn all_cells() -> Vec<(Family, bool, bool)> {
    let mut out = Vec::new();
    for family in [Family::Gaussian, Family::StudentT] {
        for multires in [false, true] {
            for attention in [false, true] {
                out.push((family, multires, attention));
            }
        }
    }
    out
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

/// Weights with entries of magnitude up to `scale`, so that every gate and
/// head is well away from a trivial operating point.
pub fn random_weights(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelWeights {
    init_weights_scaled(cfg, seed, scale).unwrap()
}

/// Largest elementwise relative error between the analytic NLL gradient and
/// central differences with step `h`, using `max(|analytic|, floor)` as the
/// denominator. Returns `(error, tensor name, index)` of the worst entry.
pub fn fd_check(w: &ModelWeights, window: &[f64], target: &[f64], h: f64, floor: f64) -> (f64, String, usize) {
    let mut grads = ModelWeights::zeros(w.config()).unwrap();
    loss_and_grad(w, window, target, &mut grads).unwrap();
    let mut probe = w.clone();
    let mut worst = (0.0, String::new(), 0);
    for ti in 0..w.tensors().len() {
        for k in 0..w.tensors()[ti].len() {
            let orig = w.tensors()[ti].data()[k];
            probe.tensors_mut()[ti].data_mut()[k] = orig + h;
            let up = window_nll(&probe, window, target).unwrap();
            probe.tensors_mut()[ti].data_mut()[k] = orig - h;
            let down = window_nll(&probe, window, target).unwrap();
            probe.tensors_mut()[ti].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grads.tensors()[ti].data()[k];
            let err = (fd - a).abs() / a.abs().max(fd.abs()).max(floor);
            if err > worst.0 {
                worst = (err, w.tensors()[ti].name().to_string(), k);
            }
        }
    }
    worst
}

/// Heaviside double loop: pairs with `pos > neg`, divided by the pair count.
pub fn auc_double_loop(neg: &[f64], pos: &[f64]) -> f64 {
    let mut hits = 0u64;
    for n in neg {
        for p in pos {
            if p - n > 0.0 {
                hits += 1;
            }
        }
    }
    hits as f64 / (neg.len() * pos.len()) as f64
}

/// Sorts normal scores descending, keeps the first `⌊p·N⌋`, then double-loops.
pub fn pauc_double_loop(neg: &[f64], pos: &[f64], k: usize) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    auc_double_loop(&sorted[..k], pos)
}
