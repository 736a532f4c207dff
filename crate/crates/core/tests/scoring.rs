mod common;

use common::{auc_double_loop, pauc_double_loop, rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rmdn::data::{generate, FrameSequence, Label, SynthSpec};
use rmdn::density::{ContaminationSpec, Family};
use rmdn::network::ModelConfig;
use rmdn::scoring::{
    anomaly_score, auc, ensemble, gmm_em, inject_noise_bursts, pauc, standardize, EnsembleMode, Gmm, GmmConfig,
    LinearAr,
};
use rmdn::training::{make_windows, train, TrainConfig};

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Scores drawn from a small integer grid so ties are frequent.
fn random_case(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = r.random_range(1..40);
    let m = r.random_range(1..40);
    let grid = r.random_range(2..12);
    let mut draw = |k: usize, shift: i32| -> Vec<f64> {
        (0..k).map(|_| (r.random_range(0..grid) as i32 + shift) as f64 * 0.5).collect()
    };
    let neg = draw(n, 0);
    let pos = draw(m, 1);
    (neg, pos)
}

#[test]
fn auc_and_pauc_equal_the_double_loop_with_ties() {
    let mut r = rng(31);
    for _ in 0..200 {
        let (neg, pos) = random_case(&mut r);
        assert_eq!(auc(&neg, &pos).unwrap(), auc_double_loop(&neg, &pos));
        for p in [0.05, 0.1, 0.25, 0.5, 0.9] {
            let k = (p * neg.len() as f64).floor() as usize;
            if k == 0 {
                assert!(pauc(&neg, &pos, p).is_err());
            } else {
                assert_eq!(pauc(&neg, &pos, p).unwrap(), pauc_double_loop(&neg, &pos, k));
            }
        }
        assert_eq!(pauc(&neg, &pos, 1.0).unwrap(), auc(&neg, &pos).unwrap());
    }
}

#[test]
fn partial_auc_examples() {
    assert_eq!(pauc(&[9.0, 1.0, 1.0], &[5.0, 5.0], 0.34).unwrap(), 0.0);
    assert_eq!(pauc(&[0.0, 0.0, 0.0, 8.0], &[9.0, 9.0], 0.25).unwrap(), 1.0);
    assert!((auc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap() - 6.0 / 9.0).abs() < 1e-15);
}

#[test]
fn auc_is_invariant_under_increasing_maps() {
    let mut r = rng(5);
    for _ in 0..50 {
        let neg: Vec<f64> = (0..30).map(|_| normal(&mut r)).collect();
        let pos: Vec<f64> = (0..20).map(|_| normal(&mut r) + 0.7).collect();
        let base = auc(&neg, &pos).unwrap();
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 7.0, |x: f64| x.powi(3)] {
            let n2: Vec<f64> = neg.iter().map(|x| f(*x)).collect();
            let p2: Vec<f64> = pos.iter().map(|x| f(*x)).collect();
            assert_eq!(auc(&n2, &p2).unwrap(), base);
        }
    }
}

#[test]
fn standardized_ensembles_ignore_affine_rescaling_of_a_member() {
    let mut r = rng(8);
    let a_train: Vec<f64> = (0..50).map(|_| normal(&mut r)).collect();
    let b_train: Vec<f64> = (0..50).map(|_| 2.0 + normal(&mut r)).collect();
    let a_eval: Vec<f64> = (0..20).map(|_| normal(&mut r)).collect();
    let b_eval: Vec<f64> = (0..20).map(|_| 2.0 + normal(&mut r)).collect();
    let combine = |bt: &[f64], be: &[f64], mode| {
        let sa = standardize(&a_train, &a_eval).unwrap();
        let sb = standardize(bt, be).unwrap();
        ensemble(&[&sa, &sb], mode).unwrap()
    };
    let rescale = |xs: &[f64]| xs.iter().map(|x| 40.0 * x + 1e3).collect::<Vec<_>>();
    for mode in [EnsembleMode::Mean, EnsembleMode::Max] {
        let base = combine(&b_train, &b_eval, mode);
        let moved = combine(&rescale(&b_train), &rescale(&b_eval), mode);
        for (x, y) in base.iter().zip(&moved) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn standardized_training_scores_have_unit_moments() {
    let mut r = rng(2);
    let train: Vec<f64> = (0..333).map(|_| 5.0 + 3.0 * normal(&mut r)).collect();
    let z = standardize(&train, &train).unwrap();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    assert_eq!(standardize(&[0.0, 2.0], &[3.0]).unwrap(), vec![2.0]);
}

#[test]
fn injected_noise_has_the_configured_variance() {
    let recs: Vec<FrameSequence> = (0..50)
        .map(|i| FrameSequence::new(format!("r{i}"), "m", Label::Normal, 2000, 2, vec![0.0; 4000]).unwrap())
        .collect();
    let out = inject_noise_bursts(&recs, &ContaminationSpec { epsilon: 0.1, sigma2: 5.0 }, 3).unwrap();
    assert_eq!(out.contaminated_frames(), 10_000);
    let n = out.noise.len() as f64;
    let mean = out.noise.iter().sum::<f64>() / n;
    let var = out.noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 5.0).abs() < 0.5, "sample variance {var}");
    let changed: f64 = out.data.iter().flat_map(|s| s.values()).map(|v| v * v).sum::<f64>();
    assert!((changed - out.noise.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-9);
}

/// `x(t+1) = M x(t)` for a rotation `M`, started from several random points.
#[test]
fn ar_baseline_recovers_a_planted_recurrence() {
    let (a, b) = (0.3f64, 0.8f64);
    let rz = [a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0];
    let rx = [1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos()];
    let mut m = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            m[i * 3 + j] = (0..3).map(|k| rz[i * 3 + k] * rx[k * 3 + j]).sum();
        }
    }
    let mut r = rng(4);
    let recs: Vec<FrameSequence> = (0..5)
        .map(|i| {
            let mut x: Vec<f64> = (0..3).map(|_| normal(&mut r)).collect();
            let mut values = Vec::new();
            for _ in 0..60 {
                values.extend_from_slice(&x);
                x = (0..3).map(|row| (0..3).map(|c| m[row * 3 + c] * x[c]).sum()).collect();
            }
            FrameSequence::new(format!("r{i}"), "m", Label::Normal, 60, 3, values).unwrap()
        })
        .collect();
    let fit = LinearAr::fit(&recs, 1).unwrap();
    assert!(!fit.ridged);
    for i in 0..3 {
        for j in 0..3 {
            assert!((fit.w[i * 3 + j] - m[j * 3 + i]).abs() < 1e-8);
        }
    }
    assert!(fit.score(&recs[0]).unwrap() < 1e-20);
}

#[test]
fn ar_baseline_on_white_noise_is_near_zero() {
    let spec = SynthSpec {
        p: 2,
        frames: 5000,
        n_recordings: 2,
        n_anomalous: 0,
        amplitude: 0.0,
        ar_coef: 0.0,
        noise_std: 1.0,
        ..SynthSpec::default()
    };
    let recs = generate(&spec).unwrap().normal;
    let fit = LinearAr::fit(&recs, 1).unwrap();
    let norm = fit.w.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 0.1, "‖W‖ = {norm}");
}

fn planted_gmm() -> Gmm {
    Gmm {
        p: 2,
        weights: vec![0.3, 0.7],
        means: vec![vec![-2.0, 1.0], vec![2.5, -1.0]],
        covs: vec![vec![0.5, 0.2, 0.2, 0.8], vec![1.0, -0.3, -0.3, 0.4]],
    }
}

fn sample_gmm(g: &Gmm, n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let k = usize::from(r.random::<f64>() >= g.weights[0]);
        let c = &g.covs[k];
        let l00 = c[0].sqrt();
        let l10 = c[2] / l00;
        let l11 = (c[3] - l10 * l10).sqrt();
        let (z0, z1) = (normal(r), normal(r));
        out.push(g.means[k][0] + l00 * z0);
        out.push(g.means[k][1] + l10 * z0 + l11 * z1);
    }
    out
}

#[test]
fn gmm_fit_is_at_least_as_likely_as_the_generator() {
    let truth = planted_gmm();
    let n = 3000;
    let x = sample_gmm(&truth, n, &mut rng(12));
    let fit = gmm_em(&x, 2, &GmmConfig { components: 2, ..GmmConfig::default() }).unwrap();
    let ll_fit: f64 = fit.gmm.log_density(&x).unwrap().iter().sum();
    let ll_true: f64 = truth.log_density(&x).unwrap().iter().sum();
    assert!(ll_fit >= ll_true - 0.01 * n as f64, "{ll_fit} vs {ll_true}");
}

#[test]
fn gmm_log_likelihood_is_monotone_on_random_datasets() {
    for seed in 0..20u64 {
        let mut r = rng(500 + seed);
        let n = r.random_range(200..600);
        let x = sample_gmm(&planted_gmm(), n, &mut r);
        let c = 1 + (seed as usize % 4);
        let fit = gmm_em(&x, 2, &GmmConfig { components: c, seed, ..GmmConfig::default() }).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0], "dataset {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn planted_segments_raise_the_score() {
    let cfg = ModelConfig {
        p: 2,
        hidden: 8,
        layers: 1,
        seq_len: 12,
        components: 2,
        family: Family::StudentT,
        multires: false,
        attention: true,
        ..ModelConfig::default()
    };
    let mut raised = 0;
    for seed in 0..10u64 {
        let spec = SynthSpec { p: 2, frames: 60, n_recordings: 30, n_anomalous: 1, magnitude: 1.0, seed, ..SynthSpec::default() };
        let data = generate(&spec).unwrap();
        let windows = make_windows(&data.normal, cfg.seq_len);
        let tcfg = TrainConfig { epochs: 5, batch_size: 32, lr: 1e-2, seed, ..TrainConfig::default() };
        let w = train(&cfg, &tcfg, &windows).unwrap().weights;

        // Same recording index and noise, with and without the planted span.
        let clean = generate(&SynthSpec { n_recordings: 0, magnitude: 0.0, ..spec.clone() }).unwrap().anomalous;
        let dirty = anomaly_score(&w, &data.anomalous[0], "m").unwrap().score;
        let base = anomaly_score(&w, &clean[0], "m").unwrap().score;
        raised += (dirty > base) as usize;
    }
    assert!(raised >= 9, "{raised}/10");
}
