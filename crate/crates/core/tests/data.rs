use rmdn::data::io::{self, encode_fseq_raw, load_dataset, save_dataset, Format};
use rmdn::data::{generate, FrameSequence, Label, Scaler, SynthSpec};

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let q: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, q.clamp(0.0, 1.0))
}

/// Mean over dimensions of frame `t` of every recording; recordings are
/// independent draws, so the sample is i.i.d.
fn frame_means(recs: &[FrameSequence], t: usize) -> Vec<f64> {
    recs.iter().map(|r| r.row(t).iter().sum::<f64>() / r.dims() as f64).collect()
}

#[test]
fn zero_magnitude_anomalies_are_indistinguishable() {
    let spec = SynthSpec { p: 4, frames: 6, n_recordings: 10_000, n_anomalous: 10_000, magnitude: 0.0, ..SynthSpec::default() };
    let data = generate(&spec).unwrap();
    let (d, p) = ks_two_sample(&frame_means(&data.normal, 3), &frame_means(&data.anomalous, 3));
    assert!(p > 0.01, "D = {d}, p = {p}");

    let shifted = generate(&SynthSpec { magnitude: 2.0, anomaly: rmdn::data::AnomalyKind::AmplitudeBurst, ..spec }).unwrap();
    let (_, p) = ks_two_sample(&frame_means(&shifted.normal, 3), &frame_means(&shifted.anomalous, 3));
    assert!(p < 1e-6);
}

#[test]
fn white_noise_setting_gives_iid_frames_with_the_configured_std() {
    let spec = SynthSpec {
        p: 5,
        frames: 2000,
        n_recordings: 10,
        n_anomalous: 0,
        amplitude: 0.0,
        ar_coef: 0.0,
        noise_std: 0.7,
        ..SynthSpec::default()
    };
    let recs = generate(&spec).unwrap().normal;
    let xs: Vec<f64> = recs.iter().flat_map(|r| r.values().iter().copied()).collect();
    assert_eq!(xs.len(), 100_000);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std / 0.7 - 1.0).abs() < 0.03, "std {std}");
    let lag1: f64 = recs
        .iter()
        .flat_map(|r| r.values().chunks_exact(5).zip(r.values().chunks_exact(5).skip(1)).map(|(a, b)| a[0] * b[0]))
        .sum::<f64>()
        / (10.0 * 1999.0);
    assert!(lag1.abs() / 0.49 < 0.05);
}

#[test]
fn same_seed_same_data_and_fresh_indices_differ() {
    let spec = SynthSpec { p: 3, frames: 50, n_recordings: 4, n_anomalous: 2, ..SynthSpec::default() };
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let later = generate(&SynthSpec { first_index: 4, ..spec.clone() }).unwrap();
    assert_ne!(generate(&spec).unwrap().normal[0].values(), later.normal[0].values());
}

#[test]
fn scaler_maps_training_data_into_the_unit_box_and_extends_affinely() {
    let recs = generate(&SynthSpec { p: 3, frames: 80, n_recordings: 5, n_anomalous: 0, ..SynthSpec::default() })
        .unwrap()
        .normal;
    let s = Scaler::fit(&recs).unwrap();
    for r in &recs {
        assert!(s.apply(r).unwrap().values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let two = |v: f64| FrameSequence::new("x", "m", Label::Normal, 1, 1, vec![v]).unwrap();
    let s = Scaler::fit(&[two(0.0), two(2.0)]).unwrap();
    assert_eq!(s.apply(&two(1.0)).unwrap().values(), &[0.0]);
    assert_eq!(s.apply(&two(3.0)).unwrap().values(), &[2.0]);
}

#[test]
fn datasets_roundtrip_through_both_formats() {
    let data = generate(&SynthSpec { p: 3, frames: 20, n_recordings: 3, n_anomalous: 2, ..SynthSpec::default() }).unwrap();
    let mut all = data.normal.clone();
    all.extend(data.anomalous.clone());
    for format in [Format::Fseq, Format::Csv] {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &all, format).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), all);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.fseq");
    io::save(&all[0], &path).unwrap();
    assert_eq!(io::load(&path).unwrap().values(), all[0].values());
}

#[test]
fn empty_matrices_are_rejected_at_save_time() {
    assert!(encode_fseq_raw(0, 3, &[]).is_err());
    assert!(encode_fseq_raw(3, 0, &[]).is_err());
    assert!(io::write_csv(Vec::new(), 0, 2, &[]).is_err());
}
