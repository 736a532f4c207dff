use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FrameSequence, Label};
use crate::error::{invalid, Result};
use crate::rng::keyed_rng;

/// Deviation planted into anomalous recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Every tone's frequency is scaled by `1 + magnitude`.
    FreqShift,
    /// The whole signal (tones and noise) is scaled by `1 + magnitude`.
    AmplitudeBurst,
    /// A tone of amplitude `magnitude` at a random frequency is added to every dimension.
    ExtraTone,
}

/// Sinusoid-plus-AR(1) generator settings.
///
/// Dimension `d` of a recording is `amplitude·sin(2π f_d t + φ) + e_d(t)` with
/// `e_d(t) = ar_coef·e_d(t−1) + noise_std·ξ`. Frequencies `f_d` are drawn once
/// per dataset (they define the "machine"); phases and noise are drawn per
/// recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub p: usize,
    /// Frames per recording.
    pub frames: usize,
    /// Normal recordings.
    pub n_recordings: usize,
    pub n_anomalous: usize,
    pub machine_id: String,
    pub amplitude: f64,
    pub ar_coef: f64,
    pub noise_std: f64,
    /// Tone frequencies are drawn uniformly from this range, in cycles per frame.
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub anomaly: AnomalyKind,
    pub magnitude: f64,
    pub seed: u64,
    /// Index of the first recording. Datasets that share a seed and `p` come
    /// from the same machine, so disjoint index ranges give fresh recordings
    /// of it, possibly with a different length.
    pub first_index: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            p: 8,
            frames: 100,
            n_recordings: 200,
            n_anomalous: 50,
            machine_id: "synth".into(),
            amplitude: 1.0,
            ar_coef: 0.5,
            noise_std: 0.2,
            freq_lo: 0.01,
            freq_hi: 0.1,
            anomaly: AnomalyKind::FreqShift,
            magnitude: 0.5,
            seed: 0,
            first_index: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.frames == 0 {
            return Err(invalid("p and frames must be at least 1"));
        }
        if !(self.ar_coef > -1.0 && self.ar_coef < 1.0) {
            return Err(invalid(format!("AR coefficient {} outside (-1, 1)", self.ar_coef)));
        }
        if !(self.noise_std >= 0.0) || !self.amplitude.is_finite() || !self.magnitude.is_finite() {
            return Err(invalid("noise_std must be >= 0 and amplitude/magnitude finite"));
        }
        if !(self.freq_lo >= 0.0 && self.freq_lo <= self.freq_hi) {
            return Err(invalid("need 0 <= freq_lo <= freq_hi"));
        }
        Ok(())
    }
}

/// Generated normal and anomalous populations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub normal: Vec<FrameSequence>,
    pub anomalous: Vec<FrameSequence>,
}

struct Planted {
    start: usize,
    len: usize,
    kind: AnomalyKind,
    magnitude: f64,
    tone_freq: f64,
    tone_phase: f64,
}

fn recording(spec: &SynthSpec, freqs: &[f64], rng: &mut ChaCha8Rng, planted: Option<&Planted>) -> Vec<f64> {
    let (t_len, p) = (spec.frames, spec.p);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phases: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..TAU)).collect();
    let stationary = spec.noise_std / (1.0 - spec.ar_coef * spec.ar_coef).sqrt();
    let mut noise: Vec<f64> = (0..p).map(|_| stationary * normal.sample(rng)).collect();
    let mut phase = phases.clone();
    let mut out = vec![0.0; t_len * p];
    for t in 0..t_len {
        let active = planted.filter(|a| t >= a.start && t < a.start + a.len);
        for d in 0..p {
            if t > 0 {
                noise[d] = spec.ar_coef * noise[d] + spec.noise_std * normal.sample(rng);
            }
            let mut v = spec.amplitude * phase[d].sin() + noise[d];
            let mut step = TAU * freqs[d];
            if let Some(a) = active {
                match a.kind {
                    AnomalyKind::FreqShift => step *= 1.0 + a.magnitude,
                    AnomalyKind::AmplitudeBurst => v *= 1.0 + a.magnitude,
                    AnomalyKind::ExtraTone => v += a.magnitude * (TAU * a.tone_freq * t as f64 + a.tone_phase).sin(),
                }
            }
            phase[d] += step;
            out[t * p + d] = v;
        }
    }
    out
}

/// Deterministic synthetic dataset.
///
/// Anomalous recordings are drawn from the same base process as normal ones
/// and carry the planted deviation over one contiguous span covering 20–50%
/// of the recording.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut machine = keyed_rng(spec.seed, "synth/machine");
    let freqs: Vec<f64> = (0..spec.p)
        .map(|_| if spec.freq_hi > spec.freq_lo { machine.random_range(spec.freq_lo..spec.freq_hi) } else { spec.freq_lo })
        .collect();
    let make = |i: usize, label: Label, planted: Option<&Planted>| {
        let i = i + spec.first_index;
        let key = match label {
            Label::Anomaly => format!("synth/anomalous/{i}"),
            _ => format!("synth/normal/{i}"),
        };
        let values = recording(spec, &freqs, &mut keyed_rng(spec.seed, &key), planted);
        let prefix = if label == Label::Anomaly { "anomaly" } else { "normal" };
        FrameSequence::new(format!("{prefix}_{i:05}"), spec.machine_id.clone(), label, spec.frames, spec.p, values)
    };
    let normal = (0..spec.n_recordings).map(|i| make(i, Label::Normal, None)).collect::<Result<Vec<_>>>()?;
    let anomalous = (0..spec.n_anomalous)
        .map(|i| {
            let mut rng = keyed_rng(spec.seed, &format!("synth/plant/{}", i + spec.first_index));
            let t = spec.frames;
            let lo = ((0.2 * t as f64).ceil() as usize).max(1).min(t);
            let hi = ((0.5 * t as f64).floor() as usize).max(lo);
            let len = rng.random_range(lo..=hi);
            let planted = Planted {
                start: rng.random_range(0..=t - len),
                len,
                kind: spec.anomaly,
                magnitude: spec.magnitude,
                tone_freq: rng.random_range(spec.freq_lo..=spec.freq_hi.max(spec.freq_lo)),
                tone_phase: rng.random_range(0.0..TAU),
            };
            make(i, Label::Anomaly, Some(&planted))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthData { normal, anomalous })
}
