//! Model variants and the end-to-end synthetic experiment: generate, scale,
//! optionally contaminate, train, score and evaluate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate, io, FrameSequence, Scaler, SynthSpec};
use crate::density::{ContaminationSpec, Family};
use crate::error::{invalid, Error, Result};
use crate::network::{ModelConfig, ModelWeights};
use crate::par::Execution;
use crate::scoring::{self, inject_noise_bursts, ScoreReport};
use crate::training::{self, make_windows, TrainConfig};

/// The five model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "RGMM")]
    Rgmm,
    #[serde(rename = "RGMM-MR")]
    RgmmMr,
    #[serde(rename = "RSMM")]
    Rsmm,
    #[serde(rename = "RSMM-MR")]
    RsmmMr,
    #[serde(rename = "RSMM-MR-NoAttn")]
    RsmmMrNoAttn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Rgmm, Variant::RgmmMr, Variant::Rsmm, Variant::RsmmMr, Variant::RsmmMrNoAttn];

    /// `(family, multiresolution, attention)`.
    pub fn flags(self) -> (Family, bool, bool) {
        match self {
            Variant::Rgmm => (Family::Gaussian, false, true),
            Variant::RgmmMr => (Family::Gaussian, true, true),
            Variant::Rsmm => (Family::StudentT, false, true),
            Variant::RsmmMr => (Family::StudentT, true, true),
            Variant::RsmmMrNoAttn => (Family::StudentT, true, false),
        }
    }

    /// `base` with this variant's switches applied.
    pub fn configure(self, base: &ModelConfig) -> ModelConfig {
        let (family, multires, attention) = self.flags();
        ModelConfig { family, multires, attention, ..base.clone() }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rgmm => "RGMM",
            Variant::RgmmMr => "RGMM-MR",
            Variant::Rsmm => "RSMM",
            Variant::RsmmMr => "RSMM-MR",
            Variant::RsmmMrNoAttn => "RSMM-MR-NoAttn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown variant `{s}`; expected one of RGMM, RGMM-MR, RSMM, RSMM-MR, RSMM-MR-NoAttn")))
    }
}

/// Hex SHA-256 over the ids and binary encodings of `data`, in order.
pub fn dataset_hash(data: &[FrameSequence]) -> Result<String> {
    let mut h = Sha256::new();
    for seq in data {
        h.update(seq.recording_id.as_bytes());
        h.update([0]);
        h.update(io::encode_fseq(seq)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Synthetic experiment settings.
///
/// `synth` describes the training recordings (all normal). The evaluation
/// set holds `eval_normal` fresh normal recordings and `eval_anomalous`
/// anomalous ones from the same machine, each `eval_frames` long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthExperiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub eval_frames: usize,
    pub eval_normal: usize,
    pub eval_anomalous: usize,
    pub contamination: Option<ContaminationSpec>,
    pub p: f64,
}

impl Default for SynthExperiment {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec { n_anomalous: 0, ..SynthSpec::default() },
            eval_frames: 200,
            eval_normal: 50,
            eval_anomalous: 50,
            contamination: None,
            p: 0.1,
        }
    }
}

/// Scaled splits of a generated dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<FrameSequence>,
    pub eval: Vec<FrameSequence>,
    pub scaler: Scaler,
    pub hash: String,
}

impl Splits {
    /// Fits the scaler on `train` and applies it to both sets. The hash
    /// covers the scaled recordings of both sets in order.
    pub fn from_raw(train: &[FrameSequence], eval: &[FrameSequence]) -> Result<Self> {
        let scaler = Scaler::fit(train)?;
        let scale = |xs: &[FrameSequence]| xs.iter().map(|s| scaler.apply(s)).collect::<Result<Vec<_>>>();
        let train = scale(train)?;
        let eval = scale(eval)?;
        let mut all = train.clone();
        all.extend(eval.iter().cloned());
        Ok(Splits { train, eval, hash: dataset_hash(&all)?, scaler })
    }
}

impl SynthExperiment {
    /// Unscaled training recordings.
    pub fn raw_train(&self) -> Result<Vec<FrameSequence>> {
        Ok(generate(&SynthSpec { n_anomalous: 0, ..self.synth.clone() })?.normal)
    }

    /// Unscaled evaluation recordings: the normal ones first, then the anomalous ones.
    pub fn raw_eval(&self) -> Result<Vec<FrameSequence>> {
        let eval_spec = SynthSpec {
            frames: self.eval_frames,
            n_recordings: self.eval_normal,
            n_anomalous: self.eval_anomalous,
            first_index: self.synth.first_index + self.synth.n_recordings,
            ..self.synth.clone()
        };
        let held_out = generate(&eval_spec)?;
        let mut eval = held_out.normal;
        eval.extend(held_out.anomalous);
        Ok(eval)
    }

    /// Generates both sets, fits the scaler on the clean training recordings
    /// and applies it to both.
    pub fn splits(&self) -> Result<Splits> {
        Splits::from_raw(&self.raw_train()?, &self.raw_eval()?)
    }

    /// Trains `variant` with `seed` (initialization, shuffling and any
    /// contamination) on prepared splits and evaluates it.
    pub fn run_on(&self, splits: &Splits, variant: Variant, seed: u64, exec: Execution) -> Result<RunResult> {
        let model = variant.configure(&self.model);
        model.validate()?;
        let train_data = match &self.contamination {
            Some(spec) => inject_noise_bursts(&splits.train, spec, seed)?.data,
            None => splits.train.clone(),
        };
        let windows = make_windows(&train_data, model.seq_len);
        let tcfg = TrainConfig { seed, ..self.train.clone() };
        let init = training::init_weights_scaled(&model, seed, tcfg.init_scale)?;
        let outcome = training::train_from(init, &tcfg, &windows, exec).map_err(|e| e.source)?;
        let (scores, skipped) = scoring::score_recordings(&outcome.weights, &splits.eval, variant.name(), exec)?;
        if !skipped.is_empty() {
            log::warn!("{} evaluation recording(s) too short to score", skipped.len());
        }
        let neg: Vec<f64> = scores.iter().filter(|r| r.label == crate::data::Label::Normal).map(|r| r.score).collect();
        let pos: Vec<f64> = scores.iter().filter(|r| r.label == crate::data::Label::Anomaly).map(|r| r.score).collect();
        let (auc, pauc) = scoring::evaluate(&neg, &pos, self.p)?;
        Ok(RunResult {
            variant,
            seed,
            auc,
            pauc,
            history: outcome.history,
            dataset_hash: splits.hash.clone(),
            weights: outcome.weights,
            scores,
        })
    }

    pub fn run(&self, variant: Variant, seed: u64, exec: Execution) -> Result<RunResult> {
        self.run_on(&self.splits()?, variant, seed, exec)
    }
}

/// Outcome of one trained and evaluated model.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub auc: f64,
    pub pauc: f64,
    pub history: Vec<f64>,
    pub dataset_hash: String,
    pub weights: ModelWeights,
    pub scores: Vec<ScoreReport>,
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
