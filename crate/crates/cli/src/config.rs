use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rmdn::data::io::Format;
use rmdn::data::SynthSpec;
use rmdn::density::ContaminationSpec;
use rmdn::network::ModelConfig;
use rmdn::pipeline::{SynthExperiment, Variant};
use rmdn::scoring::EnsembleMode;
use rmdn::training::TrainConfig;

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

/// Field reference printed by `--help`.
pub const FIELDS_HELP: &str = "\
CONFIGURATION FIELDS (JSON; every field is optional, `--set a.b=v` overrides one):
  schema_version            config schema version, must be 1
  variant                   RGMM | RGMM-MR | RSMM | RSMM-MR | RSMM-MR-NoAttn [RSMM-MR];
                            overrides model.family, model.multires and model.attention
  model.p                   frame dimension [8]
  model.hidden              GRU width [64]
  model.layers              stacked GRU layers per stream [2]
  model.seq_len             window length in frames [70]
  model.components          mixture components [3]
  model.resolutions         temporal resolutions with multires on [2]
  model.conv_kernel         downsampling kernel width [10]
  model.conv_stride         downsampling stride [3]
  model.conv_padding        must be 0 [0]
  model.nu_bounds.lo/hi     degrees-of-freedom range [1, 10]
  model.trunk               width of the shared ReLU layer [hidden]
  train.epochs              passes over the training windows [30]
  train.batch_size          windows per step [128]
  train.lr                  Adam learning rate [1e-5]
  train.weight_decay        L2 coefficient [1e-3]
  train.init_scale          half-width of the uniform initialization [0.1]
  train.seed                seed for initialization, shuffling and contamination [0]
  train.beta1/beta2/eps     Adam constants [0.9, 0.999, 1e-8]
  train.max_grad_norm       optional gradient norm cap [none]
  train.checkpoint          optional per-epoch checkpoint path [none]
  synth.p                   generated frame dimension [8]
  synth.frames              frames per training recording [100]
  synth.n_recordings        normal training recordings [200]
  synth.n_anomalous         not used; anomalous recordings come from eval_anomalous
  synth.machine_id          machine id of generated recordings [synth]
  synth.amplitude           tone amplitude [1]
  synth.ar_coef             AR(1) noise coefficient [0.5]
  synth.noise_std           AR(1) innovation std [0.2]
  synth.freq_lo/freq_hi     tone frequency range in cycles per frame [0.01, 0.1]
  synth.anomaly             freq_shift | amplitude_burst | extra_tone [freq_shift]
  synth.magnitude           anomaly strength [0.5]
  synth.seed                dataset seed [0]
  synth.first_index         index of the first generated recording [0]
  eval_frames               frames per generated evaluation recording [200]
  eval_normal               generated normal evaluation recordings [50]
  eval_anomalous            generated anomalous evaluation recordings [50]
  train_data                dataset directory used instead of generated training data
  eval_data                 dataset directory used instead of generated evaluation data
  contamination.epsilon     fraction of training frames hit by noise bursts [0.1]
  contamination.sigma2      noise variance [5]; no contamination unless set
  p                         false-positive range of the partial AUC [0.1]
  ensemble                  mean | max [mean]
  format                    fseq | csv for written datasets [fseq]
  output_dir                output location when --out is not given
";

/// One experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub variant: Variant,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub eval_frames: usize,
    pub eval_normal: usize,
    pub eval_anomalous: usize,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub contamination: Option<ContaminationSpec>,
    pub p: f64,
    pub ensemble: EnsembleMode,
    pub format: Format,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let exp = SynthExperiment::default();
        Self {
            schema_version: SCHEMA_VERSION,
            variant: Variant::RsmmMr,
            model: exp.model,
            train: exp.train,
            synth: exp.synth,
            eval_frames: exp.eval_frames,
            eval_normal: exp.eval_normal,
            eval_anomalous: exp.eval_anomalous,
            train_data: None,
            eval_data: None,
            contamination: None,
            p: exp.p,
            ensemble: EnsembleMode::Mean,
            format: Format::Fseq,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or starts from the defaults) and applies the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Failure::usage(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Failure::usage(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// The model configuration with the variant switches applied.
    pub fn model(&self) -> ModelConfig {
        self.variant.configure(&self.model)
    }

    pub fn experiment(&self) -> SynthExperiment {
        SynthExperiment {
            model: self.model(),
            train: self.train.clone(),
            synth: self.synth.clone(),
            eval_frames: self.eval_frames,
            eval_normal: self.eval_normal,
            eval_anomalous: self.eval_anomalous,
            contamination: self.contamination,
            p: self.p,
        }
    }

    /// `--out` if given, otherwise `output_dir`.
    pub fn output(&self, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
        out.or_else(|| self.output_dir.clone())
            .ok_or_else(|| Failure::usage("no output location: pass --out or set output_dir"))
    }
}

/// Sets `key=value` in `doc`, where `key` is a dotted path. The value is
/// parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::usage(format!("override key `{key}` is malformed")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    if !node.is_object() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut().expect("object").insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
