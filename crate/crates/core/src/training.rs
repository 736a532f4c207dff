//! Sliding-window datasets, Adam with additive L2, deterministic
//! initialization and the training loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FrameSequence;
use crate::error::{invalid, Error, Result};
use crate::network::{checkpoint, loss_and_grad, ModelConfig, ModelWeights};
use crate::par::{self, Execution};
use crate::rng::keyed_rng;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Coefficient of the L2 term added to every gradient.
    pub weight_decay: f64,
    /// Initial weights are uniform on `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescales the batch gradient to this Euclidean norm when exceeded.
    pub max_grad_norm: Option<f64>,
    /// Written after every completed epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 1e-5,
            weight_decay: 1e-3,
            init_scale: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(invalid("weight_decay and init_scale must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return Err(invalid("max_grad_norm must be > 0"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// windows

/// `(window, next frame)` pairs cut from recordings with stride 1.
#[derive(Debug, Clone)]
pub struct WindowSet {
    recordings: Vec<FrameSequence>,
    /// `(recording, first frame of the window)`.
    index: Vec<(usize, usize)>,
    seq_len: usize,
    /// Recordings with fewer than `seq_len + 1` frames.
    pub skipped: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dims(&self) -> Option<usize> {
        self.recordings.first().map(FrameSequence::dims)
    }

    /// Row-major `seq_len × P` window and the frame that follows it.
    pub fn get(&self, i: usize) -> (&[f64], &[f64]) {
        let (r, start) = self.index[i];
        let rec = &self.recordings[r];
        (rec.rows(start, self.seq_len), rec.row(start + self.seq_len))
    }

    /// Recording index and window start of pair `i`.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }
}

/// Emits `T − seq_len` pairs per recording, in recording then time order.
pub fn make_windows(recordings: &[FrameSequence], seq_len: usize) -> WindowSet {
    let mut index = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = 0;
    for rec in recordings {
        if seq_len == 0 || rec.frames() <= seq_len {
            skipped += 1;
            continue;
        }
        let r = kept.len();
        index.extend((0..rec.frames() - seq_len).map(|s| (r, s)));
        kept.push(rec.clone());
    }
    if skipped > 0 {
        log::warn!("{skipped} recording(s) shorter than seq_len + 1 = {} skipped", seq_len + 1);
    }
    WindowSet { recordings: kept, index, seq_len, skipped }
}

// ---------------------------------------------------------------------------
// initialization

/// Uniform `[-0.1, 0.1]` initialization.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    init_weights_scaled(config, seed, 0.1)
}

/// Every tensor is drawn from its own stream keyed by `(seed, tensor name)`.
pub fn init_weights_scaled(config: &ModelConfig, seed: u64, scale: f64) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros(config)?;
    for t in w.tensors_mut() {
        let mut rng = keyed_rng(seed, &format!("init/{}", t.name()));
        for v in t.data_mut() {
            *v = if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 };
        }
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Adam

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let shape = || weights.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: shape(), v: shape(), t: 0 }
    }

    /// Steps taken so far.
    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update at step `t ≥ 1` on a flat parameter slice.
/// The L2 term `weight_decay · param` is added to the gradient first.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i] + cfg.weight_decay * param[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one Adam step to every tensor. A non-finite gradient rejects the
/// whole step and leaves weights and moments untouched.
pub fn adam_step(weights: &mut ModelWeights, grads: &ModelWeights, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { tensor: name.to_string() });
    }
    if grads.tensors().len() != weights.tensors().len() || state.m.len() != weights.tensors().len() {
        return Err(invalid("gradient / moment layout does not match the weights"));
    }
    state.t += 1;
    let t = state.t;
    for (((w, g), m), v) in weights.tensors_mut().iter_mut().zip(grads.tensors()).zip(&mut state.m).zip(&mut state.v) {
        adam_update(w.data_mut(), g.data(), m, v, t, cfg);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// training loop

/// Windows per gradient accumulator. Fixed so the reduction order, and hence
/// the result, does not depend on the number of threads.
pub const GRAD_CHUNK: usize = 16;

/// Mean NLL gradient over the windows `batch` and the summed NLL.
pub fn batch_gradient(
    weights: &ModelWeights,
    data: &WindowSet,
    batch: &[usize],
    exec: Execution,
) -> Result<(ModelWeights, f64)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let partials = par::map_chunks(batch, GRAD_CHUNK, exec, |chunk| -> Result<(ModelWeights, f64)> {
        let mut g = weights.zeros_like();
        let mut loss = 0.0;
        for &i in chunk {
            let (window, target) = data.get(i);
            loss += loss_and_grad(weights, window, target, &mut g)?;
        }
        Ok((g, loss))
    });
    let mut total: Option<ModelWeights> = None;
    let mut loss = 0.0;
    for part in partials {
        let (g, l) = part?;
        loss += l;
        match total.as_mut() {
            None => total = Some(g),
            Some(t) => t.add_assign(&g)?,
        }
    }
    let mut total = total.expect("non-empty batch");
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss))
}

/// Final weights and per-epoch mean NLL.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<f64>,
}

/// Training stopped early. `last_good` holds the weights at the end of the
/// last completed epoch (the initialization if none completed).
#[derive(Debug, Error)]
#[error("training aborted in epoch {epoch}: {source}")]
pub struct TrainError {
    #[source]
    pub source: Error,
    pub epoch: usize,
    pub last_good: Option<Box<ModelWeights>>,
    pub history: Vec<f64>,
}

impl From<Error> for TrainError {
    fn from(source: Error) -> Self {
        Self { source, epoch: 0, last_good: None, history: Vec::new() }
    }
}

/// Initializes from `tcfg.seed` and trains.
pub fn train(config: &ModelConfig, tcfg: &TrainConfig, data: &WindowSet) -> Result<TrainOutcome, TrainError> {
    let init = init_weights_scaled(config, tcfg.seed, tcfg.init_scale)?;
    train_from(init, tcfg, data, Execution::default())
}

/// Trains starting from `weights`, minimizing the mean window NLL.
pub fn train_from(
    mut weights: ModelWeights,
    tcfg: &TrainConfig,
    data: &WindowSet,
    exec: Execution,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(invalid("no training windows").into());
    }
    let cfg = weights.config().clone();
    if data.seq_len() != cfg.seq_len || data.dims() != Some(cfg.p) {
        return Err(invalid(format!(
            "windows are {} × {:?}, model expects {} × {}",
            data.seq_len(),
            data.dims(),
            cfg.seq_len,
            cfg.p
        ))
        .into());
    }
    let mut adam = AdamState::new(&weights);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut last_good = weights.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..tcfg.epochs {
        let mut rng = keyed_rng(tcfg.seed, &format!("shuffle/epoch{epoch}"));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let step = |weights: &mut ModelWeights, adam: &mut AdamState, batch: &[usize]| -> Result<f64> {
            let (mut grad, loss) = batch_gradient(weights, data, batch, exec)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("batch loss is {loss}")));
            }
            if let Some(max) = tcfg.max_grad_norm {
                let n = grad.norm();
                if n > max {
                    grad.scale(max / n);
                }
            }
            adam_step(weights, &grad, adam, tcfg)?;
            weights.check_finite()?;
            Ok(loss)
        };
        for batch in order.chunks(tcfg.batch_size) {
            match step(&mut weights, &mut adam, batch) {
                Ok(l) => epoch_loss += l,
                Err(source) => {
                    return Err(TrainError { source, epoch, last_good: Some(Box::new(last_good)), history });
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        log::info!("epoch {epoch}: mean NLL {mean:.6}");
        history.push(mean);
        last_good = weights.clone();
        if let Some(path) = &tcfg.checkpoint {
            if let Err(source) = checkpoint::save(&weights, path) {
                return Err(TrainError { source, epoch, last_good: Some(Box::new(last_good)), history });
            }
        }
    }
    Ok(TrainOutcome { weights, history })
}

/// Writes `epoch,mean_nll` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_nll"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([e.to_string(), format!("{l:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}
