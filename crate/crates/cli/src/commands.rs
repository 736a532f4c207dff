use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use rmdn::data::{io, FrameSequence, Scaler};
use rmdn::network::{checkpoint, ModelConfig};
use rmdn::par::Execution;
use rmdn::pipeline::{dataset_hash, Splits, Variant};
use rmdn::scoring::{self, EnsembleMode, ScoreReport};
use rmdn::training::{self, make_windows};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::Failure;

pub const MODEL_FILE: &str = "model.rmdn";
pub const LAST_GOOD_FILE: &str = "last_good.rmdn";
pub const SCALER_FILE: &str = "scaler.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const META_FILE: &str = "meta.json";
pub const MASK_FILE: &str = "mask.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn meta(command: &str, cfg: &ExperimentConfig, extra: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "outputs": extra,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::data(e.into()).context(path.display()))
}

/// Metadata for a single output file sits next to it as `<file>.meta.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::data(e.into()).context(dir.display()))
}

fn load_data(dir: &Path) -> Result<Vec<FrameSequence>, Failure> {
    if !dir.exists() {
        return Err(Failure::usage(format!("data path {} does not exist", dir.display())));
    }
    let data = io::load_dataset(dir).map_err(|e| Failure::data(e).context(dir.display()))?;
    if data.is_empty() {
        return Err(Failure { code: Failure::DATA, message: format!("{}: dataset is empty", dir.display()) });
    }
    Ok(data)
}

fn check_dims(data: &[FrameSequence], model: &ModelConfig) -> Result<(), Failure> {
    match data.iter().find(|s| s.dims() != model.p) {
        Some(s) => Err(Failure::usage(format!(
            "recording `{}` has {} dims but model.p is {}",
            s.recording_id,
            s.dims(),
            model.p
        ))),
        None => Ok(()),
    }
}

fn scale_all(scaler: &Scaler, data: &[FrameSequence]) -> Result<Vec<FrameSequence>, Failure> {
    data.iter().map(|s| scaler.apply(s).map_err(Failure::from)).collect()
}

fn variant_of(model: &ModelConfig) -> Option<Variant> {
    Variant::ALL.into_iter().find(|v| v.flags() == (model.family, model.multires, model.attention))
}

pub fn generate(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = cfg.output(out)?;
    let exp = cfg.experiment();
    let train = exp.raw_train()?;
    let eval = exp.raw_eval()?;
    for (sub, data) in [("train", &train), ("eval", &eval)] {
        io::save_dataset(out.join(sub), data, cfg.format).map_err(|e| Failure::data(e).context(out.join(sub).display()))?;
    }
    let mut all = train.clone();
    all.extend(eval.iter().cloned());
    let hash = dataset_hash(&all)?;
    write_json(
        &out.join(META_FILE),
        &meta("generate", cfg, json!({ "train": train.len(), "eval": eval.len(), "dataset_hash": hash })),
    )?;
    println!("wrote {} training and {} evaluation recordings to {}", train.len(), eval.len(), out.display());
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = cfg.output(out)?;
    let model = cfg.model();
    model.validate()?;
    cfg.train.validate()?;
    let raw = match data.or_else(|| cfg.train_data.clone()) {
        Some(dir) => load_data(&dir)?,
        None => cfg.experiment().raw_train()?,
    };
    check_dims(&raw, &model)?;
    let scaler = Scaler::fit(&raw)?;
    let mut scaled = scale_all(&scaler, &raw)?;
    if let Some(spec) = &cfg.contamination {
        scaled = scoring::inject_noise_bursts(&scaled, spec, cfg.train.seed)?.data;
    }
    let windows = make_windows(&scaled, model.seq_len);
    if windows.is_empty() {
        return Err(Failure {
            code: Failure::DATA,
            message: format!("no recording has more than seq_len = {} frames", model.seq_len),
        });
    }
    let init = training::init_weights_scaled(&model, cfg.train.seed, cfg.train.init_scale)?;
    create_dir(&out)?;
    write_json(&out.join(SCALER_FILE), &scaler)?;
    let save = |w, name: &str| checkpoint::save(w, out.join(name)).map_err(|e| Failure::data(e).context(out.join(name).display()));
    match training::train_from(init, &cfg.train, &windows, Execution::Parallel) {
        Ok(outcome) => {
            save(&outcome.weights, MODEL_FILE)?;
            training::write_loss_csv(out.join(LOSS_FILE), &outcome.history).map_err(Failure::data)?;
            write_json(
                &out.join(META_FILE),
                &meta(
                    "train",
                    cfg,
                    json!({ "windows": windows.len(), "skipped_recordings": windows.skipped, "parameters": outcome.weights.num_params() }),
                ),
            )?;
            match outcome.history.last() {
                Some(l) => println!("trained {} on {} windows; final mean NLL {l:.6}", cfg.variant, windows.len()),
                None => println!("wrote the initial {} weights (0 epochs)", cfg.variant),
            }
            Ok(())
        }
        Err(err) => {
            if let Some(w) = &err.last_good {
                save(w, LAST_GOOD_FILE)?;
                training::write_loss_csv(out.join(LOSS_FILE), &err.history).map_err(Failure::data)?;
            }
            Err(Failure::from(err.source).context(format!("training stopped in epoch {}", err.epoch)))
        }
    }
}

pub fn score(
    cfg: &ExperimentConfig,
    model_dir: &Path,
    data: Option<PathBuf>,
    model_id: Option<String>,
    out: &Path,
) -> Result<(), Failure> {
    let ckpt = model_dir.join(MODEL_FILE);
    if !ckpt.exists() {
        return Err(Failure::usage(format!("{} does not exist", ckpt.display())));
    }
    let weights = checkpoint::load(&ckpt).map_err(|e| Failure::data(e).context(ckpt.display()))?;
    let scaler_path = model_dir.join(SCALER_FILE);
    let scaler: Scaler = fs::read_to_string(&scaler_path)
        .map_err(rmdn::Error::from)
        .and_then(|t| serde_json::from_str(&t).map_err(rmdn::Error::from))
        .map_err(|e| Failure::data(e).context(scaler_path.display()))?;
    let raw = match data.or_else(|| cfg.eval_data.clone()) {
        Some(dir) => load_data(&dir)?,
        None => cfg.experiment().raw_eval()?,
    };
    check_dims(&raw, weights.config())?;
    let scaled = scale_all(&scaler, &raw)?;
    let model_id = model_id
        .or_else(|| variant_of(weights.config()).map(|v| v.to_string()))
        .unwrap_or_else(|| "model".into());
    let (reports, skipped) = scoring::score_recordings(&weights, &scaled, &model_id, Execution::Parallel)?;
    scoring::write_scores(out, &reports).map_err(|e| Failure::data(e).context(out.display()))?;

    let skipped_path = out.with_extension("skipped.csv");
    let required = weights.config().seq_len + 1;
    let mut w = csv::Writer::from_path(&skipped_path).map_err(|e| Failure::data(e.into()))?;
    w.write_record(["recording_id", "frames", "required"]).map_err(|e| Failure::data(e.into()))?;
    for id in &skipped {
        let frames = scaled.iter().find(|s| &s.recording_id == id).map_or(0, FrameSequence::frames);
        w.write_record([id.clone(), frames.to_string(), required.to_string()]).map_err(|e| Failure::data(e.into()))?;
    }
    w.flush().map_err(|e| Failure::data(e.into()))?;
    if !skipped.is_empty() {
        log::warn!("{} recording(s) too short to score; see {}", skipped.len(), skipped_path.display());
    }
    write_json(
        &sidecar(out),
        &meta("score", cfg, json!({ "model": ckpt, "scored": reports.len(), "skipped": skipped.len() })),
    )?;
    println!("scored {} recordings ({} skipped) into {}", reports.len(), skipped.len(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreReport>, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("{} does not exist", path.display())));
    }
    scoring::read_scores(path).map_err(|e| Failure::data(e).context(path.display()))
}

pub fn eval(cfg: &ExperimentConfig, scores: &Path, out: &Path) -> Result<(), Failure> {
    let reports = read_scores(scores)?;
    let rows = scoring::evaluate_reports(&reports, cfg.p).map_err(|e| Failure::from(e).context(scores.display()))?;
    scoring::write_eval(out, &rows).map_err(|e| Failure::data(e).context(out.display()))?;
    write_json(&sidecar(out), &meta("eval", cfg, json!({ "scores": scores, "groups": rows.len() })))?;
    for r in &rows {
        println!("{} {}: AUC {:.4}, pAUC(p={}) {:.4}", r.machine_id, r.model_id, r.auc, r.p, r.pauc);
    }
    Ok(())
}

pub fn ensemble(
    cfg: &ExperimentConfig,
    scores: &[PathBuf],
    train_scores: &[PathBuf],
    raw: bool,
    out: &Path,
) -> Result<(), Failure> {
    let mut tables = scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>, _>>()?;
    if !raw {
        if train_scores.is_empty() {
            log::warn!("no --train-scores given; standardizing each table by its own statistics");
            for t in &mut tables {
                *t = scoring::standardize_reports(t, t)?;
            }
        } else if train_scores.len() != scores.len() {
            return Err(Failure::usage(format!(
                "{} --train-scores for {} --scores",
                train_scores.len(),
                scores.len()
            )));
        } else {
            for (t, p) in tables.iter_mut().zip(train_scores) {
                *t = scoring::standardize_reports(&read_scores(p)?, t)?;
            }
        }
    }
    let model_id = match cfg.ensemble {
        EnsembleMode::Mean => "ensemble-mean",
        EnsembleMode::Max => "ensemble-max",
    };
    let combined = scoring::ensemble_reports(&tables, cfg.ensemble, model_id)?;
    scoring::write_scores(out, &combined).map_err(|e| Failure::data(e).context(out.display()))?;
    write_json(
        &sidecar(out),
        &meta("ensemble", cfg, json!({ "scores": scores, "train_scores": train_scores, "standardized": !raw })),
    )?;
    println!("combined {} tables into {}", tables.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: Variant,
    seed: u64,
    dataset_hash: String,
    auc: f64,
    pauc: f64,
    final_nll: Option<f64>,
}

pub fn ablate(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = cfg.output(out)?;
    let exp = cfg.experiment();
    exp.model.validate()?;
    let splits = match (&cfg.train_data, &cfg.eval_data) {
        (Some(t), Some(e)) => Splits::from_raw(&load_data(t)?, &load_data(e)?)?,
        (None, None) => exp.splits()?,
        _ => return Err(Failure::usage("set both train_data and eval_data, or neither")),
    };
    check_dims(&splits.train, &exp.model)?;
    let seed = cfg.train.seed;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let r = exp.run_on(&splits, v, seed, Execution::Parallel).map_err(|e| Failure::from(e).context(v))?;
        println!("{v:<15} AUC {:.4}  pAUC {:.4}", r.auc, r.pauc);
        rows.push(AblationRow {
            variant: v,
            seed,
            dataset_hash: r.dataset_hash,
            auc: r.auc,
            pauc: r.pauc,
            final_nll: r.history.last().copied(),
        });
    }
    create_dir(&out)?;
    let path = out.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::data(e.into()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| Failure::data(e.into()))?;
    }
    w.flush().map_err(|e| Failure::data(e.into()))?;
    write_json(&out.join(META_FILE), &meta("ablate", cfg, json!({ "dataset_hash": splits.hash, "rows": rows.len() })))?;
    Ok(())
}

pub fn contaminate(cfg: &ExperimentConfig, data: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = cfg.output(out)?;
    let input = load_data(data)?;
    let spec = cfg.contamination.unwrap_or_default();
    let c = scoring::inject_noise_bursts(&input, &spec, cfg.train.seed)?;
    io::save_dataset(&out, &c.data, cfg.format).map_err(|e| Failure::data(e).context(out.display()))?;
    let path = out.join(MASK_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::data(e.into()))?;
    w.write_record(["recording_id", "frame"]).map_err(|e| Failure::data(e.into()))?;
    for (seq, mask) in c.data.iter().zip(&c.mask) {
        for (t, _) in mask.iter().enumerate().filter(|(_, hit)| **hit) {
            w.write_record([seq.recording_id.clone(), t.to_string()]).map_err(|e| Failure::data(e.into()))?;
        }
    }
    w.flush().map_err(|e| Failure::data(e.into()))?;
    write_json(
        &out.join(META_FILE),
        &meta(
            "contaminate",
            cfg,
            json!({ "source": data, "epsilon": spec.epsilon, "sigma2": spec.sigma2, "contaminated_frames": c.contaminated_frames() }),
        ),
    )?;
    println!("contaminated {} frames; wrote {}", c.contaminated_frames(), out.display());
    Ok(())
}
