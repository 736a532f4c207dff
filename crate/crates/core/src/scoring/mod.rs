//! Anomaly scores, ROC metrics, standardization and ensembling, training-set
//! contamination, and two classical baselines.

mod ar;
mod contaminate;
mod ensemble;
mod gmm;
mod metrics;

pub use ar::LinearAr;
pub use contaminate::{inject_noise_bursts, Contaminated, MEAN_BURST_LEN};
pub use ensemble::{ensemble, ensemble_reports, standardize, standardize_reports, EnsembleMode};
pub use gmm::{gmm_em, Gmm, GmmConfig, GmmFit};
pub use metrics::{auc, evaluate, evaluate_reports, pauc, EvalResult};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FrameSequence, Label};
use crate::error::{invalid, Error, Result};
use crate::network::{window_nll, ModelWeights};
use crate::par::{self, Execution};

/// Per-recording anomaly score; higher means more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub recording_id: String,
    pub machine_id: String,
    pub model_id: String,
    pub score: f64,
    pub label: Label,
    /// Windows averaged into `score`; not part of the CSV table.
    #[serde(skip)]
    pub n_windows: usize,
}

/// Mean next-frame NLL over every window of `recording`.
pub fn anomaly_score(weights: &ModelWeights, recording: &FrameSequence, model_id: &str) -> Result<ScoreReport> {
    let cfg = weights.config();
    let l = cfg.seq_len;
    if recording.dims() != cfg.p {
        return Err(invalid(format!(
            "recording `{}` has {} dims, model expects {}",
            recording.recording_id,
            recording.dims(),
            cfg.p
        )));
    }
    if recording.frames() <= l {
        return Err(invalid(format!(
            "recording `{}` has {} frames, scoring needs at least {}",
            recording.recording_id,
            recording.frames(),
            l + 1
        )));
    }
    let n = recording.frames() - l;
    let mut sum = 0.0;
    for s in 0..n {
        sum += window_nll(weights, recording.rows(s, l), recording.row(s + l))?;
    }
    let score = sum / n as f64;
    if !score.is_finite() {
        return Err(Error::Numerical(format!("score of `{}` is {score}", recording.recording_id)));
    }
    Ok(ScoreReport {
        recording_id: recording.recording_id.clone(),
        machine_id: recording.machine_id.clone(),
        model_id: model_id.to_string(),
        score,
        label: recording.label,
        n_windows: n,
    })
}

/// Scores every recording long enough to hold one window; the ids of the
/// others are returned separately.
pub fn score_recordings(
    weights: &ModelWeights,
    recordings: &[FrameSequence],
    model_id: &str,
    exec: Execution,
) -> Result<(Vec<ScoreReport>, Vec<String>)> {
    let need = weights.config().seq_len + 1;
    let (ok, short): (Vec<&FrameSequence>, Vec<&FrameSequence>) =
        recordings.iter().partition(|r| r.frames() >= need);
    let reports = par::map(&ok, exec, |r| anomaly_score(weights, r, model_id)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok((reports, short.into_iter().map(|r| r.recording_id.clone()).collect()))
}

/// Writes the `recording_id,machine_id,model_id,score,label` table.
pub fn write_scores(path: impl AsRef<Path>, reports: &[ScoreReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreReport>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<ScoreReport>().enumerate() {
        let mut r = row.map_err(|e| Error::Parse { row: i + 1, message: e.to_string() })?;
        if !r.score.is_finite() {
            return Err(Error::Parse { row: i + 1, message: format!("score {} is not finite", r.score) });
        }
        r.n_windows = 1;
        out.push(r);
    }
    Ok(out)
}

pub fn write_eval(path: impl AsRef<Path>, rows: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval(path: impl AsRef<Path>) -> Result<Vec<EvalResult>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().enumerate().map(|(i, r)| r.map_err(|e| Error::Parse { row: i + 1, message: e.to_string() })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::training::init_weights;

    fn model() -> ModelWeights {
        let cfg = ModelConfig { p: 2, hidden: 4, seq_len: 12, components: 2, ..ModelConfig::default() };
        init_weights(&cfg, 7).unwrap()
    }

    fn rec(frames: usize) -> FrameSequence {
        let v = (0..frames * 2).map(|i| (i as f64 * 0.3).cos() * 0.8).collect();
        FrameSequence::new("r", "m", Label::Anomaly, frames, 2, v).unwrap()
    }

    #[test]
    fn single_window_score_is_its_nll() {
        let w = model();
        let r = rec(13);
        let s = anomaly_score(&w, &r, "x").unwrap();
        assert_eq!(s.n_windows, 1);
        assert_eq!(s.score, window_nll(&w, r.rows(0, 12), r.row(12)).unwrap());
        assert_eq!(s.label, Label::Anomaly);
    }

    #[test]
    fn short_recording_rejected_and_reported() {
        let w = model();
        assert!(anomaly_score(&w, &rec(12), "x").is_err());
        let (ok, skipped) = score_recordings(&w, &[rec(12), rec(20)], "x", Execution::Sequential).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(skipped, vec!["r".to_string()]);
    }

    #[test]
    fn duplicated_windows_keep_the_mean() {
        // a periodic recording whose second half repeats the first
        let w = model();
        let period = 15;
        let one: Vec<f64> = (0..(period + 12) * 2).map(|i| ((i % (2 * period)) as f64 * 0.4).sin()).collect();
        let r1 = FrameSequence::new("a", "m", Label::Normal, period + 12, 2, one).unwrap();
        let two: Vec<f64> = (0..(2 * period + 12) * 2).map(|i| ((i % (2 * period)) as f64 * 0.4).sin()).collect();
        let r2 = FrameSequence::new("b", "m", Label::Normal, 2 * period + 12, 2, two).unwrap();
        let a = anomaly_score(&w, &r1, "x").unwrap().score;
        let b = anomaly_score(&w, &r2, "x").unwrap().score;
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn score_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let reports = vec![
            ScoreReport {
                recording_id: "a".into(),
                machine_id: "m".into(),
                model_id: "RSMM".into(),
                score: 0.1 + 0.2,
                label: Label::Normal,
                n_windows: 1,
            },
            ScoreReport {
                recording_id: "b".into(),
                machine_id: "m".into(),
                model_id: "RSMM".into(),
                score: -3.5e-17,
                label: Label::Unknown,
                n_windows: 1,
            },
        ];
        write_scores(&path, &reports).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("recording_id,machine_id,model_id,score,label\n"));
        assert_eq!(read_scores(&path).unwrap(), reports);
    }

    #[test]
    fn unknown_label_in_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "recording_id,machine_id,model_id,score,label\na,m,x,1.0,weird\n").unwrap();
        assert!(matches!(read_scores(&path), Err(Error::Parse { row: 1, .. })));
    }
}
