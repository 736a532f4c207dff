use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ScoreReport;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for EnsembleMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            _ => Err(invalid(format!("ensemble mode `{s}` is not `mean` or `max`"))),
        }
    }
}

/// `(x − mean) / std` with the population mean and std of `train`.
pub fn standardize(train: &[f64], eval: &[f64]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(invalid("cannot standardize against an empty training set"));
    }
    let n = train.len() as f64;
    let mean = train.iter().sum::<f64>() / n;
    let var = train.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(invalid("training scores have zero variance"));
    }
    let sd = var.sqrt();
    Ok(eval.iter().map(|x| (x - mean) / sd).collect())
}

/// Standardizes `eval` per machine id using the `train` scores of the same machine.
pub fn standardize_reports(train: &[ScoreReport], eval: &[ScoreReport]) -> Result<Vec<ScoreReport>> {
    let mut by_machine: HashMap<&str, Vec<f64>> = HashMap::new();
    for r in train {
        by_machine.entry(&r.machine_id).or_default().push(r.score);
    }
    let mut grouped: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in eval.iter().enumerate() {
        grouped.entry(&r.machine_id).or_default().push(i);
    }
    let mut out = eval.to_vec();
    for (machine, idx) in grouped {
        let train = by_machine
            .get(machine)
            .ok_or_else(|| invalid(format!("no training scores for machine `{machine}`")))?;
        let raw: Vec<f64> = idx.iter().map(|&i| eval[i].score).collect();
        for (i, z) in idx.into_iter().zip(standardize(train, &raw)?) {
            out[i].score = z;
        }
    }
    Ok(out)
}

/// Elementwise mean or max of equally long score lists.
pub fn ensemble(lists: &[&[f64]], mode: EnsembleMode) -> Result<Vec<f64>> {
    let first = lists.first().ok_or_else(|| invalid("nothing to ensemble"))?;
    if lists.iter().any(|l| l.len() != first.len()) {
        return Err(invalid("score lists differ in length"));
    }
    let k = lists.len() as f64;
    Ok((0..first.len())
        .map(|i| match mode {
            EnsembleMode::Mean => lists.iter().map(|l| l[i]).sum::<f64>() / k,
            EnsembleMode::Max => lists.iter().map(|l| l[i]).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

/// Combines score tables recording by recording, in the order of the first
/// table. Every table must cover exactly the same recording ids.
pub fn ensemble_reports(tables: &[Vec<ScoreReport>], mode: EnsembleMode, model_id: &str) -> Result<Vec<ScoreReport>> {
    let first = tables.first().ok_or_else(|| invalid("nothing to ensemble"))?;
    let mut aligned: Vec<Vec<f64>> = vec![first.iter().map(|r| r.score).collect()];
    for t in &tables[1..] {
        if t.len() != first.len() {
            return Err(invalid(format!("score tables cover {} and {} recordings", first.len(), t.len())));
        }
        let idx: HashMap<&str, f64> = t.iter().map(|r| (r.recording_id.as_str(), r.score)).collect();
        if idx.len() != t.len() {
            return Err(invalid("duplicate recording id in a score table"));
        }
        aligned.push(
            first
                .iter()
                .map(|r| {
                    idx.get(r.recording_id.as_str())
                        .copied()
                        .ok_or_else(|| invalid(format!("recording `{}` missing from a score table", r.recording_id)))
                })
                .collect::<Result<_>>()?,
        );
    }
    let views: Vec<&[f64]> = aligned.iter().map(Vec::as_slice).collect();
    let combined = ensemble(&views, mode)?;
    Ok(first
        .iter()
        .zip(combined)
        .map(|(r, s)| ScoreReport { score: s, model_id: model_id.to_string(), ..r.clone() })
        .collect())
}
