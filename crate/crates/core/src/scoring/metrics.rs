use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoreReport;
use crate::data::Label;
use crate::error::{invalid, Result};

/// AUC and pAUC of one machine/model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub machine_id: String,
    pub model_id: String,
    pub auc: f64,
    pub pauc: f64,
    pub p: f64,
    pub n_neg: usize,
    pub n_pos: usize,
}

fn check(neg: &[f64], pos: &[f64]) -> Result<()> {
    if neg.is_empty() || pos.is_empty() {
        return Err(invalid(format!("need at least one score per class, got {} normal and {} anomalous", neg.len(), pos.len())));
    }
    if neg.iter().chain(pos).any(|s| s.is_nan()) {
        return Err(invalid("scores must not be NaN"));
    }
    Ok(())
}

/// Pairs `(i, j)` with `pos[j] > neg[i]`; `neg_sorted` ascending.
fn wins(neg_sorted: &[f64], pos: &[f64]) -> u64 {
    pos.iter().map(|&s| neg_sorted.partition_point(|&n| n < s) as u64).sum()
}

/// Fraction of (normal, anomalous) pairs ranked strictly correctly. Ties count 0.
pub fn auc(neg: &[f64], pos: &[f64]) -> Result<f64> {
    check(neg, pos)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(wins(&sorted, pos) as f64 / (neg.len() as f64 * pos.len() as f64))
}

/// Number of highest normal scores kept for a given `p`.
///
/// The product is nudged by a relative 1e-12 before flooring so that, e.g.,
/// `0.29 · 100` counts 29 rather than 28.
fn truncation(p: f64, n_neg: usize) -> usize {
    let x = p * n_neg as f64;
    (x + x.abs() * 1e-12).floor() as usize
}

/// AUC against only the `⌊p·N₋⌋` highest-scoring normal recordings.
pub fn pauc(neg: &[f64], pos: &[f64], p: f64) -> Result<f64> {
    check(neg, pos)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("p = {p} outside (0, 1]")));
    }
    let k = truncation(p, neg.len()).min(neg.len());
    if k == 0 {
        return Err(invalid(format!("p = {p} keeps no normal scores out of {}", neg.len())));
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &mut sorted[..k];
    top.reverse();
    Ok(wins(top, pos) as f64 / (k as f64 * pos.len() as f64))
}

pub fn evaluate(neg: &[f64], pos: &[f64], p: f64) -> Result<(f64, f64)> {
    Ok((auc(neg, pos)?, pauc(neg, pos, p)?))
}

/// One row per `(machine_id, model_id)`, in sorted key order. Recordings
/// labelled `unknown` are rejected.
pub fn evaluate_reports(reports: &[ScoreReport], p: f64) -> Result<Vec<EvalResult>> {
    let mut groups: BTreeMap<(&str, &str), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in reports {
        let g = groups.entry((&r.machine_id, &r.model_id)).or_default();
        match r.label {
            Label::Normal => g.0.push(r.score),
            Label::Anomaly => g.1.push(r.score),
            Label::Unknown => {
                return Err(invalid(format!("recording `{}` has no ground-truth label", r.recording_id)));
            }
        }
    }
    groups
        .into_iter()
        .map(|((machine, model), (neg, pos))| {
            let (auc, pauc) = evaluate(&neg, &pos, p)?;
            Ok(EvalResult {
                machine_id: machine.to_string(),
                model_id: model.to_string(),
                auc,
                pauc,
                p,
                n_neg: neg.len(),
                n_pos: pos.len(),
            })
        })
        .collect()
}
