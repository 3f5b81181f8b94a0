//! Classification metrics: accuracy, macro precision/recall/F1 and
//! one-vs-rest AUC averaged over classes.
//!
//! Conventions: a per-class ratio with a zero denominator counts as zero in
//! the macro averages; a class without both a positive and a negative sample
//! has undefined AUC and is skipped by the average (0.5 if every class is
//! degenerate). Predictions tie-break to the lowest class index.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub n_samples: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub avg_auc: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
}

/// Index of the largest probability, ties to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in probs.iter().enumerate().skip(1) {
        if *v > probs[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve by the rank statistic: average ranks over ties,
/// then U / (n_pos * n_neg). Equals the fraction of (positive, negative)
/// pairs ranked correctly, ties counting half.
pub fn auc_binary(scores: &[f64], is_positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), is_positive.len());
    let n_pos = is_positive.iter().filter(|p| **p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average rank per tie group (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics over `(true label, class probabilities)` pairs.
pub fn evaluate_outcomes(outcomes: &[(usize, Vec<f64>)], classes: usize) -> Result<EvalMetrics> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArg("cannot compute metrics over zero samples".into()));
    }
    for (label, probs) in outcomes {
        if *label >= classes || probs.len() != classes {
            return Err(Error::InvalidArg(format!(
                "outcome with label {label} / {} probabilities does not fit {classes} classes",
                probs.len()
            )));
        }
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (label, probs) in outcomes {
        confusion[*label][argmax(probs)] += 1;
    }
    let n = outcomes.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision_sum += p;
        recall_sum += r;
        f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }

    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    for c in 0..classes {
        let scores: Vec<f64> = outcomes.iter().map(|(_, p)| p[c]).collect();
        let is_pos: Vec<bool> = outcomes.iter().map(|(l, _)| *l == c).collect();
        if let Some(auc) = auc_binary(&scores, &is_pos) {
            auc_sum += auc;
            auc_count += 1;
        }
    }
    Ok(EvalMetrics {
        n_samples: n,
        accuracy: correct as f64 / n as f64,
        precision_macro: precision_sum / classes as f64,
        recall_macro: recall_sum / classes as f64,
        f1_macro: f1_sum / classes as f64,
        avg_auc: if auc_count > 0 { auc_sum / auc_count as f64 } else { 0.5 },
        confusion,
    })
}

/// Aligned text table, one labelled row of metrics per entry.
pub fn format_metrics_table(rows: &[(&str, &EvalMetrics)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(3).max(3);
    let mut out = format!(
        "{:<label_width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "arm", "accuracy", "precision", "recall", "f1", "avg_auc"
    );
    for (label, m) in rows {
        out.push_str(&format!(
            "{:<label_width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}\n",
            label, m.accuracy, m.precision_macro, m.recall_macro, m.f1_macro, m.avg_auc
        ));
    }
    out
}
