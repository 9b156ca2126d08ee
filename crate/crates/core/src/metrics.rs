//! Per-client evaluation metrics over probabilistic predictions.
//!
//! Input: one probability vector per sample (rows sum to 1) plus true
//! labels. Output: accuracy, macro-F1, macro one-vs-rest AUC, and mean
//! log-loss. Conventions for skewed shards — the normal case under heavy
//! label skew — are explicit:
//!
//! * argmax ties resolve to the lowest class id, so accuracy is
//!   deterministic;
//! * macro-F1 averages only over classes *present* in the labels (a class
//!   the client never saw cannot dent its score);
//! * macro AUC averages over classes with at least one positive and one
//!   negative; if no class qualifies (single-class shard) the AUC is
//!   undefined and reported as `None`, never silently as 0 or 1.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Evaluation summary for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when no class has both positives and negatives.
    pub macro_auc: Option<f64>,
    /// Mean negative log-likelihood of the true labels.
    pub loss: f64,
    /// Samples per class in the evaluated labels.
    pub support: Vec<usize>,
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Midranks (1-based, ties averaged) of `values`.
///
/// With integer-valued ranks averaged over runs, every midrank is a
/// multiple of 0.5 and therefore exact in f64 — the Mann–Whitney statistic
/// computed from these equals explicit win/tie pair counting bit-for-bit.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC for `class` via the rank-sum form of Mann–Whitney.
/// `None` when the class has no positives or no negatives.
fn one_vs_rest_auc(scores: &[Vec<f64>], labels: &[usize], class: usize) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == class).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let class_scores: Vec<f64> = scores.iter().map(|row| row[class]).collect();
    let ranks = midranks(&class_scores);
    let mut rank_sum = 0.0;
    for (r, &l) in ranks.iter().zip(labels) {
        if l == class {
            rank_sum += r;
        }
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Evaluate predictions against labels. See the module docs for the
/// conventions; errors on empty input, ragged rows, labels out of range,
/// non-finite scores, or rows that do not sum to 1 within 1e-6.
pub fn evaluate(scores: &[Vec<f64>], labels: &[usize]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput {
            context: "evaluation over zero samples".into(),
        });
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluation labels",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let num_classes = scores[0].len();
    if num_classes == 0 {
        return Err(Error::EmptyInput {
            context: "evaluation with zero classes".into(),
        });
    }
    for (i, row) in scores.iter().enumerate() {
        if row.len() != num_classes {
            return Err(Error::DimensionMismatch {
                context: "prediction row",
                expected: num_classes,
                actual: row.len(),
            });
        }
        let mut sum = 0.0;
        for &p in row {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("prediction for sample {i}"),
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid!("scores", "row {i} sums to {sum}, expected 1"));
        }
        if labels[i] >= num_classes {
            return Err(invalid!(
                "labels",
                "label {} of sample {i} out of range for {num_classes} classes",
                labels[i]
            ));
        }
    }

    let n = labels.len();
    let predictions: Vec<usize> = scores.iter().map(|row| argmax_lowest(row)).collect();

    let mut support = vec![0usize; num_classes];
    for &l in labels {
        support[l] += 1;
    }

    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / n as f64;

    // Macro-F1 over present classes, ascending class order.
    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for c in 0..num_classes {
        if support[c] == 0 {
            continue;
        }
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&pred, &label) in predictions.iter().zip(labels) {
            match (pred == c, label == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        // support > 0 ⇒ tp + fn > 0 ⇒ denominator > 0.
        f1_sum += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        f1_count += 1;
    }
    let macro_f1 = f1_sum / f1_count as f64;

    // Macro AUC over classes with both positives and negatives.
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    for c in 0..num_classes {
        if let Some(auc) = one_vs_rest_auc(scores, labels, c) {
            auc_sum += auc;
            auc_count += 1;
        }
    }
    let macro_auc = (auc_count > 0).then(|| auc_sum / auc_count as f64);

    // Mean negative log-likelihood; probabilities are floored to keep a
    // hard-zero prediction finite rather than poisoning the mean with inf.
    let mut loss = 0.0;
    for (row, &l) in scores.iter().zip(labels) {
        loss += -(row[l].max(1e-300)).ln();
    }
    loss /= n as f64;

    Ok(MetricsReport {
        accuracy,
        macro_f1,
        macro_auc,
        loss,
        support,
    })
}
