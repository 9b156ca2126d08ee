//! Small dense-vector kernels shared across the crate.
//!
//! Nothing here allocates beyond its output, and every reduction runs in a
//! fixed left-to-right order so results are reproducible bit-for-bit. These
//! are deliberately plain loops over `&[f64]`: the vectors involved
//! (embeddings, prototypes, model parameters) are small enough that a BLAS
//! dependency would buy nothing.

use crate::error::{Error, Result};

/// Dot product. Panics in debug builds if lengths differ.
#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

/// Euclidean norm.
#[inline]
pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Squared Euclidean distance between two vectors.
#[inline]
pub fn distance_sq(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        let d = a - b;
        acc += d * d;
    }
    acc
}

/// `y += a * x`, element-wise.
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Cosine similarity with an epsilon-regularized denominator:
/// `u·v / (‖u‖‖v‖ + eps)`.
///
/// The epsilon keeps the value defined for zero vectors (similarity 0)
/// instead of producing NaN; for well-scaled inputs it perturbs the result
/// by O(eps / ‖u‖‖v‖).
#[inline]
pub fn cosine_similarity(u: &[f64], v: &[f64], eps: f64) -> f64 {
    dot(u, v) / (norm(u) * norm(v) + eps)
}

/// Percentile by linear interpolation between closest ranks (the
/// "inclusive" convention: rank `p/100 * (n-1)` over the sorted values, so
/// p = 0 and p = 100 return the min and max exactly).
///
/// `values` need not be sorted. Errors on an empty slice; panics if `p` is
/// outside `[0, 100]` or any value is NaN, both of which are caller bugs.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "percentile over empty list".into(),
        });
    }
    assert!((0.0..=100.0).contains(&p), "percentile p out of range: {p}");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in percentile input"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Cross-entropy loss and gradient w.r.t. the logits for one sample, in one
/// pass using the log-sum-exp trick:
///
/// `loss = logsumexp(logits) - logits[label]`, `grad = softmax(logits) - onehot(label)`.
pub fn softmax_xent_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean of a slice. Errors on empty input.
pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "mean over empty list".into(),
        });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation (divide by n, not n-1).
pub fn population_std(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Ok(var.sqrt())
}
