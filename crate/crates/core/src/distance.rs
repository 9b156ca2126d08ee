//! Class-aware distances between client signatures.
//!
//! Two clients are compared only on the classes they *share*: for each
//! shared class, one minus the (epsilon-regularized) cosine similarity of
//! the two prototypes, combined into a weighted mean using the smaller of
//! the two class weights. Pairs that share classes but only light ones are
//! then inflated by an overlap penalty `min(max(Ω, ε)^(-α), β)`, where Ω is
//! the total shared weight — a pair agreeing on 5% of its data should not
//! look as close as a pair agreeing on 95%. Pairs sharing *no* class get a
//! data-driven "far" placeholder derived from the distribution of the
//! computed distances.
//!
//! Matrix rows follow the order of the input signature slice.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::linalg::{cosine_similarity, percentile};
use crate::signature::ClientSignature;

/// Knobs of the pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct DistanceParams {
    /// Overlap penalty exponent; 0 disables the penalty's slope.
    pub alpha: f64,
    /// Cap on the overlap penalty multiplier.
    pub beta: f64,
    /// Regularizer for cosine denominators, the capped-mean denominator,
    /// and the penalty's overlap floor.
    pub epsilon: f64,
    /// When false, skip the overlap penalty multiplier entirely (ablation);
    /// the no-overlap placeholder still applies.
    pub overlap_scaling: bool,
}

impl Default for DistanceParams {
    fn default() -> Self {
        DistanceParams {
            alpha: 1.0,
            beta: 100.0,
            epsilon: 1e-3,
            overlap_scaling: true,
        }
    }
}

impl DistanceParams {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(invalid!("alpha", "must be finite and non-negative"));
        }
        if !self.beta.is_finite() || !(self.beta > 0.0) {
            return Err(invalid!("beta", "must be finite and positive"));
        }
        if !self.epsilon.is_finite() || !(self.epsilon > 0.0) {
            return Err(invalid!("epsilon", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Symmetric pairwise distance matrix with a zero diagonal, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Zero matrix of side `n` (n >= 1).
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput {
                context: "distance matrix of size 0".into(),
            });
        }
        Ok(DistanceMatrix {
            n,
            values: vec![0.0; n * n],
        })
    }

    /// Build from rows, enforcing the invariants: square, exactly
    /// symmetric, zero diagonal, finite and non-negative entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut m = DistanceMatrix::zeros(n)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "distance matrix row",
                    expected: n,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NonFinite {
                        context: format!("distance entry ({i}, {j}) = {v}"),
                    });
                }
                m.values[i * n + j] = v;
            }
        }
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(invalid!("matrix", "diagonal entry ({i}, {i}) is {}", m.get(i, i)));
            }
            for j in (i + 1)..n {
                if m.get(i, j) != m.get(j, i) {
                    return Err(invalid!(
                        "matrix",
                        "asymmetric at ({i}, {j}): {} vs {}",
                        m.get(i, j),
                        m.get(j, i)
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Set both (i, j) and (j, i). Panics on the diagonal with a non-zero
    /// value in debug builds.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i != j || value == 0.0);
        self.values[i * self.n + j] = value;
        self.values[j * self.n + i] = value;
    }

    /// All off-diagonal entries in row-major order — both triangles, so
    /// every unordered pair contributes twice.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n)
                .filter(move |&j| j != i)
                .map(move |j| self.get(i, j))
        })
    }

    /// Rows as nested vectors (for JSON audits and tests).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.values[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }
}

/// Distance between one pair of signatures, before the no-overlap
/// placeholder is known. `None` means the two clients share no class.
///
/// For shared classes `c` with prototype gaps
/// `gap_c = 1 − cos_eps(μ_a,c, μ_b,c)` and pair weights
/// `m_c = min(w_a,c, w_b,c)`:
///
/// ```text
/// Ω    = Σ m_c
/// base = Σ m_c · gap_c / (Ω + ε)
/// dist = base · min(max(Ω, ε)^(-α), β)      (multiplier 1 if scaling off)
/// ```
pub fn pair_distance(
    a: &ClientSignature,
    b: &ClientSignature,
    params: &DistanceParams,
) -> Option<f64> {
    let mut overlap = 0.0;
    let mut weighted_gap = 0.0;
    let mut shared = false;
    for (class, ea) in &a.entries {
        let Some(eb) = b.entry(*class) else { continue };
        shared = true;
        let gap = 1.0 - cosine_similarity(&ea.mu, &eb.mu, params.epsilon);
        let w = ea.weight.min(eb.weight);
        overlap += w;
        weighted_gap += w * gap;
    }
    if !shared {
        return None;
    }
    let base = weighted_gap / (overlap + params.epsilon);
    let dist = if params.overlap_scaling {
        let multiplier = overlap.max(params.epsilon).powf(-params.alpha).min(params.beta);
        base * multiplier
    } else {
        base
    };
    Some(dist)
}

/// Provenance record for a distance matrix: the no-overlap placeholder and
/// the percentiles it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAudit {
    /// Placeholder distance assigned to pairs that share no class:
    /// `min(2·P95, P99)` of the computed off-diagonal distances, or `2·beta`
    /// when every pair is overlap-free (so there is nothing to take
    /// percentiles of). Reported even when no pair needed it.
    pub d_big: f64,
    /// 95th/99th percentiles of the computed (finite) off-diagonal
    /// distances, both triangles; absent when there are none.
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    /// Number of unordered client pairs that shared no class.
    pub no_overlap_pairs: usize,
    pub params: DistanceParams,
}

impl DistanceAudit {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("audit serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Build the full pairwise distance matrix over `signatures` (at least two,
/// all with the same dimension). Row/column `i` is `signatures[i]`.
///
/// Pairs are computed in parallel (one task per unordered pair) and
/// combined in index order, so the result is identical across thread
/// counts. The no-overlap placeholder is resolved afterwards from the
/// finite distances of the *whole* matrix.
pub fn build_distance_matrix(
    signatures: &[ClientSignature],
    params: &DistanceParams,
) -> Result<(DistanceMatrix, DistanceAudit)> {
    params.validate()?;
    if signatures.len() < 2 {
        return Err(Error::EmptyInput {
            context: format!(
                "distance matrix needs at least 2 signatures, got {}",
                signatures.len()
            ),
        });
    }
    let dim = signatures[0].dim;
    for s in signatures {
        if s.dim != dim {
            return Err(Error::DimensionMismatch {
                context: "signature dimensions",
                expected: dim,
                actual: s.dim,
            });
        }
    }

    let n = signatures.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let computed = exec::map_indexed(pairs.len(), |p| {
        let (i, j) = pairs[p];
        pair_distance(&signatures[i], &signatures[j], params)
    });

    // Percentiles run over the off-diagonal multiset, i.e. each unordered
    // pair's value twice.
    let mut finite = Vec::with_capacity(2 * pairs.len());
    let mut no_overlap_pairs = 0usize;
    for d in &computed {
        match d {
            Some(v) => {
                finite.push(*v);
                finite.push(*v);
            }
            None => no_overlap_pairs += 1,
        }
    }
    let (p95, p99, d_big) = if finite.is_empty() {
        (None, None, 2.0 * params.beta)
    } else {
        let p95 = percentile(&finite, 95.0)?;
        let p99 = percentile(&finite, 99.0)?;
        (Some(p95), Some(p99), (2.0 * p95).min(p99))
    };

    let mut matrix = DistanceMatrix::zeros(n)?;
    for (&(i, j), d) in pairs.iter().zip(&computed) {
        matrix.set(i, j, d.unwrap_or(d_big));
    }
    let audit = DistanceAudit {
        d_big,
        p95,
        p99,
        no_overlap_pairs,
        params: *params,
    };
    Ok((matrix, audit))
}

/// Write a matrix as bare CSV: `n` rows of `n` comma-separated values,
/// shortest-round-trip floats, LF endings. No header.
pub fn write_matrix_csv(matrix: &DistanceMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.n() {
        for j in 0..matrix.n() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", matrix.get(i, j));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a matrix written by [`write_matrix_csv`], re-validating all
/// invariants (square, symmetric, zero diagonal, finite, non-negative).
pub fn read_matrix_csv(path: &Path) -> Result<DistanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    DistanceMatrix::from_rows(rows)
}
