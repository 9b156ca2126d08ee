//! Automatic cluster-count selection via a dispersion-gated silhouette sweep.
//!
//! Scanning every K from 1 to n wastes work and, worse, lets spurious
//! silhouette bumps at implausible K win. Instead, the spread of the
//! distance matrix decides how much structure to even look for: the
//! coefficient of variation (population std / mean) of the off-diagonal
//! entries picks one of three candidate windows — nearly uniform distances
//! (CV below `cv_low`) can justify at most a couple of clusters, while a
//! heavy-tailed matrix (CV at or above `cv_high`) is allowed a wide sweep.
//! Within the window, each K is scored by the silhouette of the
//! agglomerative assignment at that K, and the *strict local maxima* of the
//! score sequence compete; the highest-scoring one wins (ties go to the
//! smaller K). If no strict local maximum exists (plateaus, monotone
//! sequences), the selection falls back to a plain argmax over
//! `{1} ∪ {2..min(k_max, n−1)}`.
//!
//! K = 1 carries the silhouette sentinel −1, so it is only ever selected
//! when nothing with 2+ clusters scores above it (or when it is the only
//! candidate, e.g. n = 2 with a flat matrix).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{agglomerate, silhouette_score, Linkage, StopRule};
use crate::distance::DistanceMatrix;
use crate::error::{invalid, Error, Result};
use crate::exec;

/// Which of several competing local maxima wins.
///
/// "Dominant local maximum" has two defensible readings; both are kept so
/// the choice is an explicit configuration, not an accident. The default
/// reads dominance as height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaximumRule {
    /// The local maximum with the highest silhouette (ties → smaller K).
    #[default]
    HighestScore,
    /// The local maximum at the largest K, regardless of relative height.
    LargestK,
}

/// Selection parameters. The defaults implement the windows described in
/// the module docs; all of them are overridable for ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct AutoKConfig {
    /// Hard ceiling on candidate K (further capped by n − 1 at run time).
    pub k_max: usize,
    /// CV below this ⇒ low-dispersion window.
    pub cv_low: f64,
    /// CV at or above this ⇒ high-dispersion window.
    pub cv_high: f64,
    pub window_low: Vec<usize>,
    pub window_mid: Vec<usize>,
    pub window_high: Vec<usize>,
    /// How to break a contest between several local maxima.
    pub maximum_rule: MaximumRule,
}

impl Default for AutoKConfig {
    fn default() -> Self {
        AutoKConfig {
            k_max: 10,
            cv_low: 0.35,
            cv_high: 0.70,
            window_low: vec![1, 2, 3],
            window_mid: (2..=6).collect(),
            window_high: (3..=10).collect(),
            maximum_rule: MaximumRule::HighestScore,
        }
    }
}

impl AutoKConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(invalid!("k_max", "must be at least 1"));
        }
        if !self.cv_low.is_finite() || !self.cv_high.is_finite() {
            return Err(invalid!("cv thresholds", "must be finite"));
        }
        if !(0.0 <= self.cv_low && self.cv_low < self.cv_high) {
            return Err(invalid!(
                "cv thresholds",
                "need 0 <= cv_low < cv_high, got {} and {}",
                self.cv_low,
                self.cv_high
            ));
        }
        for (name, w) in [
            ("window_low", &self.window_low),
            ("window_mid", &self.window_mid),
            ("window_high", &self.window_high),
        ] {
            if w.is_empty() {
                return Err(invalid!("window", "{name} is empty"));
            }
            if w[0] == 0 {
                return Err(invalid!("window", "{name} contains K = 0"));
            }
            if !w.windows(2).all(|p| p[0] < p[1]) {
                return Err(invalid!("window", "{name} must be strictly ascending"));
            }
        }
        Ok(())
    }

    /// The raw (unclipped) window for a CV value: strictly below `cv_low`
    /// takes the low window, anything at or above `cv_high` the high one,
    /// the rest the middle. Boundary values therefore fall upward.
    pub fn window_for_cv(&self, cv: f64) -> &[usize] {
        if cv < self.cv_low {
            &self.window_low
        } else if cv < self.cv_high {
            &self.window_mid
        } else {
            &self.window_high
        }
    }
}

/// Coefficient of variation (population std / mean) of the off-diagonal
/// entries. An all-zero matrix returns 0 by convention; a 1×1 matrix has no
/// off-diagonal entries and errors.
pub fn coefficient_of_variation(d: &DistanceMatrix) -> Result<f64> {
    if d.n() < 2 {
        return Err(Error::EmptyInput {
            context: "coefficient of variation needs at least 2 elements".into(),
        });
    }
    let count = (d.n() * (d.n() - 1)) as f64;
    let mut sum = 0.0;
    for v in d.off_diagonal() {
        sum += v;
    }
    let mean = sum / count;
    if mean == 0.0 {
        return Ok(0.0); // entries are non-negative, so all are zero
    }
    let mut sq = 0.0;
    for v in d.off_diagonal() {
        sq += (v - mean) * (v - mean);
    }
    Ok((sq / count).sqrt() / mean)
}

/// Everything the selection looked at, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoKReport {
    pub cv: f64,
    /// The clipped candidate window actually swept.
    pub window: Vec<usize>,
    /// Silhouette per evaluated K (window plus any fallback candidates).
    pub scores: BTreeMap<usize, f64>,
    /// Strict local maxima of the score sequence over the window, ascending.
    pub local_maxima: Vec<usize>,
    pub selected_k: usize,
    /// True when no strict local maximum existed and the argmax fallback
    /// decided.
    pub fallback_used: bool,
}

impl AutoKReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

fn argmax_smallest_k(scores: &BTreeMap<usize, f64>, candidates: &[usize]) -> usize {
    let mut best_k = candidates[0];
    let mut best_s = scores[&best_k];
    for &k in &candidates[1..] {
        let s = scores[&k];
        if s > best_s {
            best_k = k;
            best_s = s;
        }
    }
    best_k
}

/// Pick the number of clusters for `d` under `linkage` (see module docs).
///
/// The silhouette sweep runs one agglomeration per candidate K, in
/// parallel; results are keyed by K, so the report is identical across
/// thread counts.
pub fn select_k(d: &DistanceMatrix, linkage: Linkage, config: &AutoKConfig) -> Result<AutoKReport> {
    config.validate()?;
    let cv = coefficient_of_variation(d)?;
    let cap = config.k_max.min(d.n() - 1);
    let window: Vec<usize> = config
        .window_for_cv(cv)
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k <= cap)
        .collect();

    let score_of = |k: usize| -> Result<f64> {
        let assignment = agglomerate(d, linkage, StopRule::NumClusters(k))?;
        silhouette_score(d, &assignment.labels)
    };

    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    let window_scores = exec::try_map_indexed(window.len(), |i| score_of(window[i]))?;
    for (&k, &s) in window.iter().zip(&window_scores) {
        scores.insert(k, s);
    }

    let mut local_maxima = Vec::new();
    for (i, &k) in window.iter().enumerate() {
        let s = scores[&k];
        let left_ok = i == 0 || s > scores[&window[i - 1]];
        let right_ok = i + 1 == window.len() || s > scores[&window[i + 1]];
        if left_ok && right_ok {
            local_maxima.push(k);
        }
    }

    let (selected_k, fallback_used) = if !local_maxima.is_empty() {
        let pick = match config.maximum_rule {
            MaximumRule::HighestScore => argmax_smallest_k(&scores, &local_maxima),
            MaximumRule::LargestK => *local_maxima.last().expect("non-empty"),
        };
        (pick, false)
    } else {
        // Plateau/monotone window (or an empty one, e.g. a mid window at
        // n = 2): plain argmax over {1} ∪ {2..cap}.
        let candidates: Vec<usize> = std::iter::once(1).chain(2..=cap.max(1)).collect();
        let missing: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|k| !scores.contains_key(k))
            .collect();
        let missing_scores = exec::try_map_indexed(missing.len(), |i| score_of(missing[i]))?;
        for (&k, &s) in missing.iter().zip(&missing_scores) {
            scores.insert(k, s);
        }
        (argmax_smallest_k(&scores, &candidates), true)
    };

    Ok(AutoKReport {
        cv,
        window,
        scores,
        local_maxima,
        selected_k,
        fallback_used,
    })
}
