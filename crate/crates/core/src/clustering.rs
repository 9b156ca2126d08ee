//! Agglomerative clustering over a precomputed distance matrix, plus the
//! silhouette score used to judge a clustering's quality.
//!
//! Clusters start as singletons and the closest pair (under the chosen
//! linkage) merges until a stop rule fires: either a fixed cluster count or
//! a distance threshold (stop *before* the first merge whose distance
//! exceeds it). Linkage distances are recomputed from the original matrix
//! at every step — an O(n³) strategy that is trivially auditable and plenty
//! fast for the client counts this crate targets (tens to a few hundred).
//!
//! Determinism: exact distance ties are broken by the smallest member id of
//! the candidate clusters, so the merge sequence is a pure function of the
//! input matrix.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{invalid, Error, Result};

/// How the distance between two clusters is derived from member pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    /// Minimum over member pairs.
    Single,
    /// Maximum over member pairs.
    Complete,
    /// Unweighted mean over member pairs.
    Average,
}

impl Default for Linkage {
    /// Average linkage, the default used throughout the experiments.
    fn default() -> Self {
        Linkage::Average
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        };
        f.write_str(s)
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(invalid!(
                "linkage",
                "unknown linkage {other:?} (expected single, complete, or average)"
            )),
        }
    }
}

/// When to stop merging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop before the first merge whose linkage distance exceeds this.
    Threshold(f64),
    /// Merge down to exactly this many clusters.
    NumClusters(usize),
}

/// One merge event. `a` and `b` are the smallest member ids of the two
/// clusters that merged (`a < b`) — a stable identity that does not depend
/// on internal bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Result of a clustering run. `labels[i]` is the cluster of element `i`;
/// cluster ids are assigned 0.. in order of each cluster's smallest member,
/// so the labeling itself is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    pub merge_log: Vec<Merge>,
}

impl ClusterAssignment {
    /// Member lists per cluster id, each ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// On-disk form of a clustering outcome: the assignment plus how it was
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub linkage: Linkage,
    pub stop: StopRule,
    #[serde(flatten)]
    pub assignment: ClusterAssignment,
}

impl ClusterReport {
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

fn linkage_distance(d: &DistanceMatrix, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    match linkage {
        Linkage::Single => {
            let mut best = f64::INFINITY;
            for &i in a {
                for &j in b {
                    best = best.min(d.get(i, j));
                }
            }
            best
        }
        Linkage::Complete => {
            let mut worst = 0.0f64;
            for &i in a {
                for &j in b {
                    worst = worst.max(d.get(i, j));
                }
            }
            worst
        }
        Linkage::Average => {
            // Fixed iteration order (members are kept sorted) keeps the sum
            // reproducible.
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += d.get(i, j);
                }
            }
            sum / (a.len() * b.len()) as f64
        }
    }
}

/// Agglomerate the elements of `d` under `linkage` until `stop` fires.
///
/// Errors when the stop rule is unsatisfiable (`NumClusters` of 0 or more
/// than n, or a negative/NaN threshold).
pub fn agglomerate(
    d: &DistanceMatrix,
    linkage: Linkage,
    stop: StopRule,
) -> Result<ClusterAssignment> {
    let n = d.n();
    let target = match stop {
        StopRule::NumClusters(k) => {
            if k == 0 || k > n {
                return Err(Error::InvalidStopRule {
                    reason: format!("num_clusters {k} outside 1..={n}"),
                });
            }
            k
        }
        StopRule::Threshold(t) => {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidStopRule {
                    reason: format!("threshold {t} must be finite and non-negative"),
                });
            }
            1
        }
    };

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merge_log = Vec::new();
    while clusters.len() > target {
        // Closest pair; ties broken by (smallest member, other smallest member).
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in (p + 1)..clusters.len() {
                let dist = linkage_distance(d, &clusters[p], &clusters[q], linkage);
                let (lo, hi) = {
                    let mp = clusters[p][0];
                    let mq = clusters[q][0];
                    (mp.min(mq), mp.max(mq))
                };
                let candidate = (dist, lo, hi, p, q);
                best = match best {
                    None => Some(candidate),
                    Some(cur) => {
                        if (dist, lo, hi) < (cur.0, cur.1, cur.2) {
                            Some(candidate)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
        }
        let (dist, lo, hi, p, q) = best.expect("at least two clusters remain");
        if let StopRule::Threshold(t) = stop {
            if dist > t {
                break;
            }
        }
        merge_log.push(Merge {
            a: lo,
            b: hi,
            distance: dist,
        });
        // p < q, so swap_remove(q) (which moves the last slot into q) never
        // disturbs position p.
        let removed = clusters.swap_remove(q);
        let mut merged = clusters[p].clone();
        merged.extend_from_slice(&removed);
        merged.sort_unstable();
        clusters[p] = merged;
    }

    // Canonical labels: clusters ordered by smallest member.
    clusters.sort_by_key(|c| c[0]);
    let mut labels = vec![0usize; n];
    for (id, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = id;
        }
    }
    Ok(ClusterAssignment {
        labels,
        num_clusters: clusters.len(),
        merge_log,
    })
}

/// Mean silhouette over all elements.
///
/// Per element: `a` = mean distance to its own cluster (excluding itself),
/// `b` = smallest mean distance to any other cluster, score
/// `(b − a) / max(a, b)`. Singleton clusters score 0, as does the
/// degenerate `a = b = 0` case. A single-cluster assignment has no "other
/// cluster" to compare against; it returns the sentinel −1.0 (worse than
/// any real score) so that model-selection loops never pick K = 1 over a
/// K ≥ 2 with genuine structure.
pub fn silhouette_score(d: &DistanceMatrix, labels: &[usize]) -> Result<f64> {
    let n = d.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "silhouette labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let num_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_clusters];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let occupied = members.iter().filter(|m| !m.is_empty()).count();
    if occupied <= 1 {
        return Ok(-1.0);
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = &members[labels[i]];
        if own.len() == 1 {
            continue; // singleton scores 0
        }
        let mut a = 0.0;
        for &j in own {
            if j != i {
                a += d.get(i, j);
            }
        }
        a /= (own.len() - 1) as f64;

        let mut b = f64::INFINITY;
        for (c, other) in members.iter().enumerate() {
            if c == labels[i] || other.is_empty() {
                continue;
            }
            let mut mean = 0.0;
            for &j in other {
                mean += d.get(i, j);
            }
            mean /= other.len() as f64;
            b = b.min(mean);
        }

        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
