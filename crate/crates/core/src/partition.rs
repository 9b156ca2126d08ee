//! Label-skewed partitioning of a sample pool across simulated clients.
//!
//! For every class, client proportions are drawn from a symmetric
//! Dirichlet(α) and converted to integer counts by largest-remainder
//! rounding, so each class's samples are conserved exactly. Small α
//! concentrates a class on few clients (strong label skew); large α
//! approaches a uniform spread. A draw is rejected and redone — fresh
//! proportions for *all* classes — when any client ends up below
//! `min_samples_per_client`; after [`MAX_ATTEMPTS`] rejected draws the
//! partition is reported infeasible rather than silently relaxed.
//!
//! Each client's shard is then split into train/validation per class
//! (stratified), keeping at least one sample of a class in train when the
//! class has only one.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{invalid, Error, Result};
use crate::rng::SeededStream;

/// Upper bound on Dirichlet redraws before giving up.
pub const MAX_ATTEMPTS: usize = 100;

/// Partitioning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Symmetric Dirichlet concentration; smaller means more label skew.
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    /// Reject draws where any client gets fewer total samples than this.
    /// Zero disables the check (empty clients become possible).
    #[serde(default = "default_min_samples")]
    pub min_samples_per_client: usize,
    /// Fraction of each client's shard (per class) that goes to train.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_min_samples() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

impl PartitionSpec {
    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(invalid!("num_clients", "must be at least 1"));
        }
        if !(self.dirichlet_alpha > 0.0) || !self.dirichlet_alpha.is_finite() {
            return Err(invalid!("dirichlet_alpha", "must be finite and positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(invalid!("train_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// One client's data: train/validation datasets plus the pool indices they
/// came from (ascending), so a partition can be audited and replayed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: EmbeddingDataset,
    pub validation: EmbeddingDataset,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

impl ClientShard {
    /// Total samples held by this client.
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embedding dimensionality of the train split (both splits of a shard
    /// built by [`dirichlet_partition`] share it; consumers that accept
    /// hand-built shards re-check the validation split).
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Size of the label space.
    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

/// Symmetric Dirichlet(alpha) over `n` categories via normalized Gamma
/// draws: g_i ~ Gamma(alpha, 1), p_i = g_i / Σ g_j. Returns `None` in the
/// astronomically rare case that every draw underflows to zero.
fn symmetric_dirichlet(alpha: f64, n: usize, stream: &mut SeededStream) -> Option<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(stream)).collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return None;
    }
    for d in &mut draws {
        *d /= sum;
    }
    Some(draws)
}

/// Convert proportions into integer counts summing exactly to `total`:
/// floor the quotas, then hand the remaining units to the largest
/// fractional parts (ties broken toward the lower index).
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut residuals: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        let base = quota.floor() as usize;
        counts.push(base);
        residuals.push((i, quota - base as f64));
        assigned += base;
    }
    let remainder = total - assigned;
    debug_assert!(remainder <= proportions.len());
    residuals.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in residuals.iter().take(remainder) {
        counts[i] += 1;
    }
    counts
}

/// Stratified train/validation split of `indices` (rows of `pool`).
///
/// Per class, in ascending class order: shuffle the class's indices, send
/// `floor((1 - train_fraction) * m)` of them to validation and the rest
/// (`ceil(train_fraction * m)`) to train; a class with a single sample
/// always goes to train. Both returned index lists are sorted ascending.
pub fn stratified_split(
    pool: &EmbeddingDataset,
    indices: &[usize],
    train_fraction: f64,
    stream: &mut SeededStream,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes()];
    for &i in indices {
        by_class[pool.label(i)].push(i);
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        if members.len() == 1 {
            train.push(members[0]);
            continue;
        }
        members.shuffle(stream);
        // floor((1 - f) * m), computed as m - ceil(f * m): same value in exact
        // arithmetic, but avoids the representation error of (1 - f) in f64
        // (naively, floor(0.2 * 10) evaluates to 1).
        let m = members.len();
        let n_val = m - (train_fraction * m as f64).ceil().min(m as f64) as usize;
        validation.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    (train, validation)
}

/// Partition `pool` across `spec.num_clients` clients with Dirichlet label
/// skew, then split each client's shard stratified by class.
///
/// Deterministic in `spec.seed`. With a single client the Dirichlet step is
/// skipped and the whole pool goes to client 0.
pub fn dirichlet_partition(
    pool: &EmbeddingDataset,
    spec: &PartitionSpec,
) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyInput {
            context: "partition of an empty pool".into(),
        });
    }

    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes()];
    for i in 0..pool.len() {
        class_indices[pool.label(i)].push(i);
    }

    let assignment: Vec<Vec<usize>> = if spec.num_clients == 1 {
        vec![(0..pool.len()).collect()]
    } else {
        let mut accepted = None;
        'attempt: for attempt in 0..MAX_ATTEMPTS {
            let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); spec.num_clients];
            for (class, members) in class_indices.iter().enumerate() {
                if members.is_empty() {
                    continue;
                }
                let mut stream =
                    SeededStream::new(spec.seed, "dirichlet", &[attempt as u64, class as u64]);
                let Some(props) =
                    symmetric_dirichlet(spec.dirichlet_alpha, spec.num_clients, &mut stream)
                else {
                    continue 'attempt;
                };
                let counts = largest_remainder(&props, members.len());
                let mut offset = 0usize;
                for (client, &count) in counts.iter().enumerate() {
                    per_client[client].extend_from_slice(&members[offset..offset + count]);
                    offset += count;
                }
            }
            if per_client
                .iter()
                .all(|ix| ix.len() >= spec.min_samples_per_client)
            {
                accepted = Some(per_client);
                break;
            }
        }
        accepted.ok_or(Error::PartitionInfeasible {
            attempts: MAX_ATTEMPTS,
            min_samples: spec.min_samples_per_client,
            pool_size: pool.len(),
        })?
    };

    let mut shards = Vec::with_capacity(spec.num_clients);
    for (client, mut indices) in assignment.into_iter().enumerate() {
        indices.sort_unstable();
        let mut stream = SeededStream::new(spec.seed, "split", &[client as u64]);
        let (train_indices, validation_indices) =
            stratified_split(pool, &indices, spec.train_fraction, &mut stream);
        shards.push(ClientShard {
            client_id: client,
            train: pool.subset(&train_indices)?,
            validation: pool.subset(&validation_indices)?,
            train_indices,
            validation_indices,
        });
    }
    Ok(shards)
}

/// Serializable record of a partition: which pool rows each client holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub pool_size: usize,
    pub clients: Vec<ManifestClient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClient {
    pub client_id: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

impl PartitionManifest {
    pub fn from_shards(pool_size: usize, shards: &[ClientShard]) -> Self {
        PartitionManifest {
            pool_size,
            clients: shards
                .iter()
                .map(|s| ManifestClient {
                    client_id: s.client_id,
                    train_indices: s.train_indices.clone(),
                    validation_indices: s.validation_indices.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild shards by slicing `pool`. Inverse of [`Self::from_shards`]
    /// for the pool the manifest was created from.
    pub fn apply(&self, pool: &EmbeddingDataset) -> Result<Vec<ClientShard>> {
        if pool.len() != self.pool_size {
            return Err(invalid!(
                "pool",
                "manifest was built over {} samples, pool has {}",
                self.pool_size,
                pool.len()
            ));
        }
        self.clients
            .iter()
            .map(|c| {
                Ok(ClientShard {
                    client_id: c.client_id,
                    train: pool.subset(&c.train_indices)?,
                    validation: pool.subset(&c.validation_indices)?,
                    train_indices: c.train_indices.clone(),
                    validation_indices: c.validation_indices.clone(),
                })
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
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
