//! Compact per-client signatures: one prototype per class the client holds.
//!
//! A client's signature is, for every class present in its training shard,
//! the element-wise mean of that class's embeddings plus the class's share
//! of the shard (`count / total`). Signatures are what clients would export
//! to a coordinator instead of raw data: O(classes × dim) floats regardless
//! of shard size, and a lossy summary (means only) by construction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{invalid, Error, Result};

/// One class's slot in a signature: its weight (share of the client's
/// samples) and prototype (mean embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureEntry {
    pub weight: f64,
    pub mu: Vec<f64>,
}

/// Per-client class profile. Entries are keyed by class id and only classes
/// actually present appear; weights over present classes sum to 1 (up to
/// rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSignature {
    pub client_id: usize,
    pub dim: usize,
    pub total_samples: usize,
    pub entries: BTreeMap<usize, SignatureEntry>,
}

impl ClientSignature {
    /// Classes present, ascending.
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn entry(&self, class: usize) -> Option<&SignatureEntry> {
        self.entries.get(&class)
    }
}

/// Build the class-aware signature of a training shard.
///
/// Sums run in sample order, so the result is independent of thread count
/// and identical across runs. Errors on an empty shard — a silent all-zero
/// signature would poison every distance involving this client.
pub fn build_signature(train: &EmbeddingDataset, client_id: usize) -> Result<ClientSignature> {
    if train.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("signature of client {client_id} with empty training shard"),
        });
    }
    let dim = train.dim();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, label) in train.iter() {
        let slot = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
        for (acc, v) in slot.0.iter_mut().zip(row) {
            *acc += v;
        }
        slot.1 += 1;
    }
    let total = train.len();
    let entries = sums
        .into_iter()
        .map(|(class, (mut sum, count))| {
            for v in &mut sum {
                *v /= count as f64;
            }
            (
                class,
                SignatureEntry {
                    weight: count as f64 / total as f64,
                    mu: sum,
                },
            )
        })
        .collect();
    Ok(ClientSignature {
        client_id,
        dim,
        total_samples: total,
        entries,
    })
}

/// Class-blind ablation: a single entry (class 0, weight 1) holding the mean
/// of the *whole* shard. Lets experiments isolate what the per-class
/// structure contributes.
pub fn build_global_mean_signature(
    train: &EmbeddingDataset,
    client_id: usize,
) -> Result<ClientSignature> {
    if train.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("signature of client {client_id} with empty training shard"),
        });
    }
    let dim = train.dim();
    let mut sum = vec![0.0; dim];
    for (row, _) in train.iter() {
        for (acc, v) in sum.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut sum {
        *v /= train.len() as f64;
    }
    let mut entries = BTreeMap::new();
    entries.insert(
        0,
        SignatureEntry {
            weight: 1.0,
            mu: sum,
        },
    );
    Ok(ClientSignature {
        client_id,
        dim,
        total_samples: train.len(),
        entries,
    })
}

// --- JSON interchange -------------------------------------------------------
//
// On disk a signature is a list of {class, weight, mu} records (ascending
// class), which is friendlier to other tooling than a map with stringified
// integer keys.

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    class: usize,
    weight: f64,
    mu: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SignatureRecord {
    client_id: usize,
    dim: usize,
    total_samples: usize,
    entries: Vec<EntryRecord>,
}

fn to_record(sig: &ClientSignature) -> SignatureRecord {
    SignatureRecord {
        client_id: sig.client_id,
        dim: sig.dim,
        total_samples: sig.total_samples,
        entries: sig
            .entries
            .iter()
            .map(|(&class, e)| EntryRecord {
                class,
                weight: e.weight,
                mu: e.mu.clone(),
            })
            .collect(),
    }
}

fn from_record(rec: SignatureRecord) -> Result<ClientSignature> {
    let mut entries = BTreeMap::new();
    for e in rec.entries {
        if e.mu.len() != rec.dim {
            return Err(Error::DimensionMismatch {
                context: "signature prototype",
                expected: rec.dim,
                actual: e.mu.len(),
            });
        }
        if !e.weight.is_finite() || e.weight < 0.0 {
            return Err(invalid!("weight", "class {} has weight {}", e.class, e.weight));
        }
        if e.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("prototype of class {}", e.class),
            });
        }
        if entries
            .insert(
                e.class,
                SignatureEntry {
                    weight: e.weight,
                    mu: e.mu,
                },
            )
            .is_some()
        {
            return Err(invalid!("entries", "duplicate class {}", e.class));
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("signature of client {} has no entries", rec.client_id),
        });
    }
    Ok(ClientSignature {
        client_id: rec.client_id,
        dim: rec.dim,
        total_samples: rec.total_samples,
        entries,
    })
}

/// Write a set of signatures as pretty JSON (stable formatting; re-running
/// the producer yields byte-identical files).
pub fn write_signatures(signatures: &[ClientSignature], path: &Path) -> Result<()> {
    let records: Vec<SignatureRecord> = signatures.iter().map(to_record).collect();
    let json = serde_json::to_string_pretty(&records).expect("signatures serialize");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Read signatures written by [`write_signatures`], validating dimensions,
/// weights, and finiteness.
pub fn read_signatures(path: &Path) -> Result<Vec<ClientSignature>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<SignatureRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    records.into_iter().map(from_record).collect()
}
