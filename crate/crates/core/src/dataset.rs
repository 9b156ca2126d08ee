//! Labeled embedding datasets: the in-memory container, a plain-text
//! interchange format, and seeded synthetic generators.
//!
//! Samples are fixed-dimension `f64` vectors (think: frozen encoder outputs)
//! with integer class labels. The container stores features row-major in one
//! flat buffer; all iteration is in insertion order, which downstream code
//! relies on for reproducibility.
//!
//! # Text format
//!
//! Line 1: `<num_samples> <dim> <num_classes>`, then one line per sample:
//! `<label> <v_1> ... <v_dim>`, whitespace-separated, LF line endings.
//! Floats are written in shortest round-trip form, so write → read → write
//! is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededStream;

/// A labeled set of embedding vectors with a fixed dimension and class count.
///
/// Invariants (enforced on construction and push): every row has exactly
/// `dim` finite components and a label `< num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl EmbeddingDataset {
    /// Empty dataset. `dim` and `num_classes` must be at least 1.
    pub fn new(dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid!("dim", "must be at least 1"));
        }
        if num_classes == 0 {
            return Err(invalid!("num_classes", "must be at least 1"));
        }
        Ok(EmbeddingDataset {
            dim,
            num_classes,
            features: Vec::new(),
            labels: Vec::new(),
        })
    }

    /// Append one sample. Rejects wrong-length rows, non-finite components,
    /// and out-of-range labels.
    pub fn push(&mut self, features: &[f64], label: usize) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "sample vector",
                expected: self.dim,
                actual: features.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("sample component {pos}"),
            });
        }
        if label >= self.num_classes {
            return Err(invalid!(
                "label",
                "label {label} out of range for {} classes",
                self.num_classes
            ));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Feature row `i`.
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Iterate samples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Sample count per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingDataset> {
        let mut out = EmbeddingDataset::new(self.dim, self.num_classes)?;
        for &i in indices {
            if i >= self.len() {
                return Err(invalid!("indices", "row {i} out of range ({} rows)", self.len()));
            }
            out.push(self.feature(i), self.label(i))?;
        }
        Ok(out)
    }
}

/// Parameters for the synthetic embedding generators.
///
/// Each of `num_latent_clusters` groups gets its own pool with
/// `samples_per_class_per_cluster` samples of every class, drawn as an
/// isotropic Gaussian around a class prototype. Prototype placement differs
/// between [`generate_synthetic`] and [`generate_conflicting_labels`]; both
/// guarantee distinct prototypes are at least `class_mean_separation` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_latent_clusters: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class_per_cluster: usize,
    pub class_mean_separation: f64,
    pub within_class_stddev: f64,
    /// Master seed for the generator's random streams. Harness runs override
    /// this with a per-run seed.
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_latent_clusters == 0 {
            return Err(invalid!("num_latent_clusters", "must be at least 1"));
        }
        if self.num_classes == 0 {
            return Err(invalid!("num_classes", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(invalid!("dim", "must be at least 1"));
        }
        if self.samples_per_class_per_cluster == 0 {
            return Err(invalid!("samples_per_class_per_cluster", "must be at least 1"));
        }
        if !(self.class_mean_separation > 0.0) || !self.class_mean_separation.is_finite() {
            return Err(invalid!("class_mean_separation", "must be finite and positive"));
        }
        if !(self.within_class_stddev >= 0.0) || !self.within_class_stddev.is_finite() {
            return Err(invalid!("within_class_stddev", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Draw `count` samples around `proto` and append them with `label`.
fn push_gaussian_blob(
    out: &mut EmbeddingDataset,
    proto: &[f64],
    stddev: f64,
    label: usize,
    count: usize,
    stream: &mut SeededStream,
) -> Result<()> {
    let mut row = vec![0.0; proto.len()];
    for _ in 0..count {
        for (r, p) in row.iter_mut().zip(proto) {
            let z: f64 = StandardNormal.sample(stream);
            *r = p + stddev * z;
        }
        out.push(&row, label)?;
    }
    Ok(())
}

/// Generate one pool per latent cluster with fully disjoint class
/// prototypes: cluster `g`, class `c` lives at `s/√2 · e_{g·C+c}`, so every
/// pair of distinct prototypes is exactly `class_mean_separation` apart.
///
/// Requires `dim >= num_latent_clusters * num_classes`. Pool `g` is the
/// ground-truth data distribution of latent cluster `g`. Deterministic in
/// `spec.seed`; each `(cluster, class)` blob has its own random stream, so
/// raising `num_latent_clusters` (with `dim` held fixed) appends pools
/// without touching existing ones. Adding a *class* keeps each blob's draws
/// but relocates the prototypes of every pool past the first, since the
/// prototype axis is `g·C + c`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<EmbeddingDataset>> {
    spec.validate()?;
    let needed = spec.num_latent_clusters * spec.num_classes;
    if spec.dim < needed {
        return Err(invalid!(
            "dim",
            "disjoint prototypes need dim >= clusters * classes = {needed}, got {}",
            spec.dim
        ));
    }
    let scale = spec.class_mean_separation / 2f64.sqrt();
    let mut pools = Vec::with_capacity(spec.num_latent_clusters);
    for g in 0..spec.num_latent_clusters {
        let mut pool = EmbeddingDataset::new(spec.dim, spec.num_classes)?;
        for c in 0..spec.num_classes {
            let mut proto = vec![0.0; spec.dim];
            proto[g * spec.num_classes + c] = scale;
            let mut stream = SeededStream::new(spec.seed, "synthetic", &[g as u64, c as u64]);
            push_gaussian_blob(
                &mut pool,
                &proto,
                spec.within_class_stddev,
                c,
                spec.samples_per_class_per_cluster,
                &mut stream,
            )?;
        }
        pools.push(pool);
    }
    Ok(pools)
}

/// Label-permuted variant of [`generate_synthetic`]: every cluster draws
/// from the *same* `num_classes` locations (`s/√2 · e_c`), but cluster `g`
/// labels the blob at location `(c+g) mod C` as class `c`.
///
/// Any two distinct clusters therefore disagree on the label of every
/// location — a single global model cannot fit them jointly, while each
/// cluster alone is trivially separable. Requires
/// `num_latent_clusters <= num_classes` (beyond that, label mappings would
/// repeat and two "different" clusters would be identical) and
/// `dim >= num_classes`.
pub fn generate_conflicting_labels(spec: &SyntheticSpec) -> Result<Vec<EmbeddingDataset>> {
    spec.validate()?;
    if spec.dim < spec.num_classes {
        return Err(invalid!(
            "dim",
            "shared locations need dim >= num_classes = {}, got {}",
            spec.num_classes,
            spec.dim
        ));
    }
    if spec.num_latent_clusters > spec.num_classes {
        return Err(invalid!(
            "num_latent_clusters",
            "label permutations repeat after num_classes = {} clusters, got {}",
            spec.num_classes,
            spec.num_latent_clusters
        ));
    }
    let scale = spec.class_mean_separation / 2f64.sqrt();
    let mut pools = Vec::with_capacity(spec.num_latent_clusters);
    for g in 0..spec.num_latent_clusters {
        let mut pool = EmbeddingDataset::new(spec.dim, spec.num_classes)?;
        for c in 0..spec.num_classes {
            let mut proto = vec![0.0; spec.dim];
            proto[(c + g) % spec.num_classes] = scale;
            let mut stream =
                SeededStream::new(spec.seed, "synthetic-conflict", &[g as u64, c as u64]);
            push_gaussian_blob(
                &mut pool,
                &proto,
                spec.within_class_stddev,
                c,
                spec.samples_per_class_per_cluster,
                &mut stream,
            )?;
        }
        pools.push(pool);
    }
    Ok(pools)
}

/// Parameters for [`generate_low_overlap`]: per-client datasets where class
/// support barely overlaps across latent clusters.
///
/// Class 0 is a small "common" class every client shares, placed at
/// `common_scale * class_mean_separation` along axis 0 — the same location
/// and label everywhere, so it carries a *consistent* cross-cluster signal.
/// Class `1+g` is cluster `g`'s bulk class: many samples, but placed at one
/// location shared by all clusters (`class_mean_separation` along axis 1),
/// so the bulk classes *conflict* across clusters the way the permuted task
/// does.
///
/// The interesting property: for clients in different clusters the only
/// shared class is the tiny common one, so their class-weighted distance is
/// dominated by a class that genuinely agrees — unless the low shared mass
/// is taken into account, such pairs look deceptively close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowOverlapSpec {
    pub num_latent_clusters: usize,
    pub clients_per_cluster: usize,
    pub dim: usize,
    pub common_samples_per_client: usize,
    pub specific_samples_per_client: usize,
    pub class_mean_separation: f64,
    pub within_class_stddev: f64,
    /// Norm multiplier for the common-class location (larger ⇒ the common
    /// class looks even more identical across clients).
    pub common_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LowOverlapSpec {
    fn validate(&self) -> Result<()> {
        if self.num_latent_clusters < 2 {
            return Err(invalid!("num_latent_clusters", "need at least 2 clusters"));
        }
        if self.clients_per_cluster == 0 {
            return Err(invalid!("clients_per_cluster", "must be at least 1"));
        }
        if self.dim < 2 {
            return Err(invalid!("dim", "need dim >= 2 for the two prototype axes"));
        }
        if self.common_samples_per_client == 0 || self.specific_samples_per_client == 0 {
            return Err(invalid!("samples_per_client", "sample counts must be at least 1"));
        }
        if !(self.class_mean_separation > 0.0) || !self.class_mean_separation.is_finite() {
            return Err(invalid!("class_mean_separation", "must be finite and positive"));
        }
        if !(self.within_class_stddev >= 0.0) || !self.within_class_stddev.is_finite() {
            return Err(invalid!("within_class_stddev", "must be finite and non-negative"));
        }
        if !(self.common_scale > 0.0) || !self.common_scale.is_finite() {
            return Err(invalid!("common_scale", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Generate per-client datasets with low cross-cluster class overlap (see
/// [`LowOverlapSpec`]). Returns one dataset per client plus each client's
/// latent cluster id; clients of a cluster are consecutive. The label space
/// has `1 + num_latent_clusters` classes even though each client only holds
/// two of them.
pub fn generate_low_overlap(spec: &LowOverlapSpec) -> Result<(Vec<EmbeddingDataset>, Vec<usize>)> {
    spec.validate()?;
    let num_classes = 1 + spec.num_latent_clusters;
    let s = spec.class_mean_separation;
    let mut common_proto = vec![0.0; spec.dim];
    common_proto[0] = spec.common_scale * s;
    let mut specific_proto = vec![0.0; spec.dim];
    specific_proto[1] = s;

    let mut datasets = Vec::new();
    let mut latent = Vec::new();
    for g in 0..spec.num_latent_clusters {
        for j in 0..spec.clients_per_cluster {
            let client = (g * spec.clients_per_cluster + j) as u64;
            let mut ds = EmbeddingDataset::new(spec.dim, num_classes)?;
            let mut common_stream = SeededStream::new(spec.seed, "low-overlap", &[client, 0]);
            push_gaussian_blob(
                &mut ds,
                &common_proto,
                spec.within_class_stddev,
                0,
                spec.common_samples_per_client,
                &mut common_stream,
            )?;
            let mut specific_stream = SeededStream::new(spec.seed, "low-overlap", &[client, 1]);
            push_gaussian_blob(
                &mut ds,
                &specific_proto,
                spec.within_class_stddev,
                1 + g,
                spec.specific_samples_per_client,
                &mut specific_stream,
            )?;
            datasets.push(ds);
            latent.push(g);
        }
    }
    Ok((datasets, latent))
}

/// Write a dataset in the text format described in the module docs.
pub fn write_embeddings(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        dataset.len(),
        dataset.dim(),
        dataset.num_classes()
    );
    for (row, label) in dataset.iter() {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a dataset written by [`write_embeddings`] (or by hand). Strict:
/// the row count must match the header, every row must have exactly
/// `dim + 1` tokens, and non-finite values are rejected.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file; expected `<n> <dim> <classes>` header".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 3 {
        return Err(parse_err(
            1,
            format!("header needs 3 fields `<n> <dim> <classes>`, got {}", head.len()),
        ));
    }
    let n: usize = head[0]
        .parse()
        .map_err(|_| parse_err(1, format!("bad sample count {:?}", head[0])))?;
    let dim: usize = head[1]
        .parse()
        .map_err(|_| parse_err(1, format!("bad dimension {:?}", head[1])))?;
    let num_classes: usize = head[2]
        .parse()
        .map_err(|_| parse_err(1, format!("bad class count {:?}", head[2])))?;

    let mut dataset = EmbeddingDataset::new(dim, num_classes)
        .map_err(|e| parse_err(1, e.to_string()))?;
    let mut row = vec![0.0; dim];
    let mut read = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if read == n {
            return Err(parse_err(lineno, format!("more than {n} data rows")));
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: usize = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label {label_tok:?}")))?;
        let mut count = 0usize;
        for (k, tok) in tokens.enumerate() {
            if k >= dim {
                count = k + 1;
                break;
            }
            row[k] = tok
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("bad float {tok:?}")))?;
            count = k + 1;
        }
        if count != dim {
            return Err(parse_err(
                lineno,
                format!("expected {dim} components, got {count}"),
            ));
        }
        dataset
            .push(&row, label)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        read += 1;
    }
    if read != n {
        return Err(parse_err(
            0,
            format!("header declares {n} rows, file has {read}"),
        ));
    }
    Ok(dataset)
}

/// Convenience for tests and the CLI: deterministic balanced assignment of
/// `num_clients` clients to `num_clusters` latent clusters in contiguous
/// blocks (the first `num_clients % num_clusters` clusters get one extra).
pub fn contiguous_assignment(num_clients: usize, num_clusters: usize) -> Vec<usize> {
    assert!(num_clusters > 0);
    let base = num_clients / num_clusters;
    let extra = num_clients % num_clusters;
    let mut out = Vec::with_capacity(num_clients);
    for g in 0..num_clusters {
        let size = base + usize::from(g < extra);
        out.extend(std::iter::repeat(g).take(size));
    }
    out
}
