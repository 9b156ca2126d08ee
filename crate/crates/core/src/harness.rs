//! End-to-end experiment orchestration.
//!
//! An [`ExperimentConfig`] describes one experiment: where the data comes
//! from, how it is partitioned across clients, how clients are clustered,
//! and how training runs. [`run_experiment`] executes the whole pipeline —
//! generate/ingest → partition → signatures → distances → cluster → train —
//! once per seed, writes every intermediate artifact to disk, and folds the
//! per-seed results into an [`ExperimentSummary`].
//!
//! Two invariants shape the code here:
//!
//! * **Full determinism.** The summary is a pure function of the config,
//!   seeds included. Seeds run as independent parallel jobs whose streams
//!   are keyed, never shared, and the final aggregation is a fixed-order
//!   reduction — so re-running a config reproduces every output file byte
//!   for byte.
//! * **One-shot clustering.** Clustering happens exactly once per seed,
//!   before the first training round; nothing re-clusters mid-training.
//!
//! Errors are tagged with the pipeline stage and seed they occurred under
//! (`stage distances (seed 3): …`), which is also how the CLI reports them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autok::{select_k, AutoKConfig, AutoKReport};
use crate::clustering::{agglomerate, ClusterAssignment, ClusterReport, Linkage, StopRule};
use crate::dataset::{
    self, contiguous_assignment, EmbeddingDataset, LowOverlapSpec, SyntheticSpec,
};
use crate::distance::{build_distance_matrix, write_matrix_csv, DistanceParams};
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::flcore::{run_federation, RoundRecord, Strategy, TrainConfig};
use crate::linalg;
use crate::metrics::MetricsReport;
use crate::partition::{
    dirichlet_partition, stratified_split, ClientShard, PartitionManifest, PartitionSpec,
};
use crate::rng::SeededStream;
use crate::signature::{build_global_mean_signature, build_signature, write_signatures};

/// Where the per-client data comes from. Exactly one source per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated pools, one per latent cluster, each Dirichlet-partitioned
    /// among that cluster's block of clients (the partition spec is
    /// required). With `conflicting_labels` the pools share class locations
    /// but permute their labels, so no single model fits two clusters.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        conflicting_labels: bool,
    },
    /// Generated per-client datasets whose class support barely overlaps
    /// across latent clusters; clients are split but not re-partitioned.
    LowOverlap { spec: LowOverlapSpec },
    /// One embedding file per client (format of `dataset::read_embeddings`).
    ClientFiles { paths: Vec<PathBuf> },
    /// A single embedding pool, Dirichlet-partitioned among
    /// `partition.num_clients` clients (the partition spec is required).
    PoolFile { path: PathBuf },
}

/// How many clusters to form, and how to decide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClusteringMode {
    /// No clustering at all: every client trains in one global federation.
    /// Equivalent to `fixed_k` with k = 1, but skips the signature and
    /// distance stages entirely.
    Global,
    /// Agglomerate to exactly `k` clusters.
    FixedK { k: usize },
    /// Agglomerate until the next merge would exceed `theta`.
    Threshold { theta: f64 },
    /// Pick K by the dispersion-windowed silhouette sweep.
    AutoK {
        #[serde(default)]
        params: AutoKConfig,
    },
}

impl Default for ClusteringMode {
    fn default() -> Self {
        ClusteringMode::AutoK {
            params: AutoKConfig::default(),
        }
    }
}

/// What a client's signature summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignatureMode {
    /// Per-class mean embeddings with class weights (the full method).
    #[default]
    ClassAware,
    /// One whole-shard mean per client (class-blind ablation).
    GlobalMean,
}

impl std::fmt::Display for SignatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignatureMode::ClassAware => "class_aware",
            SignatureMode::GlobalMean => "global_mean",
        })
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Everything one experiment needs. Loaded from JSON by
/// [`ExperimentConfig::read`]; every omitted field takes the defaults the
/// experiments in this crate were run with, and the full config is echoed
/// into the summary for audit.
///
/// The `seed` fields inside the source spec, partition spec, and train
/// config are overridden per run by each entry of `seeds`; only the values
/// listed here matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in comparison tables; defaults to the config's position.
    #[serde(default)]
    pub label: Option<String>,
    pub source: DataSource,
    /// Required for `synthetic` and `pool_file` sources. For per-client
    /// sources (`low_overlap`, `client_files`) it may be omitted; if given,
    /// its `num_clients` must match the source's client count and only
    /// `train_fraction` is consulted.
    #[serde(default)]
    pub partition: Option<PartitionSpec>,
    #[serde(default)]
    pub distance: DistanceParams,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub clustering: ClusteringMode,
    #[serde(default)]
    pub signature: SignatureMode,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub train: TrainConfig,
    /// One full pipeline run per seed; results are averaged across them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Where artifacts go (`seed-<s>/…` per seed plus `summary.json`).
    /// `None` keeps the run entirely in memory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Load a config from a JSON file.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Structural validation: cross-field constraints that do not require
    /// touching the data. Numeric domain checks on the stage parameters run
    /// again inside each stage.
    pub fn validate(&self) -> Result<()> {
        match &self.source {
            DataSource::Synthetic { spec, .. } => {
                let partition = self.require_partition()?;
                if partition.num_clients < spec.num_latent_clusters {
                    return Err(invalid!(
                        "partition.num_clients",
                        "need at least one client per latent cluster: {} clients < {} clusters",
                        partition.num_clients,
                        spec.num_latent_clusters
                    ));
                }
            }
            DataSource::PoolFile { .. } => {
                self.require_partition()?;
            }
            DataSource::LowOverlap { spec } => {
                let derived = spec.num_latent_clusters * spec.clients_per_cluster;
                self.check_per_client_partition(derived)?;
            }
            DataSource::ClientFiles { paths } => {
                if paths.is_empty() {
                    return Err(invalid!("source.paths", "need at least one client file"));
                }
                self.check_per_client_partition(paths.len())?;
            }
        }
        match &self.clustering {
            ClusteringMode::Global => {}
            ClusteringMode::FixedK { k } => {
                if *k == 0 {
                    return Err(invalid!("clustering.k", "must be at least 1"));
                }
            }
            ClusteringMode::Threshold { theta } => {
                if !theta.is_finite() || *theta < 0.0 {
                    return Err(invalid!(
                        "clustering.theta",
                        "must be finite and non-negative, got {theta}"
                    ));
                }
            }
            ClusteringMode::AutoK { params } => params.validate()?,
        }
        self.distance.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(invalid!("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!(
                "seeds",
                "seeds must be distinct (duplicates would fake the std down)"
            ));
        }
        Ok(())
    }

    fn require_partition(&self) -> Result<&PartitionSpec> {
        self.partition.as_ref().ok_or_else(|| {
            invalid!(
                "partition",
                "this data source is partitioned across clients; a partition spec is required"
            )
        })
    }

    /// For per-client sources a partition spec is optional scaffolding.
    fn check_per_client_partition(&self, derived_clients: usize) -> Result<()> {
        if let Some(p) = &self.partition {
            if p.num_clients != derived_clients {
                return Err(invalid!(
                    "partition.num_clients",
                    "source defines {derived_clients} clients, partition says {}",
                    p.num_clients
                ));
            }
        }
        Ok(())
    }

    /// Train fraction for per-client sources (partition spec optional).
    fn train_fraction(&self) -> f64 {
        self.partition.as_ref().map_or(0.8, |p| p.train_fraction)
    }
}

/// A mean with its cross-seed population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    MeanStd {
        mean: linalg::mean(values).expect("non-empty"),
        std: linalg::population_std(values).expect("non-empty"),
    }
}

/// Cross-seed mean of one round's unweighted client means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundAggregate {
    pub round: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub loss: f64,
}

/// The round with the highest cross-seed mean accuracy (earliest on ties),
/// with each metric's cross-seed spread at that round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRound {
    pub round: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub macro_auc: Option<MeanStd>,
    pub loss: MeanStd,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub num_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub assignment: ClusterReport,
    /// Present only in auto-K mode.
    pub autok: Option<AutoKReport>,
    /// Adjusted Rand index against the generator's latent clusters, when
    /// the data source has ground truth (synthetic sources only).
    pub ground_truth_ari: Option<f64>,
    pub rounds: Vec<RoundRecord>,
}

/// Aggregated result of a full experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    /// How the headline numbers average across clients. Weighted means are
    /// additionally available in every per-seed round record.
    pub headline_weighting: String,
    /// True when `seeds` has a single entry, in which case every std in
    /// this summary is 0 by construction rather than a measured spread.
    pub std_over_single_seed: bool,
    pub best: BestRound,
    pub per_round: Vec<RoundAggregate>,
    pub seeds: Vec<SeedOutcome>,
    /// The exact config that produced this summary.
    pub config: ExperimentConfig,
}

impl ExperimentSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
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

/// Adjusted Rand index between two labelings of the same elements, via the
/// pair-counting contingency formulation. 1 for identical partitions (up to
/// label permutation), ~0 for independent ones, negative for worse than
/// chance. The degenerate case where both partitions are trivial (all
/// singletons or all one cluster, where max = expected) is defined as 1:
/// the partitions are then identical.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "rand index labelings",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput {
            context: "rand index of empty labelings".into(),
        });
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let sum_cells: f64 = cells.values().map(|&n| comb2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| comb2(n)).sum();
    let total = comb2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Run the full pipeline for every seed and aggregate.
///
/// When `config.out_dir` is set, each seed writes its artifacts under
/// `<out>/seed-<seed>/` and the summary lands at `<out>/summary.json`;
/// without it the run stays in memory. Identical configs produce byte-
/// identical artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let out = config.out_dir.as_deref();
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let outcomes: Vec<SeedOutcome> = exec::try_map_indexed(config.seeds.len(), |i| {
        let seed = config.seeds[i];
        let seed_dir = out.map(|d| d.join(format!("seed-{seed}")));
        run_seed(config, seed, seed_dir.as_deref())
    })?;

    let num_rounds = config.train.rounds;
    let per_round: Vec<RoundAggregate> = (0..num_rounds)
        .map(|r| {
            let means: Vec<_> = outcomes.iter().map(|o| &o.rounds[r].mean).collect();
            let accuracy = means.iter().map(|m| m.accuracy).sum::<f64>() / means.len() as f64;
            let macro_f1 = means.iter().map(|m| m.macro_f1).sum::<f64>() / means.len() as f64;
            let loss = means.iter().map(|m| m.loss).sum::<f64>() / means.len() as f64;
            let aucs: Vec<f64> = means.iter().filter_map(|m| m.macro_auc).collect();
            RoundAggregate {
                round: r + 1,
                accuracy,
                macro_f1,
                macro_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
                loss,
            }
        })
        .collect();

    // Best round: highest cross-seed mean accuracy, earliest on ties.
    let best_idx = per_round
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.accuracy
                .partial_cmp(&b.accuracy)
                .expect("finite accuracy")
                .then(ib.cmp(ia))
        })
        .expect("at least one round")
        .0;
    let at_best: Vec<_> = outcomes.iter().map(|o| &o.rounds[best_idx].mean).collect();
    let aucs: Vec<f64> = at_best.iter().filter_map(|m| m.macro_auc).collect();
    let best = BestRound {
        round: best_idx + 1,
        accuracy: mean_std(&at_best.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
        macro_f1: mean_std(&at_best.iter().map(|m| m.macro_f1).collect::<Vec<_>>()),
        macro_auc: (!aucs.is_empty()).then(|| mean_std(&aucs)),
        loss: mean_std(&at_best.iter().map(|m| m.loss).collect::<Vec<_>>()),
    };

    let summary = ExperimentSummary {
        headline_weighting: "unweighted mean over clients".into(),
        std_over_single_seed: config.seeds.len() < 2,
        best,
        per_round,
        seeds: outcomes,
        config: config.clone(),
    };
    if let Some(dir) = out {
        summary.write(&dir.join("summary.json"))?;
    }
    Ok(summary)
}

/// Run one seed's pipeline; artifacts go under `out` when given.
pub fn run_seed(config: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<SeedOutcome> {
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let (shards, ground_truth) = prepare_clients(config, seed, out)?;
    let clustered = cluster_clients(config, &shards, seed, out)?;

    let mut train = config.train;
    train.seed = seed;
    let outcome = run_federation(&shards, &clustered.report.assignment.labels, &train, config.strategy)
        .map_err(|e| e.in_stage("train", seed))?;

    let cluster_sizes: Vec<usize> = clustered
        .report
        .assignment
        .members()
        .iter()
        .map(Vec::len)
        .collect();
    let ground_truth_ari = match &ground_truth {
        Some(truth) => Some(
            adjusted_rand_index(&clustered.report.assignment.labels, truth)
                .map_err(|e| e.in_stage("report", seed))?,
        ),
        None => None,
    };
    if let Some(dir) = out {
        write_round_log(&outcome.rounds, &cluster_sizes, &dir.join("rounds.csv"))
            .map_err(|e| e.in_stage("report", seed))?;
    }
    Ok(SeedOutcome {
        seed,
        num_clusters: clustered.report.assignment.num_clusters,
        cluster_sizes,
        assignment: clustered.report,
        autok: clustered.autok,
        ground_truth_ari,
        rounds: outcome.rounds,
    })
}

/// The materialized data of one seed, before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceData {
    /// One pool per latent cluster (synthetic sources); pool `g` is shared
    /// by block `g` of the contiguous client assignment.
    Pools(Vec<EmbeddingDataset>),
    /// One dataset per client, id = position (low-overlap, client files).
    PerClient(Vec<EmbeddingDataset>),
    /// A single pool to Dirichlet-partition across all clients.
    Pool(EmbeddingDataset),
}

/// The generate stage: materialize the data source for one seed.
///
/// Synthetic sources are generated with their seed overridden to `seed`;
/// file sources are read and validated. With `out` given, every dataset is
/// written under `<out>/data/` in the embedding text format (file sources
/// are canonicalized copies), making the seed directory self-contained.
pub fn generate_data(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<SourceData> {
    let stage = |e: Error| e.in_stage("generate", seed);
    let data = match &config.source {
        DataSource::Synthetic {
            spec,
            conflicting_labels,
        } => {
            let mut spec = spec.clone();
            spec.seed = seed;
            let pools = if *conflicting_labels {
                dataset::generate_conflicting_labels(&spec)
            } else {
                dataset::generate_synthetic(&spec)
            }
            .map_err(stage)?;
            SourceData::Pools(pools)
        }
        DataSource::LowOverlap { spec } => {
            let mut spec = spec.clone();
            spec.seed = seed;
            let (datasets, _latent) = dataset::generate_low_overlap(&spec).map_err(stage)?;
            SourceData::PerClient(datasets)
        }
        DataSource::ClientFiles { paths } => SourceData::PerClient(
            paths
                .iter()
                .map(|p| dataset::read_embeddings(p))
                .collect::<Result<_>>()
                .map_err(stage)?,
        ),
        DataSource::PoolFile { path } => {
            SourceData::Pool(dataset::read_embeddings(path).map_err(stage)?)
        }
    };
    if let Some(dir) = out {
        let data_dir = dir.join("data");
        ensure_dir(&data_dir).map_err(stage)?;
        let write = |name: String, ds: &EmbeddingDataset| {
            dataset::write_embeddings(ds, &data_dir.join(name)).map_err(stage)
        };
        match &data {
            SourceData::Pools(pools) => {
                for (g, pool) in pools.iter().enumerate() {
                    write(format!("pool-{g}.txt"), pool)?;
                }
            }
            SourceData::PerClient(datasets) => {
                for (i, ds) in datasets.iter().enumerate() {
                    write(format!("client-{i}.txt"), ds)?;
                }
            }
            SourceData::Pool(pool) => write("pool.txt".into(), pool)?,
        }
    }
    Ok(data)
}

/// Re-read what [`generate_data`] emitted under `<dir>/data/`.
pub fn load_data(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SourceData> {
    let stage = |e: Error| e.in_stage("generate", seed);
    let data_dir = dir.join("data");
    let read = |name: String| dataset::read_embeddings(&data_dir.join(name)).map_err(stage);
    match &config.source {
        DataSource::Synthetic { spec, .. } => Ok(SourceData::Pools(
            (0..spec.num_latent_clusters)
                .map(|g| read(format!("pool-{g}.txt")))
                .collect::<Result<_>>()?,
        )),
        DataSource::LowOverlap { spec } => Ok(SourceData::PerClient(
            (0..spec.num_latent_clusters * spec.clients_per_cluster)
                .map(|i| read(format!("client-{i}.txt")))
                .collect::<Result<_>>()?,
        )),
        DataSource::ClientFiles { paths } => Ok(SourceData::PerClient(
            (0..paths.len())
                .map(|i| read(format!("client-{i}.txt")))
                .collect::<Result<_>>()?,
        )),
        DataSource::PoolFile { .. } => Ok(SourceData::Pool(read("pool.txt".into())?)),
    }
}

/// The partition stage: turn materialized data into client shards.
///
/// Returns the shards (ascending client id) and, for synthetic sources, the
/// clients' latent cluster ids. With `out` given, the partition manifests
/// are written alongside the data.
pub fn partition_data(
    config: &ExperimentConfig,
    seed: u64,
    data: &SourceData,
    out: Option<&Path>,
) -> Result<(Vec<ClientShard>, Option<Vec<usize>>)> {
    let stage = |e: Error| e.in_stage("partition", seed);
    match (&config.source, data) {
        (DataSource::Synthetic { spec, .. }, SourceData::Pools(pools)) => {
            let partition = config.require_partition().map_err(stage)?;
            // Block g of the contiguous assignment shares pool g.
            let truth = contiguous_assignment(partition.num_clients, spec.num_latent_clusters);
            let mut shards = Vec::with_capacity(partition.num_clients);
            let mut offset = 0usize;
            for (g, pool) in pools.iter().enumerate() {
                let block = truth.iter().filter(|&&t| t == g).count();
                let sub = PartitionSpec {
                    num_clients: block,
                    seed: SeededStream::derive(seed, "pool-partition", &[g as u64]),
                    ..partition.clone()
                };
                let mut local = dirichlet_partition(pool, &sub).map_err(stage)?;
                for shard in &mut local {
                    shard.client_id += offset;
                }
                if let Some(dir) = out {
                    PartitionManifest::from_shards(pool.len(), &local)
                        .write(&dir.join(format!("partition-{g}.json")))
                        .map_err(stage)?;
                }
                offset += block;
                shards.extend(local);
            }
            Ok((shards, Some(truth)))
        }
        (DataSource::LowOverlap { spec }, SourceData::PerClient(datasets)) => {
            let truth = contiguous_assignment(
                spec.num_latent_clusters * spec.clients_per_cluster,
                spec.num_latent_clusters,
            );
            let shards = split_per_client(datasets, config.train_fraction(), seed)
                .map_err(stage)?;
            write_splits_manifest(&shards, out).map_err(stage)?;
            Ok((shards, Some(truth)))
        }
        (DataSource::ClientFiles { .. }, SourceData::PerClient(datasets)) => {
            let shards = split_per_client(datasets, config.train_fraction(), seed)
                .map_err(stage)?;
            write_splits_manifest(&shards, out).map_err(stage)?;
            Ok((shards, None))
        }
        (DataSource::PoolFile { .. }, SourceData::Pool(pool)) => {
            let partition = config.require_partition().map_err(stage)?;
            let spec = PartitionSpec {
                seed,
                ..partition.clone()
            };
            let shards = dirichlet_partition(pool, &spec).map_err(stage)?;
            if let Some(dir) = out {
                PartitionManifest::from_shards(pool.len(), &shards)
                    .write(&dir.join("partition.json"))
                    .map_err(stage)?;
            }
            Ok((shards, None))
        }
        _ => Err(invalid!(
            "source",
            "materialized data does not match the configured data source"
        )
        .in_stage("partition", seed)),
    }
}

/// Rebuild client shards from the artifacts emitted under `dir` by the
/// generate and partition stages, without rerunning either.
pub fn reload_clients(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<ClientShard>> {
    let stage = |e: Error| e.in_stage("partition", seed);
    let data = load_data(config, seed, dir)?;
    match data {
        SourceData::Pools(pools) => {
            let mut shards = Vec::new();
            for (g, pool) in pools.iter().enumerate() {
                let manifest = PartitionManifest::read(&dir.join(format!("partition-{g}.json")))
                    .map_err(stage)?;
                shards.extend(manifest.apply(pool).map_err(stage)?);
            }
            Ok(shards)
        }
        SourceData::PerClient(datasets) => {
            let manifest = PartitionManifest::read(&dir.join("splits.json")).map_err(stage)?;
            if manifest.clients.len() != datasets.len() {
                return Err(invalid!(
                    "splits.json",
                    "manifest covers {} clients, data directory has {}",
                    manifest.clients.len(),
                    datasets.len()
                )
                .in_stage("partition", seed));
            }
            manifest
                .clients
                .iter()
                .zip(&datasets)
                .map(|(c, ds)| {
                    Ok(ClientShard {
                        client_id: c.client_id,
                        train: ds.subset(&c.train_indices)?,
                        validation: ds.subset(&c.validation_indices)?,
                        train_indices: c.train_indices.clone(),
                        validation_indices: c.validation_indices.clone(),
                    })
                })
                .collect::<Result<_>>()
                .map_err(stage)
        }
        SourceData::Pool(pool) => {
            let manifest =
                PartitionManifest::read(&dir.join("partition.json")).map_err(stage)?;
            manifest.apply(&pool).map_err(stage)
        }
    }
}

/// generate + partition in one step (the in-memory pipeline path).
fn prepare_clients(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<(Vec<ClientShard>, Option<Vec<usize>>)> {
    let data = generate_data(config, seed, out)?;
    partition_data(config, seed, &data, out)
}

/// Stratified-split per-client datasets into shards (client id = position).
fn split_per_client(
    datasets: &[EmbeddingDataset],
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(invalid!(
            "train_fraction",
            "must lie in (0, 1], got {train_fraction}"
        ));
    }
    datasets
        .iter()
        .enumerate()
        .map(|(client_id, ds)| {
            let indices: Vec<usize> = (0..ds.len()).collect();
            let mut stream = SeededStream::new(seed, "split", &[client_id as u64]);
            let (train_indices, validation_indices) =
                stratified_split(&ds, &indices, train_fraction, &mut stream);
            Ok(ClientShard {
                client_id,
                train: ds.subset(&train_indices)?,
                validation: ds.subset(&validation_indices)?,
                train_indices,
                validation_indices,
            })
        })
        .collect()
}

/// Record per-client split indices for sources without a shared pool. The
/// indices are local to each client's own dataset; `pool_size` is the total
/// sample count across clients.
fn write_splits_manifest(shards: &[ClientShard], out: Option<&Path>) -> Result<()> {
    let Some(dir) = out else { return Ok(()) };
    let total: usize = shards.iter().map(ClientShard::len).sum();
    PartitionManifest::from_shards(total, shards).write(&dir.join("splits.json"))
}

/// Outcome of the clustering stages for one seed.
pub struct ClusteredClients {
    pub report: ClusterReport,
    /// Present only in auto-K mode.
    pub autok: Option<AutoKReport>,
}

/// The signatures + distances + (auto-K) + cluster stages for one seed,
/// with artifacts. Global mode and the degenerate single-client case skip
/// straight to the trivial one-cluster assignment.
pub fn cluster_clients(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    seed: u64,
    out: Option<&Path>,
) -> Result<ClusteredClients> {
    let n = shards.len();
    let trivial = |stop: StopRule| ClusterReport {
        linkage: config.linkage,
        stop,
        assignment: ClusterAssignment {
            labels: vec![0; n],
            num_clusters: 1,
            merge_log: Vec::new(),
        },
    };

    if let ClusteringMode::Global = config.clustering {
        let report = trivial(StopRule::NumClusters(1));
        if let Some(dir) = out {
            report
                .write(&dir.join("assignment.json"))
                .map_err(|e| e.in_stage("cluster", seed))?;
        }
        return Ok(ClusteredClients {
            report,
            autok: None,
        });
    }
    if n == 1 {
        // A single client cannot be paired; every mode degenerates to one
        // singleton cluster (fixed K > 1 is unsatisfiable).
        if let ClusteringMode::FixedK { k } = config.clustering {
            if k != 1 {
                return Err(Error::InvalidStopRule {
                    reason: format!("num_clusters {k} outside 1..=1"),
                }
                .in_stage("cluster", seed));
            }
        }
        let report = trivial(StopRule::NumClusters(1));
        if let Some(dir) = out {
            report
                .write(&dir.join("assignment.json"))
                .map_err(|e| e.in_stage("cluster", seed))?;
        }
        return Ok(ClusteredClients {
            report,
            autok: None,
        });
    }

    let signatures = exec::try_map_indexed(n, |i| match config.signature {
        SignatureMode::ClassAware => build_signature(&shards[i].train, shards[i].client_id),
        SignatureMode::GlobalMean => {
            build_global_mean_signature(&shards[i].train, shards[i].client_id)
        }
    })
    .map_err(|e| e.in_stage("signatures", seed))?;
    if let Some(dir) = out {
        write_signatures(&signatures, &dir.join("signatures.json"))
            .map_err(|e| e.in_stage("signatures", seed))?;
    }

    let (matrix, audit) = build_distance_matrix(&signatures, &config.distance)
        .map_err(|e| e.in_stage("distances", seed))?;
    if let Some(dir) = out {
        write_matrix_csv(&matrix, &dir.join("distance_matrix.csv"))
            .map_err(|e| e.in_stage("distances", seed))?;
        audit
            .write(&dir.join("distance_audit.json"))
            .map_err(|e| e.in_stage("distances", seed))?;
    }

    let (stop, autok) = match &config.clustering {
        ClusteringMode::Global => unreachable!("handled above"),
        ClusteringMode::FixedK { k } => (StopRule::NumClusters(*k), None),
        ClusteringMode::Threshold { theta } => (StopRule::Threshold(*theta), None),
        ClusteringMode::AutoK { params } => {
            let report = select_k(&matrix, config.linkage, params)
                .map_err(|e| e.in_stage("autok", seed))?;
            if let Some(dir) = out {
                report
                    .write(&dir.join("autok.json"))
                    .map_err(|e| e.in_stage("autok", seed))?;
            }
            (StopRule::NumClusters(report.selected_k), Some(report))
        }
    };
    let assignment =
        agglomerate(&matrix, config.linkage, stop).map_err(|e| e.in_stage("cluster", seed))?;
    let report = ClusterReport {
        linkage: config.linkage,
        stop,
        assignment,
    };
    if let Some(dir) = out {
        report
            .write(&dir.join("assignment.json"))
            .map_err(|e| e.in_stage("cluster", seed))?;
    }
    Ok(ClusteredClients {
        report,
        autok,
    })
}

/// Append-free CSV of per-round aggregates, one row per round: client means
/// and cross-client (population) stds per metric, plus the weighted means.
/// AUC cells are empty on rounds where no client had a defined AUC.
pub fn write_round_log(
    rounds: &[RoundRecord],
    cluster_sizes: &[usize],
    path: &Path,
) -> Result<()> {
    let sizes = cluster_sizes
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";");
    let mut text = String::from(
        "round,clusters,cluster_sizes,clients,\
         accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,\
         macro_auc_mean,macro_auc_std,loss_mean,loss_std,\
         weighted_accuracy,weighted_macro_f1,weighted_macro_auc,weighted_loss\n",
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rounds {
        let column = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
            r.clients.iter().map(|c| f(&c.metrics)).collect()
        };
        let acc = column(&|m| m.accuracy);
        let f1 = column(&|m| m.macro_f1);
        let loss = column(&|m| m.loss);
        let auc: Vec<f64> = r.clients.iter().filter_map(|c| c.metrics.macro_auc).collect();
        let std_of = |v: &[f64]| linalg::population_std(v).expect("non-empty");
        let (auc_mean, auc_std) = if auc.is_empty() {
            (None, None)
        } else {
            (
                Some(auc.iter().sum::<f64>() / auc.len() as f64),
                Some(std_of(&auc)),
            )
        };
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            cluster_sizes.len(),
            sizes,
            r.clients.len(),
            r.mean.accuracy,
            std_of(&acc),
            r.mean.macro_f1,
            std_of(&f1),
            fmt_opt(auc_mean),
            fmt_opt(auc_std),
            r.mean.loss,
            std_of(&loss),
            r.weighted_mean.accuracy,
            r.weighted_mean.macro_f1,
            fmt_opt(r.weighted_mean.macro_auc),
            r.weighted_mean.loss,
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One experiment's row in a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub strategy: Strategy,
    pub signature: SignatureMode,
    pub clustering: String,
    pub best_round: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub macro_auc: Option<MeanStd>,
    pub loss: MeanStd,
}

/// Best-round metrics of several experiments over the same data and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Machine-readable form. Full float precision; AUC cells empty when
    /// undefined.
    pub fn to_csv(&self) -> String {
        let mut text = String::from(
            "label,strategy,signature,clustering,best_round,\
             accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,\
             macro_auc_mean,macro_auc_std,loss_mean,loss_std\n",
        );
        for r in &self.rows {
            let auc_mean = r.macro_auc.map(|a| a.mean.to_string()).unwrap_or_default();
            let auc_std = r.macro_auc.map(|a| a.std.to_string()).unwrap_or_default();
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.strategy,
                r.signature,
                r.clustering,
                r.best_round,
                r.accuracy.mean,
                r.accuracy.std,
                r.macro_f1.mean,
                r.macro_f1.std,
                auc_mean,
                auc_std,
                r.loss.mean,
                r.loss.std,
            );
        }
        text
    }

    /// Human-readable form: aligned columns, metrics as `mean ± std`.
    pub fn to_text(&self) -> String {
        let fmt = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        let fmt_opt = |m: Option<MeanStd>| m.map(fmt).unwrap_or_else(|| "n/a".into());
        let header = [
            "label".to_string(),
            "strategy".into(),
            "signature".into(),
            "clustering".into(),
            "round".into(),
            "accuracy".into(),
            "macro_f1".into(),
            "macro_auc".into(),
            "loss".into(),
        ];
        let mut grid = vec![header.to_vec()];
        for r in &self.rows {
            grid.push(vec![
                r.label.clone(),
                r.strategy.to_string(),
                r.signature.to_string(),
                r.clustering.clone(),
                r.best_round.to_string(),
                fmt(r.accuracy),
                fmt(r.macro_f1),
                fmt_opt(r.macro_auc),
                fmt(r.loss),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut text = String::new();
        for (i, row) in grid.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            text.push_str(line.join("  ").trim_end());
            text.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                text.push_str(&rule.join("  "));
                text.push('\n');
            }
        }
        text
    }
}

/// Run several experiments over the same data source and seed list and
/// tabulate their best-round metrics, one row per config in input order.
pub fn compare_strategies(configs: &[ExperimentConfig]) -> Result<ComparisonTable> {
    if configs.len() < 2 {
        return Err(invalid!(
            "compare",
            "need at least two configs, got {}",
            configs.len()
        ));
    }
    let first = &configs[0];
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.seeds != first.seeds {
            return Err(invalid!(
                "compare",
                "config {i} has a different seed list; comparisons must share seeds"
            ));
        }
        if c.source != first.source {
            return Err(invalid!(
                "compare",
                "config {i} has a different data source; comparisons must share data"
            ));
        }
    }
    let dirs: Vec<&PathBuf> = configs.iter().filter_map(|c| c.out_dir.as_ref()).collect();
    for (i, a) in dirs.iter().enumerate() {
        if dirs[i + 1..].contains(a) {
            return Err(invalid!(
                "compare",
                "two configs share out_dir {a:?}; artifacts would clobber each other"
            ));
        }
    }

    let mut rows = Vec::with_capacity(configs.len());
    for (i, config) in configs.iter().enumerate() {
        let summary = run_experiment(config)?;
        rows.push(ComparisonRow {
            label: config
                .label
                .clone()
                .unwrap_or_else(|| format!("config-{i}")),
            strategy: config.strategy,
            signature: config.signature,
            clustering: describe_clustering(&config.clustering),
            best_round: summary.best.round,
            accuracy: summary.best.accuracy,
            macro_f1: summary.best.macro_f1,
            macro_auc: summary.best.macro_auc,
            loss: summary.best.loss,
        });
    }
    Ok(ComparisonTable { rows })
}

fn describe_clustering(mode: &ClusteringMode) -> String {
    match mode {
        ClusteringMode::Global => "global".into(),
        ClusteringMode::FixedK { k } => format!("fixed_k({k})"),
        ClusteringMode::Threshold { theta } => format!("threshold({theta})"),
        ClusteringMode::AutoK { params } => format!("auto_k(k_max={})", params.k_max),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
