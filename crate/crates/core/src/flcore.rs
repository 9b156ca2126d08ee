//! Federated optimization: local SGD, FedAvg/FedProx aggregation, and the
//! per-cluster training loop.
//!
//! Training runs independently inside each cluster of the provided
//! assignment: every cluster keeps its own model, samples its own clients
//! per round, and aggregates only within itself. Global training is the
//! K = 1 special case and purely local training is K = N, so one loop
//! covers the whole spectrum.
//!
//! Reproducibility relies on keyed streams rather than shared state:
//! initialization is keyed by a cluster's smallest member id, client
//! sampling by `(round, smallest member id)`, and each client's SGD by
//! `(round, client id)`. Because none of these keys depend on how many
//! *other* clusters exist, deleting one cluster's clients leaves every
//! other cluster's trajectory bit-identical, and results never depend on
//! thread scheduling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::metrics::{self, MetricsReport};
use crate::model::{ModelParams, ModelShape};
use crate::partition::ClientShard;
use crate::rng::SeededStream;

/// Aggregation strategy: plain weighted averaging or averaging with a
/// proximal term pulling local models toward the round's broadcast model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedProx,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::FedAvg
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        match s {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedprox" => Ok(Strategy::FedProx),
            other => Err(invalid!(
                "strategy",
                "expected fedavg or fedprox, got {other:?}"
            )),
        }
    }
}

/// Which classifier head to train; dimensions are filled in from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxLinear,
    OneHidden { hidden: usize },
}

impl ModelKind {
    /// Concrete shape for a dataset with `dim` features and `num_classes`.
    pub fn shape(&self, dim: usize, num_classes: usize) -> ModelShape {
        match *self {
            ModelKind::SoftmaxLinear => ModelShape::SoftmaxLinear { dim, num_classes },
            ModelKind::OneHidden { hidden } => ModelShape::OneHidden {
                dim,
                hidden,
                num_classes,
            },
        }
    }
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::SoftmaxLinear
    }
}

/// Hyperparameters for one federated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Communication rounds R.
    pub rounds: usize,
    /// Local epochs E per selected client per round.
    pub local_epochs: usize,
    /// Mini-batch size B (the last batch of an epoch may be short).
    pub batch_size: usize,
    /// SGD step size η.
    pub learning_rate: f64,
    /// Fraction s of each cluster's clients sampled per round; 1 = full
    /// participation. Each round trains ⌈s·|cluster|⌉ clients drawn without
    /// replacement.
    pub participation_fraction: f64,
    /// FedProx proximal coefficient μ; 0 disables the term (and makes
    /// FedProx identical to FedAvg, bit for bit). Ignored under FedAvg.
    pub prox_mu: f64,
    /// Classifier head to train.
    pub model: ModelKind,
    /// Master seed for initialization, client sampling, and batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 100,
            local_epochs: 1,
            batch_size: 32,
            // Tuned on the synthetic tasks: large enough that a linear probe
            // separates well-spread Gaussian classes within ~30 rounds, small
            // enough that no divergence was observed across seeds.
            learning_rate: 0.2,
            participation_fraction: 1.0,
            prox_mu: 0.01,
            model: ModelKind::SoftmaxLinear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reject out-of-domain hyperparameters.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid!("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid!("local_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!(
                "learning_rate",
                "must be positive and finite, got {}",
                self.learning_rate
            ));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(invalid!(
                "participation_fraction",
                "must lie in (0, 1], got {}",
                self.participation_fraction
            ));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(invalid!(
                "prox_mu",
                "must be non-negative and finite, got {}",
                self.prox_mu
            ));
        }
        if let ModelKind::OneHidden { hidden } = self.model {
            if hidden == 0 {
                return Err(invalid!("model", "hidden width must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Run `local_epochs` of mini-batch SGD on one client's training split.
///
/// Batches are formed by shuffling the sample indices with `stream` and then
/// slicing contiguously; the last batch of an epoch may be short. When
/// `anchor` is given and `config.prox_mu > 0`, the loss gains the proximal
/// term `(μ/2)·‖θ − θ_anchor‖²` (gradient `μ·(θ − θ_anchor)`). With μ = 0
/// the anchor is ignored entirely, so FedProx at μ = 0 follows FedAvg's
/// trajectory exactly, and η = 0 returns the input parameters unchanged.
///
/// Errors with [`Error::NonFinite`] (naming the epoch and batch) if any
/// parameter leaves the finite range — the caller attributes it to a round
/// and client.
pub fn local_sgd(
    params: &ModelParams,
    train: &EmbeddingDataset,
    config: &TrainConfig,
    anchor: Option<&ModelParams>,
    stream: &mut SeededStream,
) -> Result<ModelParams> {
    use rand::seq::SliceRandom;

    let mut params = params.clone();
    let prox = anchor.filter(|_| config.prox_mu > 0.0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.local_epochs {
        order.shuffle(stream);
        for (batch_idx, batch) in order.chunks(config.batch_size.max(1)).enumerate() {
            let (_, mut grad) = params.batch_loss_grad(train, batch);
            if let Some(anchor) = prox {
                for ((g, &v), &a) in grad.iter_mut().zip(&params.values).zip(&anchor.values) {
                    *g += config.prox_mu * (v - a);
                }
            }
            for (v, g) in params.values.iter_mut().zip(&grad) {
                *v -= config.learning_rate * g;
            }
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("parameters after epoch {epoch}, batch {batch_idx}"),
                });
            }
        }
    }
    Ok(params)
}

/// Component-wise weighted mean of client models, in slice order.
///
/// Callers pass models in ascending client-id order so the reduction is a
/// fixed-order sum; weights are the clients' training-sample counts.
pub fn aggregate(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::EmptyInput {
            context: "aggregation over zero clients".into(),
        });
    }
    if models.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "aggregation weights",
            expected: models.len(),
            actual: weights.len(),
        });
    }
    let shape = models[0].shape;
    for m in &models[1..] {
        if m.shape != shape {
            return Err(invalid!(
                "aggregation",
                "mixed model shapes: {:?} vs {:?}",
                shape,
                m.shape
            ));
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && weights.iter().all(|w| *w >= 0.0 && w.is_finite())) {
        return Err(invalid!(
            "aggregation",
            "weights must be non-negative, finite, and not all zero: {weights:?}"
        ));
    }
    let mut values = vec![0.0; shape.num_params()];
    for (m, &w) in models.iter().zip(weights) {
        crate::linalg::axpy(&mut values, w, &m.values);
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(ModelParams { shape, values })
}

/// One client's validation metrics for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client_id: usize,
    /// Cluster whose model produced these predictions.
    pub cluster: usize,
    pub metrics: MetricsReport,
}

/// Cross-client summary of one round's metrics.
///
/// `macro_auc` averages only the clients where AUC is defined and is `None`
/// when it is defined for none of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsMean {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub loss: f64,
}

/// Everything recorded about one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    /// Client ids that trained this round, ascending.
    pub participants: Vec<usize>,
    /// Every client with a non-empty validation split, ascending by id,
    /// each evaluated against its own cluster's freshly aggregated model.
    pub clients: Vec<ClientEval>,
    /// Unweighted mean over evaluated clients (the headline number).
    pub mean: MetricsMean,
    /// Mean weighted by each client's validation-sample count.
    pub weighted_mean: MetricsMean,
}

/// Result of a full federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationOutcome {
    pub rounds: Vec<RoundRecord>,
    /// Final model of each cluster, indexed by cluster label.
    pub cluster_models: Vec<ModelParams>,
}

/// Per-cluster bookkeeping fixed at setup.
struct ClusterPlan {
    /// Indices into `shards`, ascending by client id.
    members: Vec<usize>,
    /// Smallest member client id — the cluster's stable stream key.
    key: u64,
}

/// Train every cluster of `labels` independently for `config.rounds` rounds.
///
/// `labels[i]` is the cluster of `shards[i]`, canonical `0..K`. Each cluster
/// initializes its own model from a stream keyed by its smallest member id,
/// then repeats: sample ⌈s·|cluster|⌉ members without replacement, run
/// [`local_sgd`] on each (under FedProx the round's cluster model is the
/// proximal anchor), aggregate weighted by training-sample counts, and
/// evaluate every client of every cluster on its validation split against
/// its cluster's new model.
///
/// Errors at setup if the assignment is malformed, any cluster holds zero
/// training samples, or no client at all has validation data; errors as
/// [`Error::Diverged`] if a client's parameters leave the finite range.
pub fn run_federation(
    shards: &[ClientShard],
    labels: &[usize],
    config: &TrainConfig,
    strategy: Strategy,
) -> Result<FederationOutcome> {
    config.validate()?;
    let plans = build_plans(shards, labels)?;
    let dim = shards[0].dim();
    let num_classes = shards[0].num_classes();
    for s in shards {
        for actual in [s.train.dim(), s.validation.dim()] {
            if actual != dim {
                return Err(Error::DimensionMismatch {
                    context: "client embedding dim",
                    expected: dim,
                    actual,
                });
            }
        }
        for actual in [s.train.num_classes(), s.validation.num_classes()] {
            if actual != num_classes {
                return Err(Error::DimensionMismatch {
                    context: "client class count",
                    expected: num_classes,
                    actual,
                });
            }
        }
    }
    if !shards.iter().any(|s| !s.validation.is_empty()) {
        return Err(Error::EmptyInput {
            context: "no client has validation samples".into(),
        });
    }

    let shape = config.model.shape(dim, num_classes);
    shape.validate()?;
    let mut cluster_models: Vec<ModelParams> = plans
        .iter()
        .map(|plan| shape.init(&mut SeededStream::new(config.seed, "cluster-init", &[plan.key])))
        .collect();

    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let round_u64 = round as u64;
        let updated: Vec<(ModelParams, Vec<usize>)> =
            exec::try_map_indexed(plans.len(), |k| {
                train_cluster(
                    shards,
                    &plans[k],
                    &cluster_models[k],
                    config,
                    strategy,
                    round_u64,
                )
            })?;
        let mut participants = Vec::new();
        for (k, (model, trained)) in updated.into_iter().enumerate() {
            cluster_models[k] = model;
            participants.extend(trained);
        }
        participants.sort_unstable();

        let evals: Vec<Option<ClientEval>> = exec::try_map_indexed(shards.len(), |i| {
            let shard = &shards[i];
            if shard.validation.is_empty() {
                return Ok(None);
            }
            let cluster = labels[i];
            let scores = cluster_models[cluster].predict_batch(&shard.validation)?;
            let report = metrics::evaluate(&scores, shard.validation.labels())?;
            Ok(Some(ClientEval {
                client_id: shard.client_id,
                cluster,
                metrics: report,
            }))
        })?;
        let mut clients: Vec<ClientEval> = evals.into_iter().flatten().collect();
        clients.sort_by_key(|e| e.client_id);
        let mean = summarize(&clients, false);
        let weighted_mean = summarize(&clients, true);
        rounds.push(RoundRecord {
            round,
            participants,
            clients,
            mean,
            weighted_mean,
        });
    }

    Ok(FederationOutcome {
        rounds,
        cluster_models,
    })
}

/// Validate the assignment and index each cluster's members.
fn build_plans(shards: &[ClientShard], labels: &[usize]) -> Result<Vec<ClusterPlan>> {
    if shards.is_empty() {
        return Err(Error::EmptyInput {
            context: "federation over zero clients".into(),
        });
    }
    if labels.len() != shards.len() {
        return Err(Error::DimensionMismatch {
            context: "cluster labels",
            expected: shards.len(),
            actual: labels.len(),
        });
    }
    let mut ids: Vec<usize> = shards.iter().map(|s| s.client_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid!("shards", "duplicate client ids"));
    }

    let num_clusters = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut plans: Vec<ClusterPlan> = (0..num_clusters)
        .map(|_| ClusterPlan {
            members: Vec::new(),
            key: 0,
        })
        .collect();
    for (i, &label) in labels.iter().enumerate() {
        plans[label].members.push(i);
    }
    for (k, plan) in plans.iter_mut().enumerate() {
        if plan.members.is_empty() {
            return Err(invalid!(
                "assignment",
                "cluster {k} has no members (labels are not canonical)"
            ));
        }
        plan.members.sort_by_key(|&i| shards[i].client_id);
        plan.key = shards[plan.members[0]].client_id as u64;
        if !plan.members.iter().any(|&i| !shards[i].train.is_empty()) {
            return Err(Error::EmptyCluster { cluster: k });
        }
    }
    Ok(plans)
}

/// One cluster's round: sample, train locals, aggregate.
///
/// Returns the cluster's new model and the client ids that trained. Clients
/// sampled with an empty training split are skipped; if every sampled client
/// is empty (possible only under s < 1), the model passes through unchanged.
fn train_cluster(
    shards: &[ClientShard],
    plan: &ClusterPlan,
    current: &ModelParams,
    config: &TrainConfig,
    strategy: Strategy,
    round: u64,
) -> Result<(ModelParams, Vec<usize>)> {
    use rand::seq::SliceRandom;

    let sample_size = (config.participation_fraction * plan.members.len() as f64).ceil() as usize;
    let sample_size = sample_size.clamp(1, plan.members.len());
    let mut selected: Vec<usize> = if sample_size == plan.members.len() {
        plan.members.clone()
    } else {
        let mut pool = plan.members.clone();
        let mut stream = SeededStream::new(config.seed, "participation", &[round, plan.key]);
        pool.shuffle(&mut stream);
        pool.truncate(sample_size);
        pool
    };
    selected.sort_by_key(|&i| shards[i].client_id);
    selected.retain(|&i| !shards[i].train.is_empty());
    if selected.is_empty() {
        return Ok((current.clone(), Vec::new()));
    }

    let anchor = match strategy {
        Strategy::FedAvg => None,
        Strategy::FedProx => Some(current),
    };
    let locals: Vec<ModelParams> = exec::try_map_indexed(selected.len(), |j| {
        let shard = &shards[selected[j]];
        let mut stream =
            SeededStream::new(config.seed, "sgd", &[round, shard.client_id as u64]);
        local_sgd(current, &shard.train, config, anchor, &mut stream).map_err(|e| match e {
            Error::NonFinite { context } => Error::Diverged {
                round: round as usize,
                client: shard.client_id,
                detail: context,
            },
            other => other,
        })
    })?;
    let weights: Vec<f64> = selected
        .iter()
        .map(|&i| shards[i].train.len() as f64)
        .collect();
    let trained: Vec<usize> = selected.iter().map(|&i| shards[i].client_id).collect();
    Ok((aggregate(&locals, &weights)?, trained))
}

/// Mean metrics across evaluated clients, optionally weighted by each
/// client's validation-sample count.
fn summarize(clients: &[ClientEval], weighted: bool) -> MetricsMean {
    let weight_of = |e: &ClientEval| -> f64 {
        if weighted {
            e.metrics.support.iter().sum::<usize>() as f64
        } else {
            1.0
        }
    };
    let mut acc = 0.0;
    let mut f1 = 0.0;
    let mut loss = 0.0;
    let mut total = 0.0;
    let mut auc_sum = 0.0;
    let mut auc_total = 0.0;
    for e in clients {
        let w = weight_of(e);
        acc += w * e.metrics.accuracy;
        f1 += w * e.metrics.macro_f1;
        loss += w * e.metrics.loss;
        total += w;
        if let Some(auc) = e.metrics.macro_auc {
            auc_sum += w * auc;
            auc_total += w;
        }
    }
    MetricsMean {
        accuracy: acc / total,
        macro_f1: f1 / total,
        macro_auc: (auc_total > 0.0).then(|| auc_sum / auc_total),
        loss: loss / total,
    }
}
