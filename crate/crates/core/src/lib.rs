//! Class-aware client clustering and clustered federated training on fixed
//! embedding vectors — a deterministic simulator.
//!
//! The pipeline: partition a labeled embedding pool across simulated clients
//! with Dirichlet label skew ([`partition`]), summarize each client's shard
//! as per-class prototype/weight signatures ([`signature`]), turn signature
//! pairs into an overlap-weighted distance matrix ([`distance`]), cluster
//! clients agglomeratively ([`clustering`]) with an optional automatic
//! cluster-count search ([`autok`]), then train one model per cluster with
//! federated averaging ([`flcore`]) and evaluate per-client metrics
//! ([`metrics`]). The [`harness`] module wires the stages into seeded,
//! re-runnable experiments.
//!
//! # Determinism
//!
//! Everything is a pure function of the configuration and a `u64` master
//! seed. Randomness flows through keyed ChaCha streams ([`rng`]), reductions
//! run in fixed order, and the rayon-backed parallelism ([`exec`]) collects
//! in index order — so serial and parallel runs produce bit-identical
//! results, and every output file is byte-stable across re-runs.

pub mod autok;
pub mod clustering;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod exec;
pub mod flcore;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod rng;
pub mod signature;

pub use error::{Error, Result};
