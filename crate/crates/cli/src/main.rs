//! Command-line front end for the clustered federated learning pipeline.
//!
//! Every subcommand takes an experiment config (JSON, see
//! `ExperimentConfig`) and operates on one seed directory; `run` and
//! `compare` execute entire experiments across all configured seeds. Stage
//! subcommands consume the artifacts earlier stages emitted, so a pipeline
//! can be replayed piecewise:
//!
//! ```text
//! fedclust generate   --config exp.json --out results --seed 0
//! fedclust partition  --config exp.json --out results --seed 0
//! fedclust signatures --config exp.json --out results --seed 0
//! fedclust distances  --config exp.json --out results --seed 0
//! fedclust autok      --config exp.json --out results --seed 0
//! fedclust cluster    --config exp.json --out results --seed 0
//! fedclust train      --config exp.json --out results --seed 0
//! ```
//!
//! is byte-for-byte equivalent to `fedclust run --config exp.json --out
//! results` restricted to seed 0. Errors exit nonzero with a stage-tagged
//! message on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};

use fedclust::autok::AutoKConfig;
use fedclust::clustering::ClusterReport;
use fedclust::distance::{build_distance_matrix, read_matrix_csv, write_matrix_csv};
use fedclust::flcore::{run_federation, RoundRecord};
use fedclust::harness::{
    self, cluster_clients, compare_strategies, generate_data, load_data, partition_data,
    reload_clients, run_experiment, ClusteringMode, ExperimentConfig, SignatureMode,
};
use fedclust::signature::{
    build_global_mean_signature, build_signature, read_signatures, write_signatures,
};
use fedclust::{exec, Error};

#[derive(Parser)]
#[command(
    name = "fedclust",
    version,
    about = "Deterministic clustered federated learning on embedding datasets",
    long_about = "Partitions embedding datasets across simulated clients, clusters the \
                  clients once by class-aware signature distances, then trains one \
                  federated model per cluster. Every result is a pure function of the \
                  config and its seeds."
)]
struct Cli {
    /// Run all parallel stages sequentially (results are identical either way).
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

/// Arguments shared by the single-seed stage subcommands.
#[derive(Args)]
struct StageArgs {
    /// Experiment config file (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output root; this stage reads and writes under <OUT>/seed-<SEED>/.
    /// Defaults to the config's out_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed to operate on. Defaults to the first seed in the config.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured data source into <out>/seed-<s>/data/.
    Generate(StageArgs),
    /// Partition the materialized data into per-client train/validation shards.
    Partition(StageArgs),
    /// Build per-client signatures from the partitioned shards.
    Signatures(StageArgs),
    /// Compute the pairwise client distance matrix from the signatures.
    Distances(StageArgs),
    /// Sweep candidate cluster counts over the distance matrix and pick K.
    Autok(StageArgs),
    /// Cluster the clients and write the assignment.
    Cluster(StageArgs),
    /// Train per-cluster federated models from the shards and assignment.
    Train(StageArgs),
    /// Run the full pipeline for every configured seed and summarize.
    Run(StageArgs),
    /// Run several configs over the same data and seeds; tabulate best rounds.
    Compare {
        /// Experiment config files (JSON); repeat the flag, at least twice.
        #[arg(long, value_name = "FILE", required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        /// Directory for comparison.csv and comparison.txt (omit to print only).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Restrict every config to this single seed.
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    exec::set_parallel(!cli.serial);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            generate_data(&config, seed, Some(&dir))?;
            println!("wrote {}", dir.join("data").display());
            Ok(())
        }
        Command::Partition(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let data = load_data(&config, seed, &dir)?;
            let (shards, _) = partition_data(&config, seed, &data, Some(&dir))?;
            println!(
                "partitioned {} clients into {}",
                shards.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Signatures(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let shards = reload_clients(&config, seed, &dir)?;
            let signatures = exec::try_map_indexed(shards.len(), |i| match config.signature {
                SignatureMode::ClassAware => {
                    build_signature(&shards[i].train, shards[i].client_id)
                }
                SignatureMode::GlobalMean => {
                    build_global_mean_signature(&shards[i].train, shards[i].client_id)
                }
            })
            .map_err(|e| e.in_stage("signatures", seed))?;
            let path = dir.join("signatures.json");
            write_signatures(&signatures, &path).map_err(|e| e.in_stage("signatures", seed))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Distances(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let signatures = read_signatures(&dir.join("signatures.json"))
                .map_err(|e| e.in_stage("signatures", seed))?;
            let (matrix, audit) = build_distance_matrix(&signatures, &config.distance)
                .map_err(|e| e.in_stage("distances", seed))?;
            let matrix_path = dir.join("distance_matrix.csv");
            write_matrix_csv(&matrix, &matrix_path)
                .map_err(|e| e.in_stage("distances", seed))?;
            audit
                .write(&dir.join("distance_audit.json"))
                .map_err(|e| e.in_stage("distances", seed))?;
            println!("wrote {}", matrix_path.display());
            Ok(())
        }
        Command::Autok(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let matrix = read_matrix_csv(&dir.join("distance_matrix.csv"))
                .map_err(|e| e.in_stage("distances", seed))?;
            let params = match &config.clustering {
                ClusteringMode::AutoK { params } => params.clone(),
                _ => AutoKConfig::default(),
            };
            let report = fedclust::autok::select_k(&matrix, config.linkage, &params)
                .map_err(|e| e.in_stage("autok", seed))?;
            let path = dir.join("autok.json");
            report.write(&path).map_err(|e| e.in_stage("autok", seed))?;
            println!(
                "wrote {} (selected K = {}{})",
                path.display(),
                report.selected_k,
                if report.fallback_used { ", fallback" } else { "" }
            );
            Ok(())
        }
        Command::Cluster(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let shards = reload_clients(&config, seed, &dir)?;
            let clustered = cluster_clients(&config, &shards, seed, Some(&dir))?;
            println!(
                "wrote {} ({} clusters)",
                dir.join("assignment.json").display(),
                clustered.report.assignment.num_clusters
            );
            Ok(())
        }
        Command::Train(args) => {
            let (config, seed, dir) = stage_setup(&args)?;
            let shards = reload_clients(&config, seed, &dir)?;
            let report = ClusterReport::read(&dir.join("assignment.json"))
                .map_err(|e| e.in_stage("cluster", seed))?;
            let mut train = config.train;
            train.seed = seed;
            let outcome =
                run_federation(&shards, &report.assignment.labels, &train, config.strategy)
                    .map_err(|e| e.in_stage("train", seed))?;
            let sizes: Vec<usize> = report.assignment.members().iter().map(Vec::len).collect();
            let path = dir.join("rounds.csv");
            harness::write_round_log(&outcome.rounds, &sizes, &path)
                .map_err(|e| e.in_stage("report", seed))?;
            let best = best_round(&outcome.rounds);
            println!("wrote {}", path.display());
            println!(
                "best round {}: accuracy {:.4}, macro-F1 {:.4}, loss {:.4}",
                best.round, best.mean.accuracy, best.mean.macro_f1, best.mean.loss
            );
            Ok(())
        }
        Command::Run(args) => {
            let mut config = ExperimentConfig::read(&args.config)?;
            if let Some(out) = args.out {
                config.out_dir = Some(out);
            }
            if let Some(seed) = args.seed {
                config.seeds = vec![seed];
            }
            let summary = run_experiment(&config)?;
            for outcome in &summary.seeds {
                let ari = outcome
                    .ground_truth_ari
                    .map(|v| format!(", ARI {v:.4}"))
                    .unwrap_or_default();
                println!(
                    "seed {}: {} clusters {:?}{}",
                    outcome.seed, outcome.num_clusters, outcome.cluster_sizes, ari
                );
            }
            let best = &summary.best;
            println!(
                "best round {}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}, loss {:.4} ± {:.4}",
                best.round,
                best.accuracy.mean,
                best.accuracy.std,
                best.macro_f1.mean,
                best.macro_f1.std,
                best.loss.mean,
                best.loss.std
            );
            if let Some(dir) = &config.out_dir {
                println!("wrote {}", dir.join("summary.json").display());
            }
            Ok(())
        }
        Command::Compare { config, out, seed } => {
            if config.len() < 2 {
                return Err(anyhow!("compare needs at least two --config files"));
            }
            let mut configs = config
                .iter()
                .map(|p| ExperimentConfig::read(p))
                .collect::<fedclust::Result<Vec<_>>>()?;
            for (path, c) in config.iter().zip(&mut configs) {
                if c.label.is_none() {
                    c.label = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned());
                }
                if let Some(seed) = seed {
                    c.seeds = vec![seed];
                }
            }
            let table = compare_strategies(&configs)?;
            print!("{}", table.to_text());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let csv = dir.join("comparison.csv");
                std::fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
                let text = dir.join("comparison.txt");
                std::fs::write(&text, table.to_text()).map_err(|e| Error::io(&text, e))?;
                println!("wrote {}", csv.display());
            }
            Ok(())
        }
    }
}

/// Load and validate the config, resolve the seed and seed directory.
fn stage_setup(args: &StageArgs) -> Result<(ExperimentConfig, u64, PathBuf)> {
    let mut config = ExperimentConfig::read(&args.config)?;
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    config.validate()?;
    let seed = args.seed.unwrap_or(config.seeds[0]);
    let root = config
        .out_dir
        .clone()
        .ok_or_else(|| anyhow!("no output directory: pass --out or set out_dir in the config"))?;
    let dir = root.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((config, seed, dir))
}

/// Highest mean accuracy, earliest round on ties.
fn best_round(rounds: &[RoundRecord]) -> &RoundRecord {
    rounds
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.mean
                .accuracy
                .partial_cmp(&b.mean.accuracy)
                .expect("finite accuracy")
                .then(ib.cmp(ia))
        })
        .map(|(_, r)| r)
        .expect("at least one round")
}
