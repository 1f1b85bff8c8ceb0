use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cali3f::cli::{
    cmd_compare, cmd_eval, cmd_ingest, cmd_synth, cmd_train, ExperimentConfig, Overrides,
};
use cali3f::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "cali3f", about = "Clustered, calibrated federated recommendation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment flags shared by `ingest` and `train`; anything given here wins
/// over the config file.
#[derive(Args, Default)]
struct ExperimentFlags {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// ratings file (omit to use the built-in synthetic benchmark)
    #[arg(long)]
    dataset: Option<String>,
    /// pre-built shard cache from `ingest`
    #[arg(long)]
    cache: Option<String>,
    /// ratings file format: tab | double-colon
    #[arg(long)]
    format: Option<String>,
    /// gmf | mlp | neumf
    #[arg(long)]
    model: Option<String>,
    /// cali3f | fedavg | ditto
    #[arg(long)]
    strategy: Option<String>,
    /// communication rounds T
    #[arg(long)]
    rounds: Option<usize>,
    /// cluster count P
    #[arg(long)]
    clusters: Option<usize>,
    /// delegates per round m
    #[arg(long)]
    delegates: Option<usize>,
    /// local SGD learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// local epochs per round
    #[arg(long)]
    epochs: Option<usize>,
    /// local mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// embedding dimension d
    #[arg(long)]
    dim: Option<usize>,
    /// MLP tower widths, comma separated
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// training negatives per positive
    #[arg(long)]
    neg_ratio: Option<usize>,
    /// personalization level φ
    #[arg(long)]
    phi: Option<f64>,
    /// subordinate discount factor λ0
    #[arg(long)]
    lambda0: Option<f64>,
    /// per-round decay of λ
    #[arg(long)]
    decay: Option<f64>,
    /// server-side learning rate
    #[arg(long)]
    server_lr: Option<f64>,
    /// Ditto proximal weight
    #[arg(long)]
    ditto_lambda: Option<f64>,
    /// run seeds, comma separated
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// output directory
    #[arg(long)]
    out: Option<String>,
    /// evaluate every N rounds
    #[arg(long)]
    eval_every: Option<usize>,
    /// re-cluster every N rounds
    #[arg(long)]
    recluster_every: Option<usize>,
    /// ablation: disable per-cluster models and the calibrated update
    #[arg(long)]
    no_personalization: bool,
    /// drop users with fewer interactions
    #[arg(long)]
    min_interactions: Option<usize>,
    /// seed of the built-in synthetic benchmark
    #[arg(long)]
    synth_seed: Option<u64>,
    /// checkpoint every N rounds
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl ExperimentFlags {
    fn resolve(self) -> Result<ExperimentConfig, cali3f::Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let o = Overrides {
            dataset: self.dataset,
            cache: self.cache,
            format: self.format,
            model: self.model,
            strategy: self.strategy,
            rounds: self.rounds,
            clusters: self.clusters,
            delegates: self.delegates,
            learning_rate: self.lr,
            local_epochs: self.epochs,
            batch_size: self.batch,
            embedding_dim: self.dim,
            mlp_layers: self.layers,
            neg_ratio: self.neg_ratio,
            phi: self.phi,
            lambda0: self.lambda0,
            decay: self.decay,
            server_lr: self.server_lr,
            ditto_lambda: self.ditto_lambda,
            seeds: self.seeds,
            out: self.out,
            eval_every: self.eval_every,
            recluster_every: self.recluster_every,
            personalization: self.no_personalization.then_some(false),
            min_interactions: self.min_interactions,
            synth_seed: self.synth_seed,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.apply(&o);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a ratings file, split and sample, cache shards, print statistics
    Ingest {
        #[command(flatten)]
        flags: ExperimentFlags,
        /// seed for evaluation-negative sampling in the cache
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the configured experiment for every seed
    Train {
        #[command(flatten)]
        flags: ExperimentFlags,
    },
    /// Re-evaluate a training checkpoint
    Eval {
        /// checkpoint file written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare strategies across run directories
    Compare {
        /// directories holding metrics-*.jsonl files
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark in u.data format
    Synth {
        /// output path for the ratings file
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 943)]
        users: usize,
        #[arg(long, default_value_t = 1682)]
        items: usize,
        #[arg(long, default_value_t = 30)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run() -> Result<(), cali3f::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { flags, seed } => {
            let cfg = flags.resolve()?;
            let report = cmd_ingest(&cfg, seed)?;
            println!("{report}");
        }
        Command::Train { flags } => {
            let cfg = flags.resolve()?;
            let out = cmd_train(&cfg)?;
            print!("{}", out.summary);
            for f in &out.metric_files {
                println!("metrics: {}", f.display());
            }
        }
        Command::Eval { checkpoint } => {
            let (_, text) = cmd_eval(&checkpoint)?;
            println!("{text}");
        }
        Command::Compare { runs, out } => {
            let report = cmd_compare(&runs, out.as_deref())?;
            print!("{report}");
        }
        Command::Synth {
            out,
            users,
            items,
            groups,
            seed,
        } => {
            let cfg = SynthConfig {
                num_users: users,
                num_items: items,
                num_groups: groups,
                seed,
                ..SynthConfig::default()
            };
            let path = cmd_synth(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
