//! Experiment configuration and the command entry points behind the binary.
//!
//! The commands live in the library so tests can drive them directly; the
//! binary is a thin argument-parsing wrapper. All outputs are deterministic
//! given a config and seed: metric files are rewritten wholesale at every
//! checkpoint, so two identical invocations produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{CaliConfig, DittoConfig};
use crate::data::{
    build_client_dataset, filter_min_interactions, parse_ratings, read_shard_cache,
    write_shard_cache, ClientDataset, Format, InteractionTable,
};
use crate::error::{Error, Result};
use crate::eval::{rounds_to_threshold, MetricHistory, RoundMetrics};
use crate::model::{TrainConfig, Variant};
use crate::orchestrator::{FedConfig, FederationState, Runner, Strategy};
use crate::rng;
use crate::synth::{generate, SynthConfig};

/// Full experiment description; round-trips losslessly through TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// ratings file path; omit to use the built-in synthetic benchmark
    pub dataset: Option<String>,
    /// pre-built shard cache (from `ingest`); takes precedence over `dataset`
    pub cache: Option<String>,
    pub format: String,
    pub model: String,
    pub strategy: String,
    pub rounds: usize,
    pub clusters: usize,
    pub delegates: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub mlp_layers: Vec<usize>,
    pub neg_ratio: usize,
    pub phi: f64,
    pub lambda0: f64,
    pub decay: f64,
    pub server_lr: f64,
    pub ditto_lambda: f64,
    pub seeds: Vec<u64>,
    pub out: String,
    pub eval_every: usize,
    pub recluster_every: usize,
    pub personalization: bool,
    /// drop users with fewer interactions than this (0 = keep everyone)
    pub min_interactions: usize,
    /// seed of the built-in synthetic benchmark (independent of run seeds)
    pub synth_seed: u64,
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let cali = CaliConfig::default();
        let ditto = DittoConfig::default();
        let fed = FedConfig::default();
        ExperimentConfig {
            dataset: None,
            cache: None,
            format: "tab".into(),
            model: "neumf".into(),
            strategy: "cali3f".into(),
            rounds: fed.rounds,
            clusters: fed.clusters,
            delegates: fed.delegates,
            learning_rate: train.learning_rate,
            local_epochs: train.local_epochs,
            batch_size: train.batch_size,
            embedding_dim: train.embedding_dim,
            mlp_layers: train.mlp_layers,
            neg_ratio: train.neg_ratio,
            phi: cali.personalization_level,
            lambda0: cali.discount_factor,
            decay: cali.discount_decay,
            server_lr: cali.server_lr,
            ditto_lambda: ditto.regularization_weight,
            seeds: vec![1, 2, 3],
            out: "runs".into(),
            eval_every: fed.eval_every,
            recluster_every: fed.recluster_every,
            personalization: true,
            min_interactions: 0,
            synth_seed: 0,
            checkpoint_every: 10,
        }
    }
}

/// Optional flag values; any `Some` wins over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub cache: Option<String>,
    pub format: Option<String>,
    pub model: Option<String>,
    pub strategy: Option<String>,
    pub rounds: Option<usize>,
    pub clusters: Option<usize>,
    pub delegates: Option<usize>,
    pub learning_rate: Option<f64>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub mlp_layers: Option<Vec<usize>>,
    pub neg_ratio: Option<usize>,
    pub phi: Option<f64>,
    pub lambda0: Option<f64>,
    pub decay: Option<f64>,
    pub server_lr: Option<f64>,
    pub ditto_lambda: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<String>,
    pub eval_every: Option<usize>,
    pub recluster_every: Option<usize>,
    pub personalization: Option<bool>,
    pub min_interactions: Option<usize>,
    pub synth_seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &o.$field { self.$field = v.clone(); })*
            };
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {
                $(if o.$field.is_some() { self.$field = o.$field.clone(); })*
            };
        }
        take_opt!(dataset, cache);
        take!(
            format, model, strategy, rounds, clusters, delegates, learning_rate, local_epochs,
            batch_size, embedding_dim, mlp_layers, neg_ratio, phi, lambda0, decay, server_lr,
            ditto_lambda, seeds, out, eval_every, recluster_every, personalization,
            min_interactions, synth_seed, checkpoint_every
        );
    }

    /// Provenance hash over everything that affects the numbers (not `out`).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.out = String::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        format!("{:016x}", rng::digest(&bytes))
    }

    pub fn fed_config(&self, seed: u64) -> Result<FedConfig> {
        Ok(FedConfig {
            strategy: Strategy::parse_flag(&self.strategy)?,
            variant: Variant::parse_flag(&self.model)?,
            rounds: self.rounds,
            clusters: self.clusters,
            delegates: self.delegates,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                local_epochs: self.local_epochs,
                batch_size: self.batch_size,
                embedding_dim: self.embedding_dim,
                mlp_layers: self.mlp_layers.clone(),
                neg_ratio: self.neg_ratio,
                init_seed: 0,
            },
            cali: CaliConfig {
                personalization_level: self.phi,
                discount_factor: self.lambda0,
                discount_decay: self.decay,
                server_lr: self.server_lr,
                ..CaliConfig::default()
            },
            ditto: DittoConfig {
                regularization_weight: self.ditto_lambda,
                local_lr: self.learning_rate,
                local_steps: self.local_epochs,
            },
            seed,
            eval_every: self.eval_every,
            recluster_every: self.recluster_every,
            personalization: self.personalization,
        })
    }

    /// Load (or synthesize) the interaction table plus a short content id.
    pub fn load_table(&self) -> Result<(InteractionTable, String)> {
        let table = match &self.dataset {
            Some(path) => parse_ratings(path, Format::parse_flag(&self.format)?)?,
            None => generate(&SynthConfig {
                seed: self.synth_seed,
                ..SynthConfig::default()
            }),
        };
        let table = if self.min_interactions > 0 {
            filter_min_interactions(&table, self.min_interactions)
        } else {
            table
        };
        let id = table_digest(&table);
        Ok((table, id))
    }

    /// Client dataset for one run seed: cache file if configured, otherwise
    /// built from the table with seed-specific evaluation negatives.
    pub fn load_dataset(&self, seed: u64) -> Result<(ClientDataset, String)> {
        if let Some(cache) = &self.cache {
            let data = read_shard_cache(cache)?;
            let bytes =
                fs::read(cache).map_err(|e| Error::io(cache.clone(), e))?;
            return Ok((data, format!("{:016x}", rng::digest(&bytes))));
        }
        let (table, id) = self.load_table()?;
        Ok((build_client_dataset(&table, self.neg_ratio, seed)?, id))
    }
}

fn table_digest(table: &InteractionTable) -> String {
    let bytes = serde_json::to_vec(&table.interactions).expect("interactions serialize");
    format!("{:016x}", rng::digest(&bytes))
}

/// One line of the metrics files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub config: String,
    pub dataset: String,
    pub strategy: String,
    pub model: String,
    pub seed: u64,
    pub round: usize,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
    pub std_ndcg: f64,
    pub std_hr: f64,
}

impl MetricRecord {
    fn new(
        cfg: &ExperimentConfig,
        config_hash: &str,
        dataset_id: &str,
        seed: u64,
        m: &RoundMetrics,
    ) -> Self {
        MetricRecord {
            config: config_hash.to_string(),
            dataset: dataset_id.to_string(),
            strategy: cfg.strategy.clone(),
            model: cfg.model.clone(),
            seed,
            round: m.round,
            mean_hr: m.mean_hr,
            mean_ndcg: m.mean_ndcg,
            std_ndcg: m.fairness_std_ndcg,
            std_hr: m.fairness_std_hr,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: ExperimentConfig,
    config_hash: String,
    dataset: String,
    seed: u64,
    state: FederationState,
    records: Vec<MetricRecord>,
}

#[derive(Debug)]
pub struct IngestReport {
    pub interactions: usize,
    pub users: usize,
    pub items: usize,
    pub sparsity: f64,
    pub cache_path: PathBuf,
}

impl std::fmt::Display for IngestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<14}{}", "interactions", self.interactions)?;
        writeln!(f, "{:<14}{}", "users", self.users)?;
        writeln!(f, "{:<14}{}", "items", self.items)?;
        writeln!(f, "{:<14}{:.2}%", "sparsity", 100.0 * self.sparsity)?;
        write!(f, "{:<14}{}", "cache", self.cache_path.display())
    }
}

/// Parse → filter → split → sample negatives, write the shard cache, and
/// report dataset statistics.
pub fn cmd_ingest(cfg: &ExperimentConfig, seed: u64) -> Result<IngestReport> {
    let (table, id) = cfg.load_table()?;
    let dataset = build_client_dataset(&table, cfg.neg_ratio, seed)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.clone(), e))?;
    let cache_path = Path::new(&cfg.out).join(format!("shards-{id}-seed{seed}.jsonl"));
    write_shard_cache(&dataset, &cache_path)?;
    Ok(IngestReport {
        interactions: table.interactions.len(),
        users: table.num_users,
        items: table.num_items,
        sparsity: table.sparsity(),
        cache_path,
    })
}

pub struct TrainOutput {
    pub metric_files: Vec<PathBuf>,
    pub summary: String,
    pub records: Vec<MetricRecord>,
}

fn write_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn history_from_records(records: &[MetricRecord]) -> MetricHistory {
    MetricHistory {
        rounds: records
            .iter()
            .filter(|r| r.round > 0)
            .map(|r| RoundMetrics {
                round: r.round,
                mean_hr: r.mean_hr,
                mean_ndcg: r.mean_ndcg,
                fairness_std_ndcg: r.std_ndcg,
                fairness_std_hr: r.std_hr,
            })
            .collect(),
        final_per_client_ndcg: vec![],
    }
}

/// Per-seed summary row used by both `train` and `compare`.
#[derive(Debug, Clone)]
struct SeedSummary {
    seed: u64,
    best_hr: f64,
    best_ndcg: f64,
    final_std_ndcg: f64,
    rounds_to_5pct: usize,
}

fn summarize_seed(records: &[MetricRecord]) -> SeedSummary {
    let h = history_from_records(records);
    // rounds_to_threshold indexes evaluation points; report the actual
    // communication round of that point so the column stays meaningful
    // under --eval-every > 1
    let idx = rounds_to_threshold(&h, |m| m.mean_ndcg, 0.05);
    SeedSummary {
        seed: records.first().map(|r| r.seed).unwrap_or(0),
        best_hr: h.best(|m| m.mean_hr),
        best_ndcg: h.best(|m| m.mean_ndcg),
        final_std_ndcg: h.last().map(|m| m.fairness_std_ndcg).unwrap_or(f64::NAN),
        rounds_to_5pct: h.rounds.get(idx - 1).map(|m| m.round).unwrap_or(idx),
    }
}

/// Run the configured experiment for every seed.
///
/// Emits one line-delimited metrics file per seed (every record carries the
/// config hash and seed), a checkpoint for resumption, and an aligned
/// plain-text summary table. Re-invoking with the same config resumes any
/// interrupted seed from its last checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed required".into()));
    }
    let strategy = Strategy::parse_flag(&cfg.strategy)?;
    if strategy != Strategy::Cali3f
        && (cfg.phi != 0.0 || cfg.lambda0 != 0.0)
    {
        eprintln!(
            "note: --phi/--lambda0 only affect strategy=cali3f; ignored under {}",
            cfg.strategy
        );
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.clone(), e))?;
    let config_hash = cfg.config_hash();
    let out = Path::new(&cfg.out);

    let mut metric_files = Vec::new();
    let mut all_records = Vec::new();
    let mut seed_summaries = Vec::new();
    for &seed in &cfg.seeds {
        let (dataset, dataset_id) = cfg.load_dataset(seed)?;
        let fed = cfg.fed_config(seed)?;
        let runner = Runner::new(fed, &dataset)?;
        let stem = format!("{}-{}-seed{}", cfg.strategy, cfg.model, seed);
        let metrics_path = out.join(format!("metrics-{stem}.jsonl"));
        let ckpt_path = out.join(format!("checkpoint-{stem}.json"));

        let (mut state, mut records) = match load_checkpoint(&ckpt_path, &config_hash, seed) {
            Some(c) => (c.state, c.records),
            None => {
                let state = runner.init_state()?;
                let (m, _) = runner.evaluate(&state)?;
                let rec = MetricRecord::new(cfg, &config_hash, &dataset_id, seed, &m);
                (state, vec![rec])
            }
        };
        while state.round < cfg.rounds {
            runner.run_round(&mut state)?;
            if state.round % cfg.eval_every == 0 || state.round == cfg.rounds {
                let (m, _) = runner.evaluate(&state)?;
                records.push(MetricRecord::new(cfg, &config_hash, &dataset_id, seed, &m));
            }
            if state.round % cfg.checkpoint_every == 0 || state.round == cfg.rounds {
                save_checkpoint(&ckpt_path, cfg, &config_hash, &dataset_id, seed, &state, &records)?;
                write_jsonl(&metrics_path, &records)?;
            }
        }
        save_checkpoint(&ckpt_path, cfg, &config_hash, &dataset_id, seed, &state, &records)?;
        write_jsonl(&metrics_path, &records)?;
        seed_summaries.push(summarize_seed(&records));
        metric_files.push(metrics_path);
        all_records.extend(records);
    }

    let summary = render_seed_table(&cfg.strategy, &cfg.model, &seed_summaries);
    let summary_path = out.join(format!("summary-{}-{}.txt", cfg.strategy, cfg.model));
    fs::write(&summary_path, &summary)
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    Ok(TrainOutput {
        metric_files,
        summary,
        records: all_records,
    })
}

fn load_checkpoint(path: &Path, config_hash: &str, seed: u64) -> Option<Checkpoint> {
    let text = fs::read_to_string(path).ok()?;
    let c: Checkpoint = serde_json::from_str(&text).ok()?;
    (c.config_hash == config_hash && c.seed == seed).then_some(c)
}

fn save_checkpoint(
    path: &Path,
    cfg: &ExperimentConfig,
    config_hash: &str,
    dataset_id: &str,
    seed: u64,
    state: &FederationState,
    records: &[MetricRecord],
) -> Result<()> {
    let c = Checkpoint {
        config: cfg.clone(),
        config_hash: config_hash.to_string(),
        dataset: dataset_id.to_string(),
        seed,
        state: state.clone(),
        records: records.to_vec(),
    };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&c)?)
        .map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn render_seed_table(strategy: &str, model: &str, rows: &[SeedSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strategy {strategy}  model {model}");
    let _ = writeln!(
        s,
        "{:>6}  {:>8}  {:>9}  {:>13}  {:>13}",
        "seed", "best_hr", "best_ndcg", "final_std", "rounds_to_5%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6}  {:>8.4}  {:>9.4}  {:>13.4}  {:>13}",
            r.seed, r.best_hr, r.best_ndcg, r.final_std_ndcg, r.rounds_to_5pct
        );
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let _ = writeln!(
            s,
            "{:>6}  {:>8.4}  {:>9.4}  {:>13.4}  {:>13.1}",
            "mean",
            rows.iter().map(|r| r.best_hr).sum::<f64>() / n,
            rows.iter().map(|r| r.best_ndcg).sum::<f64>() / n,
            rows.iter().map(|r| r.final_std_ndcg).sum::<f64>() / n,
            rows.iter().map(|r| r.rounds_to_5pct as f64).sum::<f64>() / n,
        );
    }
    s
}

/// Re-evaluate a checkpoint and report its metrics.
pub fn cmd_eval(checkpoint: impl AsRef<Path>) -> Result<(RoundMetrics, String)> {
    let path = checkpoint.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let c: Checkpoint = serde_json::from_str(&text)?;
    let (dataset, _) = c.config.load_dataset(c.seed)?;
    let runner = Runner::new(c.config.fed_config(c.seed)?, &dataset)?;
    let (m, _) = runner.evaluate(&c.state)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "strategy {}  model {}  seed {}  round {}",
        c.config.strategy, c.config.model, c.seed, c.state.round
    );
    let _ = writeln!(s, "{:<10}{:.4}", "hr@10", m.mean_hr);
    let _ = writeln!(s, "{:<10}{:.4}", "ndcg@10", m.mean_ndcg);
    let _ = writeln!(s, "{:<10}{:.4}", "std_ndcg", m.fairness_std_ndcg);
    let _ = write!(s, "{:<10}{:.4}", "std_hr", m.fairness_std_hr);
    Ok((m, s))
}

/// Cross-strategy comparison over one or more run directories.
///
/// Every metrics file must cover the same dataset and the same seed set;
/// anything else is a comparability error, not a silent best-effort report.
pub fn cmd_compare(run_dirs: &[PathBuf], out_file: Option<&Path>) -> Result<String> {
    let mut by_strategy: BTreeMap<String, Vec<MetricRecord>> = BTreeMap::new();
    for dir in run_dirs {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("metrics-") && n.ends_with(".jsonl"))
            })
            .collect();
        paths.sort();
        for p in paths {
            let records = read_jsonl(&p)?;
            if let Some(first) = records.first() {
                by_strategy
                    .entry(first.strategy.clone())
                    .or_default()
                    .extend(records);
            }
        }
    }
    if by_strategy.is_empty() {
        return Err(Error::Comparability("no metrics files found".into()));
    }

    // comparability: one dataset, identical seed sets everywhere
    let mut datasets: Vec<&str> = by_strategy
        .values()
        .flatten()
        .map(|r| r.dataset.as_str())
        .collect();
    datasets.sort_unstable();
    datasets.dedup();
    if datasets.len() > 1 {
        return Err(Error::Comparability(format!(
            "runs cover {} different datasets",
            datasets.len()
        )));
    }
    let seed_sets: Vec<(String, Vec<u64>)> = by_strategy
        .iter()
        .map(|(s, recs)| {
            let mut seeds: Vec<u64> = recs.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            (s.clone(), seeds)
        })
        .collect();
    if seed_sets.windows(2).any(|w| w[0].1 != w[1].1) {
        let desc: Vec<String> = seed_sets
            .iter()
            .map(|(s, seeds)| format!("{s}: {seeds:?}"))
            .collect();
        return Err(Error::Comparability(format!(
            "seed sets differ across strategies ({})",
            desc.join("; ")
        )));
    }

    struct StrategyRow {
        strategy: String,
        best_hr: f64,
        best_ndcg: f64,
        final_std: f64,
        rtt: f64,
    }
    let mut rows = Vec::new();
    for (strategy, recs) in &by_strategy {
        let mut per_seed: BTreeMap<u64, Vec<MetricRecord>> = BTreeMap::new();
        for r in recs {
            per_seed.entry(r.seed).or_default().push(r.clone());
        }
        let summaries: Vec<SeedSummary> = per_seed
            .values()
            .map(|rs| {
                let mut rs = rs.clone();
                rs.sort_by_key(|r| r.round);
                summarize_seed(&rs)
            })
            .collect();
        let n = summaries.len() as f64;
        rows.push(StrategyRow {
            strategy: strategy.clone(),
            best_hr: summaries.iter().map(|s| s.best_hr).sum::<f64>() / n,
            best_ndcg: summaries.iter().map(|s| s.best_ndcg).sum::<f64>() / n,
            final_std: summaries.iter().map(|s| s.final_std_ndcg).sum::<f64>() / n,
            rtt: summaries.iter().map(|s| s.rounds_to_5pct as f64).sum::<f64>() / n,
        });
    }
    let fedavg_rtt = rows
        .iter()
        .find(|r| r.strategy == "fedavg")
        .map(|r| r.rtt);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8}  {:>8}  {:>9}  {:>13}  {:>13}  {:>12}",
        "strategy", "best_hr", "best_ndcg", "final_std", "rounds_to_5%", "vs_fedavg"
    );
    for r in &rows {
        let ratio = match fedavg_rtt {
            Some(f) if f > 0.0 => format!("{:.2}x", r.rtt / f),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<8}  {:>8.4}  {:>9.4}  {:>13.4}  {:>13.1}  {:>12}",
            r.strategy, r.best_hr, r.best_ndcg, r.final_std, r.rtt, ratio
        );
    }
    if let Some(path) = out_file {
        fs::write(path, &s).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(s)
}

/// Generate a synthetic benchmark and write it in `u.data` format.
pub fn cmd_synth(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<PathBuf> {
    let table = generate(cfg);
    let path = out.as_ref().to_path_buf();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    crate::synth::write_udata(&table, &path)?;
    Ok(path)
}
