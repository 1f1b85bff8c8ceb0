//! End-to-end federation loop: per-round sampling, client training, server
//! aggregation, re-clustering and within-cluster averaging, plus the FedAvg
//! and Ditto baseline pipelines.
//!
//! The server-side state holds only parameters, deltas, instance counts and
//! embeddings; raw interactions never leave the client dataset.

use std::collections::BTreeMap;

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate_item_embeddings, cali_up, ditto_local_step, discount_schedule, fedavg_aggregate,
    global_nonembedding_update, update_delegate_embeddings, update_subordinate_embeddings,
    weighted_mean_non, CaliConfig, DittoConfig, RoundDelta,
};
use crate::clustering::{clus_avg, clus_samp, kmeans, ClusterAssignment, SamplingPlan};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_all, MetricHistory, RoundMetrics};
use crate::model::{init_model, local_train, ModelParams, NonEmbedding, TrainConfig, Variant};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Cali3f,
    FedAvg,
    Ditto,
}

impl Strategy {
    pub fn parse_flag(s: &str) -> Result<Strategy> {
        match s {
            "cali3f" => Ok(Strategy::Cali3f),
            "fedavg" => Ok(Strategy::FedAvg),
            "ditto" => Ok(Strategy::Ditto),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Cali3f => "cali3f",
            Strategy::FedAvg => "fedavg",
            Strategy::Ditto => "ditto",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedConfig {
    pub strategy: Strategy,
    pub variant: Variant,
    /// T
    pub rounds: usize,
    /// P
    pub clusters: usize,
    /// m delegates per round
    pub delegates: usize,
    pub train: TrainConfig,
    pub cali: CaliConfig,
    pub ditto: DittoConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub recluster_every: usize,
    /// false = ablation: ClusSamp + FastAgg but no cluster models / CaliUp
    pub personalization: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            strategy: Strategy::Cali3f,
            variant: Variant::NeuMf,
            rounds: 100,
            clusters: 30,
            delegates: 30,
            train: TrainConfig::default(),
            cali: CaliConfig::default(),
            ditto: DittoConfig::default(),
            seed: 0,
            eval_every: 1,
            recluster_every: 1,
            personalization: true,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.rounds == 0 {
            problems.push("rounds must be >= 1".to_string());
        }
        if self.clusters == 0 || self.clusters > num_clients {
            problems.push(format!(
                "clusters must be in [1, {num_clients}], got {}",
                self.clusters
            ));
        }
        if self.delegates == 0 || self.delegates > num_clients {
            problems.push(format!(
                "delegates must be in [1, {num_clients}], got {}",
                self.delegates
            ));
        }
        if self.eval_every == 0 || self.recluster_every == 0 {
            problems.push("eval_every and recluster_every must be >= 1".to_string());
        }
        if let Err(e) = self.train.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.cali.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Seed for one client's local training in one round.
///
/// `purpose` separates the global-model and cluster-model trainings and the
/// Ditto personal-model updates of the same (round, client).
pub fn client_train_seed(root: u64, purpose: &str, round: usize, user: u32) -> u64 {
    rng::derive_seed(root, purpose, ((round as u64) << 32) | u64::from(user))
}

/// Seed for the shared model initialization of a run.
pub fn init_seed(root: u64) -> u64 {
    rng::derive_seed(root, "init", 0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationState {
    pub round: usize,
    pub global: ModelParams,
    /// per-cluster personalized non-embedding blocks (Cali3f with personalization)
    pub cluster_models: Vec<NonEmbedding>,
    pub assignment: ClusterAssignment,
    pub plan: SamplingPlan,
    /// per-client personal models (Ditto only)
    pub personal: Vec<ModelParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    /// evaluation of the shared initial model, before any training
    pub initial: RoundMetrics,
    pub history: MetricHistory,
}

pub struct Runner<'a> {
    pub cfg: FedConfig,
    pub dataset: &'a ClientDataset,
    instance_counts: Vec<usize>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: FedConfig, dataset: &'a ClientDataset) -> Result<Self> {
        cfg.validate(dataset.num_users)?;
        let instance_counts = dataset
            .shards
            .iter()
            .map(|s| s.instances(cfg.train.neg_ratio))
            .collect();
        Ok(Runner {
            cfg,
            dataset,
            instance_counts,
        })
    }

    fn client_reprs(&self, global: &ModelParams) -> Vec<Vec<f64>> {
        (0..self.dataset.num_users as u32)
            .map(|u| global.user_repr(u))
            .collect()
    }

    pub fn init_state(&self) -> Result<FederationState> {
        let mut train = self.cfg.train.clone();
        train.init_seed = init_seed(self.cfg.seed);
        let global = init_model(
            self.cfg.variant,
            self.dataset.num_users,
            self.dataset.num_items,
            &train,
        );
        let (assignment, plan) = match self.cfg.strategy {
            Strategy::Cali3f => {
                // initial client representations: the fresh user-embedding rows
                let reprs = self.client_reprs(&global);
                let a = kmeans(&reprs, self.cfg.clusters, rng::derive_seed(self.cfg.seed, "cluster", 0))?;
                let p = clus_samp(&a, self.cfg.delegates, rng::derive_seed(self.cfg.seed, "sample", 0))?;
                (a, p)
            }
            Strategy::FedAvg | Strategy::Ditto => (
                ClusterAssignment {
                    assignment: vec![0; self.dataset.num_users],
                    centroids: vec![],
                    p: 1,
                },
                SamplingPlan {
                    delegates: vec![vec![]],
                    subordinates: vec![(0..self.dataset.num_users as u32).collect()],
                },
            ),
        };
        let cluster_models = if self.cfg.strategy == Strategy::Cali3f && self.cfg.personalization {
            vec![global.non_emb.clone(); self.cfg.clusters]
        } else {
            vec![]
        };
        let personal = if self.cfg.strategy == Strategy::Ditto {
            vec![global.clone(); self.dataset.num_users]
        } else {
            vec![]
        };
        Ok(FederationState {
            round: 0,
            global,
            cluster_models,
            assignment,
            plan,
            personal,
        })
    }

    fn train_delta(
        &self,
        start: &ModelParams,
        user: u32,
        purpose: &str,
        round: usize,
    ) -> Result<RoundDelta> {
        let shard = &self.dataset.shards[user as usize];
        let interacted = self.dataset.interacted_set(user);
        local_train(
            start,
            shard,
            &interacted,
            &self.cfg.train,
            client_train_seed(self.cfg.seed, purpose, round, user),
        )
    }

    /// Execute one Cali3f round (Algorithm-1 body) in place.
    fn run_round_cali3f(&self, state: &mut FederationState) -> Result<()> {
        let t = state.round + 1;
        let personalized = self.cfg.personalization;
        let delegates = state.plan.all_delegates();

        // client side: Δw_k from the global model; Δv_k from the cluster model
        // both trainings of a client share one seed: same batches, different
        // starting points, so the two deltas coincide whenever the cluster
        // model still equals the global N block
        let mut w_deltas: Vec<RoundDelta> = Vec::with_capacity(delegates.len());
        let mut v_deltas: Vec<RoundDelta> = Vec::with_capacity(delegates.len());
        for &k in &delegates {
            w_deltas.push(self.train_delta(&state.global, k, "train", t)?);
            if personalized {
                let cluster = state.assignment.assignment[k as usize] as usize;
                let mut start = state.global.clone();
                start.non_emb = state.cluster_models[cluster].clone();
                v_deltas.push(self.train_delta(&start, k, "train", t)?);
            }
        }
        // FastAgg consumes the cluster-model deltas; without personalization
        // the global-model deltas play both roles
        let fast_deltas: &[RoundDelta] = if personalized { &v_deltas } else { &w_deltas };

        // server side: calibrated per-cluster non-embedding update
        if personalized {
            let global_n = state.global.non_emb.clone();
            for (cluster, v_p) in state.cluster_models.iter_mut().enumerate() {
                let cluster_deltas: Vec<&RoundDelta> = v_deltas
                    .iter()
                    .filter(|d| state.assignment.assignment[d.user as usize] as usize == cluster)
                    .collect();
                if cluster_deltas.is_empty() {
                    continue;
                }
                let grad = weighted_mean_non(&cluster_deltas)?;
                cali_up(
                    v_p,
                    &global_n,
                    &grad,
                    self.cfg.cali.personalization_level,
                    self.cfg.cali.server_lr,
                    self.cfg.cali.epsilon_norm,
                )?;
            }
        }

        // global non-embedding update, FedAvg manner
        let w_refs: Vec<&RoundDelta> = w_deltas.iter().collect();
        global_nonembedding_update(&mut state.global.non_emb, &w_refs, self.cfg.cali.server_lr)?;

        // FastAgg embedding rules
        let fast_refs: Vec<&RoundDelta> = fast_deltas.iter().collect();
        update_delegate_embeddings(&mut state.global.user_emb, &fast_refs)?;
        let by_user: BTreeMap<u32, &RoundDelta> =
            fast_deltas.iter().map(|d| (d.user, d)).collect();
        let lambda_t = discount_schedule(
            self.cfg.cali.discount_factor,
            self.cfg.cali.discount_decay,
            t,
        );
        update_subordinate_embeddings(&mut state.global.user_emb, &state.plan, &by_user, lambda_t)?;
        aggregate_item_embeddings(
            &mut state.global.item_emb,
            &fast_refs,
            self.cfg.cali.item_row_norm_weights,
        );

        // re-clustering on the updated user embeddings, then carry each
        // client's previous cluster model into its new cluster's average
        if t % self.cfg.recluster_every == 0 {
            let reprs = self.client_reprs(&state.global);
            let new_assignment = kmeans(
                &reprs,
                self.cfg.clusters,
                rng::derive_seed(self.cfg.seed, "cluster", t as u64),
            )?;
            if personalized {
                state.cluster_models = clus_avg(
                    &state.cluster_models,
                    &state.assignment.assignment,
                    &new_assignment.assignment,
                    &self.instance_counts,
                )?;
            }
            state.assignment = new_assignment;
        }
        state.plan = clus_samp(
            &state.assignment,
            self.cfg.delegates,
            rng::derive_seed(self.cfg.seed, "sample", t as u64),
        )?;
        state.round = t;
        Ok(())
    }

    fn sample_uniform(&self, t: usize) -> Vec<u32> {
        let mut r = rng::stream(self.cfg.seed, "fedavg-sample", t as u64);
        let mut chosen: Vec<u32> =
            index_sample(&mut r, self.dataset.num_users, self.cfg.delegates)
                .into_iter()
                .map(|i| i as u32)
                .collect();
        chosen.sort_unstable();
        chosen
    }

    fn run_round_fedavg(&self, state: &mut FederationState, with_ditto: bool) -> Result<()> {
        let t = state.round + 1;
        let sampled = self.sample_uniform(t);
        let mut deltas = Vec::with_capacity(sampled.len());
        for &k in &sampled {
            deltas.push(self.train_delta(&state.global, k, "train", t)?);
        }
        if with_ditto {
            // personal models train against the broadcast global of this round
            let w_star = state.global.clone();
            for &k in &sampled {
                let shard = &self.dataset.shards[k as usize];
                let interacted = self.dataset.interacted_set(k);
                ditto_local_step(
                    &mut state.personal[k as usize],
                    &w_star,
                    shard,
                    &interacted,
                    &self.cfg.train,
                    &self.cfg.ditto,
                    client_train_seed(self.cfg.seed, "ditto", t, k),
                )?;
            }
        }
        let refs: Vec<&RoundDelta> = deltas.iter().collect();
        fedavg_aggregate(&mut state.global, &refs, self.cfg.cali.server_lr)?;
        state.round = t;
        Ok(())
    }

    pub fn run_round(&self, state: &mut FederationState) -> Result<()> {
        match self.cfg.strategy {
            Strategy::Cali3f => self.run_round_cali3f(state),
            Strategy::FedAvg => self.run_round_fedavg(state, false),
            Strategy::Ditto => self.run_round_fedavg(state, true),
        }
    }

    /// Per-user inference models: global U/I with the cluster's N block for
    /// Cali3f, the global model for FedAvg, each client's own model for Ditto.
    pub fn assemble_inference(&self, state: &FederationState) -> Vec<ModelParams> {
        match self.cfg.strategy {
            Strategy::Cali3f if self.cfg.personalization => state
                .cluster_models
                .iter()
                .map(|n| {
                    let mut m = state.global.clone();
                    m.non_emb = n.clone();
                    m
                })
                .collect(),
            _ => vec![state.global.clone()],
        }
    }

    pub fn evaluate(&self, state: &FederationState) -> Result<(RoundMetrics, Vec<f64>)> {
        match self.cfg.strategy {
            Strategy::Ditto if !state.personal.is_empty() => {
                evaluate_all(&self.dataset.shards, state.round, |u| {
                    &state.personal[u as usize]
                })
            }
            _ => {
                let models = self.assemble_inference(state);
                if models.len() == 1 {
                    evaluate_all(&self.dataset.shards, state.round, |_| &models[0])
                } else {
                    evaluate_all(&self.dataset.shards, state.round, |u| {
                        &models[state.assignment.assignment[u as usize] as usize]
                    })
                }
            }
        }
    }

    /// Run T rounds from a fresh shared initialization, evaluating on the
    /// configured cadence.
    pub fn run(&self) -> Result<RunResult> {
        let state = self.init_state()?;
        self.run_from(state)
    }

    /// Continue a (possibly checkpointed) state to the configured round count.
    pub fn run_from(&self, mut state: FederationState) -> Result<RunResult> {
        let (initial, _) = self.evaluate(&state)?;
        let mut history = MetricHistory::default();
        while state.round < self.cfg.rounds {
            self.run_round(&mut state)
                .map_err(|e| Error::Protocol(format!("round {} failed: {e}", state.round + 1)))?;
            if state.round % self.cfg.eval_every == 0 || state.round == self.cfg.rounds {
                let (metrics, ndcgs) = self.evaluate(&state)?;
                history.rounds.push(metrics);
                history.final_per_client_ndcg = ndcgs;
            }
        }
        Ok(RunResult { initial, history })
    }

    /// As `run`, but invoke `on_round` after every round (checkpoint hook).
    pub fn run_with<F>(&self, mut on_round: F) -> Result<(RunResult, FederationState)>
    where
        F: FnMut(&FederationState) -> Result<()>,
    {
        let mut state = self.init_state()?;
        let (initial, _) = self.evaluate(&state)?;
        let mut history = MetricHistory::default();
        while state.round < self.cfg.rounds {
            self.run_round(&mut state)?;
            if state.round % self.cfg.eval_every == 0 || state.round == self.cfg.rounds {
                let (metrics, ndcgs) = self.evaluate(&state)?;
                history.rounds.push(metrics);
                history.final_per_client_ndcg = ndcgs;
            }
            on_round(&state)?;
        }
        Ok((RunResult { initial, history }, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_client_dataset, table_from_rows};
    use crate::rng;
    use rand::Rng;

    /// Small synthetic dataset: `users` clients over `items` items, enough
    /// interactions that every client has 100+ eval negatives available.
    fn tiny_dataset(users: usize, items: usize, seed: u64) -> ClientDataset {
        let mut r = rng::stream(seed, "tiny-data", 0);
        let mut rows = Vec::new();
        // touch every item once so the dense item space is the full range and
        // each client has 100+ negatives to draw from
        for i in 0..items as u64 {
            rows.push((i % users as u64, i, -(items as i64) + i as i64));
        }
        for u in 0..users as u64 {
            let n = 5 + (u % 4) as usize;
            let mut seen = std::collections::HashSet::new();
            let mut ts = 0i64;
            while seen.len() < n {
                let item = r.gen_range(0..items as u64);
                if seen.insert(item) {
                    ts += 1;
                    rows.push((u, item, ts));
                }
            }
        }
        let table = table_from_rows(&rows);
        build_client_dataset(&table, 2, seed).unwrap()
    }

    fn tiny_cfg(strategy: Strategy, seed: u64) -> FedConfig {
        FedConfig {
            strategy,
            variant: Variant::Gmf,
            rounds: 3,
            clusters: 2,
            delegates: 3,
            train: TrainConfig {
                embedding_dim: 4,
                mlp_layers: vec![],
                neg_ratio: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            seed,
            ..FedConfig::default()
        }
    }

    #[test]
    fn population_is_conserved_each_round() {
        let data = tiny_dataset(8, 150, 1);
        let runner = Runner::new(tiny_cfg(Strategy::Cali3f, 4), &data).unwrap();
        let mut state = runner.init_state().unwrap();
        for _ in 0..3 {
            let delegates: usize = state.plan.delegates.iter().map(|d| d.len()).sum();
            let subs: usize = state.plan.subordinates.iter().map(|s| s.len()).sum();
            assert_eq!(delegates + subs, data.num_users);
            assert_eq!(delegates, 3);
            runner.run_round(&mut state).unwrap();
        }
    }

    #[test]
    fn runs_are_seed_reproducible() {
        let data = tiny_dataset(8, 150, 1);
        let r1 = Runner::new(tiny_cfg(Strategy::Cali3f, 7), &data)
            .unwrap()
            .run()
            .unwrap();
        let r2 = Runner::new(tiny_cfg(Strategy::Cali3f, 7), &data)
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(
            serde_json::to_string(&r1.history).unwrap(),
            serde_json::to_string(&r2.history).unwrap()
        );
        let r3 = Runner::new(tiny_cfg(Strategy::Cali3f, 8), &data)
            .unwrap()
            .run()
            .unwrap();
        assert_ne!(
            serde_json::to_string(&r1.history).unwrap(),
            serde_json::to_string(&r3.history).unwrap()
        );
    }

    #[test]
    fn shared_initialization_across_strategies() {
        let data = tiny_dataset(8, 150, 1);
        let cali = Runner::new(tiny_cfg(Strategy::Cali3f, 5), &data).unwrap();
        let fed = Runner::new(tiny_cfg(Strategy::FedAvg, 5), &data).unwrap();
        let s1 = cali.init_state().unwrap();
        let s2 = fed.init_state().unwrap();
        assert_eq!(s1.global, s2.global);
        let (m1, _) = cali.evaluate(&s1).unwrap();
        let (m2, _) = fed.evaluate(&s2).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn history_length_matches_rounds() {
        let data = tiny_dataset(8, 150, 1);
        let mut cfg = tiny_cfg(Strategy::FedAvg, 2);
        cfg.rounds = 1;
        let result = Runner::new(cfg, &data).unwrap().run().unwrap();
        assert_eq!(result.history.rounds.len(), 1);
    }

    #[test]
    fn single_cluster_all_delegates_personalization_off_matches_global_n() {
        // with φ=0, λ=0, P=1 and every client a delegate, the cluster model
        // trajectory follows the global N trajectory exactly
        let data = tiny_dataset(6, 150, 3);
        let mut cfg = tiny_cfg(Strategy::Cali3f, 6);
        cfg.clusters = 1;
        cfg.delegates = 6;
        cfg.cali.personalization_level = 0.0;
        cfg.cali.discount_factor = 0.0;
        // clus_avg disabled: with P=1 the within-cluster re-average is an
        // identity only up to floating-point rounding
        cfg.recluster_every = 100;
        let runner = Runner::new(cfg, &data).unwrap();
        let mut state = runner.init_state().unwrap();
        for _ in 0..3 {
            runner.run_round(&mut state).unwrap();
            assert_eq!(
                state.cluster_models[0].flat(),
                state.global.non_emb.flat()
            );
        }
    }

    #[test]
    fn ditto_personal_models_persist() {
        let data = tiny_dataset(8, 150, 1);
        let mut cfg = tiny_cfg(Strategy::Ditto, 9);
        cfg.rounds = 2;
        let runner = Runner::new(cfg, &data).unwrap();
        let mut state = runner.init_state().unwrap();
        assert_eq!(state.personal.len(), 8);
        let before = state.personal[0].clone();
        runner.run_round(&mut state).unwrap();
        runner.run_round(&mut state).unwrap();
        // at least one personal model moved away from its initialization
        let moved = state
            .personal
            .iter()
            .filter(|p| p.flatten() != before.flatten())
            .count();
        assert!(moved >= 1);
    }

    #[test]
    fn fedavg_inference_is_single_global_model() {
        let data = tiny_dataset(8, 150, 1);
        let runner = Runner::new(tiny_cfg(Strategy::FedAvg, 3), &data).unwrap();
        let mut state = runner.init_state().unwrap();
        runner.run_round(&mut state).unwrap();
        assert_eq!(runner.assemble_inference(&state).len(), 1);
    }

    #[test]
    fn ablation_disables_cluster_models() {
        let data = tiny_dataset(8, 150, 1);
        let mut cfg = tiny_cfg(Strategy::Cali3f, 3);
        cfg.personalization = false;
        let runner = Runner::new(cfg, &data).unwrap();
        let mut state = runner.init_state().unwrap();
        assert!(state.cluster_models.is_empty());
        runner.run_round(&mut state).unwrap();
        assert_eq!(runner.assemble_inference(&state).len(), 1);
    }

    #[test]
    fn config_validation_reports_all_problems() {
        let data = tiny_dataset(4, 150, 1);
        let mut cfg = tiny_cfg(Strategy::Cali3f, 0);
        cfg.rounds = 0;
        cfg.clusters = 99;
        cfg.delegates = 99;
        let err = match Runner::new(cfg, &data) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected config error"),
        };
        assert!(err.contains("rounds"));
        assert!(err.contains("clusters"));
        assert!(err.contains("delegates"));
    }
}
