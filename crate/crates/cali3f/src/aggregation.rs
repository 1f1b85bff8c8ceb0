//! Server-side update rules: the three FastAgg embedding rules, the
//! calibrated non-embedding update (CaliUp), and the FedAvg / Ditto baselines.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::clustering::SamplingPlan;
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, sgd_step, Embedding, ModelParams, NonEmbedding};

/// A client's reported parameter change after local training.
///
/// Deltas follow the pseudo-gradient convention: delta = initial − final, so
/// applying `params -= delta` reproduces the trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundDelta {
    pub user: u32,
    /// per U table: the client's own row delta
    pub delta_user: Vec<BTreeMap<u32, Vec<f64>>>,
    /// per I table: non-zero row deltas (keys are the touched item set I_d)
    pub delta_item: Vec<BTreeMap<u32, Vec<f64>>>,
    /// per I table: the trained rows for the touched items
    pub new_item_rows: Vec<BTreeMap<u32, Vec<f64>>>,
    pub delta_non: NonEmbedding,
    pub n_k: usize,
}

impl RoundDelta {
    pub fn from_models(
        start: &ModelParams,
        trained: &ModelParams,
        user: u32,
        touched: &HashSet<u32>,
        n_k: usize,
    ) -> Self {
        let mut delta_user = Vec::new();
        for (a, b) in start.user_emb.iter().zip(&trained.user_emb) {
            let row: Vec<f64> = a.row(user).iter().zip(b.row(user)).map(|(x, y)| x - y).collect();
            let mut m = BTreeMap::new();
            m.insert(user, row);
            delta_user.push(m);
        }
        let mut delta_item = Vec::new();
        let mut new_item_rows = Vec::new();
        for (a, b) in start.item_emb.iter().zip(&trained.item_emb) {
            let mut d = BTreeMap::new();
            let mut n = BTreeMap::new();
            let mut items: Vec<u32> = touched.iter().copied().collect();
            items.sort_unstable();
            for i in items {
                let row: Vec<f64> =
                    a.row(i).iter().zip(b.row(i)).map(|(x, y)| x - y).collect();
                if row.iter().any(|v| *v != 0.0) {
                    d.insert(i, row);
                    n.insert(i, b.row(i).to_vec());
                }
            }
            delta_item.push(d);
            new_item_rows.push(n);
        }
        RoundDelta {
            user,
            delta_user,
            delta_item,
            new_item_rows,
            delta_non: start.non_emb.sub(&trained.non_emb),
            n_k,
        }
    }

    /// Touched item set I_d = items with a non-zero embedding delta.
    pub fn touched_items(&self) -> Vec<u32> {
        let mut items: Vec<u32> = self
            .delta_item
            .iter()
            .flat_map(|t| t.keys().copied())
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// params -= scale * delta, over all blocks.
    pub fn apply_to(&self, params: &mut ModelParams, scale: f64) {
        for (table, rows) in params.user_emb.iter_mut().zip(&self.delta_user) {
            for (&r, drow) in rows {
                for (p, d) in table.row_mut(r).iter_mut().zip(drow) {
                    *p -= scale * d;
                }
            }
        }
        for (table, rows) in params.item_emb.iter_mut().zip(&self.delta_item) {
            for (&r, drow) in rows {
                for (p, d) in table.row_mut(r).iter_mut().zip(drow) {
                    *p -= scale * d;
                }
            }
        }
        params.non_emb.axpy(-scale, &self.delta_non);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaliConfig {
    /// φ: strength of the pull toward the global model
    pub personalization_level: f64,
    /// λ_0: subordinate broadcast discount at round 1
    pub discount_factor: f64,
    /// per-round multiplicative decay of λ (1.0 = constant)
    pub discount_decay: f64,
    /// server-side step size applied to aggregated pseudo-gradients
    pub server_lr: f64,
    /// below this ‖v_p − w‖ the calibration term is dropped
    pub epsilon_norm: f64,
    /// weight Eq.-5 items by per-row |Δ| norms instead of componentwise |Δ|
    pub item_row_norm_weights: bool,
}

impl Default for CaliConfig {
    fn default() -> Self {
        CaliConfig {
            personalization_level: 0.1,
            discount_factor: 0.5,
            discount_decay: 1.0,
            server_lr: 1.0,
            epsilon_norm: 1e-12,
            item_row_norm_weights: false,
        }
    }
}

impl CaliConfig {
    pub fn validate(&self) -> Result<()> {
        if self.personalization_level < 0.0 {
            return Err(Error::Config("phi must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.discount_factor) {
            return Err(Error::Config("lambda0 must be in [0,1]".into()));
        }
        if self.discount_decay <= 0.0 || self.discount_decay > 1.0 {
            return Err(Error::Config("decay must be in (0,1]".into()));
        }
        if self.server_lr <= 0.0 {
            return Err(Error::Config("server_lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DittoConfig {
    pub regularization_weight: f64,
    pub local_lr: f64,
    pub local_steps: usize,
}

impl Default for DittoConfig {
    fn default() -> Self {
        DittoConfig {
            regularization_weight: 0.5,
            local_lr: 0.05,
            local_steps: 2,
        }
    }
}

/// λ_t = λ_0 · decay^(t−1), for round index t ≥ 1.
pub fn discount_schedule(lambda0: f64, decay: f64, t: usize) -> f64 {
    debug_assert!(t >= 1);
    lambda0 * decay.powi(t as i32 - 1)
}

/// Eq.-3 rule: overwrite each delegate's user-embedding row with its trained
/// row; every other row is untouched.
pub fn update_delegate_embeddings(user_emb: &mut [Embedding], deltas: &[&RoundDelta]) -> Result<()> {
    let mut seen = HashSet::new();
    for delta in deltas {
        if !seen.insert(delta.user) {
            return Err(Error::Protocol(format!(
                "two deltas claim user row {}",
                delta.user
            )));
        }
        for (table, rows) in user_emb.iter_mut().zip(&delta.delta_user) {
            for (&r, drow) in rows {
                for (p, d) in table.row_mut(r).iter_mut().zip(drow) {
                    *p -= d; // trained row = old − delta
                }
            }
        }
    }
    Ok(())
}

/// Eq.-4 rule: each subordinate row moves by λ_t times the mean of its
/// cluster's delegate row-changes. Delegate rows are not modified here.
pub fn update_subordinate_embeddings(
    user_emb: &mut [Embedding],
    plan: &SamplingPlan,
    deltas_by_user: &BTreeMap<u32, &RoundDelta>,
    lambda_t: f64,
) -> Result<()> {
    if lambda_t < 0.0 {
        return Err(Error::Config("lambda_t must be >= 0".into()));
    }
    for (cluster, delegates) in plan.delegates.iter().enumerate() {
        let ds: Vec<&&RoundDelta> = delegates
            .iter()
            .filter_map(|u| deltas_by_user.get(u))
            .collect();
        if ds.is_empty() {
            if !plan.subordinates[cluster].is_empty() {
                eprintln!("warning: cluster {cluster} has no delegate deltas, skipping broadcast");
            }
            continue;
        }
        // mean row-change per table; row-change = new − old = −delta
        for (t, table) in user_emb.iter_mut().enumerate() {
            let mut mean = vec![0.0; table.dim];
            for d in &ds {
                let (_, drow) = d.delta_user[t].iter().next().expect("own row present");
                for (m, v) in mean.iter_mut().zip(drow) {
                    *m += -v / ds.len() as f64;
                }
            }
            for &s in &plan.subordinates[cluster] {
                for (p, m) in table.row_mut(s).iter_mut().zip(&mean) {
                    *p += lambda_t * m;
                }
            }
        }
    }
    Ok(())
}

/// Eq.-5 rule: per item and component, average delegates' trained values
/// weighted by their update magnitude |Δ|. Components nobody moved keep
/// their previous value.
pub fn aggregate_item_embeddings(
    item_emb: &mut [Embedding],
    deltas: &[&RoundDelta],
    row_norm_weights: bool,
) {
    for (t, table) in item_emb.iter_mut().enumerate() {
        // item -> (Σθ, Σθ·value) per component
        let mut acc: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for delta in deltas {
            for (&item, drow) in &delta.delta_item[t] {
                let new_row = &delta.new_item_rows[t][&item];
                let entry = acc
                    .entry(item)
                    .or_insert_with(|| (vec![0.0; table.dim], vec![0.0; table.dim]));
                if row_norm_weights {
                    let theta = drow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    for c in 0..table.dim {
                        entry.0[c] += theta;
                        entry.1[c] += theta * new_row[c];
                    }
                } else {
                    for c in 0..table.dim {
                        let theta = drow[c].abs();
                        entry.0[c] += theta;
                        entry.1[c] += theta * new_row[c];
                    }
                }
            }
        }
        for (item, (theta_sum, weighted)) in acc {
            let row = table.row_mut(item);
            for c in 0..row.len() {
                if theta_sum[c] > 0.0 {
                    row[c] = weighted[c] / theta_sum[c];
                }
            }
        }
    }
}

/// Eq.-6 rule (CaliUp): v_p' = v_p − η·(g + φ‖g‖·(v_p − w)/‖v_p − w‖).
///
/// When ‖v_p − w‖ < epsilon the calibration term is dropped and this is a
/// plain SGD step; with φ = 0 it is bitwise a plain SGD step.
pub fn cali_up(
    v_p: &mut NonEmbedding,
    w: &NonEmbedding,
    grad: &NonEmbedding,
    phi: f64,
    eta: f64,
    epsilon_norm: f64,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("cali_up gradient".into()));
    }
    if phi == 0.0 {
        v_p.axpy(-eta, grad);
        return Ok(());
    }
    let diff = v_p.sub(w);
    let diff_norm = diff.norm();
    if diff_norm < epsilon_norm {
        v_p.axpy(-eta, grad);
        return Ok(());
    }
    let grad_norm = grad.norm();
    v_p.axpy(-eta, grad);
    v_p.axpy(-eta * phi * grad_norm / diff_norm, &diff);
    Ok(())
}

fn weights(deltas: &[&RoundDelta]) -> Vec<f64> {
    let total: f64 = deltas.iter().map(|d| d.n_k as f64).sum();
    if total > 0.0 {
        deltas.iter().map(|d| d.n_k as f64 / total).collect()
    } else {
        vec![1.0 / deltas.len() as f64; deltas.len()]
    }
}

/// n_k-weighted mean of delegate deltas restricted to block N.
pub fn weighted_mean_non(deltas: &[&RoundDelta]) -> Result<NonEmbedding> {
    if deltas.is_empty() {
        return Err(Error::Protocol("weighted_mean_non: no deltas".into()));
    }
    let w = weights(deltas);
    let mut acc = deltas[0].delta_non.zeros_like();
    for (d, wk) in deltas.iter().zip(w) {
        acc.axpy(wk, &d.delta_non);
    }
    Ok(acc)
}

/// Global block-N update: w_N -= η_s · Σ (n_k/n_σ)·Δ_N.
pub fn global_nonembedding_update(
    w_n: &mut NonEmbedding,
    deltas: &[&RoundDelta],
    eta_s: f64,
) -> Result<()> {
    let mean = weighted_mean_non(deltas)?;
    w_n.axpy(-eta_s, &mean);
    Ok(())
}

/// FedAvg: w' = w − η_s · Σ (n_k/n_σ)·Δ over all blocks, reduced in ascending
/// user id order.
pub fn fedavg_aggregate(
    params: &mut ModelParams,
    deltas: &[&RoundDelta],
    eta_s: f64,
) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::Protocol("fedavg_aggregate: no deltas".into()));
    }
    let mut sorted: Vec<&RoundDelta> = deltas.iter().copied().collect();
    sorted.sort_by_key(|d| d.user);
    let sorted_refs: Vec<&RoundDelta> = sorted;
    let w = weights(&sorted_refs);
    for (delta, wk) in sorted_refs.iter().zip(w) {
        delta.apply_to(params, eta_s * wk);
    }
    Ok(())
}

/// One Ditto client update: `local_steps` epochs of SGD on
/// F_k(v_k) + (λ_d/2)‖v_k − w*‖², negatives resampled per epoch.
pub fn ditto_local_step(
    v_k: &mut ModelParams,
    w_star: &ModelParams,
    shard: &ClientShard,
    interacted: &HashSet<u32>,
    train: &crate::model::TrainConfig,
    config: &DittoConfig,
    rng_seed: u64,
) -> Result<()> {
    use rand::Rng;
    for epoch in 0..config.local_steps {
        let mut r = crate::rng::stream(rng_seed, "ditto-epoch", epoch as u64);
        let negs = crate::data::sample_train_negatives(
            shard,
            interacted,
            v_k.num_items,
            train.neg_ratio,
            &mut r,
        );
        let mut examples: Vec<(u32, u32, f64)> = shard
            .train_items
            .iter()
            .map(|&i| (shard.user, i, 1.0))
            .chain(negs.iter().map(|&i| (shard.user, i, 0.0)))
            .collect();
        for i in (1..examples.len()).rev() {
            let j = r.gen_range(0..=i);
            examples.swap(i, j);
        }
        for batch in examples.chunks(train.batch_size) {
            // proximal direction at the current point, before the data step
            let mut prox = v_k.clone();
            prox.axpy(-1.0, w_star);
            let (_, grads) = loss_and_grad(v_k, batch)?;
            sgd_step(v_k, &grads, config.local_lr)?;
            v_k.axpy(-config.local_lr * config.regularization_weight, &prox);
        }
    }
    Ok(())
}
