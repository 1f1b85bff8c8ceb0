//! Leave-one-out ranking evaluation: HR@10, NDCG@10, per-client fairness
//! (std of per-client NDCG) and rounds-to-threshold convergence measurement.

use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::Result;
use crate::model::{forward, ModelParams};

pub const TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
    pub fairness_std_ndcg: f64,
    pub fairness_std_hr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricHistory {
    pub rounds: Vec<RoundMetrics>,
    /// per-client NDCG at the final evaluated round, for fairness reporting
    pub final_per_client_ndcg: Vec<f64>,
}

impl MetricHistory {
    pub fn best(&self, metric: impl Fn(&RoundMetrics) -> f64) -> f64 {
        self.rounds.iter().map(&metric).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }
}

/// Score the 101 candidates (test item plus negatives) and return the
/// 1-based rank of the test item. Score ties break toward the lower item id.
pub fn rank_candidates(model: &ModelParams, user: u32, test_item: u32, negatives: &[u32]) -> Result<usize> {
    let test_score = forward(model, user, test_item)?;
    let mut rank = 1usize;
    for &neg in negatives {
        let s = forward(model, user, neg)?;
        if s > test_score || (s == test_score && neg < test_item) {
            rank += 1;
        }
    }
    Ok(rank)
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// 1/log2(rank+1) within the cutoff; the ideal DCG for one relevant item is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

/// Population standard deviation (divide by K). Lower is fairer.
pub fn fairness_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Evaluate every shard with a test item under its own inference model.
///
/// `model_for` maps a user to the model that serves it (per-cluster for
/// Cali3F, global for FedAvg, per-client for Ditto).
pub fn evaluate_all<'a, F>(
    shards: &[ClientShard],
    round: usize,
    model_for: F,
) -> Result<(RoundMetrics, Vec<f64>)>
where
    F: Fn(u32) -> &'a ModelParams,
{
    let mut hrs = Vec::new();
    let mut ndcgs = Vec::new();
    for shard in shards {
        let test_item = match shard.test_item {
            Some(t) => t,
            None => continue, // users without a held-out item are train-only
        };
        let model = model_for(shard.user);
        let rank = rank_candidates(model, shard.user, test_item, &shard.eval_negatives)?;
        hrs.push(hr_at_k(rank, TOP_K));
        ndcgs.push(ndcg_at_k(rank, TOP_K));
    }
    let n = hrs.len().max(1) as f64;
    let metrics = RoundMetrics {
        round,
        mean_hr: hrs.iter().sum::<f64>() / n,
        mean_ndcg: ndcgs.iter().sum::<f64>() / n,
        fairness_std_ndcg: fairness_std(&ndcgs),
        fairness_std_hr: fairness_std(&hrs),
    };
    Ok((metrics, ndcgs))
}

/// Smallest 1-based round index whose metric value is within `frac` of the
/// run's own best value.
pub fn rounds_to_threshold(
    history: &MetricHistory,
    metric: impl Fn(&RoundMetrics) -> f64,
    frac: f64,
) -> usize {
    let best = history.best(&metric);
    let threshold = (1.0 - frac) * best;
    for (idx, r) in history.rounds.iter().enumerate() {
        if metric(r) >= threshold {
            return idx + 1;
        }
    }
    history.rounds.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, TrainConfig, Variant};

    fn toy_model() -> ModelParams {
        let cfg = TrainConfig {
            embedding_dim: 2,
            mlp_layers: vec![],
            init_seed: 3,
            ..TrainConfig::default()
        };
        init_model(Variant::Gmf, 4, 120, &cfg)
    }

    #[test]
    fn rank_extremes() {
        let mut m = toy_model();
        // make item 0 score far above everything for user 0
        m.user_emb[0].row_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.item_emb[0].row_mut(0).copy_from_slice(&[10.0, 0.0]);
        m.non_emb.output.w.copy_from_slice(&[1.0, 1.0]);
        m.non_emb.output.b[0] = 0.0;
        let negatives: Vec<u32> = (1..101).collect();
        assert_eq!(rank_candidates(&m, 0, 0, &negatives).unwrap(), 1);
        // and far below everything
        m.item_emb[0].row_mut(0).copy_from_slice(&[-10.0, 0.0]);
        assert_eq!(rank_candidates(&m, 0, 0, &negatives).unwrap(), 101);
    }

    #[test]
    fn rank_tie_breaks_to_lower_item_id() {
        let mut m = toy_model();
        let n = m.param_count();
        m.assign_flat(&vec![0.0; n]); // every score is exactly 0.5
        let negatives: Vec<u32> = (1..101).collect();
        assert_eq!(rank_candidates(&m, 0, 0, &negatives).unwrap(), 1);
        // test item 101 has the highest id among candidates 1..=100 ∪ {101}
        let negatives: Vec<u32> = (1..101).collect();
        assert_eq!(rank_candidates(&m, 0, 101, &negatives).unwrap(), 101);
    }

    #[test]
    fn hr_boundary() {
        assert_eq!(hr_at_k(1, 10), 1.0);
        assert_eq!(hr_at_k(10, 10), 1.0);
        assert_eq!(hr_at_k(11, 10), 0.0);
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert!((ndcg_at_k(3, 10) - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
    }

    #[test]
    fn fairness_std_values() {
        assert_eq!(fairness_std(&[0.5, 0.5, 0.5]), 0.0);
        assert!((fairness_std(&[0.0, 1.0]) - 0.5).abs() < 1e-12);
        assert!((fairness_std(&[1.0, 0.0, 1.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evaluate_all_excludes_no_test_users() {
        let m = toy_model();
        let shard_with = ClientShard {
            user: 0,
            train_items: vec![5],
            test_item: Some(0),
            eval_negatives: (1..101).collect(),
            num_instances: 0,
        };
        let shard_without = ClientShard {
            user: 1,
            train_items: vec![5],
            test_item: None,
            eval_negatives: vec![],
            num_instances: 0,
        };
        let (with_only, _) = evaluate_all(&[shard_with.clone()], 0, |_| &m).unwrap();
        let (both, ndcgs) =
            evaluate_all(&[shard_with, shard_without], 0, |_| &m).unwrap();
        assert_eq!(with_only, RoundMetrics { round: 0, ..both });
        assert_eq!(ndcgs.len(), 1);
    }

    #[test]
    fn evaluate_all_single_user_rank_one() {
        let mut m = toy_model();
        m.user_emb[0].row_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.item_emb[0].row_mut(0).copy_from_slice(&[10.0, 0.0]);
        m.non_emb.output.w.copy_from_slice(&[1.0, 1.0]);
        let shard = ClientShard {
            user: 0,
            train_items: vec![],
            test_item: Some(0),
            eval_negatives: (1..101).collect(),
            num_instances: 0,
        };
        let (metrics, _) = evaluate_all(&[shard], 2, |_| &m).unwrap();
        assert_eq!(metrics.mean_hr, 1.0);
        assert_eq!(metrics.mean_ndcg, 1.0);
        assert_eq!(metrics.fairness_std_ndcg, 0.0);
        assert_eq!(metrics.round, 2);
    }

    fn history(vals: &[f64]) -> MetricHistory {
        MetricHistory {
            rounds: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| RoundMetrics {
                    round: i + 1,
                    mean_hr: v,
                    mean_ndcg: v,
                    fairness_std_ndcg: 0.0,
                    fairness_std_hr: 0.0,
                })
                .collect(),
            final_per_client_ndcg: vec![],
        }
    }

    #[test]
    fn rounds_to_threshold_hand_scan() {
        let h = history(&[0.10, 0.20, 0.38, 0.39, 0.40]);
        assert_eq!(rounds_to_threshold(&h, |r| r.mean_ndcg, 0.05), 3);
    }

    #[test]
    fn rounds_to_threshold_final_jump() {
        let h = history(&[0.10, 0.11, 0.12, 0.50]);
        assert_eq!(rounds_to_threshold(&h, |r| r.mean_ndcg, 0.05), 4);
    }

    #[test]
    fn rounds_to_threshold_constant_series() {
        let h = history(&[0.3, 0.3, 0.3]);
        assert_eq!(rounds_to_threshold(&h, |r| r.mean_ndcg, 0.05), 1);
    }
}
