//! K-means over client representations, round-robin delegate sampling
//! (ClusSamp) and within-cluster averaging of non-embedding blocks (ClusAvg).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NonEmbedding;
use crate::rng;

pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// client index -> cluster id in [0, p)
    pub assignment: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    pub p: usize,
}

impl ClusterAssignment {
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.p];
        for (client, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(client as u32);
        }
        out
    }

    pub fn distortion(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(pt, &c)| dist2(pt, &self.centroids[c as usize]))
            .sum()
    }
}

/// Per-round delegate/subordinate partition of every cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub delegates: Vec<Vec<u32>>,
    pub subordinates: Vec<Vec<u32>>,
}

impl SamplingPlan {
    pub fn all_delegates(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.delegates.iter().flatten().copied().collect();
        d.sort_unstable();
        d
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(pt: &[f64], centroids: &[Vec<f64>]) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.iter().enumerate() {
        let d = dist2(pt, cent);
        // strict < keeps the lower cluster id on ties
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    best
}

fn kmeans_pp_seed(points: &[Vec<f64>], p: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(p);
    centroids.push(points[r.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|pt| dist2(pt, &centroids[0]))
        .collect();
    while centroids.len() < p {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            // weighted draw proportional to squared distance
            let target = r.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all points coincide with existing centroids
            r.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (i, pt) in points.iter().enumerate() {
            let d = dist2(pt, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd's k-means from k-means++ seeding; deterministic given `seed`.
///
/// Empty clusters are repaired by stealing the point farthest from its
/// current centroid.
pub fn kmeans(points: &[Vec<f64>], p: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_trace(points, p, seed).map(|(a, _)| a)
}

/// As [`kmeans`], additionally returning the distortion after seeding and
/// after every Lloyd iteration (useful for monotonicity checks).
pub fn kmeans_trace(
    points: &[Vec<f64>],
    p: usize,
    seed: u64,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = points.len();
    if p == 0 || n < p {
        return Err(Error::Infeasible(format!("kmeans: n={n} < p={p}")));
    }
    let dim = points[0].len();
    let mut r = rng::stream(seed, "kmeans", 0);
    let mut centroids = kmeans_pp_seed(points, p, &mut r);
    let mut assignment: Vec<u32> = points.iter().map(|pt| nearest(pt, &centroids)).collect();
    let distortion_of = |assignment: &[u32], centroids: &[Vec<f64>]| -> f64 {
        points
            .iter()
            .zip(assignment)
            .map(|(pt, &c)| dist2(pt, &centroids[c as usize]))
            .sum()
    };
    let mut trace = vec![distortion_of(&assignment, &centroids)];
    for _ in 0..KMEANS_MAX_ITERS {
        repair_empty(points, &mut assignment, &mut centroids, p);
        // recompute centroids
        let mut sums = vec![vec![0.0; dim]; p];
        let mut counts = vec![0usize; p];
        for (pt, &c) in points.iter().zip(&assignment) {
            counts[c as usize] += 1;
            for (s, v) in sums[c as usize].iter_mut().zip(pt) {
                *s += v;
            }
        }
        for (c, sum) in sums.iter_mut().enumerate() {
            if counts[c] > 0 {
                for v in sum.iter_mut() {
                    *v /= counts[c] as f64;
                }
                centroids[c] = sum.clone();
            }
        }
        let next: Vec<u32> = points.iter().map(|pt| nearest(pt, &centroids)).collect();
        let done = next == assignment;
        assignment = next;
        trace.push(distortion_of(&assignment, &centroids));
        if done {
            break;
        }
    }
    repair_empty(points, &mut assignment, &mut centroids, p);
    Ok((
        ClusterAssignment {
            assignment,
            centroids,
            p,
        },
        trace,
    ))
}

fn repair_empty(points: &[Vec<f64>], assignment: &mut [u32], centroids: &mut [Vec<f64>], p: usize) {
    loop {
        let mut counts = vec![0usize; p];
        for &c in assignment.iter() {
            counts[c as usize] += 1;
        }
        let empty = match counts.iter().position(|&c| c == 0) {
            Some(e) => e,
            None => return,
        };
        // steal the point farthest from its centroid, from a cluster that can spare it
        let mut far_idx = None;
        let mut far_d = -1.0;
        for (i, pt) in points.iter().enumerate() {
            let c = assignment[i] as usize;
            if counts[c] < 2 {
                continue;
            }
            let d = dist2(pt, &centroids[c]);
            if d > far_d {
                far_d = d;
                far_idx = Some(i);
            }
        }
        match far_idx {
            Some(i) => {
                assignment[i] = empty as u32;
                centroids[empty] = points[i].clone();
            }
            None => return,
        }
    }
}

/// Round-robin delegate selection: visit clusters in id order, drawing one
/// uniformly random unselected member per visit, skipping exhausted clusters,
/// until `m` delegates are chosen.
pub fn clus_samp(assignment: &ClusterAssignment, m: usize, seed: u64) -> Result<SamplingPlan> {
    let n = assignment.assignment.len();
    if m == 0 || m > n {
        return Err(Error::Infeasible(format!("clus_samp: m={m}, n={n}")));
    }
    let members = assignment.members();
    let mut remaining: Vec<Vec<u32>> = members.clone();
    let mut delegates: Vec<Vec<u32>> = vec![Vec::new(); assignment.p];
    let mut r = rng::stream(seed, "clus-samp", 0);
    let mut chosen = 0;
    while chosen < m {
        let mut progressed = false;
        for c in 0..assignment.p {
            if chosen == m {
                break;
            }
            if remaining[c].is_empty() {
                continue;
            }
            let idx = r.gen_range(0..remaining[c].len());
            let user = remaining[c].remove(idx);
            delegates[c].push(user);
            chosen += 1;
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    for d in delegates.iter_mut() {
        d.sort_unstable();
    }
    let subordinates = members
        .iter()
        .zip(&delegates)
        .map(|(m, d)| m.iter().filter(|u| !d.contains(u)).copied().collect())
        .collect();
    Ok(SamplingPlan {
        delegates,
        subordinates,
    })
}

/// Instance-weighted within-cluster averaging after re-clustering.
///
/// Each client carries the model of its OLD cluster into the weighted average
/// of its NEW cluster: out[p] = Σ_{k∈p} n_k · models[old(k)] / Σ_{k∈p} n_k.
pub fn clus_avg(
    models: &[NonEmbedding],
    old_assign: &[u32],
    new_assign: &[u32],
    instance_counts: &[usize],
) -> Result<Vec<NonEmbedding>> {
    if old_assign.len() != new_assign.len() || old_assign.len() != instance_counts.len() {
        return Err(Error::ShapeMismatch("clus_avg inputs".into()));
    }
    let p = models.len();
    let mut out = Vec::with_capacity(p);
    for cluster in 0..p as u32 {
        let members: Vec<usize> = new_assign
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(k, _)| k)
            .collect();
        if members.is_empty() {
            out.push(models[cluster as usize].clone());
            continue;
        }
        let total: f64 = members.iter().map(|&k| instance_counts[k] as f64).sum();
        let mut acc = models[0].zeros_like();
        if total > 0.0 {
            for &k in &members {
                acc.axpy(
                    instance_counts[k] as f64 / total,
                    &models[old_assign[k] as usize],
                );
            }
        } else {
            // zero total weight: unweighted mean of the carried models
            for &k in &members {
                acc.axpy(1.0 / members.len() as f64, &models[old_assign[k] as usize]);
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// kmeans followed by clus_samp, seeded from one root.
pub fn initial_grouping(
    representations: &[Vec<f64>],
    p: usize,
    m: usize,
    seed: u64,
) -> Result<(ClusterAssignment, SamplingPlan)> {
    let assignment = kmeans(representations, p, seed)?;
    let plan = clus_samp(&assignment, m, seed)?;
    Ok((assignment, plan))
}
