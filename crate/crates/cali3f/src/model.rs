//! GMF, MLP and NeuMF scoring models with analytic gradients.
//!
//! Parameters are partitioned into three blocks: user embeddings (U), item
//! embeddings (I) and everything else (N). NeuMF keeps two embedding tables
//! per side, one feeding the elementwise-product path and one the MLP tower;
//! both count towards U (resp. I).

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::RoundDelta;
use crate::data::{sample_train_negatives, ClientShard};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Gmf,
    Mlp,
    NeuMf,
}

impl Variant {
    pub fn parse_flag(s: &str) -> Result<Variant> {
        match s {
            "gmf" => Ok(Variant::Gmf),
            "mlp" => Ok(Variant::Mlp),
            "neumf" => Ok(Variant::NeuMf),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub mlp_layers: Vec<usize>,
    pub neg_ratio: usize,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            local_epochs: 2,
            batch_size: 64,
            embedding_dim: 8,
            mlp_layers: vec![32, 16, 8],
            neg_ratio: 4,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A dense row-major embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embedding {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Embedding {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, r: u32) -> &[f64] {
        let r = r as usize;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: u32) -> &mut [f64] {
        let r = r as usize;
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// One fully connected layer, weights stored out×in row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }
}

/// The non-embedding block N: hidden tower plus scalar-output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonEmbedding {
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl NonEmbedding {
    pub fn zeros_like(&self) -> Self {
        NonEmbedding {
            hidden: self
                .hidden
                .iter()
                .map(|d| Dense::zeros(d.in_dim, d.out_dim))
                .collect(),
            output: Dense::zeros(self.output.in_dim, self.output.out_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.output))
            .map(|d| d.w.len() + d.b.len())
            .sum()
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.output))
            .flat_map(|d| [d.w.as_slice(), d.b.as_slice()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.output))
            .flat_map(|d| [&mut d.w, &mut d.b])
    }

    pub fn shape_matches(&self, other: &Self) -> bool {
        self.hidden.len() == other.hidden.len()
            && self
                .hidden
                .iter()
                .zip(&other.hidden)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
            && self.output.in_dim == other.output.in_dim
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (dst, src) in self.slices_mut().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for dst in self.slices_mut() {
            for d in dst.iter_mut() {
                *d *= a;
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Frobenius norm over the flattened whole block.
    pub fn norm(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut idx = 0;
        for dst in self.slices_mut() {
            let len = dst.len();
            dst.copy_from_slice(&flat[idx..idx + len]);
            idx += len;
        }
        debug_assert_eq!(idx, flat.len());
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flat_map(|s| s.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub mlp_layers: Vec<usize>,
    /// Block U: one table, or [gmf, mlp] for NeuMF.
    pub user_emb: Vec<Embedding>,
    /// Block I: mirrors user_emb.
    pub item_emb: Vec<Embedding>,
    /// Block N.
    pub non_emb: NonEmbedding,
}

/// Disjoint borrowed views of the three parameter blocks.
pub struct BlockViews<'a> {
    pub user: &'a [Embedding],
    pub item: &'a [Embedding],
    pub non: &'a NonEmbedding,
}

const EMB_INIT_HALF_WIDTH: f64 = 0.01;
pub const PROB_CLAMP: f64 = 1e-7;

fn init_dense(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
    let half = (1.0 / in_dim as f64).sqrt();
    let mut d = Dense::zeros(in_dim, out_dim);
    for w in d.w.iter_mut() {
        *w = rng.gen_range(-half..half);
    }
    for b in d.b.iter_mut() {
        *b = rng.gen_range(-half..half);
    }
    d
}

fn init_embedding(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Embedding {
    let mut e = Embedding::zeros(rows, dim);
    for v in e.data.iter_mut() {
        *v = rng.gen_range(-EMB_INIT_HALF_WIDTH..EMB_INIT_HALF_WIDTH);
    }
    e
}

/// Build a freshly initialized model; deterministic given `config.init_seed`.
pub fn init_model(
    variant: Variant,
    num_users: usize,
    num_items: usize,
    config: &TrainConfig,
) -> ModelParams {
    let d = config.embedding_dim;
    let mut r = rng::stream(config.init_seed, "model-init", 0);
    let tables = if variant == Variant::NeuMf { 2 } else { 1 };
    let user_emb: Vec<Embedding> = (0..tables)
        .map(|_| init_embedding(num_users, d, &mut r))
        .collect();
    let item_emb: Vec<Embedding> = (0..tables)
        .map(|_| init_embedding(num_items, d, &mut r))
        .collect();
    let non_emb = match variant {
        Variant::Gmf => NonEmbedding {
            hidden: vec![],
            output: init_dense(d, 1, &mut r),
        },
        Variant::Mlp => {
            let mut hidden = Vec::new();
            let mut width = 2 * d;
            for &w in &config.mlp_layers {
                hidden.push(init_dense(width, w, &mut r));
                width = w;
            }
            NonEmbedding {
                hidden,
                output: init_dense(width, 1, &mut r),
            }
        }
        Variant::NeuMf => {
            let mut hidden = Vec::new();
            let mut width = 2 * d;
            for &w in &config.mlp_layers {
                hidden.push(init_dense(width, w, &mut r));
                width = w;
            }
            NonEmbedding {
                hidden,
                output: init_dense(d + width, 1, &mut r),
            }
        }
    };
    ModelParams {
        variant,
        dim: d,
        num_users,
        num_items,
        mlp_layers: config.mlp_layers.clone(),
        user_emb,
        item_emb,
        non_emb,
    }
}

impl ModelParams {
    pub fn split_blocks(&self) -> BlockViews<'_> {
        BlockViews {
            user: &self.user_emb,
            item: &self.item_emb,
            non: &self.non_emb,
        }
    }

    pub fn user_param_count(&self) -> usize {
        self.user_emb.iter().map(|e| e.data.len()).sum()
    }

    pub fn item_param_count(&self) -> usize {
        self.item_emb.iter().map(|e| e.data.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.user_param_count() + self.item_param_count() + self.non_emb.param_count()
    }

    /// User-embedding row(s) of one user, concatenated across tables.
    pub fn user_repr(&self, user: u32) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim * self.user_emb.len());
        for t in &self.user_emb {
            v.extend_from_slice(t.row(user));
        }
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.user_emb.iter().chain(&self.item_emb) {
            flat.extend_from_slice(&t.data);
        }
        flat.extend(self.non_emb.flat());
        flat
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut idx = 0;
        for t in self.user_emb.iter_mut().chain(self.item_emb.iter_mut()) {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[idx..idx + len]);
            idx += len;
        }
        self.non_emb.assign_flat(&flat[idx..]);
    }

    /// self += a * other, dense over all blocks.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        for (dst, src) in self
            .user_emb
            .iter_mut()
            .chain(self.item_emb.iter_mut())
            .zip(other.user_emb.iter().chain(other.item_emb.iter()))
        {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += a * s;
            }
        }
        self.non_emb.axpy(a, &other.non_emb);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct ForwardCache {
    /// tower input followed by each hidden layer's post-ReLU activation
    mlp_acts: Vec<Vec<f64>>,
    /// pre-activation values per hidden layer, for the ReLU mask
    mlp_pre: Vec<Vec<f64>>,
    final_in: Vec<f64>,
    score: f64,
}

fn forward_cached(params: &ModelParams, user: u32, item: u32) -> ForwardCache {
    let mut gmf_vec = Vec::new();
    let mut mlp_acts: Vec<Vec<f64>> = Vec::new();
    let mut mlp_pre: Vec<Vec<f64>> = Vec::new();
    match params.variant {
        Variant::Gmf => {
            let p = params.user_emb[0].row(user);
            let q = params.item_emb[0].row(item);
            gmf_vec = p.iter().zip(q).map(|(a, b)| a * b).collect();
        }
        Variant::Mlp => {
            let p = params.user_emb[0].row(user);
            let q = params.item_emb[0].row(item);
            let mut x: Vec<f64> = p.iter().chain(q).copied().collect();
            mlp_acts.push(x.clone());
            for layer in &params.non_emb.hidden {
                let mut pre = Vec::new();
                layer.apply(&x, &mut pre);
                x = pre.iter().map(|v| v.max(0.0)).collect();
                mlp_pre.push(pre);
                mlp_acts.push(x.clone());
            }
        }
        Variant::NeuMf => {
            let p1 = params.user_emb[0].row(user);
            let q1 = params.item_emb[0].row(item);
            gmf_vec = p1.iter().zip(q1).map(|(a, b)| a * b).collect();
            let p2 = params.user_emb[1].row(user);
            let q2 = params.item_emb[1].row(item);
            let mut x: Vec<f64> = p2.iter().chain(q2).copied().collect();
            mlp_acts.push(x.clone());
            for layer in &params.non_emb.hidden {
                let mut pre = Vec::new();
                layer.apply(&x, &mut pre);
                x = pre.iter().map(|v| v.max(0.0)).collect();
                mlp_pre.push(pre);
                mlp_acts.push(x.clone());
            }
        }
    }
    let final_in: Vec<f64> = match params.variant {
        Variant::Gmf => gmf_vec,
        Variant::Mlp => mlp_acts.last().unwrap().clone(),
        Variant::NeuMf => gmf_vec
            .iter()
            .chain(mlp_acts.last().unwrap().iter())
            .copied()
            .collect(),
    };
    let mut logit_v = Vec::new();
    params.non_emb.output.apply(&final_in, &mut logit_v);
    let score = sigmoid(logit_v[0]);
    ForwardCache {
        mlp_acts,
        mlp_pre,
        final_in,
        score,
    }
}

/// Predicted interaction probability, strictly in (0, 1).
pub fn forward(params: &ModelParams, user: u32, item: u32) -> Result<f64> {
    if (user as usize) >= params.num_users || (item as usize) >= params.num_items {
        return Err(Error::IndexOutOfRange(format!(
            "user {user} / item {item} vs {}x{}",
            params.num_users, params.num_items
        )));
    }
    Ok(forward_cached(params, user, item).score)
}

/// Gradients mirroring `ModelParams`, sparse over embedding rows.
#[derive(Debug, Clone)]
pub struct GradientBlocks {
    pub user_rows: Vec<BTreeMap<u32, Vec<f64>>>,
    pub item_rows: Vec<BTreeMap<u32, Vec<f64>>>,
    pub non_emb: NonEmbedding,
}

impl GradientBlocks {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientBlocks {
            user_rows: vec![BTreeMap::new(); params.user_emb.len()],
            item_rows: vec![BTreeMap::new(); params.item_emb.len()],
            non_emb: params.non_emb.zeros_like(),
        }
    }

    /// Items with a non-zero item-embedding gradient row in any table.
    pub fn touched_items(&self) -> HashSet<u32> {
        self.item_rows
            .iter()
            .flat_map(|t| {
                t.iter()
                    .filter(|(_, row)| row.iter().any(|v| *v != 0.0))
                    .map(|(&i, _)| i)
            })
            .collect()
    }

    /// Densify into the same flat layout as `ModelParams::flatten`.
    pub fn to_flat(&self, params: &ModelParams) -> Vec<f64> {
        let mut flat = Vec::with_capacity(params.param_count());
        for (table, grads) in params.user_emb.iter().zip(&self.user_rows) {
            let mut dense = vec![0.0; table.data.len()];
            for (&r, row) in grads {
                dense[r as usize * table.dim..(r as usize + 1) * table.dim].copy_from_slice(row);
            }
            flat.extend(dense);
        }
        for (table, grads) in params.item_emb.iter().zip(&self.item_rows) {
            let mut dense = vec![0.0; table.data.len()];
            for (&r, row) in grads {
                dense[r as usize * table.dim..(r as usize + 1) * table.dim].copy_from_slice(row);
            }
            flat.extend(dense);
        }
        flat.extend(self.non_emb.flat());
        flat
    }
}

fn add_row(map: &mut BTreeMap<u32, Vec<f64>>, id: u32, contrib: &[f64], scale: f64) {
    let row = map
        .entry(id)
        .or_insert_with(|| vec![0.0; contrib.len()]);
    for (dst, src) in row.iter_mut().zip(contrib) {
        *dst += scale * src;
    }
}

/// Backprop one example; `scale` folds in the 1/batch factor.
fn backward_example(
    params: &ModelParams,
    user: u32,
    item: u32,
    cache: &ForwardCache,
    dlogit: f64,
    scale: f64,
    grads: &mut GradientBlocks,
) {
    let out = &params.non_emb.output;
    // output layer
    for (c, &x) in cache.final_in.iter().enumerate() {
        grads.non_emb.output.w[c] += scale * dlogit * x;
    }
    grads.non_emb.output.b[0] += scale * dlogit;
    let d_final: Vec<f64> = out.w.iter().map(|w| w * dlogit).collect();

    let (d_gmf, d_mlp_top): (&[f64], &[f64]) = match params.variant {
        Variant::Gmf => (&d_final[..], &[]),
        Variant::Mlp => (&[], &d_final[..]),
        Variant::NeuMf => d_final.split_at(params.dim),
    };

    // GMF path: d(p⊙q) -> dp = d⊙q, dq = d⊙p
    if !d_gmf.is_empty() {
        let p = params.user_emb[0].row(user);
        let q = params.item_emb[0].row(item);
        let dp: Vec<f64> = d_gmf.iter().zip(q).map(|(d, qv)| d * qv).collect();
        let dq: Vec<f64> = d_gmf.iter().zip(p).map(|(d, pv)| d * pv).collect();
        add_row(&mut grads.user_rows[0], user, &dp, scale);
        add_row(&mut grads.item_rows[0], item, &dq, scale);
    }

    // MLP tower
    if !d_mlp_top.is_empty() {
        let mut d_act = d_mlp_top.to_vec();
        for (layer_idx, layer) in params.non_emb.hidden.iter().enumerate().rev() {
            let pre = &cache.mlp_pre[layer_idx];
            let input = &cache.mlp_acts[layer_idx];
            // through ReLU
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(pre)
                .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
                .collect();
            let g = &mut grads.non_emb.hidden[layer_idx];
            let mut d_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let dp = d_pre[o];
                g.b[o] += scale * dp;
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for c in 0..layer.in_dim {
                    grow[c] += scale * dp * input[c];
                    d_in[c] += dp * wrow[c];
                }
            }
            d_act = d_in;
        }
        // split tower input gradient into user/item halves
        let table = if params.variant == Variant::NeuMf { 1 } else { 0 };
        let d = params.dim;
        add_row(&mut grads.user_rows[table], user, &d_act[..d], scale);
        add_row(&mut grads.item_rows[table], item, &d_act[d..], scale);
    }
}

/// Mean binary cross-entropy over the batch and its exact analytic gradient.
///
/// Scores are clamped to [1e-7, 1-1e-7] inside the loss; where the clamp is
/// active the example contributes zero gradient (the clamped loss is flat).
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(u32, u32, f64)],
) -> Result<(f64, GradientBlocks)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grads = GradientBlocks::zeros_like(params);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(user, item, label) in batch {
        if (user as usize) >= params.num_users || (item as usize) >= params.num_items {
            return Err(Error::IndexOutOfRange(format!("user {user} item {item}")));
        }
        let cache = forward_cached(params, user, item);
        let s = cache.score;
        let sc = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += scale * -(label * sc.ln() + (1.0 - label) * (1.0 - sc).ln());
        if s > PROB_CLAMP && s < 1.0 - PROB_CLAMP {
            let dlogit = s - label;
            backward_example(params, user, item, &cache, dlogit, scale, &mut grads);
        }
    }
    Ok((loss, grads))
}

/// In-place SGD step: params -= eta * grads. Untouched embedding rows are left alone.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientBlocks, eta: f64) -> Result<()> {
    if !params.non_emb.shape_matches(&grads.non_emb)
        || params.user_emb.len() != grads.user_rows.len()
        || params.item_emb.len() != grads.item_rows.len()
    {
        return Err(Error::ShapeMismatch("sgd_step".into()));
    }
    for (table, rows) in params.user_emb.iter_mut().zip(&grads.user_rows) {
        for (&r, grow) in rows {
            for (p, g) in table.row_mut(r).iter_mut().zip(grow) {
                *p -= eta * g;
            }
        }
    }
    for (table, rows) in params.item_emb.iter_mut().zip(&grads.item_rows) {
        for (&r, grow) in rows {
            for (p, g) in table.row_mut(r).iter_mut().zip(grow) {
                *p -= eta * g;
            }
        }
    }
    params.non_emb.axpy(-eta, &grads.non_emb);
    Ok(())
}

/// Run E epochs of mini-batch SGD on a client shard and report the resulting
/// pseudo-gradient (initial − final) per block.
///
/// Negatives are resampled each epoch from the client's never-interacted
/// items; the whole procedure is deterministic given `rng_seed`.
pub fn local_train(
    start: &ModelParams,
    shard: &ClientShard,
    interacted: &HashSet<u32>,
    config: &TrainConfig,
    rng_seed: u64,
) -> Result<RoundDelta> {
    let mut model = start.clone();
    let mut touched: HashSet<u32> = HashSet::new();
    for epoch in 0..config.local_epochs {
        let mut r = rng::stream(rng_seed, "local-epoch", epoch as u64);
        let negs = sample_train_negatives(
            shard,
            interacted,
            model.num_items,
            config.neg_ratio,
            &mut r,
        );
        let mut examples: Vec<(u32, u32, f64)> = shard
            .train_items
            .iter()
            .map(|&i| (shard.user, i, 1.0))
            .chain(negs.iter().map(|&i| (shard.user, i, 0.0)))
            .collect();
        // Fisher–Yates with the same stream so the whole epoch is seed-determined
        for i in (1..examples.len()).rev() {
            let j = r.gen_range(0..=i);
            examples.swap(i, j);
        }
        for (_, item, _) in &examples {
            touched.insert(*item);
        }
        for batch in examples.chunks(config.batch_size) {
            let (_, grads) = loss_and_grad(&model, batch)?;
            sgd_step(&mut model, &grads, config.learning_rate)?;
        }
    }
    Ok(RoundDelta::from_models(
        start,
        &model,
        shard.user,
        &touched,
        shard.instances(config.neg_ratio),
    ))
}
