//! MovieLens-format ingestion, implicit conversion, leave-one-out splitting
//! and negative sampling.
//!
//! Interactions are re-indexed to dense ids in first-appearance order so the
//! rest of the pipeline can treat users and items as array indices.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const EVAL_NEGATIVES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub ts: i64,
}

/// Dataset after implicit conversion: every stored interaction is a positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionTable {
    pub interactions: Vec<Interaction>,
    pub num_users: usize,
    pub num_items: usize,
    /// dense user index -> original id
    pub user_ids: Vec<u64>,
    /// dense item index -> original id
    pub item_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    /// `user \t item \t rating \t timestamp` (ML-100K u.data)
    Tab,
    /// `user::item::rating::timestamp` (ML-1M ratings.dat)
    DoubleColon,
}

impl Format {
    pub fn parse_flag(s: &str) -> Result<Format> {
        match s {
            "tab" | "ml-100k" => Ok(Format::Tab),
            "double-colon" | "ml-1m" => Ok(Format::DoubleColon),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

impl InteractionTable {
    pub fn sparsity(&self) -> f64 {
        1.0 - self.interactions.len() as f64 / (self.num_users * self.num_items) as f64
    }

    /// Per-user interacted item sets, indexed by dense user id.
    pub fn interacted_sets(&self) -> Vec<HashSet<u32>> {
        let mut sets = vec![HashSet::new(); self.num_users];
        for it in &self.interactions {
            sets[it.user as usize].insert(it.item);
        }
        sets
    }
}

/// One simulated client: a user's train items, held-out test item and the
/// fixed candidate negatives used for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub user: u32,
    pub train_items: Vec<u32>,
    pub test_item: Option<u32>,
    pub eval_negatives: Vec<u32>,
    /// n_k: training examples after negative sampling at the configured ratio.
    pub num_instances: usize,
}

impl ClientShard {
    pub fn instances(&self, neg_ratio: usize) -> usize {
        self.train_items.len() * (1 + neg_ratio)
    }
}

fn parse_line(line: &str, format: Format) -> Option<(u64, u64, i64)> {
    let mut fields: Vec<&str> = match format {
        Format::Tab => line.split_whitespace().collect(),
        Format::DoubleColon => line.split("::").collect(),
    };
    if fields.len() < 4 {
        return None;
    }
    fields.truncate(4);
    let user = fields[0].parse().ok()?;
    let item = fields[1].parse().ok()?;
    // rating (fields[2]) is discarded: implicit feedback is binary
    let ts = fields[3].parse().ok()?;
    Some((user, item, ts))
}

/// Parse a ratings file into an implicit-feedback table.
///
/// Ratings are discarded; duplicate (user, item) pairs collapse keeping the
/// latest timestamp; ids are densely re-indexed in first-appearance order.
pub fn parse_ratings(path: impl AsRef<Path>, format: Format) -> Result<InteractionTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, format) {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("malformed line: {line:?}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(table_from_rows(&rows))
}

/// Build a dense table from (orig_user, orig_item, ts) rows.
pub fn table_from_rows(rows: &[(u64, u64, i64)]) -> InteractionTable {
    let mut user_map: HashMap<u64, u32> = HashMap::new();
    let mut item_map: HashMap<u64, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut pair_index: HashMap<(u32, u32), usize> = HashMap::new();
    let mut interactions: Vec<Interaction> = Vec::new();
    for &(ou, oi, ts) in rows {
        let user = *user_map.entry(ou).or_insert_with(|| {
            user_ids.push(ou);
            (user_ids.len() - 1) as u32
        });
        let item = *item_map.entry(oi).or_insert_with(|| {
            item_ids.push(oi);
            (item_ids.len() - 1) as u32
        });
        match pair_index.get(&(user, item)) {
            Some(&idx) => {
                // duplicate pair: keep the latest timestamp
                if ts > interactions[idx].ts {
                    interactions[idx].ts = ts;
                }
            }
            None => {
                pair_index.insert((user, item), interactions.len());
                interactions.push(Interaction { user, item, ts });
            }
        }
    }
    InteractionTable {
        interactions,
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        user_ids,
        item_ids,
    }
}

/// Drop users with fewer than `threshold` interactions and re-densify ids.
pub fn filter_min_interactions(table: &InteractionTable, threshold: usize) -> InteractionTable {
    let mut counts = vec![0usize; table.num_users];
    for it in &table.interactions {
        counts[it.user as usize] += 1;
    }
    let rows: Vec<(u64, u64, i64)> = table
        .interactions
        .iter()
        .filter(|it| counts[it.user as usize] >= threshold)
        .map(|it| {
            (
                table.user_ids[it.user as usize],
                table.item_ids[it.item as usize],
                it.ts,
            )
        })
        .collect();
    table_from_rows(&rows)
}

/// Leave-one-out split: per user, the interaction with the greatest timestamp
/// becomes the test item (ties broken by greater item id). Users with a single
/// interaction keep it for training and are excluded from evaluation.
pub fn leave_one_out_split(table: &InteractionTable) -> Result<Vec<ClientShard>> {
    if table.interactions.is_empty() {
        return Err(Error::EmptyDataset("leave_one_out_split".into()));
    }
    let mut per_user: Vec<Vec<(u32, i64)>> = vec![Vec::new(); table.num_users];
    for it in &table.interactions {
        per_user[it.user as usize].push((it.item, it.ts));
    }
    let mut shards = Vec::with_capacity(table.num_users);
    for (user, items) in per_user.into_iter().enumerate() {
        let user = user as u32;
        if items.len() < 2 {
            shards.push(ClientShard {
                user,
                train_items: items.iter().map(|&(i, _)| i).collect(),
                test_item: None,
                eval_negatives: Vec::new(),
                num_instances: 0,
            });
            continue;
        }
        let (test_idx, _) = items
            .iter()
            .enumerate()
            .max_by_key(|&(_, &(item, ts))| (ts, item))
            .expect("non-empty");
        let test_item = items[test_idx].0;
        let train_items = items
            .iter()
            .enumerate()
            .filter(|&(idx, _)| idx != test_idx)
            .map(|(_, &(i, _))| i)
            .collect();
        shards.push(ClientShard {
            user,
            train_items,
            test_item: Some(test_item),
            eval_negatives: Vec::new(),
            num_instances: 0,
        });
    }
    Ok(shards)
}

/// Sample exactly 100 distinct never-interacted items for ranking evaluation.
pub fn sample_eval_negatives(
    shard: &mut ClientShard,
    interacted: &HashSet<u32>,
    num_items: usize,
    rng_seed: u64,
) -> Result<()> {
    if shard.test_item.is_none() {
        return Ok(());
    }
    let eligible: Vec<u32> = (0..num_items as u32)
        .filter(|i| !interacted.contains(i))
        .collect();
    if eligible.len() < EVAL_NEGATIVES {
        return Err(Error::InsufficientNegatives {
            user: shard.user,
            eligible: eligible.len(),
            needed: EVAL_NEGATIVES,
        });
    }
    let mut rng = rng::stream(rng_seed, "eval-negatives", u64::from(shard.user));
    let mut chosen: Vec<u32> = index_sample(&mut rng, eligible.len(), EVAL_NEGATIVES)
        .into_iter()
        .map(|idx| eligible[idx])
        .collect();
    chosen.sort_unstable();
    shard.eval_negatives = chosen;
    Ok(())
}

/// Draw `ratio` negatives per positive train item, uniformly from the user's
/// never-interacted items (with replacement across positives allowed).
pub fn sample_train_negatives(
    shard: &ClientShard,
    interacted: &HashSet<u32>,
    num_items: usize,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let wanted = shard.train_items.len() * ratio;
    let mut out = Vec::with_capacity(wanted);
    if num_items <= interacted.len() {
        return out;
    }
    while out.len() < wanted {
        let cand = rng.gen_range(0..num_items as u32);
        if !interacted.contains(&cand) {
            out.push(cand);
        }
    }
    out
}

/// Shards plus the per-user interacted sets training needs for negative sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientDataset {
    pub shards: Vec<ClientShard>,
    pub interacted: Vec<Vec<u32>>,
    pub num_users: usize,
    pub num_items: usize,
}

impl ClientDataset {
    pub fn interacted_set(&self, user: u32) -> HashSet<u32> {
        self.interacted[user as usize].iter().copied().collect()
    }

    pub fn evaluable(&self) -> impl Iterator<Item = &ClientShard> {
        self.shards.iter().filter(|s| s.test_item.is_some())
    }
}

/// Full ingest pipeline: split, sample eval negatives, record n_k.
pub fn build_client_dataset(
    table: &InteractionTable,
    neg_ratio: usize,
    rng_seed: u64,
) -> Result<ClientDataset> {
    let mut shards = leave_one_out_split(table)?;
    let sets = table.interacted_sets();
    for shard in &mut shards {
        sample_eval_negatives(shard, &sets[shard.user as usize], table.num_items, rng_seed)?;
        shard.num_instances = shard.instances(neg_ratio);
    }
    let interacted = sets
        .into_iter()
        .map(|s| {
            let mut v: Vec<u32> = s.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(ClientDataset {
        shards,
        interacted,
        num_users: table.num_users,
        num_items: table.num_items,
    })
}

/// Write shards as line-delimited JSON for caching.
pub fn write_shard_cache(dataset: &ClientDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = serde_json::json!({
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
    });
    writeln!(w, "{header}").map_err(|e| Error::io(path.display().to_string(), e))?;
    for (shard, interacted) in dataset.shards.iter().zip(&dataset.interacted) {
        let rec = serde_json::json!({ "shard": shard, "interacted": interacted });
        writeln!(w, "{rec}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_shard_cache(path: impl AsRef<Path>) -> Result<ClientDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyDataset(path.display().to_string()))?
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: serde_json::Value = serde_json::from_str(&header)?;
    let num_users = header["num_users"].as_u64().unwrap_or(0) as usize;
    let num_items = header["num_items"].as_u64().unwrap_or(0) as usize;
    let mut shards = Vec::new();
    let mut interacted = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        #[derive(Deserialize)]
        struct Rec {
            shard: ClientShard,
            interacted: Vec<u32>,
        }
        let rec: Rec = serde_json::from_str(&line)?;
        shards.push(rec.shard);
        interacted.push(rec.interacted);
    }
    Ok(ClientDataset {
        shards,
        interacted,
        num_users,
        num_items,
    })
}
