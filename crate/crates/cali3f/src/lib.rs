//! Single-process simulator of a clustered, calibrated federated
//! recommendation protocol over neural collaborative filtering models.
//!
//! The crate covers the full pipeline:
//!
//! - [`data`]: MovieLens-format ingestion, implicit conversion, leave-one-out
//!   splits and negative sampling
//! - [`model`]: GMF / MLP / NeuMF scoring models with analytic gradients and
//!   a U / I / N parameter-block partition
//! - [`clustering`]: k-means client grouping, round-robin delegate sampling
//!   and within-cluster model averaging
//! - [`aggregation`]: the fast embedding aggregation rules, the calibrated
//!   per-cluster update, and FedAvg / Ditto baselines
//! - [`orchestrator`]: the round loop tying it all together
//! - [`eval`]: HR@10 / NDCG@10 leave-one-out evaluation, per-client fairness
//!   and convergence-speed measurement
//! - [`synth`]: a deterministic synthetic benchmark generator
//!
//! Everything is deterministic given one experiment seed; see [`rng`].
//!
//! ```
//! use cali3f::orchestrator::{FedConfig, Runner, Strategy};
//! use cali3f::model::Variant;
//! use cali3f::synth::{generate, SynthConfig};
//! use cali3f::data::build_client_dataset;
//!
//! let table = generate(&SynthConfig::tiny(7));
//! let dataset = build_client_dataset(&table, 4, 7).unwrap();
//! let cfg = FedConfig {
//!     strategy: Strategy::Cali3f,
//!     variant: Variant::Gmf,
//!     rounds: 2,
//!     clusters: 3,
//!     delegates: 6,
//!     seed: 7,
//!     ..FedConfig::default()
//! };
//! let result = Runner::new(cfg, &dataset).unwrap().run().unwrap();
//! assert_eq!(result.history.rounds.len(), 2);
//! ```

pub mod aggregation;
pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod orchestrator;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};

/// The guide chapters double as doc-tests so their snippets stay honest.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(data_pipeline, "../../../book/src/data-pipeline.md");
    chapter!(models, "../../../book/src/models.md");
    chapter!(clustering, "../../../book/src/clustering.md");
    chapter!(aggregation, "../../../book/src/aggregation.md");
    chapter!(federation, "../../../book/src/federation.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
}
