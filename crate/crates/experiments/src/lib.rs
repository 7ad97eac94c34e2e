//! Desk-scale privacy/utility experiments for model merging.
//!
//! - [`mean_est`]: Gaussian mean estimation with two noisy releases, merged by
//!   random selection or linear combination.
//! - [`dpsgd`]: a synthetic DP-SGD logistic-regression pipeline.
//! - [`frontier`]: Pareto extraction and CSV output.

pub mod dpsgd;
pub mod frontier;
pub mod mean_est;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frontier::{pareto_extract, write_frontier_csv, FrontierPoint, Method, UtilitySense};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Accounting(#[from] dpmerge_core::AccountingError),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// How input models are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeRule {
    /// Release one model drawn from the weights.
    Rs,
    /// Release the weighted average of the parameters.
    Lc,
}

/// Named random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Holdout = 2,
    Training = 3,
    Trial = 4,
    SamplingVariance = 5,
    Selection = 6,
}

/// A ChaCha stream for `(seed, purpose, index)`, independent of scheduling.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}
