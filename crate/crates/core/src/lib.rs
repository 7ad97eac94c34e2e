//! Privacy accounting for merging differentially private models.
//!
//! Given `N` models trained with known privacy parameters, this crate certifies
//! the (ε, δ) guarantee of two merging rules:
//!
//! - random selection ([`merge_rs`]): release model `i` with probability `π_i`;
//! - linear combination ([`merge_lc`]): release `Σ λ_i θ_i` for DP-SGD trained
//!   models with independent noise.
//!
//! Both rules are accounted with Rényi DP curves ([`rdp`]) and with discretized
//! privacy loss distributions ([`pld`]). [`baselines`] holds the joint-release
//! and advanced-composition bounds the merged certificates are compared with.

pub mod baselines;
pub mod error;
pub mod merge_lc;
pub mod merge_rs;
pub mod numeric;
pub mod pld;
pub mod rdp;
pub mod types;

pub use error::{AccountingError, Result};
pub use types::{
    dominates, simplex_lattice, validate_weights, Accountant, DpGuarantee, DpSgdSpec,
    FeasibleEntry, MechanismSpec, MergeWeights, OrderGrid,
};
