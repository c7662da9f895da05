//! Smoothed marginals, chain-length posterior and MAP paths.

mod chain;
mod smooth;
mod viterbi;

pub use chain::{chain_length_posterior, ChainLengthPosterior};
pub use smooth::{smooth, SmoothedResult};
pub use viterbi::{score_path, viterbi_map, ViterbiConfig, ViterbiResult};
