//! Reference solvers: exact CTMC filtering, uniform-grid HSMM and the
//! adaptive step-size HSMM.

pub mod adaptive;
mod conv;
pub mod ctmc;
pub mod hsmm;

pub use adaptive::{adaptive_forward, AdaptiveConfig, AdaptiveResult};
pub use ctmc::{ctmc_forward_backward, CtmcResult};
pub use hsmm::{
    hsmm_bin_count, hsmm_forward_backward, DiscretizedHsmm, DurationRounding, HsmmConfig, HsmmMarginal, HsmmResult,
};
