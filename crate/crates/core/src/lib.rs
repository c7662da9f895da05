//! Exact latent-state inference for hidden continuous-time semi-Markov chains.
//!
//! The crate solves forward and backward probability-current integral
//! equations interval by interval between observations, combines them into
//! smoothed posterior marginals, and estimates maximum-a-posteriori paths
//! together with the posterior over the number of jumps. Discrete-time HSMM
//! recursions (uniform and adaptive step) and an exact CTMC filter serve as
//! reference solutions.
//!
//! All numerical code is generic over a [`Real`] scalar; the aliases at the
//! bottom of this file fix it to `f64` for everyday use.

pub mod baseline;
pub mod error;
pub mod io;
pub mod model;
pub mod observation;
pub mod posterior;
pub mod scalar;
pub mod special;
pub mod volterra;
pub mod waiting;

pub use error::{Error, Result};
pub use scalar::Real;

pub use model::{CtsmcModel, EmbeddedChain, Trajectory, ValidationReport};
pub use observation::{EmissionModel, ObservationSet, ScaledLikelihood};
pub use posterior::{ChainLengthPosterior, SmoothedResult, ViterbiResult};
pub use volterra::{
    BackwardResult, BoundaryCondition, ForwardResult, GridFunction, InitialCondition, SolverConfig, TerminalCondition,
    TimeGrid,
};
pub use waiting::WaitingTime;

/// Double-precision aliases.
pub type Model = CtsmcModel<f64>;
pub type Waiting = WaitingTime<f64>;
pub type Observations = ObservationSet<f64>;
pub type Path = Trajectory<f64>;
pub type Forward = ForwardResult<f64>;
pub type Backward = BackwardResult<f64>;
pub type Smoothed = SmoothedResult<f64>;
pub type Viterbi = ViterbiResult<f64>;
pub type Grid = GridFunction<f64>;
