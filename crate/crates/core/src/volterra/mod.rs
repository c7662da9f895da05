//! Forward and backward current equations solved on an observation-aligned
//! mesh.
//!
//! Between observations the entry current φ and exit current ψ satisfy
//!
//! ```text
//! ψ(x,t) = ∫_0^t f(t−τ|x) υ(x,τ,t) φ(x,τ) dτ + υ(x,0,t) g_φ(x,t),   φ = M ψ
//! ```
//!
//! (and the mirrored system backwards in time). Memory integrals use a
//! product-trapezoid rule, the newest node is treated implicitly.

pub(crate) mod backward;
pub(crate) mod forward;
mod grid;
pub mod kernel;
pub(crate) mod linalg;
pub(crate) mod sweep;

pub use backward::{backward_pass, BackwardResult};
pub use forward::{forward_pass, forward_pass_with_grid, ForwardResult};
pub use grid::{GridFunction, Interpolation, NodeKind, TimeGrid};
pub use kernel::{memory_kernel, solve_kernel_master_equation, MemoryKernel};

use serde::{Deserialize, Serialize};

use crate::model::CtsmcModel;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// A transition into the initial state happens at t = 0.
    #[default]
    #[serde(alias = "transition")]
    TransitionAtStart,
    /// The chain has been running in equilibrium before t = 0; the age of the
    /// initial sojourn follows the residual-life law Λ(s)/μ.
    #[serde(alias = "steady")]
    SteadyState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCondition {
    #[default]
    Uninformed,
    /// A transition is known to happen at T.
    #[serde(alias = "transition")]
    TransitionAtEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BoundaryCondition {
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub terminal: TerminalCondition,
}

impl BoundaryCondition {
    pub fn new(initial: InitialCondition, terminal: TerminalCondition) -> Self {
        BoundaryCondition { initial, terminal }
    }

    /// Parses `"transition/uninformed"`, `"steady/transition"`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s.split_once('/').unwrap_or((s, "uninformed"));
        let initial = match a.trim() {
            "transition" | "transition_at_start" => InitialCondition::TransitionAtStart,
            "steady" | "steady_state" => InitialCondition::SteadyState,
            other => return Err(Error::validation(format!("unknown initial condition '{other}'"))),
        };
        let terminal = match b.trim() {
            "uninformed" => TerminalCondition::Uninformed,
            "transition" | "transition_at_end" => TerminalCondition::TransitionAtEnd,
            other => return Err(Error::validation(format!("unknown terminal condition '{other}'"))),
        };
        Ok(BoundaryCondition { initial, terminal })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SolverConfig<T> {
    pub h: T,
    #[serde(default = "default_tol")]
    pub history_truncation_tol: T,
    #[serde(default)]
    pub boundary: BoundaryCondition,
}

fn default_tol<T: Real>() -> T {
    T::lit(1e-14)
}

impl<T: Real> SolverConfig<T> {
    pub fn new(h: T) -> Self {
        SolverConfig { h, history_truncation_tol: default_tol(), boundary: BoundaryCondition::default() }
    }

    pub fn with_boundary(mut self, boundary: BoundaryCondition) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > T::zero()) || !self.h.is_finite() {
            return Err(Error::domain(format!("step h must be finite and > 0, got {}", self.h)));
        }
        if !(self.history_truncation_tol >= T::zero()) {
            return Err(Error::validation("history_truncation_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Initial,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Probability of still being in the boundary sojourn.
    P,
    /// Current leaving (initial side) or entering (terminal side) it.
    Current,
}

/// Boundary inhomogeneities.
///
/// Initial side: `g_p` and `g_φ` with `d/dt g_p = −g_φ`. Terminal side at
/// lag `s = T − t`: the entry-current inhomogeneity is `Λ(s)` for
/// [`TerminalCondition::Uninformed`] (a sojourn outliving the horizon) and
/// `f(s)` for [`TerminalCondition::TransitionAtEnd`]; the matching `γ_p`
/// weights the age of the current sojourn by its residual-life law,
/// `∫_s^∞ Λ / μ` (equal to 1 at `t = T`) and `Λ(s)/μ` respectively, so that
/// `d/dt (μ γ_p)` is the current term.
pub fn boundary_inhomogeneity<T: Real>(
    bc: &BoundaryCondition,
    model: &CtsmcModel<T>,
    t: T,
    horizon: T,
    side: Side,
    kind: BoundaryKind,
) -> Result<Vec<T>> {
    if t.is_nan() || t < T::zero() || t > horizon {
        return Err(Error::domain(format!("t = {t} outside [0, {horizon}]")));
    }
    Ok((0..model.n_states())
        .map(|x| match side {
            Side::Initial => initial_term(bc.initial, model, x, t, kind),
            Side::Terminal => terminal_term(bc.terminal, model, x, horizon - t, kind),
        })
        .collect())
}

pub(crate) fn initial_term<T: Real>(
    ic: InitialCondition,
    model: &CtsmcModel<T>,
    x: usize,
    t: T,
    kind: BoundaryKind,
) -> T {
    let w = &model.waiting[x];
    let p0 = model.initial[x];
    if p0 == T::zero() {
        return T::zero();
    }
    match (ic, kind) {
        (InitialCondition::TransitionAtStart, BoundaryKind::P) => p0 * w.survival(t),
        (InitialCondition::TransitionAtStart, BoundaryKind::Current) => p0 * w.density(t),
        (InitialCondition::SteadyState, BoundaryKind::P) => p0 * w.tail_survival(t) / w.mean(),
        (InitialCondition::SteadyState, BoundaryKind::Current) => p0 * w.survival(t) / w.mean(),
    }
}

pub(crate) fn terminal_term<T: Real>(
    tc: TerminalCondition,
    model: &CtsmcModel<T>,
    x: usize,
    lag: T,
    kind: BoundaryKind,
) -> T {
    let w = &model.waiting[x];
    match (tc, kind) {
        (TerminalCondition::Uninformed, BoundaryKind::P) => w.tail_survival(lag) / w.mean(),
        (TerminalCondition::Uninformed, BoundaryKind::Current) => w.survival(lag),
        (TerminalCondition::TransitionAtEnd, BoundaryKind::P) => w.survival(lag) / w.mean(),
        (TerminalCondition::TransitionAtEnd, BoundaryKind::Current) => w.density(lag),
    }
}
