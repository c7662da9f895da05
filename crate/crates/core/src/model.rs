//! Semi-Markov model definition, validation and exact path simulation.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::waiting::WaitingTime;
use crate::{Error, Real, Result};

/// Jump-chain transition matrix, `m[x][x']` = probability of `x → x'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddedChain<T> {
    pub m: Vec<Vec<T>>,
}

impl<T: Real> EmbeddedChain<T> {
    pub fn new(m: Vec<Vec<T>>) -> Self {
        EmbeddedChain { m }
    }

    pub fn n_states(&self) -> usize {
        self.m.len()
    }

    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> T {
        self.m[from][to]
    }

    /// `(M g)(x) = Σ_{x'} m(x|x') g(x')`: redistributes exit currents into
    /// entry currents.
    pub fn forward(&self, g: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (row, &gx) in self.m.iter().zip(g) {
            if gx == T::zero() {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(row) {
                *o = *o + p * gx;
            }
        }
    }

    /// `(M† g)(x) = Σ_{x'} m(x'|x) g(x')`.
    pub fn adjoint(&self, g: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(&self.m) {
            *o = row.iter().zip(g).fold(T::zero(), |acc, (&p, &v)| acc + p * v);
        }
    }

    fn row_tol(&self) -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(16.0) * T::from_usize_lossy(self.m.len().max(1)))
    }
}

/// Homogeneous semi-Markov chain with factorized exit rates
/// `λ(x, τ; x') = m(x'|x) λ(x, τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtsmcModel<T> {
    pub states: Vec<String>,
    pub waiting: Vec<WaitingTime<T>>,
    pub embedded: EmbeddedChain<T>,
    pub initial: Vec<T>,
}

/// Outcome of [`validate_model`]: empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::validation(self.violations.join("; ")))
        }
    }
}

/// Checks every structural invariant and reports all violations at once.
pub fn validate_model<T: Real>(model: &CtsmcModel<T>) -> ValidationReport {
    let mut v = Vec::new();
    let n = model.states.len();
    if n < 2 {
        v.push(format!("need at least 2 states, got {n}"));
    }
    if model.waiting.len() != n {
        v.push(format!("{} waiting-time laws for {n} states", model.waiting.len()));
    }
    if model.initial.len() != n {
        v.push(format!("initial distribution has length {}, expected {n}", model.initial.len()));
    }
    if model.embedded.m.len() != n || model.embedded.m.iter().any(|r| r.len() != n) {
        v.push(format!("embedded chain is not {n}x{n}"));
    }
    for (x, w) in model.waiting.iter().enumerate() {
        if let Err(e) = w.validate() {
            v.push(format!("state {x}: bad parameters ({e})"));
        }
    }
    let tol = model.embedded.row_tol();
    for (x, row) in model.embedded.m.iter().enumerate() {
        if row.get(x).is_some_and(|&d| d != T::zero()) {
            v.push(format!("state {x}: nonzero diagonal"));
        }
        if row.iter().any(|&p| p.is_nan() || p < T::zero()) {
            v.push(format!("state {x}: negative or NaN transition probability"));
        }
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            v.push(format!("state {x}: row not stochastic (sum {s})"));
        }
    }
    if model.initial.iter().any(|&p| p.is_nan() || p < T::zero()) {
        v.push("initial distribution has negative or NaN entries".into());
    }
    let s: T = model.initial.iter().copied().sum();
    if (s - T::one()).abs() > tol {
        v.push(format!("initial distribution sums to {s}"));
    }
    ValidationReport { violations: v }
}

impl<T: Real> CtsmcModel<T> {
    /// Builds and validates a model; state names default to `S0, S1, ...` and
    /// the initial distribution to uniform.
    pub fn new(waiting: Vec<WaitingTime<T>>, embedded: Vec<Vec<T>>, initial: Option<Vec<T>>) -> Result<Self> {
        let n = waiting.len();
        let initial = initial.unwrap_or_else(|| vec![T::one() / T::from_usize_lossy(n.max(1)); n]);
        let model = CtsmcModel {
            states: (0..n).map(|i| format!("S{i}")).collect(),
            waiting,
            embedded: EmbeddedChain::new(embedded),
            initial,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_model(self).into_result()
    }

    pub fn with_initial(mut self, initial: Vec<T>) -> Result<Self> {
        self.initial = initial;
        self.validate()?;
        Ok(self)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn min_mean_waiting(&self) -> T {
        self.waiting.iter().map(|w| w.mean()).fold(T::infinity(), T::min)
    }

    pub fn from_json_str(s: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let m: Self = serde_json::from_reader(r)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_json_string(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()>
    where
        T: Serialize,
    {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Matched-mean exponential approximation of every state.
pub fn steady_state_ctmc<T: Real>(model: &CtsmcModel<T>) -> CtsmcModel<T> {
    let waiting = model
        .waiting
        .iter()
        .map(|w| match *w {
            WaitingTime::Exponential { .. } => *w,
            _ => WaitingTime::Exponential { rate: T::one() / w.mean() },
        })
        .collect();
    CtsmcModel { waiting, ..model.clone() }
}

/// Piecewise-constant, right-continuous path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub jump_times: Vec<T>,
    pub states: Vec<usize>,
    pub horizon: T,
}

impl<T: Real> Trajectory<T> {
    pub fn new(jump_times: Vec<T>, states: Vec<usize>, horizon: T) -> Result<Self> {
        let tr = Trajectory { jump_times, states, horizon };
        tr.check()?;
        Ok(tr)
    }

    fn check(&self) -> Result<()> {
        if self.jump_times.is_empty() || self.jump_times.len() != self.states.len() {
            return Err(Error::validation("trajectory needs matching, non-empty times and states"));
        }
        if self.jump_times[0] != T::zero() {
            return Err(Error::validation("trajectory must start at t = 0"));
        }
        if self.jump_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("jump times must be strictly increasing"));
        }
        if self.jump_times.last().is_some_and(|&t| t > self.horizon) {
            return Err(Error::validation("jump time beyond horizon"));
        }
        if self.states.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("consecutive states must differ"));
        }
        Ok(())
    }

    pub fn n_jumps(&self) -> usize {
        self.states.len() - 1
    }

    /// State held at `t`; at a jump instant the post-jump state.
    pub fn state_at(&self, t: T) -> Result<usize> {
        if t.is_nan() || t < T::zero() || t > self.horizon {
            return Err(Error::domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let i = self.jump_times.partition_point(|&s| s <= t);
        Ok(self.states[i.saturating_sub(1)])
    }

    pub fn write_csv<W: Write>(&self, w: W, names: Option<&[String]>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["jump_time", "state"])?;
        for (&t, &s) in self.jump_times.iter().zip(&self.states) {
            let label = names.map_or_else(|| s.to_string(), |n| n[s].clone());
            wr.write_record([format!("{t}"), label])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `(jump_time, state)` rows; states may be names or indices.
    pub fn read_csv<R: Read>(r: R, horizon: T, names: Option<&[String]>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut states = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let t: f64 = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::validation("bad jump_time field"))?;
            let label = rec.get(1).unwrap_or("").trim();
            let s = names
                .and_then(|n| n.iter().position(|x| x == label))
                .or_else(|| label.parse().ok())
                .ok_or_else(|| Error::validation(format!("unknown state '{label}'")))?;
            times.push(T::lit(t));
            states.push(s);
        }
        Self::new(times, states, horizon)
    }
}

fn categorical<T: Real, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let total: f64 = p.iter().map(|v| v.as_f64()).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, v) in p.iter().enumerate() {
        let v = v.as_f64();
        if v > 0.0 {
            last = i;
            acc += v;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Exact simulation: initial state from `p_0`, then alternating holding-time
/// draws and jump-chain moves until the horizon.
pub fn sample_trajectory<T: Real>(model: &CtsmcModel<T>, horizon: T, seed: u64) -> Result<Trajectory<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_trajectory_with(model, horizon, &mut rng)
}

pub fn sample_trajectory_with<T: Real, R: Rng + ?Sized>(
    model: &CtsmcModel<T>,
    horizon: T,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    if !(horizon > T::zero()) || horizon.is_infinite() {
        return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
    }
    model.validate()?;
    let mut x = categorical(&model.initial, rng);
    let mut t = 0.0_f64;
    let mut times = vec![T::zero()];
    let mut states = vec![x];
    let end = horizon.as_f64();
    loop {
        t += model.waiting[x].sample(rng).as_f64();
        if t >= end {
            break;
        }
        let tt = T::lit(t);
        if !(tt > *times.last().unwrap()) || tt >= horizon {
            // rounded onto an earlier instant: skip the degenerate jump
            continue;
        }
        x = categorical(&model.embedded.m[x], rng);
        times.push(tt);
        states.push(x);
    }
    Ok(Trajectory { jump_times: times, states, horizon })
}
