//! MAP path estimation.
//!
//! `φ_max(x, t; n+1) = max_{x'≠x, τ<t} m(x|x') f(t−τ|x') υ(x', τ, t) φ_max(x', τ; n)`
//! on the mesh nodes, in log space, with backpointers. The terminal choice
//! maximizes `Λ(T−τ|x) υ(x, τ, T) φ_max(x, τ; n) P(n|y)`.

use crate::model::{CtsmcModel, Trajectory};
use crate::observation::ScaledLikelihood;
use crate::posterior::chain::{chain_length_posterior, ChainLengthPosterior};
use crate::volterra::forward::Prefix;
use crate::volterra::{BoundaryCondition, InitialCondition, NodeKind, SolverConfig, TerminalCondition, TimeGrid};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViterbiConfig<T> {
    pub h: T,
    pub boundary: BoundaryCondition,
    /// Stop the chain-length recursion once `Σ P(n|y) ≥ 1 − mass_tol`.
    pub mass_tol: T,
    pub history_truncation_tol: T,
    /// Golden-section polish of the jump times off the mesh.
    pub refine: bool,
    /// Shortest sojourn the polish may create (defaults to `h`).
    pub min_sojourn: T,
}

impl<T: Real> ViterbiConfig<T> {
    pub fn new(h: T) -> Self {
        ViterbiConfig {
            h,
            boundary: BoundaryCondition::default(),
            mass_tol: T::lit(1e-6),
            history_truncation_tol: T::lit(1e-14),
            refine: true,
            min_sojourn: h,
        }
    }

    pub fn with_boundary(mut self, boundary: BoundaryCondition) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    fn solver(&self) -> SolverConfig<T> {
        SolverConfig { h: self.h, history_truncation_tol: self.history_truncation_tol, boundary: self.boundary }
    }
}

#[derive(Debug, Clone)]
pub struct ViterbiResult<T> {
    pub map_path: Trajectory<T>,
    /// `score_path(map_path) + ln P(n*|y)`.
    pub map_log_score: T,
    /// The same before refinement (jump times on mesh nodes).
    pub grid_log_score: T,
    pub n_star: usize,
    pub chain_length_posterior: Vec<T>,
    pub truncation_mass: T,
}

impl<T: Real> ViterbiResult<T> {
    pub fn chain_length(&self) -> ChainLengthPosterior<T> {
        ChainLengthPosterior {
            probabilities: self.chain_length_posterior.clone(),
            terminal: Vec::new(),
            truncation_mass: self.truncation_mass,
        }
    }
}

#[inline]
fn ln<T: Real>(v: T) -> T {
    if v > T::zero() {
        v.ln()
    } else {
        T::neg_infinity()
    }
}

/// Log weight of one sojourn of length `lag` in state `x`: the initial one is
/// weighted by `p_0` and the initial law, the last one by the terminal
/// condition (survival, or a density if a jump happens at `T`).
fn log_sojourn<T: Real>(model: &CtsmcModel<T>, bc: &BoundaryCondition, x: usize, first: bool, last: bool, lag: T) -> T {
    let w = &model.waiting[x];
    let ends_in_jump = !last || bc.terminal == TerminalCondition::TransitionAtEnd;
    if first {
        let p0 = ln(model.initial[x]);
        if p0 == T::neg_infinity() {
            return p0;
        }
        return p0
            + match (bc.initial, ends_in_jump) {
                (InitialCondition::TransitionAtStart, true) => w.log_density(lag),
                (InitialCondition::TransitionAtStart, false) => ln(w.survival(lag)),
                (InitialCondition::SteadyState, true) => ln(w.survival(lag)) - w.mean().ln(),
                (InitialCondition::SteadyState, false) => ln(w.tail_survival(lag)) - w.mean().ln(),
            };
    }
    if ends_in_jump {
        w.log_density(lag)
    } else {
        ln(w.survival(lag))
    }
}

/// Log posterior density of a path: sojourn and jump-chain terms times the
/// normalized likelihood `L_k(x)/c_k` of every observation before the
/// horizon, evaluated in the state held at that instant (post-jump at a
/// jump instant). Add `ln P(n|y)` to compare with `map_log_score`.
pub fn score_path<T: Real>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    bc: &BoundaryCondition,
    path: &Trajectory<T>,
) -> Result<T> {
    let n = model.n_states();
    if path.states.iter().any(|&s| s >= n) {
        return Err(Error::validation("path visits a state outside the model"));
    }
    let obs = sl.observations();
    let k = obs.truncated(path.horizon).len();
    let c = match sl.normalizers() {
        Some(c) => c,
        None if k == 0 => &[][..],
        None => return Err(Error::state("forward normalizers missing: run the forward pass first")),
    };
    let s = &path.states;
    let tj = &path.jump_times;
    let nj = path.n_jumps();
    let mut score = T::zero();
    for j in 0..=nj {
        let end = if j < nj { tj[j + 1] } else { path.horizon };
        if j > 0 {
            score = score + ln(model.embedded.prob(s[j - 1], s[j]));
        }
        score = score + log_sojourn(model, bc, s[j], j == 0, j == nj, end - tj[j]);
    }
    for o in 0..k {
        let x = path.state_at(obs.times[o])?;
        score = score + ln(obs.likelihoods[o][x] / c[o]);
    }
    Ok(score)
}

/// Lags whose survival is below this are skipped in the max over τ.
const NEGLIGIBLE_SURVIVAL: f64 = 1e-40;
/// Precompute `ln f` for all node pairs up to this many entries.
const TABLE_BUDGET: usize = 8_000_000;

/// Posterior chain length and MAP path. `sl` must carry forward normalizers.
pub fn viterbi_map<T: Real>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    horizon: T,
    cfg: &ViterbiConfig<T>,
) -> Result<ViterbiResult<T>> {
    let chain = chain_length_posterior(model, sl, horizon, &cfg.solver(), cfg.mass_tol)?;
    let bc = cfg.boundary;
    let n = model.n_states();
    let obs = sl.observations();
    let k = obs.truncated(horizon).len();
    let c = sl.normalizers().unwrap_or(&[]);
    let grid = TimeGrid::build(&obs.times[..k], horizon, cfg.h)?;
    let mut prefix = Prefix::new(n, k);
    for j in 0..k {
        prefix.push(&obs.likelihoods[j], c[j]);
    }
    // one node per instant; at an observation the pre-update node, so a
    // jump there puts the new state under the observation
    let (times, applied): (Vec<T>, Vec<usize>) = (0..grid.len())
        .filter(|&i| !matches!(grid.kinds[i], NodeKind::ObsRight(_)))
        .map(|i| (grid.times[i], grid.applied[i]))
        .unzip();
    let nn = times.len();
    let log_ups = |x: usize, a: usize, b: usize| -> T {
        if prefix.zeros[x][a] != prefix.zeros[x][b] {
            T::neg_infinity()
        } else {
            prefix.log[x][b] - prefix.log[x][a]
        }
    };
    let log_m: Vec<Vec<T>> = (0..n).map(|y| (0..n).map(|x| ln(model.embedded.prob(y, x))).collect()).collect();
    let reach: Vec<T> = model.waiting.iter().map(|w| w.survival_quantile(T::lit(NEGLIGIBLE_SURVIVAL))).collect();
    // earliest node within reach of node i, per state
    let first_in_reach = |x: usize, i: usize| -> usize {
        let lo = times[i] - reach[x];
        times.partition_point(|&t| t < lo).max(1)
    };
    let table: Option<Vec<Vec<T>>> = if nn * nn * n / 2 <= TABLE_BUDGET {
        Some(
            (0..n)
                .map(|x| {
                    let w = &model.waiting[x];
                    let mut v = Vec::with_capacity(nn * (nn - 1) / 2);
                    for i in 0..nn {
                        for j in 0..i {
                            v.push(w.log_density(times[i] - times[j]));
                        }
                    }
                    v
                })
                .collect(),
        )
    } else {
        None
    };
    let log_f = |x: usize, i: usize, j: usize| -> T {
        match &table {
            Some(t) => t[x][i * (i - 1) / 2 + j],
            None => model.waiting[x].log_density(times[i] - times[j]),
        }
    };

    let gens = chain.probabilities.len();
    let neg = T::neg_infinity();
    // ln φ_max and backpointers (previous state, node of the previous jump) per generation
    let mut log_phi: Vec<Vec<T>> = vec![vec![neg; nn * n]];
    let mut back: Vec<Vec<(u32, u32)>> = vec![Vec::new()];
    if gens > 1 {
        let mut lp = vec![neg; nn * n];
        let mut bk = vec![(0u32, 0u32); nn * n];
        for i in 1..nn {
            for x in 0..n {
                for y in 0..n {
                    if y == x {
                        continue;
                    }
                    let v = log_m[y][x] + log_sojourn(model, &bc, y, true, false, times[i]) + log_ups(y, 0, applied[i]);
                    if v > lp[i * n + x] {
                        lp[i * n + x] = v;
                        bk[i * n + x] = (y as u32, 0);
                    }
                }
            }
        }
        log_phi.push(lp);
        back.push(bk);
    }
    let mut best_exit = vec![(neg, 0u32); n];
    for _ in 2..gens {
        let prev = log_phi.last().unwrap();
        let mut lp = vec![neg; nn * n];
        let mut bk = vec![(0u32, 0u32); nn * n];
        for i in 2..nn {
            for y in 0..n {
                let mut best = (neg, 0u32);
                for j in first_in_reach(y, i)..i {
                    let v = prev[j * n + y];
                    if v == neg {
                        continue;
                    }
                    let cand = v + log_f(y, i, j) + log_ups(y, applied[j], applied[i]);
                    if cand > best.0 {
                        best = (cand, j as u32);
                    }
                }
                best_exit[y] = best;
            }
            for x in 0..n {
                for y in 0..n {
                    if y == x || best_exit[y].0 == neg {
                        continue;
                    }
                    let v = log_m[y][x] + best_exit[y].0;
                    if v > lp[i * n + x] {
                        lp[i * n + x] = v;
                        bk[i * n + x] = (y as u32, best_exit[y].1);
                    }
                }
            }
        }
        log_phi.push(lp);
        back.push(bk);
    }

    // terminal choice (x*, τ*, n*); ties to smaller n, lower state, earlier τ
    let last = nn - 1;
    let a_end = applied[last];
    let mut best = (neg, 0usize, 0usize, 0usize);
    for (g, &p) in chain.probabilities.iter().enumerate() {
        let lp_n = ln(p);
        if lp_n == neg {
            continue;
        }
        for x in 0..n {
            if g == 0 {
                let v = log_sojourn(model, &bc, x, true, true, horizon) + log_ups(x, 0, a_end) + lp_n;
                if v > best.0 {
                    best = (v, g, x, 0);
                }
                continue;
            }
            for j in 1..last {
                let v = log_phi[g][j * n + x];
                if v == neg {
                    continue;
                }
                let s = v
                    + log_sojourn(model, &bc, x, false, true, horizon - times[j])
                    + log_ups(x, applied[j], a_end)
                    + lp_n;
                if s > best.0 {
                    best = (s, g, x, j);
                }
            }
        }
    }
    if best.0 == neg {
        return Err(Error::Instability { interval: k, detail: "no path with positive posterior density".into() });
    }
    let (grid_score, n_star, x_star, j_star) = best;

    let mut states = vec![x_star];
    let mut nodes = vec![j_star];
    let (mut x, mut j) = (x_star, j_star);
    for g in (1..=n_star).rev() {
        let (y, jp) = back[g][j * n + x];
        x = y as usize;
        j = jp as usize;
        states.push(x);
        nodes.push(j);
    }
    states.reverse();
    nodes.reverse();
    let jump_times: Vec<T> = nodes.iter().map(|&j| times[j]).collect();
    let mut path = Trajectory::new(jump_times, states, horizon)?;
    let mut score = grid_score;
    if cfg.refine && n_star > 0 {
        let lp_n = ln(chain.probabilities[n_star]);
        score = refine_jumps(model, sl, &bc, &mut path, cfg.h, cfg.min_sojourn, lp_n, grid_score)?;
    }
    Ok(ViterbiResult {
        map_path: path,
        map_log_score: score,
        grid_log_score: grid_score,
        n_star,
        chain_length_posterior: chain.probabilities,
        truncation_mass: chain.truncation_mass,
    })
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Coordinate-wise polish of the jump times: each jump is moved within
/// `±2h` of its current position (recentered every pass) by golden-section
/// search on the pieces between observation times. Sojourns ending in a jump
/// are kept at least `min_sojourn` long (or as long as the mesh path had them,
/// if shorter), since for shapes below one the path density is unbounded as
/// a sojourn shrinks to zero.
#[allow(clippy::too_many_arguments)]
fn refine_jumps<T: Real>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    bc: &BoundaryCondition,
    path: &mut Trajectory<T>,
    h: T,
    min_sojourn: T,
    lp_n: T,
    start: T,
) -> Result<T> {
    let nj = path.n_jumps();
    let horizon = path.horizon;
    let obs_times = sl.observations().times.clone();
    // floor[q]: shortest allowed sojourn ending at jump q
    let floor: Vec<T> = (0..=nj)
        .map(|q| if q == 0 { T::zero() } else { min_sojourn.min(path.jump_times[q] - path.jump_times[q - 1]) })
        .collect();
    let mut score = start;
    for _pass in 0..64 {
        let before = score;
        for q in 1..=nj {
            let cur = path.jump_times[q];
            let lo = (path.jump_times[q - 1] + floor[q]).max(cur - h * T::lit(2.0));
            let hi = if q < nj { path.jump_times[q + 1] - floor[q + 1] } else { horizon };
            let hi = hi.min(cur + h * T::lit(2.0));
            let mut cuts = vec![lo];
            cuts.extend(obs_times.iter().copied().filter(|&t| t > lo && t < hi && t != cur));
            cuts.push(cur);
            cuts.push(hi);
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let mut eval = |tau: T| -> Result<T> {
                path.jump_times[q] = tau;
                Ok(score_path(model, sl, bc, path)? + lp_n)
            };
            let mut best = (score, cur);
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if !(b > a) {
                    continue;
                }
                let (t, v) = golden(&mut eval, a, b)?;
                if v > best.0 {
                    best = (v, t);
                }
                // a jump exactly at the right end (an observation, or the floor) may be best
                if b < horizon && b != cur {
                    let v = eval(b)?;
                    if v > best.0 {
                        best = (v, b);
                    }
                }
            }
            path.jump_times[q] = best.1;
            score = best.0;
        }
        if !(score > before + T::lit(1e-13) * (T::one() + score.abs())) {
            break;
        }
    }
    Ok(score)
}

/// Maximizes over the open interval `(a, b)`.
fn golden<T: Real>(f: &mut impl FnMut(T) -> Result<T>, a: T, b: T) -> Result<(T, T)> {
    let r = T::lit(INV_PHI);
    let (mut a, mut b) = (a, b);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..60 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        }
        if !(b - a > T::epsilon() * (T::one() + b.abs()) * T::lit(4.0)) {
            break;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}
