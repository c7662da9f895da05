//! Explicit-duration HSMM on a uniform grid.
//!
//! Bin `n` covers `[nh, (n+1)h)` and is reported at its center. Sojourns
//! start and end on bin edges; an observation at `t` acts on the bin that
//! contains `t`. Entry/exit recursions are causal convolutions with the
//! discrete duration law and run in `O(N log² N)` per state.

use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::baseline::conv::OnlineConv;
use crate::model::CtsmcModel;
use crate::observation::ObservationSet;
use crate::volterra::linalg::solve_in_place;
use crate::volterra::{initial_term, BoundaryCondition, BoundaryKind, GridFunction, TerminalCondition};
use crate::{Error, Real, Result};

/// How a continuous sojourn length maps to a whole number of bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationRounding {
    /// `d[j] = P((j−½)h ≤ τ < (j+½)h)`: unbiased, second order at bin centers.
    #[default]
    Nearest,
    /// `d[j] = P((j−1)h ≤ τ < jh)`, the classical interval masses.
    Ceil,
}

impl DurationRounding {
    fn shift<T: Real>(self) -> T {
        match self {
            DurationRounding::Nearest => T::lit(0.5),
            DurationRounding::Ceil => T::one(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct HsmmConfig<T> {
    pub h: T,
    #[serde(default)]
    pub boundary: BoundaryCondition,
    #[serde(default)]
    pub rounding: DurationRounding,
    /// Duration laws are cut where the remaining tail drops below this.
    #[serde(default = "default_tail_tol")]
    pub tail_tol: T,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: usize,
}

fn default_tail_tol<T: Real>() -> T {
    T::lit(1e-12)
}

fn default_budget() -> usize {
    2 << 30
}

impl<T: Real> HsmmConfig<T> {
    pub fn new(h: T) -> Self {
        HsmmConfig {
            h,
            boundary: BoundaryCondition::default(),
            rounding: DurationRounding::default(),
            tail_tol: default_tail_tol(),
            memory_budget_bytes: default_budget(),
        }
    }

    pub fn with_boundary(mut self, bc: BoundaryCondition) -> Self {
        self.boundary = bc;
        self
    }

    pub fn with_rounding(mut self, r: DurationRounding) -> Self {
        self.rounding = r;
        self
    }
}

/// Per-state discrete duration laws on a grid of step `h`.
#[derive(Debug, Clone)]
pub struct DiscretizedHsmm<T> {
    pub h: T,
    pub rounding: DurationRounding,
    /// `durations[x][j]`: probability of a sojourn of `j` bins.
    pub durations: Vec<Vec<T>>,
    /// Probability mass beyond the last tabulated length.
    pub tails: Vec<T>,
}

impl<T: Real> DiscretizedHsmm<T> {
    /// Tabulates lengths up to `max_len` bins, or less once the tail drops
    /// below `tail_tol`.
    pub fn new(model: &CtsmcModel<T>, h: T, rounding: DurationRounding, tail_tol: T, max_len: usize) -> Self {
        let shift: T = rounding.shift();
        let edge = |j: usize| ((T::from_usize_lossy(j) - shift) * h).max(T::zero());
        let mut durations = Vec::with_capacity(model.n_states());
        let mut tails = Vec::with_capacity(model.n_states());
        for w in &model.waiting {
            let mut d = Vec::new();
            let mut prev = T::one();
            let mut j = 0;
            loop {
                let next = w.survival(edge(j + 1));
                d.push((prev - next).max(T::zero()));
                prev = next;
                j += 1;
                if next < tail_tol || j > max_len {
                    break;
                }
            }
            durations.push(d);
            tails.push(prev);
        }
        DiscretizedHsmm { h, rounding, durations, tails }
    }

    /// Largest deviation of `Σ_j d[j] + tail` from one.
    pub fn normalization_error(&self) -> T {
        self.durations
            .iter()
            .zip(&self.tails)
            .map(|(d, &t)| (d.iter().copied().sum::<T>() + t - T::one()).abs())
            .fold(T::zero(), T::max)
    }

    fn edge(&self, j: usize) -> T {
        ((T::from_usize_lossy(j) - self.rounding.shift::<T>()) * self.h).max(T::zero())
    }
}

#[derive(Debug, Clone)]
pub struct HsmmResult<T> {
    pub discretization: DiscretizedHsmm<T>,
    /// Bin index of each (merged) observation.
    pub obs_bins: Vec<usize>,
    /// Occupancy before the observation update, at bin centers.
    pub predicted: GridFunction<T>,
    /// Occupancy after the observation update, at bin centers.
    pub filtered: GridFunction<T>,
    pub smoothed: GridFunction<T>,
    pub normalizers: Vec<T>,
    pub log_evidence: T,
    pub horizon: T,
    /// Prior marginals at `t = 0`.
    pub initial: Vec<T>,
    /// Posterior marginals of the initial state.
    pub initial_smoothed: Vec<T>,
}

/// Which HSMM marginal to evaluate off the bin centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsmmMarginal {
    Predicted,
    Filtered,
    Smoothed,
}

impl<T: Real> HsmmResult<T> {
    /// Marginals at arbitrary times: linear between bin centers, the exact
    /// `t = 0` values at the start, linear extrapolation to the horizon.
    pub fn marginals_at(&self, which: HsmmMarginal, ts: &[T]) -> GridFunction<T> {
        let centers = match which {
            HsmmMarginal::Predicted => &self.predicted,
            HsmmMarginal::Filtered => &self.filtered,
            HsmmMarginal::Smoothed => &self.smoothed,
        };
        let n = centers.n_states;
        let nb = centers.len();
        let mut times = Vec::with_capacity(nb + 2);
        let mut data = Vec::with_capacity((nb + 2) * n);
        times.push(T::zero());
        let bin0_observed = self.obs_bins.first() == Some(&0);
        match which {
            HsmmMarginal::Smoothed => data.extend_from_slice(&self.initial_smoothed),
            HsmmMarginal::Filtered if bin0_observed => data.extend_from_slice(centers.row(0)),
            _ => data.extend_from_slice(&self.initial),
        }
        times.extend_from_slice(&centers.times);
        data.extend_from_slice(&centers.data);
        times.push(self.horizon);
        if nb >= 2 {
            let (a, b) = (centers.row(nb - 2), centers.row(nb - 1));
            let (ta, tb) = (centers.times[nb - 2], centers.times[nb - 1]);
            let w = (self.horizon - tb) / (tb - ta);
            data.extend(a.iter().zip(b).map(|(&u, &v)| (v + w * (v - u)).max(T::zero()).min(T::one())));
        } else {
            data.extend_from_slice(centers.row(nb - 1));
        }
        GridFunction { times, n_states: n, data, interpolation: Default::default() }.resample(ts, Default::default())
    }
}

/// Bins used for a horizon `horizon` and step `h`.
pub fn hsmm_bin_count<T: Real>(horizon: T, h: T) -> usize {
    (horizon / h).round().to_usize().unwrap_or(0).max(1)
}

/// Forward–backward over the uniform grid with observations snapped to the
/// bin containing them (observations sharing a bin are merged).
pub fn hsmm_forward_backward<T: Real + FftNum>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    horizon: T,
    cfg: &HsmmConfig<T>,
) -> Result<HsmmResult<T>> {
    model.validate()?;
    let h = cfg.h;
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::domain(format!("step must be finite and > 0, got {h}")));
    }
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
    }
    let n = model.n_states();
    if let Some(k) = obs.n_states() {
        if k != n {
            return Err(Error::validation("likelihood vectors do not match the state count"));
        }
    }
    if let Some(&t) = obs.times.iter().find(|&&t| t < T::zero() || t >= horizon) {
        return Err(Error::domain(format!("observation at t = {t} outside [0, {horizon})")));
    }
    let nb = hsmm_bin_count(horizon, h);
    let disc = DiscretizedHsmm::new(model, h, cfg.rounding, cfg.tail_tol, nb + 1);
    let kernel_len: usize = disc.durations.iter().map(|d| d.len()).sum();
    // per-state node arrays (≈ 8 of them), two convolvers with FFT scratch
    let bytes = (nb + 1) * n * 8 * std::mem::size_of::<T>() * 2
        + kernel_len * std::mem::size_of::<T>() * 8
        + 4 * (2 * nb + 2).next_power_of_two() * 2 * std::mem::size_of::<T>();
    if bytes > cfg.memory_budget_bytes {
        return Err(Error::Resource(format!(
            "HSMM needs about {} MiB for {nb} bins (budget {} MiB); use a larger step",
            bytes >> 20,
            cfg.memory_budget_bytes >> 20
        )));
    }

    // merged observations per bin
    let mut obs_bins: Vec<usize> = Vec::new();
    let mut obs_lik: Vec<Vec<T>> = Vec::new();
    for (&t, lik) in obs.times.iter().zip(&obs.likelihoods) {
        let b = (t / h).floor().to_usize().unwrap_or(0).min(nb - 1);
        if obs_bins.last() == Some(&b) {
            let last = obs_lik.last_mut().unwrap();
            for (a, &l) in last.iter_mut().zip(lik) {
                *a = *a * l;
            }
        } else {
            obs_bins.push(b);
            obs_lik.push(lik.clone());
        }
    }
    let kk = obs_bins.len();
    let d0: Vec<T> = disc.durations.iter().map(|d| d[0]).collect();
    let chain = &model.embedded;

    // exits of the initial sojourn at node m
    let init_exit = |x: usize, m: usize| {
        let (lo, hi) = (disc.edge(m), disc.edge(m + 1));
        if hi <= lo {
            return T::zero();
        }
        let ic = cfg.boundary.initial;
        initial_term(ic, model, x, lo, BoundaryKind::P) - initial_term(ic, model, x, hi, BoundaryKind::P)
    };

    // ---- forward: entries E, exits X, occupancy α per bin ----
    let first_end = obs_bins.first().map_or(nb, |&b| b + 1);
    let mut convs: Vec<OnlineConv<T>> =
        disc.durations.iter().map(|d| OnlineConv::new(d.clone(), nb, first_end)).collect();
    for (x, c) in convs.iter_mut().enumerate() {
        for m in 0..nb {
            let g = init_exit(x, m);
            if g == T::zero() && m > 0 && disc.edge(m) > T::zero() {
                break;
            }
            c.add(m, g);
        }
    }
    let mut fwd_mat = vec![T::zero(); n * n];
    for x in 0..n {
        for y in 0..n {
            let id = if x == y { T::one() } else { T::zero() };
            fwd_mat[x * n + y] = id - chain.prob(y, x) * d0[y];
        }
    }
    let mut entries = vec![T::zero(); nb * n];
    let mut exits = vec![T::zero(); nb * n];
    let mut predicted = vec![T::zero(); nb * n];
    let mut filtered = vec![T::zero(); nb * n];
    let mut normalizers = Vec::with_capacity(kk);
    let mut factors = vec![vec![T::one(); n]; kk];
    let mut alpha = model.initial.clone();
    let mut carry = vec![T::one(); n];
    let mut next_obs = 0;
    let mut xh = vec![T::zero(); n];
    let mut rhs = vec![T::zero(); n];
    for b in 0..nb {
        for y in 0..n {
            xh[y] = convs[y].history(b);
        }
        chain.forward(&xh, &mut rhs);
        let mut mat = fwd_mat.clone();
        if !solve_in_place(&mut mat, &mut rhs, n) {
            return Err(Error::Instability { interval: next_obs, detail: "singular HSMM entry system".into() });
        }
        for x in 0..n {
            let e = rhs[x];
            let xo = xh[x] + d0[x] * e;
            entries[b * n + x] = e;
            exits[b * n + x] = xo;
            alpha[x] = alpha[x] * carry[x] + e - xo;
            convs[x].push(e);
        }
        predicted[b * n..(b + 1) * n].copy_from_slice(&alpha);
        if next_obs < kk && obs_bins[next_obs] == b {
            let lik = &obs_lik[next_obs];
            let c = alpha.iter().zip(lik).fold(T::zero(), |s, (&a, &l)| s + a * l);
            if !c.is_finite() {
                return Err(Error::Instability { interval: next_obs, detail: format!("normalizer {c}") });
            }
            if !(c > T::zero()) {
                return Err(Error::ZeroLikelihood {
                    index: next_obs,
                    time: ((T::from_usize_lossy(b) + T::lit(0.5)) * h).as_f64(),
                });
            }
            for x in 0..n {
                carry[x] = lik[x] / c;
                factors[next_obs][x] = carry[x];
            }
            normalizers.push(c);
            let end = obs_bins.get(next_obs + 1).map_or(nb, |&q| q + 1);
            for (x, conv) in convs.iter_mut().enumerate() {
                conv.barrier(carry[x], end);
            }
            next_obs += 1;
        } else {
            carry.iter_mut().for_each(|v| *v = T::one());
        }
        for x in 0..n {
            filtered[b * n + x] = alpha[x] * carry[x];
        }
    }
    drop(convs);

    // ---- backward over positions r = nb − node ----
    // barrier after position q = nb − b − 1 for an observed bin b
    let bwd_barriers: Vec<(usize, usize)> = (0..kk).rev().map(|k| (nb - obs_bins[k] - 1, k)).collect();
    let first_end = bwd_barriers.first().map_or(nb + 1, |&(q, _)| q + 1);
    let terminal = cfg.boundary.terminal;
    let mut convs: Vec<OnlineConv<T>> =
        disc.durations.iter().map(|d| OnlineConv::new(d.clone(), nb + 1, first_end)).collect();
    for (x, c) in convs.iter_mut().enumerate() {
        let w = &model.waiting[x];
        for r in 1..=nb {
            let v = match terminal {
                TerminalCondition::Uninformed => w.survival(disc.edge(r)),
                TerminalCondition::TransitionAtEnd => disc.durations[x].get(r).copied().unwrap_or(T::zero()) / h,
            };
            if v == T::zero() {
                break;
            }
            c.add(r, v);
        }
    }
    let mut bwd_mat = vec![T::zero(); n * n];
    for x in 0..n {
        for y in 0..n {
            let id = if x == y { T::one() } else { T::zero() };
            bwd_mat[x * n + y] = id - chain.prob(x, y) * d0[y];
        }
    }
    let mut b_entry = vec![T::zero(); nb * n];
    let mut b_exit = vec![T::zero(); nb * n];
    let mut bi = 0;
    let mut beh = vec![T::zero(); n];
    for r in 0..=nb {
        if r == 0 {
            convs.iter_mut().for_each(|c| c.push(T::zero()));
        } else {
            let m = nb - r;
            for y in 0..n {
                beh[y] = convs[y].history(r);
            }
            chain.adjoint(&beh, &mut rhs);
            let mut mat = bwd_mat.clone();
            if !solve_in_place(&mut mat, &mut rhs, n) {
                return Err(Error::Instability { interval: 0, detail: "singular HSMM exit system".into() });
            }
            for y in 0..n {
                b_exit[m * n + y] = rhs[y];
                b_entry[m * n + y] = beh[y] + d0[y] * rhs[y];
                convs[y].push(rhs[y]);
            }
        }
        if bi < bwd_barriers.len() && bwd_barriers[bi].0 == r {
            let k = bwd_barriers[bi].1;
            let end = bwd_barriers.get(bi + 1).map_or(nb + 1, |&(q, _)| q + 1);
            for (y, conv) in convs.iter_mut().enumerate() {
                conv.barrier(factors[k][y], end);
            }
            bi += 1;
        }
    }
    drop(convs);

    // ---- smoothing: p̂_n = p̂_{n−1} + E_n B^entry_n − X_n B^exit_n ----
    let mut p = vec![T::zero(); n];
    for x in 0..n {
        let mut ups = T::one();
        let mut k = 0;
        let mut acc = T::zero();
        for m in 0..nb {
            acc = acc + init_exit(x, m) * ups * b_exit[m * n + x];
            if k < kk && obs_bins[k] == m {
                ups = ups * factors[k][x];
                k += 1;
            }
        }
        let ic = cfg.boundary.initial;
        let end = match terminal {
            TerminalCondition::Uninformed => initial_term(ic, model, x, disc.edge(nb), BoundaryKind::P),
            TerminalCondition::TransitionAtEnd => init_exit(x, nb) / h,
        };
        p[x] = acc + end * ups;
    }
    let p_init: T = p.iter().copied().sum();
    let initial_smoothed: Vec<T> = p.iter().map(|&v| (v / p_init).max(T::zero())).collect();
    let mut smoothed = vec![T::zero(); nb * n];
    for b in 0..nb {
        for x in 0..n {
            let i = b * n + x;
            p[x] = p[x] + entries[i] * b_entry[i] - exits[i] * b_exit[i];
        }
        let s: T = p.iter().copied().sum();
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Instability { interval: 0, detail: format!("HSMM posterior mass {s}") });
        }
        for x in 0..n {
            smoothed[b * n + x] = (p[x] / s).max(T::zero());
        }
    }

    let centers: Vec<T> = (0..nb).map(|b| (T::from_usize_lossy(b) + T::lit(0.5)) * h).collect();
    let gf =
        |data: Vec<T>| GridFunction { times: centers.clone(), n_states: n, data, interpolation: Default::default() };
    let log_evidence = normalizers.iter().map(|c| c.ln()).sum();
    Ok(HsmmResult {
        discretization: disc,
        obs_bins,
        predicted: gf(predicted),
        filtered: gf(filtered),
        smoothed: gf(smoothed),
        normalizers,
        log_evidence,
        horizon,
        initial: model.initial.clone(),
        initial_smoothed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::ctmc_forward_backward;
    type WaitingTime = crate::waiting::WaitingTime<f64>;

    #[test]
    fn duration_law_is_normalized() {
        let g = WaitingTime::gamma(0.7, 1.3).unwrap();
        let w = WaitingTime::weibull(2.0, 0.5).unwrap();
        let m = CtsmcModel::new(vec![g, w], vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        for r in [DurationRounding::Nearest, DurationRounding::Ceil] {
            let d = DiscretizedHsmm::new(&m, 1e-3, r, 1e-12, 1_000_000);
            assert!(d.normalization_error() < 1e-10);
            assert!(d.tails.iter().all(|&t| t < 1e-12));
            assert!(d.durations.iter().flatten().all(|&v| v >= 0.0));
        }
        let d = DiscretizedHsmm::new(&m, 1e-3, DurationRounding::Ceil, 1e-12, 10);
        assert_eq!(d.durations[0][0], 0.0);
        assert!(d.normalization_error() < 1e-12);
    }

    #[test]
    fn symmetric_model_stays_uniform() {
        let g = WaitingTime::gamma(2.0, 3.0).unwrap();
        let m = CtsmcModel::new(vec![g, g], vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        let r = hsmm_forward_backward(&m, &ObservationSet::empty(), 2.0, &HsmmConfig::new(1e-3)).unwrap();
        for b in 0..r.smoothed.len() {
            assert!((r.smoothed.get(b, 0) - 0.5).abs() < 1e-12);
            assert!((r.filtered.get(b, 1) - 0.5).abs() < 1e-12);
        }
        assert_eq!(r.log_evidence, 0.0);
    }

    #[test]
    fn exponential_matches_ctmc() {
        let e = |r| WaitingTime::exponential(r).unwrap();
        let m = CtsmcModel::new(
            vec![e(1.0), e(2.0), e(0.7)],
            vec![vec![0.0, 0.3, 0.7], vec![0.5, 0.0, 0.5], vec![0.9, 0.1, 0.0]],
            Some(vec![0.6, 0.3, 0.1]),
        )
        .unwrap();
        let h = 1e-3;
        let times = vec![0.3705, 1.2105, 2.0505];
        let obs = ObservationSet::new(
            times.clone(),
            vec![0.0; 3],
            vec![vec![0.9, 0.1, 0.3], vec![0.2, 0.8, 0.1], vec![0.1, 0.2, 0.9]],
        )
        .unwrap();
        let r = hsmm_forward_backward(&m, &obs, 3.0, &HsmmConfig::new(h)).unwrap();
        let c = ctmc_forward_backward(&m, &obs, &r.smoothed.times).unwrap();
        let mut worst = 0.0f64;
        for b in 0..r.smoothed.len() {
            for x in 0..3 {
                worst = worst.max((r.smoothed.get(b, x) - c.smoothed_at[b][x]).abs());
            }
        }
        assert!(worst < 1e-4, "smoothed gap {worst}");
        for (k, &b) in r.obs_bins.iter().enumerate() {
            for x in 0..3 {
                assert!((r.filtered.get(b, x) - c.filtered[k][x]).abs() < 1e-4);
            }
        }
        assert!((r.log_evidence - c.log_evidence).abs() < 1e-4);
    }
}
