//! Adaptive step-size forward recursion.
//!
//! The history of entry currents is kept as time-stamped samples joined by
//! affine interpolants; each step solves the implicit update for the new
//! sample. Every step is taken once with `h` and once as two halves; the
//! difference `E` of the entry currents drives the controller
//!
//! ```text
//! s = max(min(tol / E, s_max), s_min),   h ← max(min(h s, h_max), h_min)
//! ```
//!
//! and the step never crosses the next observation.

use serde::{Deserialize, Serialize};

use crate::model::{CtsmcModel, EmbeddedChain};
use crate::observation::ObservationSet;
use crate::volterra::forward::{build_tables, check_inputs, needs_first_jump, FirstJump, Prefix};
use crate::volterra::sweep::Sweep;
use crate::volterra::{initial_term, BoundaryCondition, BoundaryKind, GridFunction, NodeKind};
use crate::waiting::LagTable;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct AdaptiveConfig<T> {
    pub initial_h: T,
    pub h_min: T,
    pub h_max: T,
    pub s_min: T,
    pub s_max: T,
    /// Allowed `max_x |φ_full − φ_half|` per step.
    pub tol: T,
    #[serde(default)]
    pub boundary: BoundaryCondition,
    /// Redo a step with the reduced `h` when `E > tol`.
    #[serde(default = "yes")]
    pub reject: bool,
}

fn yes() -> bool {
    true
}

impl<T: Real> Default for AdaptiveConfig<T> {
    fn default() -> Self {
        AdaptiveConfig {
            initial_h: T::lit(1e-4),
            h_min: T::lit(1e-6),
            h_max: T::lit(0.5),
            s_min: T::lit(0.2),
            s_max: T::lit(5.0),
            tol: T::lit(1e-6),
            boundary: BoundaryCondition::default(),
            reject: true,
        }
    }
}

impl<T: Real> AdaptiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !(pos(self.h_min)
            && pos(self.h_max)
            && pos(self.tol)
            && pos(self.s_min)
            && pos(self.s_max)
            && pos(self.initial_h))
        {
            return Err(Error::validation("adaptive parameters must be finite and > 0"));
        }
        if self.h_min > self.h_max {
            return Err(Error::validation("need h_min <= h_max"));
        }
        if !(self.s_min <= T::one() && T::one() <= self.s_max) {
            return Err(Error::validation("need s_min <= 1 <= s_max"));
        }
        Ok(())
    }

    /// Step factor for the error estimate `e`.
    pub fn factor(&self, e: T) -> T {
        if !(e > T::zero()) {
            return self.s_max;
        }
        (self.tol / e).min(self.s_max).max(self.s_min)
    }

    pub fn next_h(&self, h: T, e: T) -> T {
        (h * self.factor(e)).min(self.h_max).max(self.h_min)
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveResult<T> {
    /// Accepted steps as `(end time, step length)`; each was taken as two
    /// half steps.
    pub steps: Vec<(T, T)>,
    pub alpha: GridFunction<T>,
    pub phi: GridFunction<T>,
    pub kinds: Vec<NodeKind>,
    pub normalizers: Vec<T>,
    pub log_evidence: T,
    pub rejected: usize,
}

impl<T: Real> AdaptiveResult<T> {
    /// Solver nodes strictly inside `(0, T]`, observation duplicates excluded.
    pub fn n_nodes(&self) -> usize {
        2 * self.steps.len()
    }

    pub fn initial_step(&self) -> Option<T> {
        self.steps.first().map(|s| s.1)
    }

    pub fn write_grid_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "h"])?;
        for (t, h) in &self.steps {
            wr.write_record([format!("{t}"), format!("{h}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Node<T> {
    t: T,
    alpha: Vec<T>,
    hist: Vec<T>,
    gp: Vec<T>,
}

pub fn adaptive_forward<T: Real>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    horizon: T,
    cfg: &AdaptiveConfig<T>,
) -> Result<AdaptiveResult<T>> {
    cfg.validate()?;
    check_inputs(model, obs)?;
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
    }
    let obs = obs.truncated(horizon);
    let n = model.n_states();
    let chain = &model.embedded;
    let ic = cfg.boundary.initial;
    // lag integrals from cubic tables; cells below 1e-5 fall back to Gauss rules
    let kernels = build_tables(model, T::lit(1e-3), horizon);
    let mut sweep = Sweep::new(&kernels, chain, false, T::lit(1e-14), 1024);
    let mut prefix = Prefix::new(n, obs.len());
    let mut normalizers = Vec::with_capacity(obs.len());
    let mut log_evidence = T::zero();
    let gp_at = |t: T| -> Vec<T> { (0..n).map(|x| initial_term(ic, model, x, t, BoundaryKind::P)).collect() };
    let gf_at = |t: T| -> Vec<T> { (0..n).map(|x| initial_term(ic, model, x, t, BoundaryKind::Current)).collect() };

    let mut times = Vec::new();
    let mut kinds = Vec::new();
    let mut alpha_rows: Vec<T> = Vec::new();
    let mut steps = Vec::new();
    let mut rejected = 0;

    let mut lw = vec![T::zero(); n];
    let mut zc = vec![0u32; n];
    let mut hist = vec![T::zero(); n];
    let half = T::lit(0.5);
    let correct = needs_first_jump(model, &cfg.boundary);
    let mut first_jump = FirstJump::new(T::lit(1e-3));
    let mut corr = vec![T::zero(); n];
    // src += first-jump correction; returns it so the caller can add it to the exit current
    let mut corrected = |fj: &FirstJump<T>, prefix: &Prefix<T>, t: T, ob: usize, src: &[T]| -> (Vec<T>, Vec<T>) {
        let mut s = src.to_vec();
        if correct {
            fj.correction(&kernels, prefix, t, ob, &mut corr);
            for x in 0..n {
                s[x] = s[x] + corr[x];
            }
            (s, corr.clone())
        } else {
            (s, vec![T::zero(); n])
        }
    };
    let add = |h: &mut [T], c: &[T]| h.iter_mut().zip(c).for_each(|(a, &b)| *a = *a + b);

    // t = 0; a singular g_φ(0) gets the value that makes the trapezoid over
    // the first step exact
    let gp0 = gp_at(T::zero());
    let mut gf0 = gf_at(T::zero());
    let t1 = cfg.initial_h.min(horizon);
    let (gp1, gf1) = (gp_at(t1), gf_at(t1));
    for x in 0..n {
        if !gf0[x].is_finite() {
            gf0[x] = T::lit(2.0) * (gp0[x] - gp1[x]) / t1 - gf1[x];
        }
    }
    sweep.push(T::zero(), &lw, &zc, &gf0, &mut hist)?;
    if correct {
        first_jump.append_node(model, &kernels, &prefix, T::zero(), 0, &gf0);
    }
    let mut cur = Node { t: T::zero(), alpha: gp0.clone(), hist: hist.clone(), gp: gp0 };
    let record = |times: &mut Vec<T>, kinds: &mut Vec<NodeKind>, rows: &mut Vec<T>, t: T, kind: NodeKind, a: &[T]| {
        times.push(t);
        kinds.push(kind);
        rows.extend_from_slice(a);
    };
    let mut next_obs = 0;
    if obs.times.first() == Some(&T::zero()) {
        apply_observation(&obs, 0, &mut cur.alpha, &mut prefix, &mut normalizers, &mut log_evidence)?;
        record(&mut times, &mut kinds, &mut alpha_rows, T::zero(), NodeKind::ObsLeft(0), &gp_at(T::zero()));
        let src: Vec<T> = (0..n).map(|x| prefix.upsilon(x, 0, 1) * gf0[x]).collect();
        push_obs_node(&mut sweep, &prefix, &src, &mut hist)?;
        cur.hist = hist.clone();
        if correct {
            first_jump.append_node(model, &kernels, &prefix, T::zero(), 1, &gf0);
        }
        record(&mut times, &mut kinds, &mut alpha_rows, T::zero(), NodeKind::ObsRight(0), &cur.alpha);
        next_obs = 1;
    } else {
        record(&mut times, &mut kinds, &mut alpha_rows, T::zero(), NodeKind::Regular, &cur.alpha);
    }

    let mut h = cfg.initial_h;
    let mut u_full = vec![T::zero(); n];
    while cur.t < horizon {
        let stop = if next_obs < obs.len() { obs.times[next_obs] } else { horizon };
        let room = stop - cur.t;
        let mut step = h.min(room);
        // no sliver shorter than h_min before the stop
        if room - step < cfg.h_min {
            step = room;
            if step > cfg.h_max {
                step = room * half;
            }
        }
        let ob = normalizers.len();
        for x in 0..n {
            lw[x] = prefix.log[x][ob];
            zc[x] = prefix.zeros[x][ob];
        }
        let base = sweep.times.len();
        let t_end = if step == room { stop } else { cur.t + step };
        let src_at = |t: T| -> Vec<T> {
            let g = gf_at(t);
            (0..n).map(|x| prefix.upsilon(x, 0, ob) * g[x]).collect()
        };
        let raw_end = src_at(t_end);
        let fj_base = first_jump.len();
        let (src_end, c_end) = corrected(&first_jump, &prefix, t_end, ob, &raw_end);
        sweep.push(t_end, &lw, &zc, &src_end, &mut hist)?;
        add(&mut hist, &c_end);
        u_full.copy_from_slice(sweep.u_row(base));
        sweep.truncate(base);
        let ups0: Vec<T> = (0..n).map(|x| prefix.upsilon(x, 0, ob)).collect();
        let gp_end = gp_at(t_end);
        let alpha_full = advance(chain, &cur, t_end, &hist, &gp_end, &ups0);

        let t_mid = cur.t + step * half;
        let mut h_mid = vec![T::zero(); n];
        let mut h_end = vec![T::zero(); n];
        let raw_mid = src_at(t_mid);
        let (src_mid, c_mid) = corrected(&first_jump, &prefix, t_mid, ob, &raw_mid);
        sweep.push(t_mid, &lw, &zc, &src_mid, &mut h_mid)?;
        add(&mut h_mid, &c_mid);
        if correct {
            first_jump.append_node(model, &kernels, &prefix, t_mid, ob, &gf_at(t_mid));
        }
        let (src_end, c_end) = corrected(&first_jump, &prefix, t_end, ob, &raw_end);
        sweep.push(t_end, &lw, &zc, &src_end, &mut h_end)?;
        add(&mut h_end, &c_end);
        let gp_mid = gp_at(t_mid);
        let alpha_mid = advance(chain, &cur, t_mid, &h_mid, &gp_mid, &ups0);
        let mid = Node { t: t_mid, alpha: alpha_mid, hist: h_mid, gp: gp_mid };
        let alpha_end = advance(chain, &mid, t_end, &h_end, &gp_end, &ups0);
        // the currents and the marginals they drive
        let err = (0..n).fold(T::zero(), |e, x| {
            e.max((u_full[x] - sweep.u_row(base + 1)[x]).abs()).max((alpha_full[x] - alpha_end[x]).abs())
        });
        if !err.is_finite() {
            return Err(Error::Instability {
                interval: ob,
                detail: format!("non-finite error estimate at t = {}", cur.t),
            });
        }
        if cfg.reject && err > cfg.tol && step > cfg.h_min {
            sweep.truncate(base);
            first_jump.truncate(fj_base, &prefix);
            h = cfg.next_h(step, err);
            rejected += 1;
            continue;
        }
        record(&mut times, &mut kinds, &mut alpha_rows, t_mid, NodeKind::Regular, &mid.alpha);
        record(&mut times, &mut kinds, &mut alpha_rows, t_end, NodeKind::Regular, &alpha_end);
        cur = Node { t: t_end, alpha: alpha_end, hist: h_end, gp: gp_end };
        if cur.alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { interval: ob, detail: format!("non-finite marginal at t = {}", cur.t) });
        }
        steps.push((t_end, step));
        h = cfg.next_h(step, err);
        if correct {
            first_jump.append_node(model, &kernels, &prefix, t_end, ob, &gf_at(t_end));
        }
        if t_end == stop && next_obs < obs.len() {
            let k = next_obs;
            *kinds.last_mut().unwrap() = NodeKind::ObsLeft(k);
            apply_observation(&obs, k, &mut cur.alpha, &mut prefix, &mut normalizers, &mut log_evidence)?;
            let g_stop = gf_at(stop);
            let raw: Vec<T> = g_stop.iter().enumerate().map(|(x, &g)| prefix.upsilon(x, 0, k + 1) * g).collect();
            let (src, c) = corrected(&first_jump, &prefix, stop, k + 1, &raw);
            push_obs_node(&mut sweep, &prefix, &src, &mut hist)?;
            add(&mut hist, &c);
            cur.hist = hist.clone();
            if correct {
                first_jump.append_node(model, &kernels, &prefix, stop, k + 1, &g_stop);
            }
            record(&mut times, &mut kinds, &mut alpha_rows, stop, NodeKind::ObsRight(k), &cur.alpha);
            next_obs += 1;
        }
    }

    let alpha = GridFunction { times: times.clone(), n_states: n, data: alpha_rows, interpolation: Default::default() };
    let phi = GridFunction {
        times: sweep.times.clone(),
        n_states: n,
        data: sweep.u.clone(),
        interpolation: Default::default(),
    };
    Ok(AdaptiveResult { steps, alpha, phi, kinds, normalizers, log_evidence, rejected })
}

/// Conservative marginal update over `[cur.t, t]`: trapezoid on the
/// history exit current, boundary sojourn integrated exactly.
fn advance<T: Real>(chain: &EmbeddedChain<T>, cur: &Node<T>, t: T, hist: &[T], gp: &[T], ups0: &[T]) -> Vec<T> {
    let n = hist.len();
    let dt = t - cur.t;
    let drive: Vec<T> =
        (0..n).map(|x| T::lit(0.5) * dt * (cur.hist[x] + hist[x]) + ups0[x] * (cur.gp[x] - gp[x])).collect();
    let mut mix = vec![T::zero(); n];
    chain.forward(&drive, &mut mix);
    (0..n).map(|x| cur.alpha[x] + mix[x] - drive[x]).collect()
}

fn apply_observation<T: Real>(
    obs: &ObservationSet<T>,
    k: usize,
    alpha: &mut [T],
    prefix: &mut Prefix<T>,
    normalizers: &mut Vec<T>,
    log_evidence: &mut T,
) -> Result<()> {
    let lik = &obs.likelihoods[k];
    let c = alpha.iter().zip(lik).fold(T::zero(), |a, (&p, &l)| a + p * l);
    if !(c > T::zero()) || !c.is_finite() {
        return Err(Error::ZeroLikelihood { index: k, time: obs.times[k].as_f64() });
    }
    for (a, &l) in alpha.iter_mut().zip(lik) {
        *a = *a * l / c;
    }
    prefix.push(lik, c);
    normalizers.push(c);
    *log_evidence = *log_evidence + c.ln();
    Ok(())
}

/// Second node at an observation instant carrying the updated υ.
fn push_obs_node<T: Real>(
    sweep: &mut Sweep<'_, T, LagTable<T>>,
    prefix: &Prefix<T>,
    src: &[T],
    hist: &mut [T],
) -> Result<()> {
    let n = src.len();
    let ob = prefix.log[0].len() - 1;
    let lw: Vec<T> = (0..n).map(|x| prefix.log[x][ob]).collect();
    let zc: Vec<u32> = (0..n).map(|x| prefix.zeros[x][ob]).collect();
    let t = *sweep.times.last().unwrap();
    sweep.push(t, &lw, &zc, src, hist)
}
