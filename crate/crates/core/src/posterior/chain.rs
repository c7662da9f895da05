//! Posterior over the number of jumps in `[0, T)`.
//!
//! The forward current system is split by generation: `ψ_0 = υ0 g_φ` is the
//! exit current of the initial sojourn, and the sojourn entered by the n-th
//! jump has entry current `φ_n = M ψ_{n−1}` and exit current
//! `ψ_n = ∫ f υ φ_n`. Each generation is an explicit sweep with the forward
//! quadrature, so summing the generations reproduces the discrete filter.

use std::io::Write;

use crate::model::CtsmcModel;
use crate::observation::ScaledLikelihood;
use crate::volterra::forward::{build_tables, initial_current_on_grid, needs_first_jump, FirstJump, Prefix};
use crate::volterra::sweep::Sweep;
use crate::volterra::{NodeKind, SolverConfig, TimeGrid};
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct ChainLengthPosterior<T> {
    /// `P(n | y)` for `n = 0..len`.
    pub probabilities: Vec<T>,
    /// `p_n(x, T)`, one row per `n`.
    pub terminal: Vec<Vec<T>>,
    /// Mass not accounted for by the returned `n`, `max(0, 1 − Σ P(n|y))`.
    pub truncation_mass: T,
}

impl<T: Real> ChainLengthPosterior<T> {
    pub fn total(&self) -> T {
        self.probabilities.iter().fold(T::zero(), |a, &p| a + p)
    }

    /// Most probable jump count; ties go to the smaller `n`.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (n, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = n;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "probability"])?;
        for (n, p) in self.probabilities.iter().enumerate() {
            wr.write_record([n.to_string(), format!("{p}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Safety cap on the number of generations.
pub(crate) fn max_generations<T: Real>(model: &CtsmcModel<T>, horizon: T) -> usize {
    let expected = (horizon / model.min_mean_waiting()).as_f64().ceil().max(1.0);
    (64.0 * expected).min(1e6) as usize
}

/// Generation-resolved forward sweep. `sl` must carry the forward
/// normalizers; observations at or beyond `horizon` are ignored.
pub fn chain_length_posterior<T: Real>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    horizon: T,
    cfg: &SolverConfig<T>,
    mass_tol: T,
) -> Result<ChainLengthPosterior<T>> {
    cfg.validate()?;
    model.validate()?;
    if !(mass_tol > T::zero() && mass_tol < T::one()) {
        return Err(Error::domain(format!("mass_tol must lie in (0, 1), got {mass_tol}")));
    }
    let c = sl.normalizers().ok_or_else(|| Error::state("forward normalizers missing: run the forward pass first"))?;
    let obs = sl.observations();
    let k = obs.truncated(horizon).len();
    let times = &obs.times[..k];
    let n = model.n_states();
    let grid = TimeGrid::build(times, horizon, cfg.h)?;
    let len = grid.len();
    let tables = build_tables(model, grid.h, horizon);
    let mut prefix = Prefix::new(n, k);
    for j in 0..k {
        prefix.push(&obs.likelihoods[j], c[j]);
    }
    let (gp, gf) = initial_current_on_grid(model, &cfg.boundary, &grid.times);
    let chain = &model.embedded;
    let half = T::lit(0.5);

    // generation 0: exit current υ0 g_φ, boundary part of α integrated exactly
    let mut psi_prev = vec![T::zero(); len * n];
    let mut drive_prev = vec![T::zero(); len * n];
    let mut alpha = vec![T::zero(); n];
    for i in 0..len {
        let ob = grid.applied[i];
        for x in 0..n {
            let ups0 = prefix.upsilon(x, 0, ob);
            psi_prev[i * n + x] = ups0 * gf[i * n + x];
            if i > 0 && !matches!(grid.kinds[i], NodeKind::ObsRight(_)) {
                drive_prev[i * n + x] = ups0 * (gp[(i - 1) * n + x] - gp[i * n + x]);
            }
        }
    }
    for x in 0..n {
        alpha[x] = prefix.upsilon(x, 0, grid.applied[len - 1]) * gp[(len - 1) * n + x];
    }
    let mut probabilities = vec![alpha.iter().fold(T::zero(), |a, &v| a + v)];
    let mut terminal = vec![alpha.clone()];
    let mut cum = probabilities[0];

    let cap = max_generations(model, horizon);
    let stop = T::one() - mass_tol;
    let negligible = mass_tol * T::lit(1e-3);
    let mut lw = vec![T::zero(); n];
    let mut zc = vec![0u32; n];
    let mut u = vec![T::zero(); n];
    let mut hist = vec![T::zero(); n];
    let mut entry = vec![T::zero(); n];
    let zero = vec![T::zero(); n];
    let mut corr = vec![T::zero(); n];
    let correct = needs_first_jump(model, &cfg.boundary);
    let mut psi = vec![T::zero(); len * n];
    let mut drive = vec![T::zero(); len * n];
    loop {
        let gen = probabilities.len();
        let last = probabilities[gen - 1];
        let rising = gen >= 2 && last > probabilities[gen - 2];
        if cum >= stop || (gen > 1 && !rising && last < negligible && cum > half) {
            break;
        }
        if gen > cap {
            return Err(Error::Truncation { n_max: cap, mass: cum.as_f64(), tol: mass_tol.as_f64() });
        }
        let mut sweep = Sweep::new(&tables, chain, false, cfg.history_truncation_tol, len);
        alpha.iter_mut().for_each(|a| *a = T::zero());
        // the forward pass's first-jump quadrature correction belongs to ψ_1
        let mut first_jump = (gen == 1 && correct).then(|| FirstJump::new(grid.h));
        for i in 0..len {
            let ob = grid.applied[i];
            for x in 0..n {
                lw[x] = prefix.log[x][ob];
                zc[x] = prefix.zeros[x][ob];
            }
            chain.forward(&psi_prev[i * n..(i + 1) * n], &mut u);
            match first_jump.as_mut() {
                Some(fj) if i > 0 => {
                    fj.correction(&tables, &prefix, grid.times[i], ob, &mut corr);
                    sweep.push_explicit(grid.times[i], &lw, &zc, &corr, &u, &mut hist)?;
                    for x in 0..n {
                        hist[x] = hist[x] + corr[x];
                    }
                }
                _ => sweep.push_explicit(grid.times[i], &lw, &zc, &zero, &u, &mut hist)?,
            }
            if let Some(fj) = first_jump.as_mut() {
                fj.append(model, &tables, &grid, &prefix, &gf, i);
            }
            psi[i * n..(i + 1) * n].copy_from_slice(&hist);
            match grid.kinds[i] {
                NodeKind::ObsRight(j) => {
                    for x in 0..n {
                        alpha[x] = alpha[x] * obs.likelihoods[j][x] / c[j];
                        drive[i * n + x] = T::zero();
                    }
                }
                _ if i == 0 => drive[..n].iter_mut().for_each(|d| *d = T::zero()),
                _ => {
                    let dt = grid.times[i] - grid.times[i - 1];
                    chain.forward(&drive_prev[i * n..(i + 1) * n], &mut entry);
                    for x in 0..n {
                        let d = half * dt * (psi[(i - 1) * n + x] + hist[x]);
                        drive[i * n + x] = d;
                        alpha[x] = alpha[x] + entry[x] - d;
                    }
                }
            }
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { interval: k, detail: format!("generation {gen} diverged") });
        }
        let p = alpha.iter().fold(T::zero(), |a, &v| a + v);
        cum = cum + p;
        probabilities.push(p);
        terminal.push(alpha.clone());
        std::mem::swap(&mut psi_prev, &mut psi);
        std::mem::swap(&mut drive_prev, &mut drive);
    }
    Ok(ChainLengthPosterior { probabilities, terminal, truncation_mass: (T::one() - cum).max(T::zero()) })
}
