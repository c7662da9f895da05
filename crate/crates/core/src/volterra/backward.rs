use crate::model::CtsmcModel;
use crate::observation::ScaledLikelihood;
use crate::volterra::forward::{build_tables, check_inputs, relabel, Prefix};
use crate::volterra::grid::{GridFunction, NodeKind, TimeGrid};
use crate::volterra::sweep::Sweep;
use crate::volterra::{terminal_term, BoundaryKind, SolverConfig, TerminalCondition};
use crate::waiting::LagIntegrals;
use crate::{Error, Real, Result};

/// Future-likelihood functions on the forward mesh.
///
/// `phi_beta(x,t)`: likelihood of `y_[t,T)` given entry into `x` at `t`;
/// `psi_beta = M† phi_beta`: given an exit from `x` at `t`;
/// `beta(x,t)`: given `X(t) = x` with the sojourn age drawn from the
/// residual-life law. All scaled by the forward normalizers.
#[derive(Debug, Clone)]
pub struct BackwardResult<T> {
    pub beta: GridFunction<T>,
    pub phi_beta: GridFunction<T>,
    pub psi_beta: GridFunction<T>,
    pub truncation_lag: Vec<T>,
}

/// Backward pass on `grid` (normally the forward mesh). Needs the forward
/// normalizers inside `sl`.
pub fn backward_pass<T: Real>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    grid: &TimeGrid<T>,
    cfg: &SolverConfig<T>,
) -> Result<BackwardResult<T>> {
    check_inputs(model, sl.observations())?;
    let tables = build_tables(model, grid.h, grid.horizon);
    backward_with_kernels(model, sl, grid, cfg, &tables)
}

pub(crate) fn backward_with_kernels<T: Real, K: LagIntegrals<T>>(
    model: &CtsmcModel<T>,
    sl: &ScaledLikelihood<T>,
    grid: &TimeGrid<T>,
    cfg: &SolverConfig<T>,
    kernels: &[K],
) -> Result<BackwardResult<T>> {
    let obs = sl.observations();
    let c = sl.normalizers().ok_or_else(|| Error::state("backward pass needs forward normalizers"))?;
    let expected = grid.applied[grid.last()];
    if obs.len() != expected {
        return Err(Error::state("mesh does not match the observation set"));
    }
    let n = model.n_states();
    let len = grid.len();
    let kk = obs.len();
    let prefix = Prefix::from_normalizers(obs, n, c);
    let horizon = grid.horizon;
    let tc = cfg.boundary.terminal;
    let means: Vec<T> = model.waiting.iter().map(|w| w.mean()).collect();

    // terminal terms in forward node order
    let mut src_term = vec![T::zero(); len * n];
    let mut g_term = vec![T::zero(); len * n];
    for i in 0..len {
        let lag = horizon - grid.times[i];
        for x in 0..n {
            src_term[i * n + x] = terminal_term(tc, model, x, lag, BoundaryKind::Current);
            g_term[i * n + x] = means[x] * terminal_term(tc, model, x, lag, BoundaryKind::P);
        }
    }
    if tc == TerminalCondition::TransitionAtEnd {
        // singular f at lag 0: mass-preserving value at t = T
        if let Some(i1) = (0..len).rev().find(|&i| grid.times[i] < horizon) {
            let s1 = horizon - grid.times[i1];
            for x in 0..n {
                let last = (len - 1) * n + x;
                if !src_term[last].is_finite() {
                    let eff = T::lit(2.0) * (g_term[last] - g_term[i1 * n + x]) / s1 - src_term[i1 * n + x];
                    for i in i1 + 1..len {
                        src_term[i * n + x] = eff;
                    }
                }
            }
        }
    }

    let mut sweep = Sweep::new(kernels, &model.embedded, true, cfg.history_truncation_tol, len);
    let mut lw = vec![T::zero(); n];
    let mut zc = vec![0u32; n];
    let mut src = vec![T::zero(); n];
    let mut hist = vec![T::zero(); n];
    let mut hist_by_node = vec![T::zero(); len * n];
    let mut ups_t = vec![T::zero(); len * n];
    for r in 0..len {
        let i = len - 1 - r;
        let ob = grid.applied[i];
        for x in 0..n {
            lw[x] = -prefix.log[x][ob];
            zc[x] = prefix.zeros[x][kk] - prefix.zeros[x][ob];
            let ut = prefix.upsilon(x, ob, kk);
            ups_t[i * n + x] = ut;
            src[x] = ut * src_term[i * n + x];
        }
        sweep.push(horizon - grid.times[i], &lw, &zc, &src, &mut hist).map_err(|e| relabel(e, ob))?;
        hist_by_node[i * n..(i + 1) * n].copy_from_slice(&hist);
        if sweep.v_row(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                interval: ob,
                detail: format!("non-finite backward current at t = {}", grid.times[i]),
            });
        }
    }

    // reorder into forward node order
    let mut phi_beta = GridFunction::zeros(grid.times.clone(), n);
    let mut psi_beta = GridFunction::zeros(grid.times.clone(), n);
    for r in 0..len {
        let i = len - 1 - r;
        phi_beta.row_mut(i).copy_from_slice(sweep.v_row(r));
        psi_beta.row_mut(i).copy_from_slice(sweep.u_row(r));
    }

    // μ dβ/dt = (I − M†) φ_β, integrated backward from β(T) = γ_p(T)
    let mut beta = GridFunction::zeros(grid.times.clone(), n);
    let last = len - 1;
    for x in 0..n {
        beta.set(last, x, g_term[last * n + x] / means[x]);
    }
    let half = T::lit(0.5);
    let mut drive = vec![T::zero(); n];
    let mut mixed = vec![T::zero(); n];
    for i in (0..last).rev() {
        if let NodeKind::ObsLeft(k) = grid.kinds[i] {
            let lik = &obs.likelihoods[k];
            for x in 0..n {
                beta.set(i, x, beta.get(i + 1, x) * lik[x] / c[k]);
            }
            continue;
        }
        let dt = grid.times[i + 1] - grid.times[i];
        for x in 0..n {
            // Same rule for the terminal term as for the history: with no data
            // the two add up to dt exactly and β stays 1. A singular f at T
            // keeps the exact increment.
            let term = match tc {
                TerminalCondition::Uninformed => {
                    half * dt * ups_t[i * n + x] * (src_term[i * n + x] + src_term[(i + 1) * n + x])
                }
                TerminalCondition::TransitionAtEnd => ups_t[i * n + x] * (g_term[(i + 1) * n + x] - g_term[i * n + x]),
            };
            drive[x] = half * dt * (hist_by_node[i * n + x] + hist_by_node[(i + 1) * n + x]) + term;
        }
        model.embedded.adjoint(&drive, &mut mixed);
        for x in 0..n {
            let v = beta.get(i + 1, x) - (drive[x] - mixed[x]) / means[x];
            beta.set(i, x, v);
        }
    }
    if !beta.all_finite() {
        return Err(Error::Instability { interval: 0, detail: "non-finite β".into() });
    }
    Ok(BackwardResult { beta, phi_beta, psi_beta, truncation_lag: sweep.max_cutoff.clone() })
}
