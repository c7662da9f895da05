use crate::model::CtsmcModel;
use crate::volterra::forward::{build_tables, initial_current_on_grid, Prefix};
use crate::volterra::sweep::product_weights;
use crate::volterra::{terminal_term, BackwardResult, BoundaryKind, ForwardResult, GridFunction, InitialCondition};
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct SmoothedResult<T> {
    /// Posterior marginals `P(X(t) = x | y_[0,T))`, normalized per node.
    pub p_hat: GridFunction<T>,
    /// Per-node total mass before normalization (≈ 1 when the forward and
    /// backward scalings are consistent).
    pub raw_mass: Vec<T>,
}

/// Two-sided marginalization over the sojourn covering `t`:
///
/// ```text
/// p̂(x,t) ∝ ∫_0^t φ_α(x,τ) R(x,τ,t) dτ + (initial sojourn still running at t)
/// R(x,τ,t) = ∫_t^T υ(x,τ,τ') f(τ'−τ|x) ψ_β(x,τ') dτ' + υ(x,τ,T) γ(T−τ)
/// ```
///
/// with `γ = Λ` (uninformed end) or `f` (transition at the end). `τ` uses the
/// trapezoid rule, `τ'` the product-trapezoid rule; each `τ` row is swept
/// once from `T` backwards, so the cost is quadratic in the node count.
pub fn smooth<T: Real>(
    model: &CtsmcModel<T>,
    fwd: &ForwardResult<T>,
    bwd: &BackwardResult<T>,
) -> Result<SmoothedResult<T>> {
    let grid = &fwd.grid;
    let n = model.n_states();
    let len = grid.len();
    if bwd.psi_beta.len() != len || bwd.psi_beta.n_states != n || fwd.phi_alpha.n_states != n {
        return Err(Error::state("forward and backward results live on different meshes"));
    }
    if bwd.psi_beta.times != grid.times {
        return Err(Error::state("forward and backward results live on different meshes"));
    }
    let tables = build_tables(model, grid.h, grid.horizon);
    let bc = fwd.boundary;
    let prefix = Prefix::from_normalizers(&fwd.observations, n, &fwd.normalizers);
    let kk = fwd.normalizers.len();
    let horizon = grid.horizon;
    let times = &grid.times;
    let (gp, gf) = initial_current_on_grid(model, &bc, times);

    let mut raw = GridFunction::zeros(times.clone(), n);
    let half = T::lit(0.5);
    let step = |j: usize| times[j + 1] - times[j];

    // First-jump part of φ_α for a start transition: Σ_y m[y][x] υ0(y) p0(y) f_y(τ).
    // It is singular at τ = 0 for shapes below one, so it gets product
    // weights per origin state instead of the trapezoid rule.
    let split = bc.initial == InitialCondition::TransitionAtStart;
    let mut first_jump = vec![T::zero(); if split { len * n } else { 0 }];
    let mut jump_after = vec![T::zero(); if split { len * n } else { 0 }];
    let mut jump_before = vec![T::zero(); if split { len * n } else { 0 }];
    if split {
        let ups0_all: Vec<T> = (0..len * n).map(|k| prefix.upsilon(k % n, 0, grid.applied[k / n])).collect();
        for y in 0..n {
            if model.initial[y] == T::zero() {
                continue;
            }
            let ky = &tables[y];
            let mut w_prev_far = T::zero();
            for j in 0..len {
                let (mut near, mut far) = (T::zero(), T::zero());
                if j + 1 < len && times[j + 1] > times[j] {
                    let (la, ca) = ky.survival_and_cum(times[j]);
                    let (lb, cb) = ky.survival_and_cum(times[j + 1]);
                    (near, far) = product_weights(ky, times[j], times[j + 1], la, ca, lb, cb);
                }
                let c = model.initial[y] * ups0_all[j * n + y];
                for x in 0..n {
                    let mx = model.embedded.m[y][x] * c;
                    first_jump[j * n + x] =
                        first_jump[j * n + x] + model.embedded.m[y][x] * ups0_all[j * n + y] * gf[j * n + y];
                    jump_after[j * n + x] = jump_after[j * n + x] + mx * near;
                    jump_before[j * n + x] = jump_before[j * n + x] + mx * w_prev_far;
                }
                w_prev_far = far;
            }
        }
    }

    for x in 0..n {
        let kern = &tables[x];
        // node values of the future-side integrand
        let psi_b: Vec<T> = (0..len).map(|m| bwd.psi_beta.get(m, x)).collect();
        let ups_ref: Vec<(u32, T)> =
            (0..len).map(|m| (prefix.zeros[x][grid.applied[m]], prefix.log[x][grid.applied[m]])).collect();
        let mut acc = vec![T::zero(); len];
        let reach = model.waiting[x].survival_quantile(T::lit(1e-30));

        for j in 0..len {
            let mut phi = fwd.phi_alpha.get(j, x);
            if split {
                phi = phi - first_jump[j * n + x];
            }
            let w_after = if j + 1 < len { half * step(j) } else { T::zero() };
            let w_before = if j >= 1 { half * step(j - 1) } else { T::zero() };
            let (mut c_after, mut c_before) = (phi * w_after, phi * w_before);
            if split {
                c_after = c_after + jump_after[j * n + x];
                c_before = c_before + jump_before[j * n + x];
            }
            if c_after == T::zero() && c_before == T::zero() {
                continue;
            }
            let (zj, lj) = ups_ref[j];
            let ups = |m: usize| {
                let (zm, lm) = ups_ref[m];
                if zm == zj {
                    (lm - lj).exp()
                } else {
                    T::zero()
                }
            };
            // υ only changes across observations; cache the latest two
            let tau = times[j];
            // sojourns longer than `reach` carry no mass; start the sweep there
            let top = if times[len - 1] - tau > reach {
                j + times[j..].partition_point(|&t| t - tau <= reach)
            } else {
                len - 1
            };
            let (mut r, mut b) = if top == len - 1 {
                // R(j, last): holding through T
                let end_lag = horizon - tau;
                let term = terminal_term(bc.terminal, model, x, end_lag, BoundaryKind::Current);
                let term = if term.is_finite() { term } else { T::zero() };
                (prefix.upsilon(x, grid.applied[j], kk) * term, end_lag)
            } else {
                (T::zero(), times[top + 1] - tau)
            };
            let mut ups_hi = ups(top + usize::from(top < len - 1));
            let mut key_hi = grid.applied[top + usize::from(top < len - 1)];
            let (mut lam_b, mut c_b) = kern.survival_and_cum(b);
            for m in (j..=top).rev() {
                if m < len - 1 {
                    let a = times[m] - tau;
                    if b > a {
                        let (lam_a, c_a) = kern.survival_and_cum(a);
                        let (wn, wf) = product_weights(kern, a, b, lam_a, c_a, lam_b, c_b);
                        let ups_lo = if grid.applied[m] == key_hi { ups_hi } else { ups(m) };
                        r = r + wn * ups_lo * psi_b[m] + wf * ups_hi * psi_b[m + 1];
                        ups_hi = ups_lo;
                        key_hi = grid.applied[m];
                        lam_b = lam_a;
                        c_b = c_a;
                        b = a;
                    } else if grid.applied[m] != key_hi {
                        ups_hi = ups(m);
                        key_hi = grid.applied[m];
                    }
                }
                let c = if m > j { c_after + c_before } else { c_before };
                acc[m] = acc[m] + c * r;
            }
        }

        // initial sojourn still running at t
        let ups0 = |m: usize| prefix.upsilon(x, 0, grid.applied[m]);
        let mut tail = ups0(len - 1) * gp[(len - 1) * n + x];
        acc[len - 1] = acc[len - 1] + tail;
        for m in (0..len - 1).rev() {
            let (a, b) = (times[m], times[m + 1]);
            if b > a {
                let (wn, wf) = match bc.initial {
                    InitialCondition::TransitionAtStart => {
                        let (la, ca) = kern.survival_and_cum(a);
                        let (lb, cb) = kern.survival_and_cum(b);
                        let (wn, wf) = product_weights(kern, a, b, la, ca, lb, cb);
                        (wn * model.initial[x], wf * model.initial[x])
                    }
                    InitialCondition::SteadyState => {
                        (half * (b - a) * gf[m * n + x], half * (b - a) * gf[(m + 1) * n + x])
                    }
                };
                tail = tail + wn * ups0(m) * psi_b[m] + wf * ups0(m + 1) * psi_b[m + 1];
            }
            acc[m] = acc[m] + tail;
        }
        for m in 0..len {
            raw.set(m, x, acc[m]);
        }
    }

    let mut p_hat = raw.clone();
    let mut raw_mass = Vec::with_capacity(len);
    for m in 0..len {
        let row = p_hat.row_mut(m);
        for v in row.iter_mut() {
            if *v < T::zero() && *v > -T::lit(1e-10) {
                *v = T::zero();
            }
        }
        let s: T = row.iter().copied().sum();
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Instability {
                interval: grid.applied[m],
                detail: format!("posterior mass {s} at t = {}", times[m]),
            });
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
        raw_mass.push(s);
    }
    Ok(SmoothedResult { p_hat, raw_mass })
}
