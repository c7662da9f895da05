use crate::model::CtsmcModel;
use crate::observation::{ObservationSet, ScaledLikelihood};
use crate::volterra::grid::{GridFunction, NodeKind, TimeGrid};
use crate::volterra::sweep::{product_weights, Sweep};
use crate::volterra::{initial_term, BoundaryCondition, BoundaryKind, InitialCondition, SolverConfig};
use crate::waiting::{LagIntegrals, LagTable, WaitingTime};
use crate::{Error, Real, Result};

/// Filtered marginals and currents on the mesh.
#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    pub grid: TimeGrid<T>,
    pub alpha: GridFunction<T>,
    pub phi_alpha: GridFunction<T>,
    pub psi_alpha: GridFunction<T>,
    /// Pre-update filtered mass `c_k = Σ_x L_k(x) α(x, t_k−)`.
    pub normalizers: Vec<T>,
    pub log_evidence: T,
    /// Largest lag kept in the memory integrals, per state.
    pub truncation_lag: Vec<T>,
    pub boundary: BoundaryCondition,
    pub observations: ObservationSet<T>,
}

impl<T: Real> ForwardResult<T> {
    pub fn horizon(&self) -> T {
        self.grid.horizon
    }

    pub fn scaled_likelihood(&self) -> Result<ScaledLikelihood<T>> {
        ScaledLikelihood::with_normalizers(self.observations.clone(), self.normalizers.clone())
    }

    /// Post-update filtered marginals `P(X(t_k) | y_0..y_k)`, one row per
    /// observation.
    pub fn filtered_at_observations(&self) -> Vec<Vec<T>> {
        self.grid
            .kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, NodeKind::ObsRight(_)))
            .map(|(i, _)| self.alpha.row(i).to_vec())
            .collect()
    }

    /// Pre-update (predicted) marginals at each observation.
    pub fn predicted_at_observations(&self) -> Vec<Vec<T>> {
        self.grid
            .kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, NodeKind::ObsLeft(_)))
            .map(|(i, _)| self.alpha.row(i).to_vec())
            .collect()
    }

    pub fn final_alpha(&self) -> Vec<T> {
        self.alpha.row(self.grid.last()).to_vec()
    }
}

pub(crate) fn build_tables<T: Real>(model: &CtsmcModel<T>, h: T, horizon: T) -> Vec<LagTable<T>> {
    model
        .waiting
        .iter()
        .map(|w| {
            let reach = w.survival_quantile(T::lit(1e-17)).min(horizon);
            LagTable::new(*w, h / T::lit(4.0), reach + h)
        })
        .collect()
}

/// Per-state `ln υ(x, 0, ·)` prefix over observations, with zero counts.
#[derive(Debug, Clone)]
pub(crate) struct Prefix<T> {
    pub log: Vec<Vec<T>>,
    pub zeros: Vec<Vec<u32>>,
}

impl<T: Real> Prefix<T> {
    pub fn new(n: usize, k: usize) -> Self {
        let mut log = vec![Vec::with_capacity(k + 1); n];
        let mut zeros = vec![Vec::with_capacity(k + 1); n];
        for x in 0..n {
            log[x].push(T::zero());
            zeros[x].push(0);
        }
        Prefix { log, zeros }
    }

    pub fn push(&mut self, lik: &[T], c: T) {
        for (x, &l) in lik.iter().enumerate() {
            let (dl, dz) = if l > T::zero() { ((l / c).ln(), 0) } else { (T::zero(), 1) };
            let last = *self.log[x].last().unwrap();
            let lz = *self.zeros[x].last().unwrap();
            self.log[x].push(last + dl);
            self.zeros[x].push(lz + dz);
        }
    }

    pub fn from_normalizers(obs: &ObservationSet<T>, n: usize, c: &[T]) -> Self {
        let mut p = Prefix::new(n, c.len());
        for (lik, &ck) in obs.likelihoods.iter().zip(c) {
            p.push(lik, ck);
        }
        p
    }

    /// υ(x, node with `a` applied → node with `b` applied).
    #[inline]
    pub fn upsilon(&self, x: usize, a: usize, b: usize) -> T {
        if self.zeros[x][a] != self.zeros[x][b] {
            T::zero()
        } else {
            (self.log[x][b] - self.log[x][a]).exp()
        }
    }
}

/// Effective `g_φ` values on the mesh: a singular value at t = 0 is replaced
/// by the value that makes the trapezoid over the first step reproduce
/// `g_p(0) − g_p(t_1)` exactly.
pub(crate) fn initial_current_on_grid<T: Real>(
    model: &CtsmcModel<T>,
    bc: &BoundaryCondition,
    times: &[T],
) -> (Vec<T>, Vec<T>) {
    let n = model.n_states();
    let mut gp = Vec::with_capacity(times.len() * n);
    let mut gf = Vec::with_capacity(times.len() * n);
    for &t in times {
        for x in 0..n {
            gp.push(initial_term(bc.initial, model, x, t, BoundaryKind::P));
            gf.push(initial_term(bc.initial, model, x, t, BoundaryKind::Current));
        }
    }
    if let Some(i1) = times.iter().position(|&t| t > T::zero()) {
        let t1 = times[i1];
        for x in 0..n {
            if !gf[x].is_finite() {
                let eff = T::lit(2.0) * (gp[x] - gp[i1 * n + x]) / t1 - gf[i1 * n + x];
                for i in 0..i1 {
                    gf[i * n + x] = eff;
                }
            }
        }
    }
    (gp, gf)
}

pub(crate) fn check_inputs<T: Real>(model: &CtsmcModel<T>, obs: &ObservationSet<T>) -> Result<()> {
    model.validate()?;
    if let Some(n) = obs.n_states() {
        if n != model.n_states() {
            return Err(Error::validation(format!(
                "likelihood vectors have {n} entries for a {}-state model",
                model.n_states()
            )));
        }
    }
    Ok(())
}

/// Filtering pass on the default mesh for step `cfg.h`.
pub fn forward_pass<T: Real>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    horizon: T,
    cfg: &SolverConfig<T>,
) -> Result<ForwardResult<T>> {
    cfg.validate()?;
    let grid = TimeGrid::build(&obs.times, horizon, cfg.h)?;
    forward_pass_with_grid(model, obs, grid, cfg)
}

pub fn forward_pass_with_grid<T: Real>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    grid: TimeGrid<T>,
    cfg: &SolverConfig<T>,
) -> Result<ForwardResult<T>> {
    check_inputs(model, obs)?;
    let tables = build_tables(model, grid.h, grid.horizon);
    forward_with_kernels(model, obs, grid, cfg, &tables)
}

pub(crate) fn forward_with_kernels<T: Real, K: LagIntegrals<T>>(
    model: &CtsmcModel<T>,
    obs: &ObservationSet<T>,
    grid: TimeGrid<T>,
    cfg: &SolverConfig<T>,
    kernels: &[K],
) -> Result<ForwardResult<T>> {
    let n = model.n_states();
    let len = grid.len();
    let chain = &model.embedded;
    let (gp, gf) = initial_current_on_grid(model, &cfg.boundary, &grid.times);
    let mut sweep = Sweep::new(kernels, chain, false, cfg.history_truncation_tol, len);
    let mut prefix = Prefix::new(n, obs.len());
    let mut alpha = GridFunction::zeros(grid.times.clone(), n);
    let mut normalizers = Vec::with_capacity(obs.len());
    let mut log_evidence = T::zero();

    let mut lw = vec![T::zero(); n];
    let mut zc = vec![0u32; n];
    let mut ups0 = vec![T::zero(); n];
    let mut src = vec![T::zero(); n];
    let mut hist = vec![T::zero(); n];
    let mut prev_hist = vec![T::zero(); n];
    let mut mix = vec![T::zero(); n];
    let half = T::lit(0.5);
    let correct = needs_first_jump(model, &cfg.boundary);
    let mut corr = vec![T::zero(); n];
    let mut first_jump = FirstJump::new(grid.h);

    for i in 0..len {
        let ob = grid.applied[i];
        let t = grid.times[i];
        for x in 0..n {
            lw[x] = prefix.log[x][ob];
            zc[x] = prefix.zeros[x][ob];
            ups0[x] = prefix.upsilon(x, 0, ob);
            src[x] = ups0[x] * gf[i * n + x];
        }
        if correct && i > 0 {
            first_jump.correction(kernels, &prefix, t, ob, &mut corr);
            for x in 0..n {
                src[x] = src[x] + corr[x];
            }
        }
        sweep.push(t, &lw, &zc, &src, &mut hist).map_err(|e| relabel(e, ob))?;
        if correct && i > 0 {
            for x in 0..n {
                hist[x] = hist[x] + corr[x];
            }
        }

        match grid.kinds[i] {
            NodeKind::ObsRight(k) => {
                let lik = &obs.likelihoods[k];
                let c = normalizers[k];
                for x in 0..n {
                    let v = alpha.get(i - 1, x) * lik[x] / c;
                    alpha.set(i, x, v);
                }
            }
            _ if i == 0 => {
                for x in 0..n {
                    alpha.set(0, x, ups0[x] * gp[x]);
                }
            }
            _ => {
                let dt = t - grid.times[i - 1];
                // dα/dt = (M − I)(ψ_hist + υ0 g_φ), the boundary part integrated exactly
                let mut drive = vec![T::zero(); n];
                for x in 0..n {
                    drive[x] = half * dt * (prev_hist[x] + hist[x]) + ups0[x] * (gp[(i - 1) * n + x] - gp[i * n + x]);
                }
                chain.forward(&drive, &mut mix);
                for x in 0..n {
                    let v = alpha.get(i - 1, x) + mix[x] - drive[x];
                    alpha.set(i, x, v);
                }
            }
        }

        if let NodeKind::ObsLeft(k) = grid.kinds[i] {
            let lik = &obs.likelihoods[k];
            let c = (0..n).fold(T::zero(), |acc, x| acc + lik[x] * alpha.get(i, x));
            if !(c > T::zero()) || !c.is_finite() {
                if c.is_finite() {
                    return Err(Error::ZeroLikelihood { index: k, time: t.as_f64() });
                }
                return Err(Error::Instability { interval: k, detail: format!("normalizer {c}") });
            }
            normalizers.push(c);
            log_evidence = log_evidence + c.ln();
            prefix.push(lik, c);
        }
        if alpha.row(i).iter().any(|v| !v.is_finite()) || sweep.v_row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { interval: ob, detail: format!("non-finite value at t = {t}") });
        }
        prev_hist.copy_from_slice(&hist);
        if correct {
            first_jump.append(model, kernels, &grid, &prefix, &gf, i);
        }
    }

    let phi_alpha = GridFunction {
        times: grid.times.clone(),
        n_states: n,
        data: sweep.u.clone(),
        interpolation: Default::default(),
    };
    let psi_alpha = GridFunction {
        times: grid.times.clone(),
        n_states: n,
        data: sweep.v.clone(),
        interpolation: Default::default(),
    };
    Ok(ForwardResult {
        truncation_lag: sweep.max_cutoff.clone(),
        grid,
        alpha,
        phi_alpha,
        psi_alpha,
        normalizers,
        log_evidence,
        boundary: cfg.boundary,
        observations: obs.clone(),
    })
}

pub(crate) fn needs_first_jump<T: Real>(model: &CtsmcModel<T>, bc: &BoundaryCondition) -> bool {
    bc.initial == InitialCondition::TransitionAtStart
        && (0..model.n_states())
            .any(|y| model.initial[y] > T::zero() && !matches!(model.waiting[y], WaitingTime::Exponential { .. }))
}

/// Cells within this many steps of `t = 0` get the first-jump correction.
const FIRST_JUMP_WINDOW: usize = 256;

/// The first-jump current `p0(y) f_y(s)` inside `φ_α` is singular at `s = 0`
/// for shapes below one (and non-smooth for most others), which the
/// product-trapezoid rule in `s` handles only to `O(h^k)`. Near `s = 0` the
/// integral `∫ f_x(t−s) υ(s→t) m[y][x] υ0(y,s) p0(y) f_y(s) ds` is instead
/// evaluated with product weights on `f_y`; the correction is that minus
/// what the sweep computes for the same cells.
pub(crate) struct FirstJump<T> {
    limit: T,
    times: Vec<T>,
    applied: Vec<usize>,
    /// `Σ_y m[y][x] υ0(y) g_φ(y)` per node, as seen by the sweep.
    swept: Vec<T>,
    /// Per cell `(j, j+1)`: `Σ_y m[y][x] p0(y) υ0(y) w_y` at its two ends.
    near: Vec<T>,
    far: Vec<T>,
    // υ0 of the previous node
    e_prev: Vec<T>,
}

impl<T: Real> FirstJump<T> {
    pub fn new(h: T) -> Self {
        FirstJump {
            limit: h * T::from_usize_lossy(FIRST_JUMP_WINDOW),
            times: Vec::new(),
            applied: Vec::new(),
            swept: Vec::new(),
            near: Vec::new(),
            far: Vec::new(),
            e_prev: Vec::new(),
        }
    }

    /// Records node `i` once its observation (if any) has been processed.
    pub fn append<K: LagIntegrals<T>>(
        &mut self,
        model: &CtsmcModel<T>,
        kernels: &[K],
        grid: &TimeGrid<T>,
        prefix: &Prefix<T>,
        gf: &[T],
        i: usize,
    ) {
        let n = model.n_states();
        self.append_node(model, kernels, prefix, grid.times[i], grid.applied[i], &gf[i * n..(i + 1) * n]);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Forgets every node from `len` on.
    pub fn truncate(&mut self, len: usize, prefix: &Prefix<T>) {
        if len >= self.times.len() {
            return;
        }
        let n = self.e_prev.len();
        self.times.truncate(len);
        self.applied.truncate(len);
        self.swept.truncate(len * n);
        self.near.truncate(len.saturating_sub(1) * n);
        self.far.truncate(len.saturating_sub(1) * n);
        if let Some(&a) = self.applied.last() {
            self.e_prev = (0..n).map(|y| prefix.upsilon(y, 0, a)).collect();
        }
    }

    /// Records a node at `t` after `applied` observations; `gf` is the
    /// boundary current the sweep saw there.
    pub fn append_node<K: LagIntegrals<T>>(
        &mut self,
        model: &CtsmcModel<T>,
        kernels: &[K],
        prefix: &Prefix<T>,
        t: T,
        applied: usize,
        gf: &[T],
    ) {
        if t > self.limit {
            return;
        }
        let n = model.n_states();
        let e: Vec<T> = (0..n).map(|y| prefix.upsilon(y, 0, applied)).collect();
        let mut swept = vec![T::zero(); n];
        for y in 0..n {
            for x in 0..n {
                swept[x] = swept[x] + model.embedded.m[y][x] * e[y] * gf[y];
            }
        }
        if let Some(&s0) = self.times.last() {
            let mut near = vec![T::zero(); n];
            let mut far = vec![T::zero(); n];
            if t > s0 {
                for y in 0..n {
                    let p0 = model.initial[y];
                    if p0 == T::zero() {
                        continue;
                    }
                    let ky = &kernels[y];
                    let (l0, c0) = ky.survival_and_cum(s0);
                    let (l1, c1) = ky.survival_and_cum(t);
                    let (wn, wf) = product_weights(ky, s0, t, l0, c0, l1, c1);
                    for x in 0..n {
                        let my = model.embedded.m[y][x] * p0;
                        near[x] = near[x] + my * self.e_prev[y] * wn;
                        far[x] = far[x] + my * e[y] * wf;
                    }
                }
            }
            self.near.extend_from_slice(&near);
            self.far.extend_from_slice(&far);
        }
        self.times.push(t);
        self.applied.push(applied);
        self.swept.extend_from_slice(&swept);
        self.e_prev = e;
    }

    pub fn correction<K: LagIntegrals<T>>(&self, kernels: &[K], prefix: &Prefix<T>, t: T, ob: usize, corr: &mut [T]) {
        let n = kernels.len();
        let end = self.times.partition_point(|&s| s <= t * T::lit(0.5));
        corr.iter_mut().for_each(|c| *c = T::zero());
        if end < 2 {
            return;
        }
        for x in 0..n {
            let kx = &kernels[x];
            let mut acc = T::zero();
            let mut key = usize::MAX;
            let mut ups = T::zero();
            // lag, Λ, C, f, υ at the previous node
            let mut prev = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for j in 0..end {
                if self.applied[j] != key {
                    key = self.applied[j];
                    ups = prefix.upsilon(x, key, ob);
                }
                let lag = t - self.times[j];
                let (l, c) = kx.survival_and_cum(lag);
                let f = kx.density(lag);
                let (b, lb, cb, fb, ub) = prev;
                if j > 0 && b > lag {
                    let k = (j - 1) * n + x;
                    let better = self.near[k] * ub * fb + self.far[k] * ups * f;
                    let (wn, wf) = product_weights(kx, lag, b, l, c, lb, cb);
                    let swept = wf * ub * self.swept[k] + wn * ups * self.swept[j * n + x];
                    acc = acc + better - swept;
                }
                prev = (lag, l, c, f, ups);
            }
            corr[x] = acc;
        }
    }
}

pub(crate) fn relabel(e: Error, interval: usize) -> Error {
    match e {
        Error::Instability { detail, .. } => Error::Instability { interval, detail },
        other => other,
    }
}
