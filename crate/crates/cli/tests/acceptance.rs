//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails.

use std::time::{Duration, Instant};

use ctsmc::baseline::{
    adaptive_forward, ctmc_forward_backward, hsmm_forward_backward, AdaptiveConfig, HsmmConfig, HsmmResult,
};
use ctsmc::model::{sample_trajectory, sample_trajectory_with};
use ctsmc::observation::sample_observations;
use ctsmc::posterior::{chain_length_posterior, score_path, smooth, viterbi_map, ViterbiConfig};
use ctsmc::volterra::{backward_pass, forward_pass, solve_kernel_master_equation, NodeKind};
use ctsmc::{BoundaryCondition, CtsmcModel, ObservationSet, ScaledLikelihood, SolverConfig, Trajectory, WaitingTime};
use ctsmc_cli::compare::{filtered_gap, smoothed_gap};
use ctsmc_cli::experiment::sub_seed;
use ctsmc_cli::{generate_random_model, ExperimentConfig, Family};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HSMM_STEP: f64 = 1e-4;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, ok: bool, msg: String) {
        println!("criterion {id}: {} {msg}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id);
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Moves each observation time to the center of its oracle bin, so the
/// HSMM sees exactly the same observation instants.
fn snap(obs: &ObservationSet<f64>) -> ObservationSet<f64> {
    let times = obs.times.iter().map(|&t| ((t / HSMM_STEP).floor() + 0.5) * HSMM_STEP).collect();
    ObservationSet::new_merging(times, obs.values.clone(), obs.likelihoods.clone()).unwrap()
}

struct Case {
    model: CtsmcModel<f64>,
    obs: ObservationSet<f64>,
}

fn sample_case(cfg: &ExperimentConfig, seed: u64) -> Case {
    let model = generate_random_model(cfg, seed).unwrap();
    let traj = sample_trajectory(&model, cfg.horizon, sub_seed(seed, 1)).unwrap();
    let obs = sample_observations(&traj, &cfg.emission().unwrap(), &cfg.renewal().unwrap(), sub_seed(seed, 2))
        .unwrap()
        .truncated(cfg.horizon);
    Case { model, obs: snap(&obs) }
}

fn criterion_1(rep: &mut Report) {
    let cfg = ExperimentConfig { families: vec![Family::Exponential], horizon: 6.0, ..Default::default() };
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 101..106 {
        let mut case = sample_case(&cfg, seed);
        let k = case.obs.len().min(10);
        case.obs = ObservationSet::new(
            case.obs.times[..k].to_vec(),
            case.obs.values[..k].to_vec(),
            case.obs.likelihoods[..k].to_vec(),
        )
        .unwrap();
        let f = forward_pass(&case.model, &case.obs, cfg.horizon, &SolverConfig::new(1e-3)).unwrap();
        let r = ctmc_forward_backward(&case.model, &case.obs, &[]).unwrap();
        for (a, b) in f.filtered_at_observations().iter().zip(&r.filtered) {
            worst = a.iter().zip(b).fold(worst, |m, (x, y)| m.max((x - y).abs()));
        }
    }
    let el = secs(t0.elapsed());
    rep.line(1, worst <= 1e-4 && el < 10.0, format!("CTMC filter gap {worst:.2e} (tol 1e-4), {el:.1} s (limit 10 s)"));
}

struct OracleRun {
    hsmm: HsmmResult<f64>,
    smooth_gap: [f64; 2],
    evidence_gap: f64,
    alpha_sum_err: f64,
    mass_err: f64,
    raw_mass_err: f64,
    current_err: f64,
    solver_time: f64,
    hsmm_time: f64,
}

fn oracle_runs(cases: &[Case], horizon: f64) -> Vec<OracleRun> {
    cases
        .iter()
        .map(|c| {
            let t0 = Instant::now();
            let hsmm = hsmm_forward_backward(&c.model, &c.obs, horizon, &HsmmConfig::new(HSMM_STEP)).unwrap();
            let hsmm_time = secs(t0.elapsed());
            let mut out = OracleRun {
                hsmm,
                smooth_gap: [0.0; 2],
                evidence_gap: 0.0,
                alpha_sum_err: 0.0,
                mass_err: 0.0,
                raw_mass_err: 0.0,
                current_err: 0.0,
                solver_time: 0.0,
                hsmm_time,
            };
            for (slot, h) in [(0, 1e-3), (1, 2e-3)] {
                let t0 = Instant::now();
                let cfg = SolverConfig::new(h);
                let f = forward_pass(&c.model, &c.obs, horizon, &cfg).unwrap();
                let b = backward_pass(&c.model, &f.scaled_likelihood().unwrap(), &f.grid, &cfg).unwrap();
                let s = smooth(&c.model, &f, &b).unwrap();
                if slot == 0 {
                    out.solver_time = secs(t0.elapsed());
                    out.evidence_gap = (f.log_evidence - out.hsmm.log_evidence).abs();
                    out.alpha_sum_err = ctsmc_cli::compare::row_sum_error(&f.alpha);
                    out.mass_err = ctsmc_cli::compare::row_sum_error(&s.p_hat);
                    out.raw_mass_err = s.raw_mass.iter().fold(0.0, |m, &v| m.max((v - 1.0).abs()));
                    let n = c.model.n_states();
                    let mut mpsi = vec![0.0; n];
                    for i in 0..f.grid.len() {
                        c.model.embedded.forward(f.psi_alpha.row(i), &mut mpsi);
                        for x in 0..n {
                            out.current_err = out.current_err.max((f.phi_alpha.get(i, x) - mpsi[x]).abs());
                        }
                    }
                }
                out.smooth_gap[slot] = smoothed_gap(&s.p_hat, &out.hsmm);
            }
            out
        })
        .collect()
}

fn criteria_2_3_9(rep: &mut Report, runs: &[OracleRun]) {
    let gap1 = runs.iter().map(|r| r.smooth_gap[0]).fold(0.0, f64::max);
    let t: f64 = runs.iter().map(|r| r.solver_time + r.hsmm_time).sum();
    rep.line(
        2,
        gap1 <= 1e-2 && t < 300.0,
        format!(
            "smoothed gap vs HSMM(1e-4) max {gap1:.2e} over {} models (tol 1e-2), {t:.0} s (limit 300 s)",
            runs.len()
        ),
    );
    let ratios: Vec<f64> = runs.iter().map(|r| r.smooth_gap[1] / r.smooth_gap[0]).collect();
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let gap2 = runs.iter().map(|r| r.smooth_gap[1]).fold(0.0, f64::max);
    println!(
        "  per-model gap ratios h=2e-3 / h=1e-3: {}",
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")
    );
    rep.line(
        3,
        worst >= 1.5,
        format!("halving h: max gap {gap2:.2e} -> {gap1:.2e}; smallest per-model reduction {worst:.2}x (need 1.5x)"),
    );
    let ev = runs.iter().map(|r| r.evidence_gap).fold(0.0, f64::max);
    rep.line(9, ev <= 1e-2, format!("log-evidence gap vs HSMM(1e-4) max {ev:.2e} (tol 1e-2)"));
}

fn criterion_4(rep: &mut Report, runs: &[OracleRun], cases: &[Case]) {
    let a = runs.iter().map(|r| r.alpha_sum_err).fold(0.0, f64::max);
    let p = runs.iter().map(|r| r.mass_err).fold(0.0, f64::max);
    let c = runs.iter().map(|r| r.current_err).fold(0.0, f64::max);
    let raw = runs.iter().map(|r| r.raw_mass_err).fold(0.0, f64::max);
    // no observations, uninformed end: β ≡ 1
    let mut beta: f64 = 0.0;
    for case in cases.iter().take(3) {
        let cfg = SolverConfig::new(1e-3);
        let f = forward_pass(&case.model, &ObservationSet::empty(), 5.0, &cfg).unwrap();
        let b = backward_pass(&case.model, &f.scaled_likelihood().unwrap(), &f.grid, &cfg).unwrap();
        beta = b.beta.rows().flatten().fold(beta, |m, &v| m.max((v - 1.0).abs()));
    }
    rep.line(
        4,
        a <= 1e-8 && p <= 1e-6 && c <= 1e-10 && beta <= 1e-8,
        format!(
            "|Σα−1| {a:.1e} (1e-8), |Σp̂−1| {p:.1e} (1e-6; before normalization {raw:.1e}), |φ−Mψ| {c:.1e} (1e-10), no-data |β−1| {beta:.1e} (1e-8)"
        ),
    );
}

fn criterion_7(rep: &mut Report, runs: &[OracleRun], cases: &[Case], horizon: f64) {
    let mut gap: f64 = 0.0;
    let mut ratio = f64::INFINITY;
    let mut h0: f64 = 0.0;
    // per inter-observation interval: uniform steps / adaptive steps
    let mut per: Vec<f64> = Vec::new();
    let t0 = Instant::now();
    for (r, c) in runs.iter().zip(cases) {
        let a = adaptive_forward(&c.model, &c.obs, horizon, &AdaptiveConfig::default()).unwrap();
        gap = gap.max(filtered_gap(&a.alpha, &a.kinds, &c.obs.times, &r.hsmm));
        ratio = ratio.min(horizon / HSMM_STEP / a.n_nodes() as f64);
        h0 = h0.max(a.initial_step().unwrap_or(f64::NAN));
        let mut edges = vec![0.0];
        edges.extend(c.obs.times.iter().copied().filter(|&t| t > 0.0));
        edges.push(horizon);
        for w in edges.windows(2) {
            let nodes = a.steps.iter().filter(|s| s.0 > w[0] && s.0 <= w[1]).count() * 2;
            per.push((w[1] - w[0]) / HSMM_STEP / nodes.max(1) as f64);
        }
    }
    let el = secs(t0.elapsed());
    per.sort_by(f64::total_cmp);
    println!("  per-interval step reduction over {} intervals: median {:.1}x", per.len(), per[per.len() / 2]);
    let worst_interval = per[0];
    rep.line(
        7,
        gap <= 1e-3 && ratio.min(worst_interval) >= 5.0 && h0 == 1e-4,
        format!(
            "adaptive filtered gap {gap:.2e} (tol 1e-3), step reduction >= {ratio:.1}x overall, >= {worst_interval:.1}x per interval (need 5x), initial step {h0:e}, {el:.1} s"
        ),
    );
}

fn criterion_5(rep: &mut Report) {
    let em = vec![vec![0.0, 0.6, 0.4], vec![0.3, 0.0, 0.7], vec![0.5, 0.5, 0.0]];
    let models = [
        ("gamma", [WaitingTime::gamma(2.5, 2.0), WaitingTime::gamma(0.7, 1.2), WaitingTime::gamma(4.0, 3.0)]),
        ("weibull", [WaitingTime::weibull(1.8, 1.1), WaitingTime::weibull(0.8, 0.9), WaitingTime::weibull(3.0, 1.5)]),
    ];
    let checkpoints = [0.5, 1.3, 2.2, 3.7, 5.0];
    let n_traj = 10_000;
    let mut worst_z: f64 = 0.0;
    for (name, laws) in models {
        let laws: Vec<_> = laws.into_iter().map(|w| w.unwrap()).collect();
        let model = CtsmcModel::new(laws, em.clone(), Some(vec![0.5, 0.3, 0.2])).unwrap();
        let f = forward_pass(&model, &ObservationSet::empty(), 5.0, &SolverConfig::new(1e-3)).unwrap();
        let mut counts = vec![[0usize; 3]; checkpoints.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..n_traj {
            let tr = sample_trajectory_with(&model, 5.0, &mut rng).unwrap();
            for (c, &t) in checkpoints.iter().enumerate() {
                counts[c][tr.state_at(t).unwrap()] += 1;
            }
        }
        for (c, &t) in checkpoints.iter().enumerate() {
            let p = f.alpha.value_at(t);
            for x in 0..3 {
                let se = (p[x] * (1.0 - p[x]) / n_traj as f64).sqrt();
                let emp = counts[c][x] as f64 / n_traj as f64;
                let z = (emp - p[x]).abs() / se;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    println!("  {name} t={t} state {x}: solver {:.4} empirical {emp:.4} ({z:.1} SE)", p[x]);
                }
            }
        }
    }
    rep.line(5, worst_z <= 3.0, format!("largest deviation from {n_traj} simulated paths {worst_z:.2} SE (limit 3)"));
}

fn perturb<R: Rng>(path: &Trajectory<f64>, n_states: usize, rng: &mut R) -> Option<Trajectory<f64>> {
    let mut times = path.jump_times.clone();
    let mut states = path.states.clone();
    let k = times.len();
    if k > 1 && rng.random_bool(0.5) {
        let i = rng.random_range(1..k);
        let scale = 10f64.powf(rng.random_range(-4.0..-0.5));
        times[i] += scale * rng.random_range(-1.0..1.0);
    } else if k > 1 {
        let i = rng.random_range(1..k);
        states[i] = rng.random_range(0..n_states);
    } else {
        states[0] = rng.random_range(0..n_states);
    }
    Trajectory::new(times, states, path.horizon).ok()
}

fn criterion_6(rep: &mut Report) {
    // (a), (c), (d) on a random model with observations
    let cfg = ExperimentConfig { horizon: 5.0, ..Default::default() };
    let case = sample_case(&cfg, 7);
    let h = 1e-2;
    let f = forward_pass(&case.model, &case.obs, cfg.horizon, &SolverConfig::new(h)).unwrap();
    let sl = f.scaled_likelihood().unwrap();
    let v = viterbi_map(&case.model, &sl, cfg.horizon, &ViterbiConfig::new(h)).unwrap();
    let total: f64 = v.chain_length_posterior.iter().sum();
    let bc = BoundaryCondition::default();
    let rescore = score_path(&case.model, &sl, &bc, &v.map_path).unwrap() + v.chain_length_posterior[v.n_star].ln();
    // candidates live in the same class as the MAP: sojourns ending in a jump
    // no shorter than the floor used by the polish
    let soj = |p: &Trajectory<f64>| p.jump_times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let floor = h.min(soj(&v.map_path));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut beaten, mut tried, mut closest) = (0, 0, f64::NEG_INFINITY);
    while tried < 1000 {
        let Some(p) = perturb(&v.map_path, case.model.n_states(), &mut rng) else { continue };
        if p == v.map_path || soj(&p) < floor {
            continue;
        }
        tried += 1;
        let n = p.n_jumps();
        let ln_pn = v.chain_length_posterior.get(n).map_or(f64::NEG_INFINITY, |q| q.ln());
        let s = score_path(&case.model, &sl, &bc, &p).unwrap() + ln_pn;
        closest = closest.max(s - v.map_log_score);
        if s > v.map_log_score + 1e-9 {
            beaten += 1;
        }
    }
    // (b) near-deterministic clock
    let c = WaitingTime::gamma(50.0, 50.0).unwrap();
    let clock = CtsmcModel::new(vec![c, c], vec![vec![0.0, 1.0], vec![1.0, 0.0]], Some(vec![1.0, 0.0])).unwrap();
    let mut modes = Vec::new();
    for t in [1.5, 2.5, 3.5] {
        let sl = ScaledLikelihood::with_normalizers(ObservationSet::empty(), vec![]).unwrap();
        let p = chain_length_posterior(&clock, &sl, t, &SolverConfig::new(1e-3), 1e-6).unwrap();
        modes.push((t, p.mode()));
    }
    let ok_a = (total - 1.0).abs() <= 1e-6;
    let ok_b = modes.iter().all(|&(t, m): &(f64, usize)| m == t.floor() as usize);
    let ok_c = (rescore - v.map_log_score).abs() <= 1e-8;
    let ok_d = beaten == 0;
    rep.line(
        6,
        ok_a && ok_b && ok_c && ok_d,
        format!(
            "(a) ΣP(n) = 1 {:+.1e} (b) modes {:?} (c) rescore diff {:.1e} (d) {beaten}/{tried} perturbations beat the MAP (best {closest:.2e})",
            total - 1.0,
            modes,
            rescore - v.map_log_score
        ),
    );
}

fn criterion_8(rep: &mut Report) {
    let laws = [
        WaitingTime::exponential(1.3).unwrap(),
        WaitingTime::gamma(2.0, 2.5).unwrap(),
        WaitingTime::gamma(2.0, 1.2).unwrap(),
    ];
    let model = CtsmcModel::new(
        laws.to_vec(),
        vec![vec![0.0, 0.5, 0.5], vec![0.2, 0.0, 0.8], vec![0.6, 0.4, 0.0]],
        Some(vec![0.6, 0.3, 0.1]),
    )
    .unwrap();
    let horizon = 4.0;
    let bc = BoundaryCondition::default();
    let me = solve_kernel_master_equation(&model, &bc, horizon, 1e-3).unwrap();
    let f = forward_pass(&model, &ObservationSet::empty(), horizon, &SolverConfig::new(1e-3)).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &t) in f.grid.times.iter().enumerate() {
        if f.grid.kinds[i] != NodeKind::Regular {
            continue;
        }
        let p: Vec<f64> = me.value_at(t);
        worst = f.alpha.row(i).iter().zip(&p).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    rep.line(8, worst <= 1e-6, format!("kernel master equation vs current solver {worst:.2e} (tol 1e-6)"));
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; only a filter matters here
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: usize| filter.as_deref().is_none_or(|f| f.split(',').any(|s| s == id.to_string()));
    let mut rep = Report { failed: Vec::new() };
    let start = Instant::now();
    if wanted(1) {
        criterion_1(&mut rep);
    }
    let needs_oracle = [2, 3, 4, 7, 9].into_iter().any(wanted);
    if needs_oracle {
        let cfg = ExperimentConfig::default();
        let cases: Vec<Case> = (1..=10).map(|s| sample_case(&cfg, s)).collect();
        println!(
            "  criterion-2 models: {} observations on average",
            cases.iter().map(|c| c.obs.len()).sum::<usize>() as f64 / cases.len() as f64
        );
        let runs = oracle_runs(&cases, cfg.horizon);
        if [2, 3, 9].into_iter().any(wanted) {
            criteria_2_3_9(&mut rep, &runs);
        }
        if wanted(4) {
            criterion_4(&mut rep, &runs, &cases);
        }
        if wanted(7) {
            criterion_7(&mut rep, &runs, &cases, cfg.horizon);
        }
    }
    if wanted(5) {
        criterion_5(&mut rep);
    }
    if wanted(6) {
        criterion_6(&mut rep);
    }
    if wanted(8) {
        criterion_8(&mut rep);
    }
    println!("acceptance finished in {:.0} s", secs(start.elapsed()));
    if !rep.failed.is_empty() {
        println!("failed criteria: {:?}", rep.failed);
        std::process::exit(1);
    }
}
