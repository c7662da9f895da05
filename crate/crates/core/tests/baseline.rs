use ctsmc::baseline::{
    adaptive_forward, ctmc_forward_backward, hsmm_forward_backward, AdaptiveConfig, DiscretizedHsmm, DurationRounding,
    HsmmConfig, HsmmMarginal,
};
use ctsmc::model::sample_trajectory;
use ctsmc::observation::sample_observations;
use ctsmc::posterior::smooth;
use ctsmc::volterra::{backward_pass, forward_pass};
use ctsmc::{
    BoundaryCondition, CtsmcModel, EmissionModel, InitialCondition, ObservationSet, SolverConfig, TerminalCondition,
    WaitingTime,
};

fn exp(r: f64) -> WaitingTime<f64> {
    WaitingTime::exponential(r).unwrap()
}

fn three_state(laws: [WaitingTime<f64>; 3]) -> CtsmcModel<f64> {
    CtsmcModel::new(
        laws.to_vec(),
        vec![vec![0.0, 0.6, 0.4], vec![0.3, 0.0, 0.7], vec![0.5, 0.5, 0.0]],
        Some(vec![0.5, 0.3, 0.2]),
    )
    .unwrap()
}

fn semi_markov() -> CtsmcModel<f64> {
    three_state([
        WaitingTime::gamma(2.5, 3.0).unwrap(),
        WaitingTime::weibull(1.6, 0.7).unwrap(),
        WaitingTime::gamma(3.0, 2.0).unwrap(),
    ])
}

/// Observation times moved to bin centers so both solvers see the same instants.
fn observed(model: &CtsmcModel<f64>, horizon: f64, seed: u64, h: f64) -> ObservationSet<f64> {
    let tr = sample_trajectory(model, horizon, seed).unwrap();
    let em = EmissionModel::new(vec![0.0, 1.0, 2.0], 0.35).unwrap();
    let o = sample_observations(&tr, &em, &WaitingTime::gamma(4.0, 8.0).unwrap(), seed + 1).unwrap().truncated(horizon);
    let times = o.times.iter().map(|&t| ((t / h).floor() + 0.5) * h).collect();
    ObservationSet::new_merging(times, o.values, o.likelihoods).unwrap()
}

#[test]
fn duration_laws_are_normalized() {
    let m = semi_markov();
    for rounding in [DurationRounding::Nearest, DurationRounding::Ceil] {
        let d = DiscretizedHsmm::new(&m, 1e-3, rounding, 1e-12, 1 << 20);
        assert!(d.normalization_error() < 1e-10);
        assert!(d.durations.iter().flatten().all(|&p| p >= 0.0));
    }
}

#[test]
fn hsmm_reproduces_ctmc_filtering() {
    let m = three_state([exp(1.2), exp(0.7), exp(2.0)]);
    let obs = observed(&m, 3.0, 1, 1e-4);
    let hs = hsmm_forward_backward(&m, &obs, 3.0, &HsmmConfig::new(1e-4)).unwrap();
    let ct = ctmc_forward_backward(&m, &obs, &[]).unwrap();
    for (k, &b) in hs.obs_bins.iter().enumerate() {
        for x in 0..3 {
            assert!((hs.filtered.get(b, x) - ct.filtered[k][x]).abs() < 1e-3);
        }
    }
    assert!((hs.log_evidence - ct.log_evidence).abs() < 1e-3);
}

#[test]
fn hsmm_symmetric_chain_is_stationary() {
    let g = WaitingTime::gamma(2.0, 3.0).unwrap();
    let m = CtsmcModel::new(vec![g, g], vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
    let hs = hsmm_forward_backward(&m, &ObservationSet::empty(), 2.0, &HsmmConfig::new(1e-3)).unwrap();
    for g in [&hs.filtered, &hs.smoothed] {
        assert!(g.rows().all(|r: &[f64]| (r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12));
    }
}

#[test]
fn solver_matches_fine_hsmm() {
    let m = semi_markov();
    let horizon = 4.0;
    let obs = observed(&m, horizon, 6, 1e-4);
    let hs = hsmm_forward_backward(&m, &obs, horizon, &HsmmConfig::new(1e-4)).unwrap();
    let cfg = SolverConfig::new(1e-3);
    let f = forward_pass(&m, &obs, horizon, &cfg).unwrap();
    let b = backward_pass(&m, &f.scaled_likelihood().unwrap(), &f.grid, &cfg).unwrap();
    let s = smooth(&m, &f, &b).unwrap();
    let r = hs.marginals_at(HsmmMarginal::Smoothed, &s.p_hat.times);
    assert!(s.p_hat.max_abs_diff(&r).unwrap() < 1e-2);
    for (a, &bin) in f.filtered_at_observations().iter().zip(&hs.obs_bins) {
        for x in 0..3 {
            assert!((a[x] - hs.filtered.get(bin, x)).abs() < 1e-2);
        }
    }
    assert!((f.log_evidence - hs.log_evidence).abs() < 1e-2);
}

#[test]
fn step_controller() {
    let cfg = AdaptiveConfig::<f64>::default();
    assert_eq!(cfg.factor(cfg.tol), 1.0);
    assert_eq!(cfg.next_h(0.01, cfg.tol), 0.01);
    assert_eq!(cfg.factor(0.0), cfg.s_max);
    assert_eq!(cfg.factor(1.0), cfg.s_min);
    assert_eq!(cfg.next_h(cfg.h_max, 0.0), cfg.h_max);
    assert!(AdaptiveConfig { h_min: 1.0, h_max: 0.1, ..cfg }.validate().is_err());
    assert!(AdaptiveConfig { s_min: 1.5, ..cfg }.validate().is_err());
    assert!(AdaptiveConfig { tol: 0.0, ..cfg }.validate().is_err());
}

#[test]
fn adaptive_steps_grow_in_quiet_stretches() {
    // in equilibrium nothing changes, so the controller only ever enlarges h
    let g = WaitingTime::gamma(2.0, 1.0).unwrap();
    let m = CtsmcModel::new(vec![g, g], vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
    let obs = ObservationSet::new(vec![2.0], vec![0.0], vec![vec![1.0, 1.0]]).unwrap();
    let cfg = AdaptiveConfig {
        boundary: BoundaryCondition::new(InitialCondition::SteadyState, TerminalCondition::Uninformed),
        ..AdaptiveConfig::default()
    };
    let a = adaptive_forward(&m, &obs, 6.0, &cfg).unwrap();
    assert_eq!(a.initial_step(), Some(1e-4));
    let mut prev_h: f64 = 0.0;
    for &(t, h) in &a.steps {
        let start: f64 = t - h;
        assert!(h >= cfg.h_min * (1.0 - 1e-12) && h <= cfg.h_max);
        assert!(!(start < 2.0 && t > 2.0 + 1e-12), "step [{start}, {t}] crosses the observation");
        // growth is only interrupted by the clamp in front of the observation
        if (start - 2.0).abs() > 1e-12 && t != 2.0 {
            assert!(h >= prev_h * (1.0 - 1e-12), "h shrinks at {t}: {prev_h} -> {h}");
        }
        prev_h = h;
    }
    assert_eq!(a.steps.last().unwrap().1, cfg.h_max);
    assert!(a.alpha.rows().all(|r: &[f64]| (r[0] - 0.5).abs() < 1e-12));
}

#[test]
fn adaptive_steps_respect_bounds() {
    let m = semi_markov();
    let obs = observed(&m, 4.0, 2, 1e-4);
    let cfg = AdaptiveConfig::default();
    let a = adaptive_forward(&m, &obs, 4.0, &cfg).unwrap();
    assert_eq!(a.initial_step(), Some(1e-4));
    for &(t, h) in &a.steps {
        assert!(h >= cfg.h_min * (1.0 - 1e-12) && h <= cfg.h_max, "h = {h}");
        let start = t - h;
        assert!(obs.times.iter().all(|&s| !(start < s && s < t)), "step [{start}, {t}] crosses an observation");
    }
    assert!(a.alpha.rows().all(|r: &[f64]| (r.iter().sum::<f64>() - 1.0).abs() < 1e-8));
}

#[test]
fn adaptive_tracks_fine_hsmm() {
    let m = semi_markov();
    let horizon = 4.0;
    let obs = observed(&m, horizon, 9, 1e-4);
    let hs = hsmm_forward_backward(&m, &obs, horizon, &HsmmConfig::new(1e-4)).unwrap();
    let a = adaptive_forward(&m, &obs, horizon, &AdaptiveConfig::default()).unwrap();
    assert!(a.n_nodes() * 5 <= 40_000, "{} nodes", a.n_nodes());
    assert!((a.log_evidence - hs.log_evidence).abs() < 1e-3);
    let post: Vec<usize> = a
        .kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, ctsmc::volterra::NodeKind::ObsRight(_)))
        .map(|(i, _)| i)
        .collect();
    for (&i, &bin) in post.iter().zip(&hs.obs_bins) {
        for x in 0..3 {
            assert!((a.alpha.get(i, x) - hs.filtered.get(bin, x)).abs() < 1e-3);
        }
    }
}
