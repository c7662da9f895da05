use ctsmc::model::{sample_trajectory, sample_trajectory_with, steady_state_ctmc, validate_model};
use ctsmc::{CtsmcModel, EmbeddedChain, Trajectory, WaitingTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exp(r: f64) -> WaitingTime<f64> {
    WaitingTime::exponential(r).unwrap()
}

fn flip(a: WaitingTime<f64>, b: WaitingTime<f64>, p0: Vec<f64>) -> CtsmcModel<f64> {
    CtsmcModel::new(vec![a, b], vec![vec![0.0, 1.0], vec![1.0, 0.0]], Some(p0)).unwrap()
}

fn raw(m: Vec<Vec<f64>>) -> CtsmcModel<f64> {
    let n = m.len();
    CtsmcModel {
        states: (0..n).map(|i| format!("S{i}")).collect(),
        waiting: vec![exp(1.0); n],
        embedded: EmbeddedChain::new(m),
        initial: vec![1.0 / n as f64; n],
    }
}

#[test]
fn validation_examples() {
    let r = validate_model(&raw(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]));
    assert!(r.violations.iter().any(|v| v.contains("nonzero diagonal")), "{:?}", r.violations);
    assert!(validate_model(&raw(vec![vec![0.0, 1.0], vec![1.0, 0.0]])).is_valid());
    let r = validate_model(&raw(vec![vec![0.0, 0.9], vec![1.0, 0.0]]));
    assert!(r.violations.iter().any(|v| v.contains("row not stochastic")), "{:?}", r.violations);
    assert!(raw(vec![vec![0.0, 0.9], vec![1.0, 0.0]]).validate().is_err());
}

#[test]
fn json_round_trip() {
    let m = CtsmcModel::new(
        vec![exp(1.0), WaitingTime::gamma(2.0, 3.0).unwrap(), WaitingTime::weibull(1.5, 0.5).unwrap()],
        vec![vec![0.0, 0.3, 0.7], vec![0.5, 0.0, 0.5], vec![1.0, 0.0, 0.0]],
        Some(vec![0.2, 0.3, 0.5]),
    )
    .unwrap();
    let back = CtsmcModel::<f64>::from_json_str(&m.to_json_string().unwrap()).unwrap();
    assert_eq!(m, back);
}

#[test]
fn trajectories_are_deterministic() {
    let m = flip(WaitingTime::gamma(2.0, 1.0).unwrap(), WaitingTime::weibull(0.8, 1.0).unwrap(), vec![0.5, 0.5]);
    let a = sample_trajectory(&m, 20.0, 17).unwrap();
    let b = sample_trajectory(&m, 20.0, 17).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_trajectory(&m, 20.0, 18).unwrap());
    assert!(sample_trajectory(&m, 0.0, 1).is_err());
    assert!(a.jump_times.iter().all(|&t| t <= 20.0));
}

#[test]
fn state_at_is_right_continuous() {
    let tr = Trajectory::new(vec![0.0, 1.0, 2.5], vec![0, 1, 0], 4.0).unwrap();
    assert_eq!(tr.state_at(0.0).unwrap(), 0);
    assert_eq!(tr.state_at(1.0).unwrap(), 1);
    assert_eq!(tr.state_at(0.999).unwrap(), 0);
    assert_eq!(tr.state_at(1.7).unwrap(), 1);
    assert_eq!(tr.state_at(4.0).unwrap(), 0);
    assert!(tr.state_at(4.1).is_err());
    assert!(tr.state_at(-0.1).is_err());
}

#[test]
fn trajectory_csv_round_trip() {
    let tr = Trajectory::new(vec![0.0, 0.25, 3.125], vec![1, 0, 1], 5.0).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, None).unwrap();
    assert_eq!(Trajectory::read_csv(&buf[..], 5.0, None).unwrap(), tr);
}

#[test]
fn exponential_jump_count_matches_rate() {
    let m = flip(exp(1.0), exp(1.0), vec![1.0, 0.0]);
    let n = 10_000;
    let counts: Vec<f64> = (0..n).map(|s| sample_trajectory(&m, 10.0, s).unwrap().n_jumps() as f64).collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 10.0).abs() < 3.0 * se, "mean jump count {mean} (se {se})");
}

#[test]
fn symmetric_occupancy_is_uniform() {
    let g = WaitingTime::gamma(2.0, 2.0).unwrap();
    let m = flip(g, g, vec![1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let hits =
        (0..n).filter(|_| sample_trajectory_with(&m, 50.0, &mut rng).unwrap().state_at(50.0).unwrap() == 0).count();
    let p = hits as f64 / n as f64;
    assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "occupancy {p}");
}

#[test]
fn holding_times_follow_their_law() {
    // first sojourns are complete and unbiased when the horizon is long
    let law = WaitingTime::gamma(2.5, 2.0).unwrap();
    let m = flip(law, exp(1.0), vec![1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut holds: Vec<f64> =
        (0..10_000).map(|_| sample_trajectory_with(&m, 100.0, &mut rng).unwrap().jump_times[1]).collect();
    holds.sort_by(f64::total_cmp);
    let n = holds.len() as f64;
    let d = holds.iter().enumerate().fold(0.0f64, |d, (i, &t)| {
        let f = law.cdf(t);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    });
    // Kolmogorov–Smirnov critical value at level 0.01
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn steady_state_approximation() {
    let m = flip(exp(2.0), exp(0.5), vec![0.5, 0.5]);
    assert_eq!(steady_state_ctmc(&m), m);
    let m = flip(WaitingTime::gamma(2.0, 2.0).unwrap(), WaitingTime::weibull(2.0, 1.0).unwrap(), vec![0.5, 0.5]);
    let s = steady_state_ctmc(&m);
    match (s.waiting[0], s.waiting[1]) {
        (WaitingTime::Exponential { rate: a }, WaitingTime::Exponential { rate: b }) => {
            assert!((a - 1.0).abs() < 1e-12);
            assert!((b - 1.0 / 0.886226925452758).abs() < 1e-9);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.embedded, m.embedded);
    assert_eq!(s.initial, m.initial);
}
