use ctsmc::model::sample_trajectory;
use ctsmc::observation::sample_observations;
use ctsmc::{CtsmcModel, EmissionModel, ObservationSet, ScaledLikelihood, WaitingTime};
use proptest::prelude::*;

fn model() -> CtsmcModel<f64> {
    CtsmcModel::new(
        vec![
            WaitingTime::gamma(2.0, 1.5).unwrap(),
            WaitingTime::weibull(1.4, 0.9).unwrap(),
            WaitingTime::exponential(0.8).unwrap(),
        ],
        vec![vec![0.0, 0.5, 0.5], vec![0.3, 0.0, 0.7], vec![0.6, 0.4, 0.0]],
        None,
    )
    .unwrap()
}

fn renewal() -> WaitingTime<f64> {
    WaitingTime::gamma(4.0, 8.0).unwrap()
}

#[test]
fn vanishing_noise_reveals_the_state() {
    let m = model();
    let em = EmissionModel::new(vec![0.0, 1.0, 2.0], 1e-9).unwrap();
    for seed in 0..5 {
        let tr = sample_trajectory(&m, 10.0, seed).unwrap();
        let obs = sample_observations(&tr, &em, &renewal(), seed + 100).unwrap();
        assert!(!obs.is_empty());
        for (k, &t) in obs.times.iter().enumerate() {
            let l = &obs.likelihoods[k];
            let best = (0..3).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            assert_eq!(best, tr.state_at(t).unwrap());
        }
    }
}

#[test]
fn observations_are_deterministic() {
    let m = model();
    let em = EmissionModel::new(vec![0.0, 1.0, 2.0], 0.25).unwrap();
    let tr = sample_trajectory(&m, 10.0, 3).unwrap();
    let a = sample_observations(&tr, &em, &renewal(), 9).unwrap();
    let b = sample_observations(&tr, &em, &renewal(), 9).unwrap();
    assert_eq!(a.times, b.times);
    assert_eq!(a.values, b.values);
}

#[test]
fn renewal_count_matches_rate() {
    let m = model();
    let em = EmissionModel::new(vec![0.0, 1.0, 2.0], 0.25).unwrap();
    let tr = sample_trajectory(&m, 10.0, 0).unwrap();
    let n = 1000;
    let counts: Vec<f64> = (0..n).map(|s| sample_observations(&tr, &em, &renewal(), s).unwrap().len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // renewal-rate limit, with a first-order correction for the finite window
    let se = (var / n as f64).sqrt();
    let expected = 10.0 / 0.5 + (0.0625 / 0.25 - 1.0) / 2.0;
    assert!((mean - expected).abs() < 3.0 * se, "mean count {mean}, expected {expected} (se {se})");
}

#[test]
fn merging_multiplies_likelihoods() {
    let o = ObservationSet::new_merging(
        vec![0.5, 0.2, 0.5],
        vec![1.0, 2.0, 3.0],
        vec![vec![0.5, 1.0], vec![1.0, 1.0], vec![0.5, 0.25]],
    )
    .unwrap();
    assert_eq!(o.times, vec![0.2, 0.5]);
    assert_eq!(o.likelihoods[1], vec![0.25, 0.25]);
    assert!(ObservationSet::new(vec![0.5, 0.2], vec![1.0, 2.0], vec![vec![1.0, 1.0]; 2]).is_err());
}

fn scaled(times: Vec<f64>, lik: Vec<Vec<f64>>, c: Vec<f64>) -> ScaledLikelihood<f64> {
    let values = vec![0.0; times.len()];
    ScaledLikelihood::with_normalizers(ObservationSet::new(times, values, lik).unwrap(), c).unwrap()
}

#[test]
fn upsilon_examples() {
    let sl = scaled(vec![1.0, 2.0], vec![vec![0.2, 0.6], vec![0.9, 0.3]], vec![0.4, 0.5]);
    assert_eq!(sl.upsilon(0, 0.0, 0.9).unwrap(), 1.0);
    assert_eq!(sl.upsilon(1, 1.1, 1.9).unwrap(), 1.0);
    assert!((sl.upsilon(0, 0.5, 1.5).unwrap() - 0.5).abs() < 1e-15);
    assert!((sl.upsilon(1, 1.0, 2.0).unwrap() - 1.5).abs() < 1e-15);
    // half-open: an observation at the right end does not count
    assert!((sl.upsilon(0, 0.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((sl.upsilon(0, 0.0, 2.5).unwrap() - 0.5 * 1.8).abs() < 1e-14);
    assert!(sl.upsilon(0, 2.0, 1.0).is_err());
    let bare = ScaledLikelihood::new(ObservationSet::new(vec![1.0], vec![0.0], vec![vec![1.0, 1.0]]).unwrap());
    assert!(bare.upsilon(0, 0.0, 2.0).is_err());
}

#[test]
fn uninformative_observations_give_unit_upsilon() {
    let sl = scaled(vec![0.3, 0.7, 1.1], vec![vec![1.0; 2]; 3], vec![1.0; 3]);
    for (a, b) in [(0.0, 2.0), (0.3, 0.7), (0.5, 1.2)] {
        assert_eq!(sl.upsilon(0, a, b).unwrap(), 1.0);
        assert_eq!(sl.upsilon(1, a, b).unwrap(), 1.0);
    }
}

proptest! {
    #[test]
    fn upsilon_is_multiplicative(
        lik in prop::collection::vec((0.01f64..2.0, 0.01f64..2.0), 1..12),
        cuts in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        x in 0usize..2,
    ) {
        let k = lik.len();
        let times: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let c: Vec<f64> = lik.iter().map(|&(a, b)| 0.5 * (a + b)).collect();
        let sl = scaled(times, lik.iter().map(|&(a, b)| vec![a, b]).collect(), c);
        let mut p = [cuts.0, cuts.1, cuts.2];
        p.sort_by(f64::total_cmp);
        let whole = sl.upsilon(x, p[0], p[2]).unwrap();
        let split = sl.upsilon(x, p[0], p[1]).unwrap() * sl.upsilon(x, p[1], p[2]).unwrap();
        prop_assert!((whole - split).abs() <= 1e-14 * whole.max(1.0));
        // constant while neither end crosses an observation time
        let gap = 0.5 / k as f64;
        let snap = |t: f64| ((t * k as f64 - 0.5).ceil() + 0.5) / k as f64;
        let (a, b) = (snap(p[0]) - 0.25 * gap, snap(p[2]) - 0.25 * gap);
        if a <= b {
            prop_assert_eq!(sl.upsilon(x, a, b).unwrap(), sl.upsilon(x, a - 0.5 * gap, b - 0.5 * gap).unwrap());
        }
    }
}
