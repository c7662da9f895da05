use anyhow::Result;
use ctsmc::{CtsmcModel, WaitingTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::config::{ExperimentConfig, Family, GammaPrior};

fn draw<R: Rng>(p: GammaPrior, rng: &mut R) -> f64 {
    Gamma::new(p.shape, 1.0 / p.rate).expect("validated prior").sample(rng)
}

/// Random model: per state a family drawn uniformly from `cfg.families` with
/// Gamma-distributed parameters, embedded-chain rows drawn uniformly from the
/// hypercube with the self-entry zeroed and then normalized, uniform initial
/// distribution.
pub fn generate_random_model(cfg: &ExperimentConfig, seed: u64) -> Result<CtsmcModel<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_states;
    let hp = &cfg.hyperpriors;
    let mut waiting = Vec::with_capacity(n);
    for _ in 0..n {
        let fam = cfg.families[rng.random_range(0..cfg.families.len())];
        let w = match fam {
            Family::Exponential => WaitingTime::exponential(draw(hp.exponential_rate, &mut rng))?,
            Family::Gamma => {
                let k = draw(hp.gamma_shape, &mut rng);
                WaitingTime::gamma(k, draw(hp.gamma_rate, &mut rng))?
            }
            Family::Weibull => {
                let k = draw(hp.weibull_shape, &mut rng);
                WaitingTime::weibull(k, draw(hp.weibull_scale, &mut rng))?
            }
        };
        waiting.push(w);
    }
    let embedded = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            row[i] = 0.0;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();
    let model = CtsmcModel::new(waiting, embedded, None)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let cfg = ExperimentConfig::default();
        let a = generate_random_model(&cfg, 9).unwrap();
        assert_eq!(a, generate_random_model(&cfg, 9).unwrap());
        assert_ne!(a, generate_random_model(&cfg, 10).unwrap());
        assert!(ctsmc::model::validate_model(&a).is_valid());
        for (i, row) in a.embedded.m.iter().enumerate() {
            assert_eq!(row[i], 0.0);
        }
    }

    #[test]
    fn families_respected() {
        let cfg = ExperimentConfig { families: vec![Family::Exponential], n_states: 5, ..Default::default() };
        let m = generate_random_model(&cfg, 1).unwrap();
        assert!(m.waiting.iter().all(|w| matches!(w, WaitingTime::Exponential { .. })));
    }
}
