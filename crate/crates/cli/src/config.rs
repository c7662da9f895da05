//! Experiment configuration (JSON mirror of the command-line flags).

use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use ctsmc::baseline::AdaptiveConfig;
use ctsmc::{BoundaryCondition, EmissionModel, WaitingTime};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Gamma,
    Weibull,
}

/// `Gamma(shape, rate)` prior on one positive parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        GammaPrior { shape, rate }
    }

    fn check(&self, what: &str) -> Result<()> {
        ensure!(
            self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite(),
            "{what}: prior shape and rate must be finite and > 0"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperpriors {
    pub gamma_shape: GammaPrior,
    pub gamma_rate: GammaPrior,
    pub weibull_shape: GammaPrior,
    pub weibull_scale: GammaPrior,
    pub exponential_rate: GammaPrior,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            gamma_shape: GammaPrior::new(4.0, 2.0),
            gamma_rate: GammaPrior::new(4.0, 2.0),
            weibull_shape: GammaPrior::new(4.0, 2.0),
            weibull_scale: GammaPrior::new(4.0, 4.0),
            exponential_rate: GammaPrior::new(4.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_states: usize,
    pub families: Vec<Family>,
    pub hyperpriors: Hyperpriors,
    /// Gamma law of the gaps between observation times.
    pub observation_renewal: GammaPrior,
    /// Emission means `b`; `0..n-1` when absent.
    pub emission_levels: Option<Vec<f64>>,
    /// Emission std `d`; a quarter of the smallest level gap when absent.
    pub emission_sd: Option<f64>,
    pub horizon: f64,
    pub step: f64,
    pub hsmm_step: f64,
    pub viterbi_step: f64,
    pub boundary: BoundaryCondition,
    pub history_truncation_tol: f64,
    pub mass_tol: f64,
    pub adaptive: AdaptiveConfig<f64>,
    pub run_viterbi: bool,
    pub run_hsmm: bool,
    pub run_adaptive: bool,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_states: 3,
            families: vec![Family::Gamma, Family::Weibull],
            hyperpriors: Hyperpriors::default(),
            observation_renewal: GammaPrior::new(4.0, 8.0),
            emission_levels: None,
            emission_sd: None,
            horizon: 10.0,
            step: 1e-3,
            hsmm_step: 1e-4,
            viterbi_step: 1e-2,
            boundary: BoundaryCondition::default(),
            history_truncation_tol: 1e-14,
            mass_tol: 1e-6,
            adaptive: AdaptiveConfig::default(),
            run_viterbi: true,
            run_hsmm: true,
            run_adaptive: true,
            seeds: vec![1],
            out_dir: PathBuf::from("results"),
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_states >= 2, "n_states must be >= 2");
        ensure!(!self.families.is_empty(), "at least one waiting-time family is required");
        let h = &self.hyperpriors;
        h.gamma_shape.check("gamma_shape")?;
        h.gamma_rate.check("gamma_rate")?;
        h.weibull_shape.check("weibull_shape")?;
        h.weibull_scale.check("weibull_scale")?;
        h.exponential_rate.check("exponential_rate")?;
        self.observation_renewal.check("observation_renewal")?;
        for (name, v) in [
            ("horizon", self.horizon),
            ("step", self.step),
            ("hsmm_step", self.hsmm_step),
            ("viterbi_step", self.viterbi_step),
            ("mass_tol", self.mass_tol),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be finite and > 0");
        }
        ensure!(self.history_truncation_tol >= 0.0, "history_truncation_tol must be >= 0");
        ensure!(!self.seeds.is_empty(), "no seeds given");
        if let Some(l) = &self.emission_levels {
            ensure!(l.len() == self.n_states, "need one emission level per state");
        }
        self.emission()?;
        self.adaptive.validate()?;
        if self.threads == Some(0) {
            bail!("threads must be >= 1");
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<f64> {
        self.emission_levels.clone().unwrap_or_else(|| (0..self.n_states).map(|i| i as f64).collect())
    }

    pub fn emission(&self) -> Result<EmissionModel<f64>> {
        let levels = self.levels();
        let sd = match self.emission_sd {
            Some(d) => d,
            None => {
                let mut s = levels.clone();
                s.sort_by(f64::total_cmp);
                let gap = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                ensure!(gap > 0.0 && gap.is_finite(), "emission levels must be distinct");
                0.25 * gap
            }
        };
        Ok(EmissionModel::new(levels, sd)?)
    }

    pub fn renewal(&self) -> Result<WaitingTime<f64>> {
        Ok(WaitingTime::gamma(self.observation_renewal.shape, self.observation_renewal.rate)?)
    }

    /// Calibration choices with no published value, listed in the manifest.
    pub fn assumed_defaults(&self) -> serde_json::Value {
        serde_json::json!({
            "hyperpriors": self.hyperpriors,
            "observation_renewal": self.observation_renewal,
            "emission_levels": self.levels(),
            "emission_sd": self.emission().map(|e| e.sd).ok(),
            "viterbi_step": self.viterbi_step,
            "adaptive": self.adaptive,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        assert_eq!(ExperimentConfig::default().emission().unwrap().sd, 0.25);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"n_states": 4, "seeds": [3, 4]}"#).unwrap();
        assert_eq!(c.n_states, 4);
        assert_eq!(c.levels(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(c.horizon, 10.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let c = ExperimentConfig { n_states: 1, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { emission_levels: Some(vec![0.0, 0.0, 1.0]), ..Default::default() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { step: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
