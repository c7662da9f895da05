use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctsmc::baseline::{adaptive_forward, hsmm_forward_backward, AdaptiveConfig, HsmmConfig};
use ctsmc::io::save_with;
use ctsmc::model::sample_trajectory;
use ctsmc::observation::sample_observations;
use ctsmc::posterior::{smooth, viterbi_map, ViterbiConfig};
use ctsmc::volterra::{backward_pass, forward_pass};
use ctsmc::{BoundaryCondition, CtsmcModel, EmissionModel, ObservationSet, SolverConfig};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiment::{run_experiment, sub_seed};
use crate::generate::generate_random_model;

#[derive(Debug, Parser)]
#[command(name = "ctsmc", version, about = "Latent-state inference for hidden continuous-time semi-Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a trajectory and noisy observations (random model unless --model).
    Simulate(Common),
    /// Forward, backward and smoothed marginals.
    Infer(Common),
    /// MAP path and posterior over the number of jumps.
    Viterbi(Common),
    /// Discrete-time reference solutions.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        common: Common,
    },
    /// Random models over a seed loop, compared against the baselines.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// JSON file mirroring the experiment configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra seeds (together with --seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Hsmm,
    Adaptive,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Observation CSV: `time,value` or `time,L1,...,Ln`.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver step.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// `<transition|steady>/<uninformed|transition>`.
    #[arg(long)]
    pub boundary: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// infer: history truncation; viterbi: chain-length mass; adaptive: step controller.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Emission means for `time,value` observations (default `0..n-1`).
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Emission std for `time,value` observations (default: quarter level gap).
    #[arg(long)]
    pub sd: Option<f64>,
}

impl Common {
    fn boundary(&self) -> Result<BoundaryCondition> {
        Ok(match &self.boundary {
            Some(s) => BoundaryCondition::parse(s)?,
            None => BoundaryCondition::default(),
        })
    }

    fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(10.0)
    }

    fn model(&self) -> Result<CtsmcModel<f64>> {
        let p = self.model.as_ref().context("--model is required")?;
        CtsmcModel::load(p).with_context(|| format!("loading model {}", p.display()))
    }

    fn emission(&self, n: usize) -> Result<EmissionModel<f64>> {
        let cfg = ExperimentConfig {
            n_states: n,
            emission_levels: (!self.levels.is_empty()).then(|| self.levels.clone()),
            emission_sd: self.sd,
            ..Default::default()
        };
        if let Some(l) = &cfg.emission_levels {
            if l.len() != n {
                bail!("--levels has {} entries for {n} states", l.len());
            }
        }
        cfg.emission()
    }

    fn observations(&self, model: &CtsmcModel<f64>) -> Result<ObservationSet<f64>> {
        let Some(p) = &self.obs else {
            return Ok(ObservationSet::empty());
        };
        let em = self.emission(model.n_states())?;
        let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let o = ObservationSet::read_csv(f, Some(&em))?;
        if o.n_states().is_some_and(|n| n != model.n_states()) {
            bail!("observation likelihoods have {} columns for {} states", o.n_states().unwrap_or(0), model.n_states());
        }
        Ok(o)
    }
}

fn save(dir: &Path, name: &str, f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> ctsmc::Result<()>) -> Result<()> {
    let p = dir.join(name);
    save_with(&p, f).with_context(|| format!("writing {}", p.display()))
}

fn save_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<()> {
    save(dir, name, |mut w| {
        w.write_all(serde_json::to_string_pretty(v)?.as_bytes())?;
        Ok(())
    })
}

fn simulate(c: &Common) -> Result<()> {
    let seed = c.seed.unwrap_or(1);
    let model = match &c.model {
        Some(_) => c.model()?,
        None => {
            let m = generate_random_model(&ExperimentConfig::default(), seed)?;
            save(&c.out, "model.json", |mut w| {
                w.write_all(m.to_json_string()?.as_bytes())?;
                Ok(())
            })?;
            m
        }
    };
    let horizon = c.horizon();
    let traj = sample_trajectory(&model, horizon, sub_seed(seed, 1))?;
    let renewal = ExperimentConfig::default().renewal()?;
    let obs =
        sample_observations(&traj, &c.emission(model.n_states())?, &renewal, sub_seed(seed, 2))?.truncated(horizon);
    save(&c.out, "trajectory.csv", |w| traj.write_csv(w, Some(&model.states)))?;
    save(&c.out, "observations.csv", |w| obs.write_csv(w))?;
    println!("{} jumps, {} observations on [0, {horizon}]", traj.n_jumps(), obs.len());
    Ok(())
}

fn infer(c: &Common) -> Result<()> {
    let model = c.model()?;
    let obs = c.observations(&model)?;
    let mut cfg = SolverConfig::new(c.step.unwrap_or(1e-3)).with_boundary(c.boundary()?);
    if let Some(t) = c.tol {
        cfg.history_truncation_tol = t;
    }
    let horizon = c.horizon();
    let f = forward_pass(&model, &obs, horizon, &cfg)?;
    let b = backward_pass(&model, &f.scaled_likelihood()?, &f.grid, &cfg)?;
    let s = smooth(&model, &f, &b)?;
    let names = &model.states;
    save(&c.out, "alpha.csv", |w| f.alpha.write_csv(w, names))?;
    save(&c.out, "phi_alpha.csv", |w| f.phi_alpha.write_csv(w, names))?;
    save(&c.out, "psi_alpha.csv", |w| f.psi_alpha.write_csv(w, names))?;
    save(&c.out, "beta.csv", |w| b.beta.write_csv(w, names))?;
    save(&c.out, "phi_beta.csv", |w| b.phi_beta.write_csv(w, names))?;
    save(&c.out, "psi_beta.csv", |w| b.psi_beta.write_csv(w, names))?;
    save(&c.out, "smoothed.csv", |w| s.p_hat.write_csv(w, names))?;
    save_json(
        &c.out,
        "summary.json",
        &json!({
            "log_evidence": f.log_evidence,
            "nodes": f.grid.len(),
            "observations": obs.truncated(horizon).len(),
            "truncation_lag": f.truncation_lag,
            "step": cfg.h,
            "horizon": horizon,
        }),
    )?;
    println!("log evidence {}", f.log_evidence);
    Ok(())
}

fn viterbi(c: &Common) -> Result<()> {
    let model = c.model()?;
    let obs = c.observations(&model)?;
    let horizon = c.horizon();
    let mut vc = ViterbiConfig::new(c.step.unwrap_or(1e-2)).with_boundary(c.boundary()?);
    if let Some(t) = c.tol {
        vc.mass_tol = t;
    }
    let f = forward_pass(&model, &obs, horizon, &SolverConfig::new(vc.h).with_boundary(vc.boundary))?;
    let v = viterbi_map(&model, &f.scaled_likelihood()?, horizon, &vc)?;
    save(&c.out, "map_path.csv", |w| v.map_path.write_csv(w, Some(&model.states)))?;
    save(&c.out, "chain_length.csv", |w| v.chain_length().write_csv(w))?;
    save_json(
        &c.out,
        "summary.json",
        &json!({
            "n_star": v.n_star,
            "map_log_score": v.map_log_score,
            "grid_log_score": v.grid_log_score,
            "truncation_mass": v.truncation_mass,
        }),
    )?;
    println!("n* = {}, log score {}", v.n_star, v.map_log_score);
    Ok(())
}

fn baseline(kind: BaselineKind, c: &Common) -> Result<()> {
    let model = c.model()?;
    let obs = c.observations(&model)?;
    let horizon = c.horizon();
    let bc = c.boundary()?;
    let names = &model.states;
    match kind {
        BaselineKind::Hsmm => {
            let hs = hsmm_forward_backward(
                &model,
                &obs,
                horizon,
                &HsmmConfig::new(c.step.unwrap_or(1e-4)).with_boundary(bc),
            )?;
            save(&c.out, "hsmm_predicted.csv", |w| hs.predicted.write_csv(w, names))?;
            save(&c.out, "hsmm_filtered.csv", |w| hs.filtered.write_csv(w, names))?;
            save(&c.out, "hsmm_smoothed.csv", |w| hs.smoothed.write_csv(w, names))?;
            save_json(&c.out, "summary.json", &json!({ "log_evidence": hs.log_evidence, "bins": hs.filtered.len() }))?;
            println!("log evidence {}", hs.log_evidence);
        }
        BaselineKind::Adaptive => {
            let mut cfg = AdaptiveConfig { boundary: bc, ..Default::default() };
            if let Some(h) = c.step {
                cfg.initial_h = h;
            }
            if let Some(t) = c.tol {
                cfg.tol = t;
            }
            let a = adaptive_forward(&model, &obs, horizon, &cfg)?;
            save(&c.out, "adaptive_alpha.csv", |w| a.alpha.write_csv(w, names))?;
            save(&c.out, "adaptive_grid.csv", |w| a.write_grid_csv(w))?;
            save_json(
                &c.out,
                "summary.json",
                &json!({
                    "log_evidence": a.log_evidence,
                    "nodes": a.n_nodes(),
                    "rejected": a.rejected,
                    "initial_step": a.initial_step(),
                }),
            )?;
            println!("log evidence {}, {} nodes", a.log_evidence, a.n_nodes());
        }
    }
    Ok(())
}

fn experiment(c: &Common, config: Option<&Path>, seeds: &[u64], threads: Option<usize>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let mut s: Vec<u64> = c.seed.into_iter().chain(seeds.iter().copied()).collect();
    if !s.is_empty() {
        s.dedup();
        cfg.seeds = s;
    }
    if let Some(h) = c.step {
        cfg.step = h;
    }
    if let Some(t) = c.horizon {
        cfg.horizon = t;
    }
    if c.boundary.is_some() {
        cfg.boundary = c.boundary()?;
    }
    if let Some(t) = c.tol {
        cfg.history_truncation_tol = t;
    }
    if config.is_none() || c.out != Path::new(".") {
        cfg.out_dir = c.out.clone();
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    let m = run_experiment(&cfg)?;
    println!("{} runs ({} failed); comparison table {}", m.runs.len(), m.n_failed(), m.comparison.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Infer(c) => infer(c),
        Command::Viterbi(c) => viterbi(c),
        Command::Baseline { kind, common } => baseline(*kind, common),
        Command::Experiment { common, config, seeds, threads } => {
            experiment(common, config.as_deref(), seeds, *threads)
        }
    }
}
