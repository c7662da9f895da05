//! Seed loop: random model → simulation → inference → baselines → artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use ctsmc::baseline::{adaptive_forward, hsmm_forward_backward, HsmmConfig, HsmmMarginal};
use ctsmc::io::save_with;
use ctsmc::model::sample_trajectory;
use ctsmc::observation::sample_observations;
use ctsmc::posterior::{smooth, viterbi_map, ViterbiConfig};
use ctsmc::volterra::{backward_pass, forward_pass};
use ctsmc::SolverConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{filtered_gap, smoothed_gap};
use crate::config::ExperimentConfig;
use crate::generate::generate_random_model;

/// Independent sub-seeds for the model, trajectory and observation draws.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run numbers that go into `comparison.csv`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunMetrics {
    pub n_obs: usize,
    pub true_jumps: usize,
    pub nodes: usize,
    pub log_evidence: f64,
    pub hsmm_log_evidence: Option<f64>,
    pub smoothed_gap: Option<f64>,
    pub filtered_gap: Option<f64>,
    pub adaptive_gap: Option<f64>,
    pub adaptive_steps: Option<usize>,
    pub uniform_steps: usize,
    pub adaptive_initial_step: Option<f64>,
    pub n_star: Option<usize>,
    pub map_log_score: Option<f64>,
    pub chain_length_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub dir: PathBuf,
    pub ok: bool,
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
    /// Wall-clock seconds per stage.
    pub runtimes: BTreeMap<String, f64>,
    #[serde(skip)]
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub assumed_defaults: serde_json::Value,
    pub comparison: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok).count()
    }
}

struct Recorder<'a> {
    dir: &'a Path,
    artifacts: Vec<PathBuf>,
    runtimes: BTreeMap<String, f64>,
}

impl Recorder<'_> {
    fn save<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(BufWriter<File>) -> ctsmc::Result<()>,
    {
        let p = self.dir.join(name);
        save_with(&p, write).with_context(|| format!("writing {}", p.display()))?;
        self.artifacts.push(p);
        Ok(())
    }

    fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.runtimes.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        r
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, rec: &mut Recorder<'_>) -> Result<RunMetrics> {
    std::fs::create_dir_all(dir)?;
    let model = generate_random_model(cfg, seed)?;
    let names = model.states.clone();
    rec.save("model.json", |mut w| {
        w.write_all(model.to_json_string()?.as_bytes())?;
        Ok(())
    })?;

    let horizon = cfg.horizon;
    let traj = sample_trajectory(&model, horizon, sub_seed(seed, 1))?;
    let obs = sample_observations(&traj, &cfg.emission()?, &cfg.renewal()?, sub_seed(seed, 2))?.truncated(horizon);
    rec.save("trajectory.csv", |w| traj.write_csv(w, Some(&names)))?;
    rec.save("observations.csv", |w| obs.write_csv(w))?;

    let scfg = SolverConfig { h: cfg.step, history_truncation_tol: cfg.history_truncation_tol, boundary: cfg.boundary };
    let fwd = rec.time("forward", || forward_pass(&model, &obs, horizon, &scfg))?;
    let sl = fwd.scaled_likelihood()?;
    let bwd = rec.time("backward", || backward_pass(&model, &sl, &fwd.grid, &scfg))?;
    let sm = rec.time("smooth", || smooth(&model, &fwd, &bwd))?;
    rec.save("alpha.csv", |w| fwd.alpha.write_csv(w, &names))?;
    rec.save("phi_alpha.csv", |w| fwd.phi_alpha.write_csv(w, &names))?;
    rec.save("psi_alpha.csv", |w| fwd.psi_alpha.write_csv(w, &names))?;
    rec.save("beta.csv", |w| bwd.beta.write_csv(w, &names))?;
    rec.save("phi_beta.csv", |w| bwd.phi_beta.write_csv(w, &names))?;
    rec.save("psi_beta.csv", |w| bwd.psi_beta.write_csv(w, &names))?;
    rec.save("smoothed.csv", |w| sm.p_hat.write_csv(w, &names))?;

    let mut m = RunMetrics {
        n_obs: obs.len(),
        true_jumps: traj.n_jumps(),
        nodes: fwd.grid.len(),
        log_evidence: fwd.log_evidence,
        uniform_steps: (horizon / cfg.hsmm_step).round() as usize,
        ..Default::default()
    };

    if cfg.run_viterbi {
        let vcfg = ViterbiConfig {
            mass_tol: cfg.mass_tol,
            history_truncation_tol: cfg.history_truncation_tol,
            ..ViterbiConfig::new(cfg.viterbi_step).with_boundary(cfg.boundary)
        };
        // the chain-length posterior needs normalizers from a forward pass on its own mesh
        let v = rec.time("viterbi", || -> ctsmc::Result<_> {
            let f = if cfg.viterbi_step == cfg.step {
                fwd.clone()
            } else {
                forward_pass(&model, &obs, horizon, &SolverConfig { h: cfg.viterbi_step, ..scfg })?
            };
            viterbi_map(&model, &f.scaled_likelihood()?, horizon, &vcfg)
        })?;
        rec.save("map_path.csv", |w| v.map_path.write_csv(w, Some(&names)))?;
        rec.save("chain_length.csv", |w| v.chain_length().write_csv(w))?;
        m.n_star = Some(v.n_star);
        m.map_log_score = Some(v.map_log_score);
        m.chain_length_residual = Some(v.truncation_mass);
    }

    if cfg.run_hsmm {
        let hcfg = HsmmConfig::new(cfg.hsmm_step).with_boundary(cfg.boundary);
        let hs = rec.time("hsmm", || hsmm_forward_backward(&model, &obs, horizon, &hcfg))?;
        let ts = &fwd.grid.times;
        rec.save("hsmm_filtered.csv", |w| hs.marginals_at(HsmmMarginal::Filtered, ts).write_csv(w, &names))?;
        rec.save("hsmm_smoothed.csv", |w| hs.marginals_at(HsmmMarginal::Smoothed, ts).write_csv(w, &names))?;
        m.hsmm_log_evidence = Some(hs.log_evidence);
        m.smoothed_gap = Some(smoothed_gap(&sm.p_hat, &hs));
        m.filtered_gap = Some(filtered_gap(&fwd.alpha, &fwd.grid.kinds, &obs.times, &hs));

        if cfg.run_adaptive {
            let acfg = ctsmc::baseline::AdaptiveConfig { boundary: cfg.boundary, ..cfg.adaptive };
            let a = rec.time("adaptive", || adaptive_forward(&model, &obs, horizon, &acfg))?;
            rec.save("adaptive_alpha.csv", |w| a.alpha.write_csv(w, &names))?;
            rec.save("adaptive_grid.csv", |w| a.write_grid_csv(w))?;
            m.adaptive_gap = Some(filtered_gap(&a.alpha, &a.kinds, &obs.times, &hs));
            m.adaptive_steps = Some(a.n_nodes());
            m.adaptive_initial_step = a.initial_step();
        }
    }
    Ok(m)
}

/// Runs every seed (in parallel) and writes `comparison.csv` and
/// `manifest.json` under `cfg.out_dir`. Fails only when every run fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let work = || {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let dir = cfg.out_dir.join(format!("seed_{seed}"));
                let mut rec = Recorder { dir: &dir, artifacts: Vec::new(), runtimes: BTreeMap::new() };
                let t0 = Instant::now();
                let res = run_seed(cfg, seed, &dir, &mut rec);
                rec.runtimes.insert("total".into(), t0.elapsed().as_secs_f64());
                let (ok, error, metrics) = match res {
                    Ok(m) => (true, None, Some(m)),
                    Err(e) => (false, Some(format!("{e:#}")), None),
                };
                RunRecord {
                    seed,
                    dir: dir.clone(),
                    ok,
                    error,
                    artifacts: rec.artifacts,
                    runtimes: rec.runtimes,
                    metrics,
                }
            })
            .collect::<Vec<_>>()
    };
    let runs = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    };

    let comparison = cfg.out_dir.join("comparison.csv");
    save_with(&comparison, |w| write_comparison(w, cfg, &runs))?;
    let mut artifacts: Vec<PathBuf> = runs.iter().flat_map(|r| r.artifacts.iter().cloned()).collect();
    artifacts.push(comparison.clone());
    let manifest = Manifest {
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: cfg.clone(),
        assumed_defaults: cfg.assumed_defaults(),
        comparison,
        artifacts,
        runs,
    };
    let path = cfg.out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    if manifest.n_failed() == manifest.runs.len() {
        let first = manifest.runs.first().and_then(|r| r.error.clone()).unwrap_or_default();
        bail!("all {} runs failed; first error: {first}", manifest.runs.len());
    }
    Ok(manifest)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_comparison<W: Write>(w: W, cfg: &ExperimentConfig, runs: &[RunRecord]) -> ctsmc::Result<()> {
    let header = [
        "seed",
        "status",
        "n_obs",
        "true_jumps",
        "h",
        "nodes",
        "log_evidence",
        "hsmm_log_evidence",
        "evidence_gap",
        "smoothed_gap",
        "filtered_gap",
        "adaptive_gap",
        "adaptive_steps",
        "uniform_steps",
        "adaptive_initial_step",
        "n_star",
        "map_log_score",
        "chain_length_residual",
        "error",
    ];
    let rows = runs.iter().map(|r| {
        let mut row = vec![r.seed.to_string(), if r.ok { "ok" } else { "failed" }.to_string()];
        match &r.metrics {
            Some(m) => row.extend([
                m.n_obs.to_string(),
                m.true_jumps.to_string(),
                cfg.step.to_string(),
                m.nodes.to_string(),
                m.log_evidence.to_string(),
                opt(m.hsmm_log_evidence),
                opt(m.hsmm_log_evidence.map(|e| (m.log_evidence - e).abs())),
                opt(m.smoothed_gap),
                opt(m.filtered_gap),
                opt(m.adaptive_gap),
                opt(m.adaptive_steps),
                m.uniform_steps.to_string(),
                opt(m.adaptive_initial_step),
                opt(m.n_star),
                opt(m.map_log_score),
                opt(m.chain_length_residual),
                String::new(),
            ]),
            None => {
                row.extend(std::iter::repeat_n(String::new(), header.len() - 3));
                row.push(r.error.clone().unwrap_or_default());
            }
        }
        row
    });
    ctsmc::io::write_table(w, &header, rows)
}
