//! Replicated simulation grids over `(n, V, T, p)` and methods.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cap_mix::cap_mix_baseline;
use super::generator::{generate_panel, SimConfig};
use super::metrics::{
    evaluate_fit, match_component, score_estimate, Estimate, Method, MetricsReport,
    ReplicateOutcome,
};
use crate::error::{LcapError, Result};
use crate::estimation::{fit_components, FitConfig};
use crate::inference::{bootstrap_coefficients, confidence_interval, IntervalMethod};
use crate::panel::Panel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: Vec<usize>,
    pub v: Vec<usize>,
    pub t: Vec<usize>,
    pub p: Vec<usize>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    /// Bootstrap replicates per LCAP fit; 0 skips the intervals.
    pub bootstrap_replicates: usize,
    pub level: f64,
    pub interval: IntervalMethod,
    /// Coefficient scored on the target dimension (1 is the first
    /// covariate effect).
    pub coefficient: usize,
    /// Everything except the grid dimensions, which are overwritten per cell.
    pub sim: SimConfig,
    /// Fitting options; the seed is replaced per replicate.
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: vec![50],
            v: vec![5],
            t: vec![50],
            p: vec![20],
            methods: vec![Method::Lcap],
            replications: 10,
            seed: 0,
            bootstrap_replicates: 500,
            level: 0.95,
            interval: IntervalMethod::Percentile,
            coefficient: 2,
            sim: SimConfig::default(),
            fit: FitConfig {
                max_components: 3,
                ..FitConfig::default()
            },
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub p: usize,
}

impl ExperimentConfig {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &v in &self.v {
                for &t in &self.t {
                    for &p in &self.p {
                        out.push(Cell { n, v, t, p });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LcapError::Invalid(msg.to_string()));
        if self.cells().is_empty() {
            return bad("n, v, t, p: the grid is empty");
        }
        if self.methods.is_empty() {
            return bad("methods: no method selected");
        }
        if self.replications < 1 {
            return bad("replications: must be >= 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level: must lie in (0, 1)");
        }
        if self.interval == IntervalMethod::Wald {
            return bad("interval: LCAP intervals are percentile or bias_corrected");
        }
        if self.coefficient < 1 || self.coefficient > super::generator::N_COVARIATES {
            return bad("coefficient: must name a covariate effect (1 or 2)");
        }
        self.fit.validate().map_err(|e| e.in_field("fit"))?;
        for cell in self.cells() {
            self.sim_config(cell)
                .validate()
                .map_err(|e| e.in_field("sim"))?;
        }
        Ok(())
    }

    pub fn sim_config(&self, cell: Cell) -> SimConfig {
        SimConfig {
            n: cell.n,
            v: cell.v,
            t: cell.t,
            p: cell.p,
            ..self.sim.clone()
        }
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the data of replicate `rep` in `cell`. Methods share it, so
/// their comparison is paired.
pub fn replicate_seed(seed: u64, cell: Cell, rep: usize) -> u64 {
    [cell.n, cell.v, cell.t, cell.p, rep]
        .iter()
        .fold(mix(seed), |acc, &x| mix(acc ^ x as u64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub outcomes: Vec<ReplicateOutcome>,
    pub summaries: Vec<MetricsReport>,
}

impl ExperimentReport {
    pub fn summary(&self, cell: Cell, method: Method) -> Option<&MetricsReport> {
        self.summaries
            .iter()
            .find(|s| (s.n, s.v, s.t, s.p, s.method) == (cell.n, cell.v, cell.t, cell.p, method))
    }

    /// Writes `metrics.csv` (one `n,V,T,p,method,metric,value,stderr` row
    /// per aggregate), `replicates.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LcapError::io(dir, e))?;
        let metrics_path = dir.join("metrics.csv");
        let mut w =
            csv::Writer::from_path(&metrics_path).map_err(|e| csv_error(&metrics_path, e))?;
        w.write_record(["n", "V", "T", "p", "method", "metric", "value", "stderr"])
            .map_err(|e| csv_error(&metrics_path, e))?;
        for s in &self.summaries {
            for m in &s.metrics {
                w.write_record([
                    s.n.to_string(),
                    s.v.to_string(),
                    s.t.to_string(),
                    s.p.to_string(),
                    s.method.key().to_string(),
                    m.name.clone(),
                    m.value.to_string(),
                    m.stderr.to_string(),
                ])
                .map_err(|e| csv_error(&metrics_path, e))?;
            }
        }
        w.flush().map_err(|e| LcapError::io(&metrics_path, e))?;

        let rep_path = dir.join("replicates.csv");
        let mut w = csv::Writer::from_path(&rep_path).map_err(|e| csv_error(&rep_path, e))?;
        for o in &self.outcomes {
            w.serialize(o).map_err(|e| csv_error(&rep_path, e))?;
        }
        w.flush().map_err(|e| LcapError::io(&rep_path, e))?;

        let json_path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LcapError::Invalid(format!("cannot serialize report: {e}")))?;
        fs::write(&json_path, text + "\n").map_err(|e| LcapError::io(&json_path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> LcapError {
    LcapError::io(path, std::io::Error::other(e))
}

fn run_lcap(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    panel: &Panel,
    truth: &super::generator::SimTruth,
    seed: u64,
    rep: usize,
) -> Result<ReplicateOutcome> {
    let fit_cfg = FitConfig {
        seed: mix(seed ^ 1),
        ..cfg.fit.clone()
    };
    let set = fit_components(panel, &fit_cfg)?;
    let gammas: Vec<_> = set
        .selected()
        .iter()
        .map(|c| c.params.gamma.clone())
        .collect();
    let k = match_component(&gammas, truth, sim.target_dim).expect("at least one component");
    let comp = &set.selected()[k];
    let coefficients = comp.params.coefficients();
    let interval = if cfg.bootstrap_replicates > 0 {
        let dist = bootstrap_coefficients(
            panel,
            &comp.params.gamma,
            cfg.bootstrap_replicates,
            &fit_cfg,
            mix(seed ^ 2),
        )?;
        Some(confidence_interval(
            &dist,
            cfg.coefficient,
            cfg.level,
            cfg.interval,
            coefficients[cfg.coefficient],
        )?)
    } else {
        None
    };
    let log_eigen = comp.params.linear_predictors(&panel.design);
    let est = Estimate {
        gamma: &comp.params.gamma,
        coefficients: &coefficients,
        log_eigen: &log_eigen,
        sigma2: comp.params.sigma2,
        interval,
        converged: comp.converged,
    };
    outcome(cfg, sim, truth, Method::Lcap, rep, k, &est)
}

fn run_cap_mix(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    panel: &Panel,
    truth: &super::generator::SimTruth,
    seed: u64,
    rep: usize,
) -> Result<ReplicateOutcome> {
    let fit_cfg = FitConfig {
        seed: mix(seed ^ 3),
        ..cfg.fit.clone()
    };
    let res = cap_mix_baseline(panel, &fit_cfg)?;
    let gammas: Vec<_> = res.components.iter().map(|c| c.gamma.clone()).collect();
    let k = match_component(&gammas, truth, sim.target_dim).expect("at least one component");
    let comp = &res.components[k];
    let log_eigen = comp.lmm.fitted(&panel.design);
    let est = Estimate {
        gamma: &comp.gamma,
        coefficients: &comp.lmm.beta,
        log_eigen: &log_eigen,
        sigma2: comp.lmm.tau2,
        interval: Some(comp.lmm.wald_interval(cfg.coefficient, cfg.level)?),
        converged: res.first_visit.selected()[k].converged,
    };
    outcome(cfg, sim, truth, Method::CapMix, rep, k, &est)
}

fn outcome(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    truth: &super::generator::SimTruth,
    method: Method,
    rep: usize,
    component: usize,
    est: &Estimate<'_>,
) -> Result<ReplicateOutcome> {
    let (estimate, beta_true, similarity, eigen_mse) = score_estimate(est, truth, cfg.coefficient)?;
    Ok(ReplicateOutcome {
        n: sim.n,
        v: sim.v,
        t: sim.t,
        p: sim.p,
        method,
        replicate: rep,
        component,
        estimate,
        truth: beta_true,
        ci_lower: est.interval.map(|c| c.lower),
        ci_upper: est.interval.map(|c| c.upper),
        covered: est.interval.map(|c| c.contains(beta_true)),
        similarity,
        sigma2_hat: est.sigma2,
        sigma2_true: truth.sigma2,
        eigen_mse,
        converged: est.converged,
    })
}

/// Outcomes of every method on replicate `rep` of `cell`.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    cell: Cell,
    rep: usize,
) -> Vec<(Method, Result<ReplicateOutcome>)> {
    let sim = cfg.sim_config(cell);
    let seed = replicate_seed(cfg.seed, cell, rep);
    let (panel, truth) = match generate_panel(&sim, seed) {
        Ok(x) => x,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| {
                    (
                        m,
                        Err(LcapError::Invalid(format!("data generation failed: {e}"))),
                    )
                })
                .collect()
        }
    };
    cfg.methods
        .iter()
        .map(|&m| {
            let r = match m {
                Method::Lcap => run_lcap(cfg, &sim, &panel, &truth, seed, rep),
                Method::CapMix => run_cap_mix(cfg, &sim, &panel, &truth, seed, rep),
            };
            (m, r)
        })
        .collect()
}

type MethodOutcomes = Vec<(Method, Result<ReplicateOutcome>)>;

/// Runs the whole grid. Failed replicates are logged and counted in the
/// summaries rather than aborting the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|&c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    let results: Vec<(Cell, MethodOutcomes)> = jobs
        .par_iter()
        .map(|&(cell, rep)| (cell, run_replicate(cfg, cell, rep)))
        .collect();

    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    for &cell in &cells {
        for &method in &cfg.methods {
            let mut cell_outcomes = Vec::new();
            let mut failures = 0;
            for (c, per_method) in &results {
                if *c != cell {
                    continue;
                }
                for (m, r) in per_method {
                    if *m != method {
                        continue;
                    }
                    match r {
                        Ok(o) => cell_outcomes.push(o.clone()),
                        Err(e) => {
                            failures += 1;
                            log::warn!("{method} replicate failed in {cell:?}: {e}");
                        }
                    }
                }
            }
            if cell_outcomes.is_empty() {
                log::warn!("{method}: every replicate failed in {cell:?}");
                continue;
            }
            summaries.push(evaluate_fit(&cell_outcomes, failures)?);
            outcomes.extend(cell_outcomes);
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        outcomes,
        summaries,
    })
}
