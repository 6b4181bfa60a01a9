//! Monte Carlo harness over grids of `(n, T)`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{g_error, procrustes, slope_fit, SlopeFit};
use crate::init::{initialize, InitConfig};
use crate::io::{fmt_f64, write_json};
use crate::onestep::{one_step, OneStepConfig};
use crate::penalized::{penalized_mle, rank_select, z_from_g, PmleConfig};
use crate::rng::derive_seed;
use crate::simulate::{simulate, AlphaCase, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    VaryT,
    VaryN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Onestep,
    Pmle,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Onestep => "onestep",
            Estimator::Pmle => "pmle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
}

fn default_reps() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub grid: Vec<GridCell>,
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub alpha_case: AlphaCase,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub onestep: OneStepConfig,
    #[serde(default)]
    pub pmle: PmleConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if self.grid.is_empty() || self.k_list.is_empty() || self.estimators.is_empty() {
            return Err(Error::InvalidInput("grid, k_list and estimators must be non-empty".into()));
        }
        for c in &self.grid {
            for &k in &self.k_list {
                if c.n < 2 || c.t < 1 || k < 1 || k >= c.n {
                    return Err(Error::InvalidInput(format!("invalid cell n={}, T={}, k={k}", c.n, c.t)));
                }
            }
        }
        self.init.validate()?;
        self.onestep.validate()?;
        self.pmle.validate()
    }

    pub fn rep_seed(&self, cell: usize, k: usize, rep: usize) -> u64 {
        derive_seed(self.master_seed, &[cell as u64, k as u64, rep as u64])
    }
}

/// One estimator on one replicate. Diagnostic fields that do not apply to
/// the estimator are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub dist_sq: Option<f64>,
    pub init_dist_sq: Option<f64>,
    pub g_error: Option<f64>,
    pub k_hat: Option<usize>,
    /// `|1^T Z_hat|_inf` for one-step outputs.
    pub centering_residual: Option<f64>,
    pub pmle_sound: Option<bool>,
    pub pmle_iterations: Option<usize>,
    pub error: Option<String>,
}

impl ResultRow {
    fn empty(cell: GridCell, k: usize, rep: usize, seed: u64, estimator: Estimator) -> Self {
        Self {
            n: cell.n,
            t: cell.t,
            k,
            rep,
            seed,
            estimator,
            dist_sq: None,
            init_dist_sq: None,
            g_error: None,
            k_hat: None,
            centering_residual: None,
            pmle_sound: None,
            pmle_iterations: None,
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub estimator: Estimator,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    pub count: usize,
    pub failures: usize,
    pub mean_dist_sq: Option<f64>,
    pub sd_dist_sq: Option<f64>,
    pub mean_g_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeSummary {
    pub estimator: Estimator,
    pub k: usize,
    /// The grid coordinate held fixed (n for vary_T, T for vary_N).
    pub fixed: usize,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessSummary {
    pub estimator: Estimator,
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// max / min of the cell means across n.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub scenario: Scenario,
    pub rows: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeSummary>,
    pub flatness: Vec<FlatnessSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub summary: ExperimentSummary,
}

fn run_rep(spec: &ExperimentSpec, cell_idx: usize, cell: GridCell, k: usize, rep: usize) -> Vec<ResultRow> {
    let seed = spec.rep_seed(cell_idx, k, rep);
    let mut rows: Vec<ResultRow> = spec
        .estimators
        .iter()
        .map(|&e| ResultRow::empty(cell, k, rep, seed, e))
        .collect();
    let sim_cfg = SimConfig {
        n: cell.n,
        t: cell.t,
        k,
        alpha_case: spec.alpha_case,
        seed,
        bounds: None,
    };
    let prepared = simulate(&sim_cfg).and_then(|sim| {
        let init_cfg = InitConfig {
            bounds: spec.init.bounds.or(Some(sim.bounds)),
            ..spec.init.clone()
        };
        let init = initialize(&sim.counts, k, &init_cfg)?;
        let init_dist = procrustes(init.z.matrix(), sim.z_star.matrix())?.dist_sq;
        Ok((sim, init, init_dist))
    });
    let (sim, init, init_dist) = match prepared {
        Ok(p) => p,
        Err(e) => {
            for r in &mut rows {
                r.error = Some(format!("setup: {e}"));
            }
            return rows;
        }
    };
    let g_star = sim.z_star.gram();
    for row in &mut rows {
        row.init_dist_sq = Some(init_dist);
        let outcome: Result<()> = match row.estimator {
            Estimator::Onestep => one_step(&sim.counts, &init.z, &init.alpha, &spec.onestep).and_then(|(z, _)| {
                row.centering_residual = Some(z.centering_residual());
                row.dist_sq = Some(procrustes(z.matrix(), sim.z_star.matrix())?.dist_sq);
                Ok(())
            }),
            Estimator::Pmle => penalized_mle(&sim.counts, &spec.pmle, &sim.bounds, Some(&init.stage1.g)).and_then(|fit| {
                row.k_hat = Some(rank_select(&fit.g, spec.pmle.rank_eps));
                row.g_error = Some(g_error(&fit.g, &g_star)?);
                row.pmle_sound = Some(fit.soundness(spec.pmle.outer_tol).passed());
                row.pmle_iterations = Some(fit.trace.iterations);
                let z = z_from_g(&fit.g, k)?;
                row.dist_sq = Some(procrustes(z.matrix(), sim.z_star.matrix())?.dist_sq);
                Ok(())
            }),
        };
        if let Err(e) = outcome {
            row.error = Some(e.to_string());
        }
    }
    rows
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt());
    (Some(m), sd)
}

fn summarize(spec: &ExperimentSpec, rows: &[ResultRow]) -> ExperimentSummary {
    let mut groups: BTreeMap<(Estimator, usize, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.estimator, r.k, r.n, r.t)).or_default().push(r);
    }
    let cells: Vec<CellSummary> = groups
        .iter()
        .map(|(&(estimator, k, n, t), rs)| {
            let d: Vec<f64> = rs.iter().filter_map(|r| r.dist_sq).collect();
            let ge: Vec<f64> = rs.iter().filter_map(|r| r.g_error).collect();
            let (mean_dist_sq, sd_dist_sq) = mean_sd(&d);
            CellSummary {
                estimator,
                n,
                t,
                k,
                count: rs.len(),
                failures: rs.iter().filter(|r| r.failed()).count(),
                mean_dist_sq,
                sd_dist_sq,
                mean_g_error: mean_sd(&ge).0,
            }
        })
        .collect();

    // series keyed by (estimator, k, fixed coordinate) -> (varying coordinate, mean)
    let mut series: BTreeMap<(Estimator, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for c in &cells {
        if let Some(m) = c.mean_dist_sq {
            let (fixed, varying) = match spec.scenario {
                Scenario::VaryT => (c.n, c.t),
                Scenario::VaryN => (c.t, c.n),
            };
            series.entry((c.estimator, c.k, fixed)).or_default().push((varying as f64, m));
        }
    }
    let mut slopes = Vec::new();
    let mut flatness = Vec::new();
    for (&(estimator, k, fixed), pts) in &series {
        match spec.scenario {
            Scenario::VaryT => {
                if let Ok(fit) = slope_fit(pts) {
                    slopes.push(SlopeSummary { estimator, k, fixed, fit });
                }
            }
            Scenario::VaryN => {
                let max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
                let min = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min);
                if pts.len() >= 2 && min > 0.0 {
                    flatness.push(FlatnessSummary {
                        estimator,
                        k,
                        t: fixed,
                        ratio: max / min,
                    });
                }
            }
        }
    }
    let failures = rows.iter().filter(|r| r.failed()).count();
    ExperimentSummary {
        scenario: spec.scenario,
        rows: rows.len(),
        failures,
        failure_rate: failures as f64 / rows.len().max(1) as f64,
        cells,
        slopes,
        flatness,
    }
}

/// Runs every grid cell x k x replicate. Replicates run in parallel; rows
/// come back in grid order regardless of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (ci, &cell) in spec.grid.iter().enumerate() {
        for &k in &spec.k_list {
            for rep in 0..spec.reps {
                jobs.push((ci, cell, k, rep));
            }
        }
    }
    let rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|&(ci, cell, k, rep)| {
            let rows = run_rep(spec, ci, cell, k, rep);
            log::info!("cell n={} T={} k={k} rep={rep} done", cell.n, cell.t);
            rows
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(spec, &rows);
    Ok(ExperimentReport { rows, summary })
}

impl ExperimentReport {
    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("results.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        w.write_record([
            "n",
            "T",
            "k",
            "rep",
            "seed",
            "estimator",
            "dist_sq",
            "init_dist_sq",
            "g_error",
            "k_hat",
            "centering_residual",
            "pmle_sound",
            "pmle_iterations",
            "error",
        ])
        .and_then(|_| {
            for r in &self.rows {
                w.write_record([
                    r.n.to_string(),
                    r.t.to_string(),
                    r.k.to_string(),
                    r.rep.to_string(),
                    r.seed.to_string(),
                    r.estimator.name().to_string(),
                    opt(r.dist_sq),
                    opt(r.init_dist_sq),
                    opt(r.g_error),
                    r.k_hat.map(|v| v.to_string()).unwrap_or_default(),
                    opt(r.centering_residual),
                    r.pmle_sound.map(|v| v.to_string()).unwrap_or_default(),
                    r.pmle_iterations.map(|v| v.to_string()).unwrap_or_default(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            Ok(())
        })
        .map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join("summary.json"), &self.summary)
    }

    /// Error when more than 20% of the rows failed.
    pub fn check_failures(&self) -> Result<()> {
        if self.summary.failure_rate > 0.2 {
            return Err(Error::NonConvergence(format!(
                "{} of {} experiment rows failed",
                self.summary.failures, self.summary.rows
            )));
        }
        Ok(())
    }

    pub fn cell(&self, estimator: Estimator, n: usize, t: usize, k: usize) -> Option<&CellSummary> {
        self.summary
            .cells
            .iter()
            .find(|c| c.estimator == estimator && c.n == n && c.t == t && c.k == k)
    }
}
