//! End-to-end fits on observed tensors.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{denoise_all, initialize, stage1_gram, InitConfig, PgdTrace};
use crate::io::{read_tensor, write_json, write_matrix_csv};
use crate::model::{log_likelihood, Baseline, CountTensor, ModelBounds};
use crate::onestep::{one_step, OneStepConfig, OneStepDiagnostics};
use crate::penalized::{penalized_mle, rank_select, z_from_g, PmleConfig, PmleTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Onestep,
    Pmle,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub init: InitConfig,
    pub onestep: OneStepConfig,
    pub pmle: PmleConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub method: Method,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    /// Set when the rank was chosen by `rank_select`.
    pub k_hat: Option<usize>,
    pub bounds: ModelBounds,
    pub log_likelihood: f64,
    /// `sum_{i,j} exp(alpha_it + alpha_jt) / n^2` per time.
    pub baseline_levels: Vec<f64>,
    pub init_trace: Option<PgdTrace>,
    pub onestep: Option<OneStepDiagnostics>,
    pub pmle: Option<PmleTrace>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub z: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub g: Option<DMatrix<f64>>,
    pub report: FitReport,
}

pub fn baseline_levels(alpha: &DMatrix<f64>) -> Vec<f64> {
    let n = alpha.nrows() as f64;
    alpha
        .column_iter()
        .map(|c| {
            // sum_{i,j} e^{a_i} e^{a_j} = (sum_i e^{a_i})^2
            let s: f64 = c.iter().map(|v| v.exp()).sum();
            s * s / (n * n)
        })
        .collect()
}

/// Runs the initializer and the chosen estimator. For `Pmle`, `k = None`
/// selects the rank from the fitted `G`.
pub fn fit_tensor(a: &CountTensor, method: Method, k: Option<usize>, cfg: &FitConfig) -> Result<FitOutput> {
    let (n, t_len) = (a.n(), a.n_times());
    match method {
        Method::Onestep => {
            let k = k.ok_or_else(|| Error::InvalidInput("the one-step estimator needs k".into()))?;
            let init = initialize(a, k, &cfg.init)?;
            let (z, diag) = one_step(a, &init.z, &init.alpha, &cfg.onestep)?;
            let ll = log_likelihood(a, &z, &init.alpha)?;
            let alpha = init.alpha.into_matrix();
            Ok(FitOutput {
                report: FitReport {
                    method,
                    n,
                    t: t_len,
                    k,
                    k_hat: None,
                    bounds: init.bounds,
                    log_likelihood: ll,
                    baseline_levels: baseline_levels(&alpha),
                    init_trace: Some(init.trace),
                    onestep: Some(diag),
                    pmle: None,
                },
                z: z.into_matrix(),
                alpha,
                g: None,
            })
        }
        Method::Pmle => {
            let denoised = denoise_all(a, &cfg.init)?;
            let (g0, alpha0) = stage1_gram(&denoised)?;
            let bounds = match cfg.init.bounds {
                Some(b) => b,
                None => ModelBounds {
                    m_z1: (1.25 * g0.diagonal().max()).max(f64::MIN_POSITIVE),
                    m_alpha: (1.25 * alpha0.amax()).max(4.0),
                    m_theta1: 0.0,
                },
            };
            let fit = penalized_mle(a, &cfg.pmle, &bounds, Some(&g0))?;
            let k_hat = rank_select(&fit.g, cfg.pmle.rank_eps);
            let k_used = match k {
                Some(k) => k,
                None if k_hat == 0 => {
                    return Err(Error::RankDeficient(
                        "rank_select found no eigenvalue above n^(1 - rank_eps); pass k explicitly".into(),
                    ))
                }
                None => k_hat,
            };
            let z = z_from_g(&fit.g, k_used)?;
            let alpha = Baseline::new(fit.alpha.clone());
            let ll = log_likelihood(a, &z, &alpha)?;
            Ok(FitOutput {
                report: FitReport {
                    method,
                    n,
                    t: t_len,
                    k: k_used,
                    k_hat: k.is_none().then_some(k_hat),
                    bounds,
                    log_likelihood: ll,
                    baseline_levels: baseline_levels(&fit.alpha),
                    init_trace: None,
                    onestep: None,
                    pmle: Some(fit.trace),
                },
                z: z.into_matrix(),
                alpha: fit.alpha,
                g: Some(fit.g),
            })
        }
    }
}

/// Reads a tensor manifest, fits, and writes `Z.csv`, `alpha.csv`
/// (`G.csv` for the penalized fit) and `report.json` into `out_dir`.
pub fn fit_real(manifest: &Path, method: Method, k: Option<usize>, cfg: &FitConfig, out_dir: &Path) -> Result<FitReport> {
    let a = read_tensor(manifest)?;
    let out = fit_tensor(&a, method, k, cfg)?;
    write_matrix_csv(&out_dir.join("Z.csv"), &out.z)?;
    write_matrix_csv(&out_dir.join("alpha.csv"), &out.alpha)?;
    if let Some(g) = &out.g {
        write_matrix_csv(&out_dir.join("G.csv"), g)?;
    }
    write_json(&out_dir.join("report.json"), &out.report)?;
    Ok(out.report)
}
