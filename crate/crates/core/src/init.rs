//! Two-stage initial estimator.
//!
//! Stage 1 denoises every slice by universal singular value thresholding,
//! takes logs and recovers `(alpha, G)` through the exact identities
//! `alpha_t = H_n^{-1} Theta_t 1` and `G = mean_t(Theta_t - alpha_t 1^T - 1 alpha_t^T)`,
//! then factors `G`. Stage 2 runs projected gradient ascent on the
//! likelihood over the feasible set
//! `{1^T Z = 0, |z_i|^2 <= m_z1, |alpha_it| <= m_alpha}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, column_sum_sup, spectral_map, sym_eigen_desc, sym_op_norm, symmetrize};
use crate::model::{loglik_gram, residual_sums, z_gradient, Baseline, CountTensor, LatentPositions, ModelBounds};

/// Bounds assumed for the clip floor when none are supplied.
const PROVISIONAL_BOUNDS: ModelBounds = ModelBounds {
    m_z1: 4.0,
    m_alpha: 4.0,
    m_theta1: 0.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub usvt_threshold_mult: f64,
    /// Lower clip for denoised intensities; `exp(-(m_z1 + 2 m_alpha))` when absent.
    pub clip_floor: Option<f64>,
    /// Gradient step for `Z`; `pgd_step_alpha / T` when absent.
    pub pgd_step_z: Option<f64>,
    /// Gradient step for `alpha`; `1 / (2 max_t |E_hat_t|_op)` when absent.
    pub pgd_step_alpha: Option<f64>,
    pub pgd_max_iters: usize,
    pub pgd_tol: f64,
    /// Constraint set; derived from the stage-1 estimate when absent.
    pub bounds: Option<ModelBounds>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            usvt_threshold_mult: 2.1,
            clip_floor: None,
            pgd_step_z: None,
            pgd_step_alpha: None,
            pgd_max_iters: 500,
            pgd_tol: 1e-7,
            bounds: None,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        positive("usvt_threshold_mult", self.usvt_threshold_mult)?;
        if let Some(v) = self.clip_floor {
            positive("clip_floor", v)?;
        }
        if let Some(v) = self.pgd_step_z {
            positive("pgd_step_z", v)?;
        }
        if let Some(v) = self.pgd_step_alpha {
            positive("pgd_step_alpha", v)?;
        }
        if self.pgd_max_iters == 0 {
            return Err(Error::InvalidInput("pgd_max_iters must be positive".into()));
        }
        if !(self.pgd_tol > 0.0 && self.pgd_tol < 1.0) {
            return Err(Error::InvalidInput(format!("pgd_tol must lie in (0, 1), got {}", self.pgd_tol)));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }

    fn effective_clip_floor(&self) -> f64 {
        self.clip_floor
            .unwrap_or_else(|| self.bounds.unwrap_or(PROVISIONAL_BOUNDS).min_intensity())
    }
}

#[derive(Debug, Clone)]
pub struct Denoised {
    pub estimate: DMatrix<f64>,
    /// Number of retained singular triplets.
    pub rank: usize,
    /// Set when the slice had no events and the constant floor was returned.
    pub empty_slice: bool,
}

/// Universal singular value thresholding of one symmetric slice.
///
/// Singular values of a symmetric matrix are the absolute eigenvalues, so
/// the thresholding runs on its eigen-decomposition. Triplets with singular
/// value above `mult * sqrt(n * mean(A_t))` are kept, and the reconstruction
/// is clipped to `[clip_floor, max(A_t) + 1]`.
pub fn usvt_denoise(a_t: &DMatrix<f64>, threshold_mult: f64, clip_floor: f64) -> Result<Denoised> {
    let n = a_t.nrows();
    if a_t.ncols() != n {
        return Err(Error::shape("usvt_denoise", "square", format!("{:?}", a_t.shape())));
    }
    let max_entry = a_t.max();
    if max_entry <= 0.0 {
        log::warn!("empty slice in USVT; returning the clip floor");
        return Ok(Denoised {
            estimate: DMatrix::from_element(n, n, clip_floor),
            rank: 0,
            empty_slice: true,
        });
    }
    let tau = threshold_mult * (n as f64 * a_t.mean()).sqrt();
    let eig = sym_eigen_desc(a_t);
    let rank = eig.values.iter().filter(|v| v.abs() > tau).count();
    let recon = spectral_map(&eig, |v| if v.abs() > tau { v } else { 0.0 });
    let upper = max_entry + 1.0;
    let estimate = symmetrize(&recon).map(|v| v.clamp(clip_floor, upper));
    Ok(Denoised {
        estimate,
        rank,
        empty_slice: false,
    })
}

/// `H_n^{-1} Theta_t 1` with `H_n^{-1} = (I - 1 1^T / (2n)) / n`.
pub fn init_alpha(theta_t: &DMatrix<f64>) -> DVector<f64> {
    let n = theta_t.nrows() as f64;
    let row_sums = DVector::from_iterator(theta_t.nrows(), theta_t.row_iter().map(|r| r.sum()));
    let total = row_sums.sum();
    row_sums.map(|s| (s - total / (2.0 * n)) / n)
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    pub z: LatentPositions,
    pub alpha: Baseline,
    /// Symmetrized `G` before factorization.
    pub g: DMatrix<f64>,
}

/// `(G, alpha)` from denoised intensity estimates `E_hat_t`, before `G` is
/// factored. `G` is symmetrized.
pub fn stage1_gram(e_hat: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t_len = e_hat.len();
    if t_len == 0 {
        return Err(Error::InvalidInput("stage 1 needs at least one slice".into()));
    }
    let n = e_hat[0].nrows();
    let mut alpha = DMatrix::zeros(n, t_len);
    let mut g = DMatrix::zeros(n, n);
    for (t, e) in e_hat.iter().enumerate() {
        if e.shape() != (n, n) {
            return Err(Error::shape("stage 1 slice", format!("{n}x{n}"), format!("{:?}", e.shape())));
        }
        let e = symmetrize(e);
        if let Some(v) = e.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidInput(format!("intensity estimate {v} at t={t} is not positive")));
        }
        let theta = e.map(f64::ln);
        let a = init_alpha(&theta);
        g += DMatrix::from_fn(n, n, |i, j| theta[(i, j)] - a[i] - a[j]);
        alpha.set_column(t, &a);
    }
    Ok((symmetrize(&(g / t_len as f64)), alpha))
}

/// Top-`k` factor `U_k D_k^{1/2}` of a stage-1 `G`, re-centered.
pub fn factor_gram(g: &DMatrix<f64>, k: usize) -> Result<LatentPositions> {
    let n = g.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let eig = sym_eigen_desc(g);
    let positive = eig.values.iter().filter(|v| **v > 0.0).count();
    if positive < k {
        return Err(Error::RankDeficient(format!(
            "stage-1 G has only {positive} positive eigenvalues; try k <= {positive}"
        )));
    }
    let mut z = DMatrix::zeros(n, k);
    for c in 0..k {
        z.set_column(c, &(eig.vectors.column(c) * eig.values[c].sqrt()));
    }
    center_columns(&mut z);
    Ok(LatentPositions::new(z))
}

/// Stage 1 from already-denoised intensity estimates `E_hat_t`.
pub fn stage1_from_estimates(e_hat: &[DMatrix<f64>], k: usize) -> Result<Stage1> {
    let (g, alpha) = stage1_gram(e_hat)?;
    let z = factor_gram(&g, k)?;
    Ok(Stage1 {
        z,
        alpha: Baseline::new(alpha),
        g,
    })
}

/// USVT-denoised slices.
pub fn denoise_all(a: &CountTensor, cfg: &InitConfig) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    let floor = cfg.effective_clip_floor();
    a.slices()
        .par_iter()
        .map(|s| usvt_denoise(s, cfg.usvt_threshold_mult, floor).map(|d| d.estimate))
        .collect()
}

/// Denoised slices and the stage-1 estimate.
pub fn init_stage1(a: &CountTensor, k: usize, cfg: &InitConfig) -> Result<(Stage1, Vec<DMatrix<f64>>)> {
    let denoised = denoise_all(a, cfg)?;
    let stage1 = stage1_from_estimates(&denoised, k)?;
    Ok((stage1, denoised))
}

/// Bounds derived from a stage-1 estimate when the true ones are unknown:
/// `m_z1 = 1.25 max_i |z_i|^2`, `m_alpha = max(4, 1.25 max|alpha|)`.
pub fn bounds_from_stage1(stage1: &Stage1) -> ModelBounds {
    ModelBounds {
        m_z1: (1.25 * stage1.z.max_row_norm_sq()).max(f64::MIN_POSITIVE),
        m_alpha: (1.25 * stage1.alpha.max_abs()).max(4.0),
        m_theta1: 0.0,
    }
}

/// Euclidean projection onto `{1^T Z = 0} ∩ {|z_i|^2 <= m_z1 for all i}`,
/// computed with Dykstra's algorithm. When centering alone lands inside
/// every ball, that point is the projection.
pub fn project_latent(z: &DMatrix<f64>, m_z1: f64) -> DMatrix<f64> {
    let radius = m_z1.sqrt();
    let ball = |m: &mut DMatrix<f64>| -> bool {
        let mut active = false;
        for mut row in m.row_iter_mut() {
            let norm = row.norm();
            if norm > radius {
                row *= radius / norm;
                active = true;
            }
        }
        active
    };

    let mut x = z.clone();
    center_columns(&mut x);
    let mut trial = x.clone();
    if !ball(&mut trial) {
        return x;
    }

    let scale = z.amax().max(1.0) * z.nrows() as f64;
    let mut x = z.clone();
    let mut p = DMatrix::zeros(z.nrows(), z.ncols());
    let mut q = DMatrix::zeros(z.nrows(), z.ncols());
    for _ in 0..10_000 {
        let mut y = &x + &p;
        center_columns(&mut y);
        p = &x + &p - &y;
        let mut x_next = &y + &q;
        ball(&mut x_next);
        q = &y + &q - &x_next;
        let change = (&x_next - &x).amax();
        x = x_next;
        if column_sum_sup(&x) < 1e-13 * scale && change < 1e-14 * scale {
            break;
        }
    }
    x
}

#[derive(Debug, Clone, Serialize)]
pub struct PgdTrace {
    /// Log-likelihood at the start and after each accepted step.
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step_z: f64,
    pub step_alpha: f64,
    /// Number of step-size halvings.
    pub halvings: usize,
}

/// Projected gradient ascent on `L(Z, alpha)` with backtracking: a step
/// that lowers the likelihood is rejected and both step sizes are halved.
pub fn init_stage2_pgd(
    a: &CountTensor,
    z0: &LatentPositions,
    alpha0: &Baseline,
    bounds: &ModelBounds,
    step_z: f64,
    step_alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(LatentPositions, Baseline, PgdTrace)> {
    if z0.n() != a.n() || alpha0.n() != a.n() || alpha0.n_times() != a.n_times() {
        return Err(Error::shape(
            "init_stage2_pgd",
            format!("n={}, T={}", a.n(), a.n_times()),
            format!("Z {}x{}, alpha {}x{}", z0.n(), z0.k(), alpha0.n(), alpha0.n_times()),
        ));
    }
    if z0.matrix().iter().chain(alpha0.matrix().iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("PGD start must be finite".into()));
    }
    bounds.validate()?;
    let m_alpha = bounds.m_alpha;
    let clip_alpha = |m: DMatrix<f64>| m.map(|v| v.clamp(-m_alpha, m_alpha));

    let mut z = project_latent(z0.matrix(), bounds.m_z1);
    let mut alpha = clip_alpha(alpha0.matrix().clone());
    let mut ll = loglik_gram(a, &(&z * z.transpose()), &alpha)?;
    let mut trace = PgdTrace {
        loglik: vec![ll],
        iterations: 0,
        converged: false,
        step_z,
        step_alpha,
        halvings: 0,
    };
    let (mut eta_z, mut eta_alpha) = (step_z, step_alpha);

    for _ in 0..max_iters {
        let res = residual_sums(a, &(&z * z.transpose()), &alpha)?;
        let grad_z = z_gradient(&res.total, &z);
        let grad_alpha = res.alpha_score;
        let (z_next, alpha_next, ll_next) = loop {
            let z_try = project_latent(&(&z + &grad_z * eta_z), bounds.m_z1);
            let alpha_try = clip_alpha(&alpha + &grad_alpha * eta_alpha);
            let ll_try = loglik_gram(a, &(&z_try * z_try.transpose()), &alpha_try)?;
            if ll_try >= ll {
                break (z_try, alpha_try, ll_try);
            }
            eta_z *= 0.5;
            eta_alpha *= 0.5;
            trace.halvings += 1;
            if eta_z < 1e-12 && eta_alpha < 1e-12 {
                return Err(Error::NonConvergence(format!(
                    "PGD step sizes fell below 1e-12 after {} iterations; loglik trace tail {:?}",
                    trace.iterations,
                    &trace.loglik[trace.loglik.len().saturating_sub(5)..]
                )));
            }
        };
        let improvement = (ll_next - ll) / ll.abs().max(1.0);
        z = z_next;
        alpha = alpha_next;
        ll = ll_next;
        trace.loglik.push(ll);
        trace.iterations += 1;
        if improvement < tol {
            trace.converged = true;
            break;
        }
    }
    trace.step_z = eta_z;
    trace.step_alpha = eta_alpha;
    Ok((LatentPositions::new(z), Baseline::new(alpha), trace))
}

#[derive(Debug, Clone)]
pub struct InitResult {
    pub z: LatentPositions,
    pub alpha: Baseline,
    pub stage1: Stage1,
    pub bounds: ModelBounds,
    pub trace: PgdTrace,
}

/// Runs both stages with the defaults of `cfg`.
pub fn initialize(a: &CountTensor, k: usize, cfg: &InitConfig) -> Result<InitResult> {
    let (stage1, denoised) = init_stage1(a, k, cfg)?;
    let bounds = cfg.bounds.unwrap_or_else(|| bounds_from_stage1(&stage1));
    let max_op = denoised.iter().map(sym_op_norm).fold(0.0, f64::max);
    let step_alpha = cfg.pgd_step_alpha.unwrap_or(0.5 / max_op.max(f64::MIN_POSITIVE));
    let step_z = cfg.pgd_step_z.unwrap_or(step_alpha / a.n_times() as f64);
    let (z, alpha, trace) = init_stage2_pgd(
        a,
        &stage1.z,
        &stage1.alpha,
        &bounds,
        step_z,
        step_alpha,
        cfg.pgd_max_iters,
        cfg.pgd_tol,
    )?;
    Ok(InitResult {
        z,
        alpha,
        stage1,
        bounds,
        trace,
    })
}
