//! Nuclear-norm penalized maximum likelihood over `(G, alpha)`.
//!
//! On the PSD cone `|G|_* = trace(G)`, so the penalty is linear and the
//! proximal step reduces to a projection onto
//! `{G >= 0} ∩ {G 1 = 0} ∩ {|G_ij| <= m_z1}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, double_center, psd_project, sym_eigen_desc, symmetrize, CompensatedSum};
use crate::model::{intensity, loglik_gram, residual_sums, CountTensor, LatentPositions, ModelBounds, THETA_CLAMP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmleConfig {
    /// `lambda = lambda_mult * sqrt(nT) * log(nT)`.
    pub lambda_mult: f64,
    pub outer_max_iters: usize,
    /// Relative change of the penalized objective that ends the iteration.
    pub outer_tol: f64,
    pub dykstra_iters: usize,
    pub rank_eps: f64,
}

impl Default for PmleConfig {
    fn default() -> Self {
        Self {
            lambda_mult: 0.01,
            outer_max_iters: 2000,
            outer_tol: 1e-6,
            dykstra_iters: 200,
            rank_eps: 0.25,
        }
    }
}

impl PmleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mult > 0.0 && self.lambda_mult.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda_mult must be positive, got {}", self.lambda_mult)));
        }
        if !(self.rank_eps > 0.0 && self.rank_eps < 0.5) {
            return Err(Error::InvalidInput(format!("rank_eps must lie in (0, 1/2), got {}", self.rank_eps)));
        }
        if !(self.outer_tol > 0.0 && self.outer_tol < 1.0) {
            return Err(Error::InvalidInput(format!("outer_tol must lie in (0, 1), got {}", self.outer_tol)));
        }
        if self.outer_max_iters == 0 || self.dykstra_iters == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, n: usize, t_len: usize) -> f64 {
        let nt = (n * t_len) as f64;
        self.lambda_mult * nt.sqrt() * nt.ln()
    }
}

/// `sum_{i<=j} [A_ij theta_ij - exp(theta_ij)]` with `theta = alpha_i + alpha_j + G_ij`.
fn slice_objective(a_t: &DMatrix<f64>, g: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    let n = g.nrows();
    let mut acc = CompensatedSum::new();
    for j in 0..n {
        for i in 0..=j {
            let th = alpha[i] + alpha[j] + g[(i, j)];
            acc.add(a_t[(i, j)] * th - intensity(th));
        }
    }
    acc.value()
}

/// Gradient and negative Hessian of the per-slice objective in `alpha`.
fn slice_derivatives(a_t: &DMatrix<f64>, g: &DMatrix<f64>, alpha: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = g.nrows();
    let lambda = DMatrix::from_fn(n, n, |i, j| intensity(alpha[i] + alpha[j] + g[(i, j)]));
    let grad = DVector::from_fn(n, |i, _| {
        (a_t.row(i).sum() - lambda.row(i).sum()) + (a_t[(i, i)] - lambda[(i, i)])
    });
    let mut neg_hess = lambda.clone();
    for i in 0..n {
        neg_hess[(i, i)] += lambda.row(i).sum() + 2.0 * lambda[(i, i)];
    }
    (grad, neg_hess)
}

/// Largest gradient entry that is not blocked by an active bound.
fn projected_grad_sup(grad: &DVector<f64>, alpha: &DVector<f64>, bound: f64) -> f64 {
    grad.iter()
        .zip(alpha.iter())
        .filter(|(gr, a)| !((**a <= -bound && **gr < 0.0) || (**a >= bound && **gr > 0.0)))
        .fold(0.0, |m, (gr, _)| m.max(gr.abs()))
}

/// Damped projected Newton for one slice on the box `|alpha_i| <= bound`.
fn profile_slice(
    a_t: &DMatrix<f64>,
    g: &DMatrix<f64>,
    bound: f64,
    start: DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-8;
    let n = g.nrows();
    let mut alpha = start.map(|v| v.clamp(-bound, bound));
    let mut f = slice_objective(a_t, g, &alpha);
    let mut resid = f64::INFINITY;
    for _ in 0..100 {
        let (grad, neg_hess) = slice_derivatives(a_t, g, &alpha);
        resid = projected_grad_sup(&grad, &alpha, bound);
        if resid < TOL {
            return Ok(alpha);
        }
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((alpha[i] <= -bound && grad[i] < 0.0) || (alpha[i] >= bound && grad[i] > 0.0)))
            .collect();
        let h = neg_hess.select_rows(&free).select_columns(&free);
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let d_free = h
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("alpha Hessian at t={t}")))?
            .solve(&g_free);
        let mut dir = DVector::zeros(n);
        for (pos, &i) in free.iter().enumerate() {
            dir[i] = d_free[pos];
        }
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = (&alpha + &dir * step).map(|v| v.clamp(-bound, bound));
            let f_trial = slice_objective(a_t, g, &trial);
            let gain = grad.dot(&(&trial - &alpha));
            if f_trial >= f + 1e-4 * gain - 1e-14 * f.abs() {
                moved = f_trial != f || trial != alpha;
                alpha = trial;
                f = f_trial;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (grad, _) = slice_derivatives(a_t, g, &alpha);
    let final_resid = projected_grad_sup(&grad, &alpha, bound);
    if final_resid < TOL {
        return Ok(alpha);
    }
    Err(Error::NonConvergence(format!(
        "alpha profile at t={t} stopped with gradient sup-norm {:e} (previous {resid:e})",
        final_resid
    )))
}

/// Per-slice maximizer of the likelihood in `alpha` for fixed `G`, within
/// `|alpha_it| <= bound` (pass `f64::INFINITY` for no box). `warm` seeds
/// the Newton iterations.
pub fn alpha_profile(a: &CountTensor, g: &DMatrix<f64>, bound: f64, warm: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let (n, t_len) = (a.n(), a.n_times());
    if g.shape() != (n, n) {
        return Err(Error::shape("alpha_profile", format!("{n}x{n}"), format!("{:?}", g.shape())));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("G must be finite".into()));
    }
    if let Some(w) = warm {
        if w.shape() != (n, t_len) {
            return Err(Error::shape("alpha_profile warm start", format!("{n}x{t_len}"), format!("{:?}", w.shape())));
        }
    }
    let bound = bound.min(THETA_CLAMP);
    let columns: Vec<DVector<f64>> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let start = match warm {
                Some(w) => w.column(t).into_owned(),
                None => degree_start(a.slice(t), g),
            };
            profile_slice(a.slice(t), g, bound, start, t)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// Starting point from `exp(2 alpha_i) ~ (d_i + 1) / (n + 1)`, ignoring `G`.
fn degree_start(a_t: &DMatrix<f64>, g: &DMatrix<f64>) -> DVector<f64> {
    let n = g.nrows() as f64;
    let total: f64 = a_t.sum();
    let mean_pair = (total / (n * n)).max(1e-3);
    DVector::from_fn(g.nrows(), |i, _| {
        let d = a_t.row(i).sum() / n;
        0.5 * ((d.max(1e-3) / mean_pair.sqrt()).ln() + 0.5 * mean_pair.ln())
    })
}

/// Projection onto `{G >= 0, G 1 = 0}`: in a basis containing `1/sqrt(n)`
/// the centered PSD matrices are exactly the PSD ones supported on the
/// complement, so `psd(J G J)` is the projection.
fn project_psd_centered(g: &DMatrix<f64>) -> DMatrix<f64> {
    psd_project(&double_center(&symmetrize(g)))
}

fn clip_box(g: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    g.map(|v| v.clamp(-m, m))
}

/// Dykstra projection onto the PSD, centered, box-bounded matrices. The
/// PSD and centering constraints are handled jointly by an exact
/// projection; Dykstra alternates it with the box. Whatever box excess is
/// left when the iterations stop is removed by shrinking toward zero,
/// which keeps the other two constraints.
pub fn project_constraints(g: &DMatrix<f64>, m_z1: f64, dykstra_iters: usize) -> DMatrix<f64> {
    let first = project_psd_centered(g);
    if first.amax() <= m_z1 {
        return first;
    }
    let mut x = symmetrize(g);
    let mut p = DMatrix::zeros(g.nrows(), g.ncols());
    let mut q = DMatrix::zeros(g.nrows(), g.ncols());
    let mut y = first;
    for _ in 0..dykstra_iters.max(1) {
        y = project_psd_centered(&(&x + &p));
        p = &x + &p - &y;
        let x_next = clip_box(&(&y + &q), m_z1);
        q = &y + &q - &x_next;
        let change = (&x_next - &x).norm();
        x = x_next;
        if change < 1e-10 {
            break;
        }
    }
    let top = y.amax();
    if top > m_z1 {
        y *= m_z1 / top;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    /// `max(0, -lambda_min(G))`.
    pub psd: f64,
    /// `|G 1|_inf`.
    pub centering: f64,
    /// `max(0, max|G_ij| - m_z1)`.
    pub box_excess: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.psd.max(self.centering).max(self.box_excess)
    }
}

pub fn constraint_residuals(g: &DMatrix<f64>, m_z1: f64) -> ConstraintResiduals {
    let min_eig = symmetrize(g).symmetric_eigenvalues().min();
    let centering = g.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    ConstraintResiduals {
        psd: (-min_eig).max(0.0),
        centering,
        box_excess: (g.amax() - m_z1).max(0.0),
    }
}

/// Gradient of the log-likelihood in `G` under the Frobenius inner product
/// on symmetric matrices: `(S + diag S) / 2` with `S = sum_t (A_t - Lambda_t)`.
pub fn loglik_gradient_g(a: &CountTensor, g: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = residual_sums(a, g, alpha)?.total;
    let mut w = &s * 0.5;
    for i in 0..s.nrows() {
        w[(i, i)] = s[(i, i)];
    }
    Ok(w)
}

pub fn penalized_objective(a: &CountTensor, g: &DMatrix<f64>, alpha: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    Ok(loglik_gram(a, g, alpha)? - lambda * g.trace())
}

/// `|G - P(G + eta (grad - lambda I))|_F / eta` and `|grad|_F`.
pub fn kkt_residual(
    a: &CountTensor,
    g: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    lambda: f64,
    eta: f64,
    m_z1: f64,
    dykstra_iters: usize,
) -> Result<(f64, f64)> {
    let grad = loglik_gradient_g(a, g, alpha)?;
    let n = g.nrows();
    let moved = project_constraints(&(g + (&grad - DMatrix::<f64>::identity(n, n) * lambda) * eta), m_z1, dykstra_iters);
    Ok(((g - moved).norm() / eta, grad.norm()))
}

#[derive(Debug, Clone, Serialize)]
pub struct PmleTrace {
    pub lambda: f64,
    /// Penalized objective at the start and after every outer iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
    pub kkt_residual: f64,
    pub gradient_norm: f64,
    pub m_z1: f64,
}

#[derive(Debug, Clone)]
pub struct PmleFit {
    pub g: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub trace: PmleTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmleSoundness {
    /// Largest drop of the penalized objective between outer iterations.
    pub max_decrease: f64,
    pub monotone: bool,
    pub kkt_ok: bool,
    pub constraints: ConstraintResiduals,
}

impl PmleSoundness {
    pub fn passed(&self) -> bool {
        self.monotone && self.kkt_ok && self.constraints.max() < 1e-7
    }
}

impl PmleFit {
    /// Monotonicity (1e-9 relative slack), KKT proxy against
    /// `10 * outer_tol * |grad|_F`, and constraint residuals of `G`.
    pub fn soundness(&self, outer_tol: f64) -> PmleSoundness {
        let obj = &self.trace.objective;
        let mut max_decrease = 0.0_f64;
        let mut monotone = true;
        for w in obj.windows(2) {
            let drop = w[0] - w[1];
            max_decrease = max_decrease.max(drop);
            if drop > 1e-9 * w[0].abs().max(1.0) {
                monotone = false;
            }
        }
        PmleSoundness {
            max_decrease,
            monotone,
            kkt_ok: self.trace.kkt_residual < 10.0 * outer_tol * self.trace.gradient_norm,
            constraints: constraint_residuals(&self.g, self.trace.m_z1),
        }
    }
}

/// Alternates exact per-slice profiling of `alpha` with a backtracked
/// projected gradient step in `G`. The run starts at `start` (projected)
/// or at zero, and `bounds` supplies the box for `G` and `alpha`.
pub fn penalized_mle(a: &CountTensor, cfg: &PmleConfig, bounds: &ModelBounds, start: Option<&DMatrix<f64>>) -> Result<PmleFit> {
    cfg.validate()?;
    bounds.validate()?;
    let (n, t_len) = (a.n(), a.n_times());
    let lambda = cfg.lambda(n, t_len);
    let m_z1 = bounds.m_z1;
    let eye = DMatrix::<f64>::identity(n, n);

    let mut g = match start {
        Some(s) if s.shape() == (n, n) => project_constraints(s, m_z1, cfg.dykstra_iters),
        Some(s) => return Err(Error::shape("penalized_mle start", format!("{n}x{n}"), format!("{:?}", s.shape()))),
        None => DMatrix::zeros(n, n),
    };
    let mut alpha = alpha_profile(a, &g, bounds.m_alpha, None)?;
    let mut obj = penalized_objective(a, &g, &alpha, lambda)?;
    let mut trace = PmleTrace {
        lambda,
        objective: vec![obj],
        iterations: 0,
        converged: false,
        final_step: 0.0,
        kkt_residual: f64::NAN,
        gradient_norm: f64::NAN,
        m_z1,
    };

    let lipschitz = {
        let res = residual_sums(a, &g, &alpha)?;
        let lam_total = DMatrix::from_fn(n, n, |i, j| {
            (0..t_len).map(|t| a.slice(t)[(i, j)]).sum::<f64>() - res.total[(i, j)]
        });
        lam_total.max().max(1.0)
    };
    let mut eta = 1.0 / lipschitz;

    for _ in 0..cfg.outer_max_iters {
        let grad = loglik_gradient_g(a, &g, &alpha)?;
        let ll = obj + lambda * g.trace();
        let direction = &grad - &eye * lambda;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = project_constraints(&(&g + &direction * eta), m_z1, cfg.dykstra_iters);
            let diff = &cand - &g;
            let ll_cand = loglik_gram(a, &cand, &alpha)?;
            let model = ll + grad.dot(&diff) - diff.norm_squared() / (2.0 * eta);
            if ll_cand >= model - 1e-12 * ll.abs() {
                accepted = Some(cand);
                break;
            }
            eta *= 0.5;
        }
        let cand = accepted.ok_or_else(|| {
            Error::NonConvergence(format!(
                "G step backtracking exhausted after {} iterations; objective trace tail {:?}",
                trace.iterations,
                &trace.objective[trace.objective.len().saturating_sub(5)..]
            ))
        })?;
        let alpha_cand = alpha_profile(a, &cand, bounds.m_alpha, Some(&alpha))?;
        let obj_cand = penalized_objective(a, &cand, &alpha_cand, lambda)?;
        if obj_cand < obj - 1e-9 * obj.abs().max(1.0) {
            return Err(Error::NonConvergence(format!(
                "penalized objective decreased from {obj} to {obj_cand} at iteration {}",
                trace.iterations + 1
            )));
        }
        let rel = (obj_cand - obj).abs() / obj.abs().max(1.0);
        g = cand;
        alpha = alpha_cand;
        obj = obj_cand;
        trace.objective.push(obj);
        trace.iterations += 1;
        if rel < cfg.outer_tol {
            let (kkt, gnorm) = kkt_residual(a, &g, &alpha, lambda, eta, m_z1, cfg.dykstra_iters)?;
            trace.kkt_residual = kkt;
            trace.gradient_norm = gnorm;
            if kkt < 10.0 * cfg.outer_tol * gnorm {
                trace.converged = true;
                break;
            }
        }
        eta *= 1.25;
    }
    if !trace.converged {
        let (kkt, gnorm) = kkt_residual(a, &g, &alpha, lambda, eta, m_z1, cfg.dykstra_iters)?;
        trace.kkt_residual = kkt;
        trace.gradient_norm = gnorm;
        log::warn!(
            "penalized MLE stopped after {} iterations without meeting the tolerance (KKT residual {kkt:e})",
            trace.iterations
        );
    }
    trace.final_step = eta;
    Ok(PmleFit { g, alpha, trace })
}

/// `#{eigenvalues of G > n^(1 - rank_eps)}`.
pub fn rank_select(g: &DMatrix<f64>, rank_eps: f64) -> usize {
    let n = g.nrows() as f64;
    let threshold = n.powf(1.0 - rank_eps);
    symmetrize(g).symmetric_eigenvalues().iter().filter(|v| **v > threshold).count()
}

/// `U_k D_k^{1/2}` from the top `k` eigenpairs of `G`, re-centered.
pub fn z_from_g(g: &DMatrix<f64>, k: usize) -> Result<LatentPositions> {
    let n = g.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let eig = sym_eigen_desc(g);
    let floor = 1e-12 * eig.values[0].abs().max(f64::MIN_POSITIVE);
    if !(eig.values[k - 1] > floor) {
        return Err(Error::RankDeficient(format!(
            "eigenvalue {} of G is {:e}; cannot extract {k} latent dimensions",
            k,
            eig.values[k - 1]
        )));
    }
    let mut z = DMatrix::zeros(n, k);
    for c in 0..k {
        z.set_column(c, &(eig.vectors.column(c) * eig.values[c].sqrt()));
    }
    center_columns(&mut z);
    Ok(LatentPositions::new(z))
}
