//! Parameter types of the Poisson latent space model and the likelihood,
//! score and information computations shared by both estimators.
//!
//! Conventions used throughout the crate:
//!
//! * the log-likelihood sums over `1 <= i <= j <= n`, so self-pairs are
//!   included with `Theta_ii = 2 alpha_i + |z_i|^2`;
//! * `Z` is vectorized row by row, `(z_1, ..., z_n)`, index `i * k + a`;
//! * `alpha` is vectorized time slice by time slice, index `t * n + i`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_sum_sup, sym_eigen_desc, CompensatedSum};

/// Natural parameters above this value are clamped before exponentiation.
pub const THETA_CLAMP: f64 = 40.0;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a natural parameter has been clamped at [`THETA_CLAMP`]
/// since process start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[inline]
pub(crate) fn intensity(theta: f64) -> f64 {
    if theta > THETA_CLAMP {
        if CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed) == 0 {
            log::warn!("natural parameter {theta} clamped at {THETA_CLAMP}");
        }
        THETA_CLAMP.exp()
    } else {
        theta.exp()
    }
}

/// `T` symmetric `n x n` matrices of interaction counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTensor {
    n: usize,
    slices: Vec<DMatrix<f64>>,
}

impl CountTensor {
    /// Builds a tensor of integer counts, validating symmetry, sign and
    /// integrality of every entry.
    pub fn new(slices: Vec<DMatrix<f64>>) -> Result<Self> {
        let tensor = Self::from_real(slices)?;
        for (t, a) in tensor.slices.iter().enumerate() {
            if let Some((idx, v)) = a.iter().enumerate().find(|(_, v)| v.fract() != 0.0) {
                return Err(Error::InvalidInput(format!(
                    "slice {t} entry {} is not an integer count ({v})",
                    idx
                )));
            }
        }
        Ok(tensor)
    }

    /// Like [`CountTensor::new`] but permits fractional "counts"; useful for
    /// plugging expected intensities into the likelihood.
    pub fn from_real(slices: Vec<DMatrix<f64>>) -> Result<Self> {
        let t_len = slices.len();
        if t_len == 0 {
            return Err(Error::InvalidInput("count tensor needs T >= 1".into()));
        }
        let n = slices[0].nrows();
        if n < 2 {
            return Err(Error::InvalidInput("count tensor needs n >= 2".into()));
        }
        for (t, a) in slices.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::shape("CountTensor slice", format!("{n}x{n}"), format!("{:?} at t={t}", a.shape())));
            }
            for j in 0..n {
                for i in 0..n {
                    let v = a[(i, j)];
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "slice {t} entry ({i},{j}) = {v} is not a nonnegative count"
                        )));
                    }
                    if v != a[(j, i)] {
                        return Err(Error::InvalidInput(format!(
                            "slice {t} is not symmetric at ({i},{j})"
                        )));
                    }
                }
            }
        }
        Ok(Self { n, slices })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_times(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, t: usize) -> &DMatrix<f64> {
        &self.slices[t]
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<DMatrix<f64>> {
        self.slices
    }

    /// Sum of the upper triangle including the diagonal over all slices,
    /// i.e. the number of recorded events.
    pub fn total_events(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for a in &self.slices {
            for j in 0..self.n {
                for i in 0..=j {
                    acc.add(a[(i, j)]);
                }
            }
        }
        acc.value()
    }
}

/// Latent positions `Z` (`n x k`); rows are node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPositions {
    z: DMatrix<f64>,
}

impl LatentPositions {
    pub fn new(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    /// Wraps `z` after subtracting its column means.
    pub fn centered(mut z: DMatrix<f64>) -> Self {
        crate::linalg::center_columns(&mut z);
        Self { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.z
    }

    /// `|1_n^T Z|_inf`.
    pub fn centering_residual(&self) -> f64 {
        column_sum_sup(&self.z)
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        self.z
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0, f64::max)
    }

    /// `Z Z^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }

    pub fn to_vec(&self) -> DVector<f64> {
        crate::linalg::vec_rows(&self.z)
    }

    pub fn from_vec(v: &DVector<f64>, n: usize, k: usize) -> Result<Self> {
        if v.len() != n * k {
            return Err(Error::shape("LatentPositions::from_vec", n * k, v.len()));
        }
        Ok(Self::new(crate::linalg::unvec_rows(v, n, k)))
    }
}

/// Node-by-time baseline heterogeneity `alpha` (`n x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    alpha: DMatrix<f64>,
}

impl Baseline {
    pub fn new(alpha: DMatrix<f64>) -> Self {
        Self { alpha }
    }

    pub fn zeros(n: usize, t: usize) -> Self {
        Self::new(DMatrix::zeros(n, t))
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.alpha
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.alpha
    }

    pub fn max_abs(&self) -> f64 {
        self.alpha.amax()
    }

    /// Stacks the columns `alpha_1, ..., alpha_T`.
    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.alpha.as_slice())
    }

    pub fn from_vec(v: &DVector<f64>, n: usize, t: usize) -> Result<Self> {
        if v.len() != n * t {
            return Err(Error::shape("Baseline::from_vec", n * t, v.len()));
        }
        Ok(Self::new(DMatrix::from_column_slice(n, t, v.as_slice())))
    }
}

/// Bounds on the true parameters assumed by the constrained procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    /// Bound on `|z_i|^2` (also the entrywise box for `G`).
    pub m_z1: f64,
    /// Bound on `|alpha_it|`.
    pub m_alpha: f64,
    /// Margin with `Theta <= -m_theta1`; informational only.
    #[serde(default)]
    pub m_theta1: f64,
}

impl ModelBounds {
    pub fn new(m_z1: f64, m_alpha: f64, m_theta1: f64) -> Result<Self> {
        let b = Self {
            m_z1,
            m_alpha,
            m_theta1,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_z1 > 0.0 && self.m_z1.is_finite()) {
            return Err(Error::InvalidInput(format!("m_z1 must be > 0, got {}", self.m_z1)));
        }
        if !(self.m_alpha > 0.0 && self.m_alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("m_alpha must be > 0, got {}", self.m_alpha)));
        }
        if !(self.m_theta1 >= 0.0) {
            return Err(Error::InvalidInput(format!("m_theta1 must be >= 0, got {}", self.m_theta1)));
        }
        Ok(())
    }

    /// Smallest intensity admissible under the bounds, `exp(-(m_z1 + 2 m_alpha))`.
    pub fn min_intensity(&self) -> f64 {
        (-(self.m_z1 + 2.0 * self.m_alpha)).exp()
    }
}

/// `Theta_t = alpha_t 1^T + 1 alpha_t^T + Z Z^T` for every `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub theta: Vec<DMatrix<f64>>,
}

/// Which second-order object the efficient system is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InfoMode {
    /// Expected (Fisher) information.
    #[default]
    Fisher,
    /// Observed information, `-H_eff`.
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    /// Gradient with respect to the row-major vectorization of `Z`.
    pub z: DVector<f64>,
    /// Gradient with respect to `(alpha_1, ..., alpha_T)`.
    pub alpha: DVector<f64>,
}

/// Expected information blocks. The `alpha` blocks are stored per time
/// slice since cross-time blocks vanish identically.
#[derive(Debug, Clone)]
pub struct FisherBlocks {
    /// `nk x nk`.
    pub zz: DMatrix<f64>,
    /// Per-time `nk x n` blocks of `I_{Z alpha}`.
    pub z_alpha: Vec<DMatrix<f64>>,
    /// Per-time `n x n` diagonal blocks of `I_{alpha alpha}`.
    pub alpha_alpha: Vec<DMatrix<f64>>,
}

impl FisherBlocks {
    /// Dense `nk x nT` cross block.
    pub fn z_alpha_dense(&self) -> DMatrix<f64> {
        let rows = self.zz.nrows();
        let n = self.alpha_alpha.first().map_or(0, |b| b.nrows());
        let mut out = DMatrix::zeros(rows, n * self.z_alpha.len());
        for (t, b) in self.z_alpha.iter().enumerate() {
            out.columns_mut(t * n, n).copy_from(b);
        }
        out
    }

    /// Dense block-diagonal `nT x nT` matrix.
    pub fn alpha_alpha_dense(&self) -> DMatrix<f64> {
        let n = self.alpha_alpha.first().map_or(0, |b| b.nrows());
        let len = n * self.alpha_alpha.len();
        let mut out = DMatrix::zeros(len, len);
        for (t, b) in self.alpha_alpha.iter().enumerate() {
            out.view_mut((t * n, t * n), (n, n)).copy_from(b);
        }
        out
    }
}

/// Efficient score and (Fisher or observed) efficient information for `Z`.
#[derive(Debug, Clone)]
pub struct EfficientSystem {
    pub s_eff: DVector<f64>,
    pub i_eff: DMatrix<f64>,
    pub mode: InfoMode,
    /// Number of alpha blocks where the stabilizing ridge moved the solve by
    /// more than `1e-6` relative.
    pub ridge_warnings: usize,
}

fn check_shapes(n: usize, t_len: Option<usize>, z: &LatentPositions, alpha: &Baseline) -> Result<()> {
    if z.n() != n {
        return Err(Error::shape("latent positions rows", n, z.n()));
    }
    if alpha.n() != n {
        return Err(Error::shape("baseline rows", n, alpha.n()));
    }
    if let Some(t_len) = t_len {
        if alpha.n_times() != t_len {
            return Err(Error::shape("baseline columns", t_len, alpha.n_times()));
        }
    }
    Ok(())
}

/// `Theta_t,ij = alpha_it + alpha_jt + <z_i, z_j>`.
pub fn natural_params(z: &LatentPositions, alpha: &Baseline) -> Result<NaturalParams> {
    check_shapes(alpha.n(), None, z, alpha)?;
    theta_from_gram(&z.gram(), alpha.matrix()).map(|theta| NaturalParams { theta })
}

pub(crate) fn theta_slice(g: &DMatrix<f64>, alpha: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let a = alpha.column(t);
    let theta = DMatrix::from_fn(n, n, |i, j| a[i] + a[j] + g[(i, j)]);
    if let Some(idx) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow {
            t,
            i: idx % n,
            j: idx / n,
        });
    }
    Ok(theta)
}

pub(crate) fn theta_from_gram(g: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    (0..alpha.ncols()).map(|t| theta_slice(g, alpha, t)).collect()
}

/// Likelihood contribution of one slice, summing over `i <= j`.
pub(crate) fn slice_loglik(a: &DMatrix<f64>, g: &DMatrix<f64>, alpha: &DMatrix<f64>, t: usize) -> Result<f64> {
    let n = g.nrows();
    let at = alpha.column(t);
    let mut acc = CompensatedSum::new();
    for j in 0..n {
        for i in 0..=j {
            let theta = at[i] + at[j] + g[(i, j)];
            if !theta.is_finite() {
                return Err(Error::NumericOverflow { t, i, j });
            }
            acc.add(a[(i, j)] * theta - intensity(theta));
        }
    }
    Ok(acc.value())
}

/// Log-likelihood parameterized by the interaction matrix `G`.
pub(crate) fn loglik_gram(a: &CountTensor, g: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<f64> {
    let parts: Vec<f64> = (0..a.n_times())
        .into_par_iter()
        .map(|t| slice_loglik(a.slice(t), g, alpha, t))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().collect::<CompensatedSum>().value())
}

/// `sum_t sum_{i<=j} [A_t,ij Theta_t,ij - exp(Theta_t,ij)]`.
pub fn log_likelihood(a: &CountTensor, z: &LatentPositions, alpha: &Baseline) -> Result<f64> {
    check_shapes(a.n(), Some(a.n_times()), z, alpha)?;
    loglik_gram(a, &z.gram(), alpha.matrix())
}

/// Per-slice residuals `R_t = A_t - exp(Theta_t)` reduced to what the
/// gradients need.
pub(crate) struct ResidualSums {
    /// `sum_t R_t`.
    pub total: DMatrix<f64>,
    /// Column `t` holds the alpha-score of slice `t`: `R_t 1 + diag(R_t)`.
    pub alpha_score: DMatrix<f64>,
}

pub(crate) fn residual_sums(a: &CountTensor, g: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<ResidualSums> {
    let n = a.n();
    let per_t: Vec<(DMatrix<f64>, DVector<f64>)> = (0..a.n_times())
        .into_par_iter()
        .map(|t| {
            let theta = theta_slice(g, alpha, t)?;
            let r = a.slice(t) - theta.map(intensity);
            let s = DVector::from_fn(n, |i, _| r.row(i).sum() + r[(i, i)]);
            Ok((r, s))
        })
        .collect::<Result<_>>()?;
    let mut total = DMatrix::zeros(n, n);
    let mut alpha_score = DMatrix::zeros(n, a.n_times());
    for (t, (r, s)) in per_t.into_iter().enumerate() {
        total += r;
        alpha_score.set_column(t, &s);
    }
    Ok(ResidualSums { total, alpha_score })
}

/// Gradient of `sum_{i<=j} f(<z_i, z_j>)` with respect to `Z`, given
/// `S_ij = f'` at each pair: row `i` is `sum_j S_ij z_j + S_ii z_i`.
pub(crate) fn z_gradient(total: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut grad = total * z;
    for i in 0..z.nrows() {
        let d = total[(i, i)];
        for a in 0..z.ncols() {
            grad[(i, a)] += d * z[(i, a)];
        }
    }
    grad
}

/// Analytic gradient of [`log_likelihood`].
pub fn score(a: &CountTensor, z: &LatentPositions, alpha: &Baseline) -> Result<Score> {
    check_shapes(a.n(), Some(a.n_times()), z, alpha)?;
    let res = residual_sums(a, &z.gram(), alpha.matrix())?;
    let gz = z_gradient(&res.total, z.matrix());
    Ok(Score {
        z: crate::linalg::vec_rows(&gz),
        alpha: DVector::from_column_slice(res.alpha_score.as_slice()),
    })
}

/// `I_{alpha_t alpha_t} = Lambda + diag(Lambda 1 + 2 diag(Lambda))`.
fn alpha_block(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lambda.nrows();
    let mut b = lambda.clone();
    for i in 0..n {
        b[(i, i)] += lambda.row(i).sum() + 2.0 * lambda[(i, i)];
    }
    b
}

/// `I_{Z alpha_t}` (`nk x n`): entry `[(i,a), j] = Lambda_ij z_ja` for
/// `j != i`, and `(Lambda Z)_ia + 3 Lambda_ii z_ia` on the diagonal block.
fn z_alpha_block(lambda: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let lz = lambda * z;
    let mut b = DMatrix::zeros(n * k, n);
    for j in 0..n {
        for i in 0..n {
            let l = lambda[(i, j)];
            for a in 0..k {
                b[(i * k + a, j)] = l * z[(j, a)];
            }
        }
    }
    for i in 0..n {
        for a in 0..k {
            b[(i * k + a, i)] = lz[(i, a)] + 3.0 * lambda[(i, i)] * z[(i, a)];
        }
    }
    b
}

/// `I_ZZ` from the time-summed intensities `W = sum_t Lambda_t`.
fn zz_block(w: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let mut out = DMatrix::zeros(n * k, n * k);
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            if i != j {
                for a in 0..k {
                    for b in 0..k {
                        out[(i * k + a, j * k + b)] = wij * z[(j, a)] * z[(i, b)];
                    }
                }
            }
        }
        // sum_l W_il z_l z_l^T + 3 W_ii z_i z_i^T
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for l in 0..n {
                    s += w[(i, l)] * z[(l, a)] * z[(l, b)];
                }
                s += 3.0 * w[(i, i)] * z[(i, a)] * z[(i, b)];
                out[(i * k + a, i * k + b)] = s;
            }
        }
    }
    out
}

/// Closed-form expected information blocks.
pub fn fisher_blocks(z: &LatentPositions, alpha: &Baseline) -> Result<FisherBlocks> {
    check_shapes(z.n(), None, z, alpha)?;
    let g = z.gram();
    let zm = z.matrix();
    let per_t: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..alpha.n_times())
        .into_par_iter()
        .map(|t| {
            let lambda = theta_slice(&g, alpha.matrix(), t)?.map(intensity);
            let aa = alpha_block(&lambda);
            let za = z_alpha_block(&lambda, zm);
            Ok((lambda, za, aa))
        })
        .collect::<Result<_>>()?;
    let n = z.n();
    let mut w = DMatrix::zeros(n, n);
    let mut z_alpha = Vec::with_capacity(per_t.len());
    let mut alpha_alpha = Vec::with_capacity(per_t.len());
    for (lambda, za, aa) in per_t {
        w += lambda;
        z_alpha.push(za);
        alpha_alpha.push(aa);
    }
    Ok(FisherBlocks {
        zz: zz_block(&w, zm),
        z_alpha,
        alpha_alpha,
    })
}

/// Solves `(B + ridge I) X = rhs` with one step of iterative refinement
/// against the unridged `B`. Returns the solution and whether the ridge
/// moved it by more than `1e-6` relative.
fn ridged_solve(block: &DMatrix<f64>, rhs: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, bool)> {
    let n = block.nrows();
    let ridge = 1e-10 * block.trace() / n as f64;
    let mut shifted = block.clone();
    for i in 0..n {
        shifted[(i, i)] += ridge;
    }
    let chol = match shifted.cholesky() {
        Some(c) => c,
        None => {
            let min_eigenvalue = sym_eigen_desc(block).values.min();
            return Err(Error::Conditioning {
                block: format!("alpha-alpha at t={t}"),
                min_eigenvalue,
            });
        }
    };
    let mut x = chol.solve(rhs);
    let resid = rhs - block * &x;
    let delta = chol.solve(&resid);
    let moved = delta.norm() > 1e-6 * x.norm().max(f64::MIN_POSITIVE);
    x += delta;
    Ok((x, moved))
}

/// Efficient score and efficient information for `Z`, profiling out the
/// baseline through per-time `n x n` solves.
pub fn efficient_system(a: &CountTensor, z: &LatentPositions, alpha: &Baseline, mode: InfoMode) -> Result<EfficientSystem> {
    check_shapes(a.n(), Some(a.n_times()), z, alpha)?;
    let (n, k) = (z.n(), z.k());
    let nk = n * k;
    let g = z.gram();
    let zm = z.matrix();
    let t_len = a.n_times();

    struct SliceTerms {
        lambda: DMatrix<f64>,
        resid: DMatrix<f64>,
        correction: DMatrix<f64>,
        score_correction: DVector<f64>,
        moved: bool,
    }

    let slice_terms = |t: usize| -> Result<SliceTerms> {
        let lambda = theta_slice(&g, alpha.matrix(), t)?.map(intensity);
        let resid = a.slice(t) - &lambda;
        let s_alpha = DVector::from_fn(n, |i, _| resid.row(i).sum() + resid[(i, i)]);
        let aa = alpha_block(&lambda);
        let za = z_alpha_block(&lambda, zm);
        let mut rhs = DMatrix::zeros(n, nk + 1);
        rhs.columns_mut(0, nk).copy_from(&za.transpose());
        rhs.set_column(nk, &s_alpha);
        let (x, moved) = ridged_solve(&aa, &rhs, t)?;
        let prod = &za * x;
        Ok(SliceTerms {
            lambda,
            resid,
            correction: prod.columns(0, nk).into_owned(),
            score_correction: prod.column(nk).into_owned(),
            moved,
        })
    };

    let mut w = DMatrix::zeros(n, n);
    let mut resid_total = DMatrix::zeros(n, n);
    let mut correction = DMatrix::zeros(nk, nk);
    let mut score_correction = DVector::zeros(nk);
    let mut ridge_warnings = 0;
    let chunk = rayon::current_num_threads().max(1);
    let times: Vec<usize> = (0..t_len).collect();
    for ts in times.chunks(chunk) {
        let terms: Vec<SliceTerms> = ts.par_iter().map(|&t| slice_terms(t)).collect::<Result<_>>()?;
        for term in terms {
            w += &term.lambda;
            resid_total += &term.resid;
            correction += &term.correction;
            score_correction += &term.score_correction;
            ridge_warnings += usize::from(term.moved);
        }
    }
    if ridge_warnings > 0 {
        log::warn!("ridge changed {ridge_warnings} alpha-block solves by more than 1e-6 relative");
    }

    let score_z = crate::linalg::vec_rows(&z_gradient(&resid_total, zm));
    let s_eff = score_z - score_correction;
    let mut i_eff = zz_block(&w, zm) - correction;
    if mode == InfoMode::Observed {
        // -H_ZZ = I_ZZ - sum_c R_c d^2 Theta_c
        for i in 0..n {
            for j in 0..n {
                let s = if i == j { 2.0 * resid_total[(i, i)] } else { resid_total[(i, j)] };
                for c in 0..k {
                    i_eff[(i * k + c, j * k + c)] -= s;
                }
            }
        }
    }
    let i_eff = crate::linalg::symmetrize(&i_eff);
    Ok(EfficientSystem {
        s_eff,
        i_eff,
        mode,
        ridge_warnings,
    })
}
