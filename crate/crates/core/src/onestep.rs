//! One-step semiparametric update of an initial latent estimate.
//!
//! The efficient information for `Z` is singular: translations `1 a^T` and
//! infinitesimal rotations `Z S` (with `S` skew) leave the likelihood
//! unchanged once the baseline is profiled out. The update is therefore
//! solved on the orthogonal complement of those directions,
//! `Z_v + U (U^T I_eff U)^{-1} U^T S_eff`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal_basis, sym_eigen_desc, unvec_rows};
use crate::model::{efficient_system, Baseline, CountTensor, EfficientSystem, InfoMode, LatentPositions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisMethod {
    #[default]
    AnalyticComplement,
    EigenThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneStepConfig {
    pub mode: InfoMode,
    pub basis_method: BasisMethod,
    /// Relative eigenvalue cut for `BasisMethod::EigenThreshold`.
    pub eigen_tol: f64,
    /// Number of updates; 1 is the estimator proper.
    pub steps: usize,
}

impl Default for OneStepConfig {
    fn default() -> Self {
        Self {
            mode: InfoMode::Fisher,
            basis_method: BasisMethod::AnalyticComplement,
            eigen_tol: 1e-8,
            steps: 1,
        }
    }
}

impl OneStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eigen_tol > 0.0 && self.eigen_tol < 1e-3) {
            return Err(Error::InvalidInput(format!("eigen_tol must lie in (0, 1e-3), got {}", self.eigen_tol)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// `k(k+1)/2`, the dimension of the unidentifiable directions.
pub fn null_dim(k: usize) -> usize {
    k * (k + 1) / 2
}

fn raw_null_directions(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let mut dirs = DMatrix::zeros(n * k, null_dim(k));
    for c in 0..k {
        for i in 0..n {
            dirs[(i * k + c, c)] = 1.0;
        }
    }
    let mut col = k;
    for a in 0..k {
        for b in a + 1..k {
            // Z (E_ab - E_ba): column b gets z_a, column a gets -z_b
            for i in 0..n {
                dirs[(i * k + b, col)] = z[(i, a)];
                dirs[(i * k + a, col)] = -z[(i, b)];
            }
            col += 1;
        }
    }
    dirs
}

/// Orthonormal basis of the translation and rotation directions at `Z`.
pub fn null_space_basis(z: &LatentPositions) -> Result<DMatrix<f64>> {
    let zm = z.matrix();
    let sv = zm.singular_values();
    let smax = sv.max();
    if !(smax > 0.0) || sv.min() <= 1e-10 * smax {
        return Err(Error::RankDeficient(format!(
            "Z must have full column rank; singular values {:?}",
            sv.as_slice()
        )));
    }
    let dirs = raw_null_directions(zm);
    let qr = dirs.clone().qr();
    let r = qr.r();
    let diag_max = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..r.ncols()).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(Error::RankDeficient("translation and rotation directions are dependent".into()));
    }
    Ok(qr.q())
}

/// Orthonormal basis `U` of the horizontal space, `nk - k(k+1)/2` columns.
pub fn effective_basis(z: &LatentPositions, i_eff: Option<&DMatrix<f64>>, cfg: &OneStepConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let (n, k) = (z.n(), z.k());
    let nk = n * k;
    let m = null_dim(k);
    if nk <= m {
        return Err(Error::InvalidInput(format!("no horizontal directions for n={n}, k={k}")));
    }
    match cfg.basis_method {
        BasisMethod::AnalyticComplement => {
            let null = null_space_basis(z)?;
            let (q, _) = complete_orthonormal_basis(&null);
            Ok(q.columns(m, nk - m).into_owned())
        }
        BasisMethod::EigenThreshold => {
            let i_eff = i_eff.ok_or_else(|| Error::InvalidInput("eigen_threshold basis needs the efficient information".into()))?;
            if i_eff.shape() != (nk, nk) {
                return Err(Error::shape("effective_basis", format!("{nk}x{nk}"), format!("{:?}", i_eff.shape())));
            }
            let eig = sym_eigen_desc(i_eff);
            let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let cut = cfg.eigen_tol * scale;
            let ambiguous = eig
                .values
                .iter()
                .any(|v| v.abs() > 0.1 * cut && v.abs() <= 10.0 * cut);
            let keep: Vec<usize> = (0..nk).filter(|&i| eig.values[i].abs() > cut).collect();
            if ambiguous || keep.len() != nk - m {
                let mut mags: Vec<f64> = eig.values.iter().map(|v| v.abs() / scale).collect();
                mags.sort_by(|a, b| a.total_cmp(b));
                return Err(Error::AmbiguousRank(format!(
                    "kept {} of {} eigenvalues (expected {}); smallest relative magnitudes {:?}",
                    keep.len(),
                    nk,
                    nk - m,
                    &mags[..(m + 3).min(nk)]
                )));
            }
            Ok(eig.vectors.select_columns(&keep))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OneStepDiagnostics {
    pub mode: InfoMode,
    pub basis_method: BasisMethod,
    /// Eigenvalues of `U^T I_eff U` for the last update, descending.
    pub spectrum: Vec<f64>,
    /// Frobenius norm of each update.
    pub update_norms: Vec<f64>,
    pub ridge_warnings: usize,
}

/// Projected Newton direction `U (U^T I U)^{-1} U^T s` as an `n x k` matrix,
/// together with the spectrum of `U^T I U`.
pub fn horizontal_update(sys: &EfficientSystem, basis: &DMatrix<f64>, n: usize, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let reduced = basis.transpose() * &sys.i_eff * basis;
    let reduced = crate::linalg::symmetrize(&reduced);
    let spectrum: Vec<f64> = sym_eigen_desc(&reduced).values.iter().copied().collect();
    let chol = reduced.clone().cholesky().ok_or_else(|| Error::Conditioning {
        block: format!("U^T I_eff U ({:?} mode)", sys.mode),
        min_eigenvalue: spectrum.last().copied().unwrap_or(f64::NAN),
    })?;
    let rhs: DVector<f64> = basis.transpose() * &sys.s_eff;
    let step = basis * chol.solve(&rhs);
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("one-step update is not finite".into()));
    }
    Ok((unvec_rows(&step, n, k), spectrum))
}

pub fn one_step(
    a: &CountTensor,
    z_init: &LatentPositions,
    alpha_init: &Baseline,
    cfg: &OneStepConfig,
) -> Result<(LatentPositions, OneStepDiagnostics)> {
    cfg.validate()?;
    let (n, k) = (z_init.n(), z_init.k());
    let scale = z_init.matrix().amax().max(1.0) * n as f64;
    if z_init.centering_residual() > 1e-10 * scale {
        return Err(Error::InvalidInput(format!(
            "initial Z is not centered (|1^T Z|_inf = {:e})",
            z_init.centering_residual()
        )));
    }
    let mut diag = OneStepDiagnostics {
        mode: cfg.mode,
        basis_method: cfg.basis_method,
        spectrum: Vec::new(),
        update_norms: Vec::new(),
        ridge_warnings: 0,
    };
    let mut z = z_init.matrix().clone();
    for _ in 0..cfg.steps {
        let current = LatentPositions::new(z.clone());
        let sys = efficient_system(a, &current, alpha_init, cfg.mode)?;
        diag.ridge_warnings += sys.ridge_warnings;
        let basis = effective_basis(&current, Some(&sys.i_eff), cfg)?;
        let (delta, spectrum) = horizontal_update(&sys, &basis, n, k)?;
        diag.update_norms.push(delta.norm());
        diag.spectrum = spectrum;
        z += delta;
    }
    Ok((LatentPositions::new(z), diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::center_columns;

    fn generic_z(n: usize, k: usize) -> LatentPositions {
        let mut z = DMatrix::from_fn(n, k, |i, j| ((i * 7 + j * 5 + i * j) % 11) as f64 / 5.0 - 1.0);
        center_columns(&mut z);
        LatentPositions::new(z)
    }

    #[test]
    fn k1_null_space_is_constant_direction() {
        let b = null_space_basis(&generic_z(5, 1)).unwrap();
        assert_eq!(b.shape(), (5, 1));
        let s = 1.0 / 5f64.sqrt();
        assert!(b.iter().all(|v| (v.abs() - s).abs() < 1e-12));
    }

    #[test]
    fn k2_null_space_orthonormal() {
        let b = null_space_basis(&generic_z(7, 2)).unwrap();
        assert_eq!(b.ncols(), 3);
        assert!((b.transpose() * &b - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_z_is_rejected() {
        let z = LatentPositions::new(DMatrix::from_fn(5, 2, |i, _| i as f64 - 2.0));
        assert!(matches!(null_space_basis(&z), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn complement_is_orthogonal_to_null_space() {
        let z = generic_z(8, 3);
        let u = effective_basis(&z, None, &OneStepConfig::default()).unwrap();
        assert_eq!(u.ncols(), 8 * 3 - 6);
        let null = null_space_basis(&z).unwrap();
        assert!((u.transpose() * null).amax() < 1e-10);
        assert!((u.transpose() * &u - DMatrix::identity(18, 18)).amax() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = OneStepConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.eigen_tol = 1e-2;
        assert!(cfg.validate().is_err());
        cfg.eigen_tol = 1e-8;
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
    }
}
