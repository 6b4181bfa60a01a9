//! Orthogonal Procrustes alignment and error metrics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// Orthogonal `k x k` matrix minimizing `|Z_hat - Z_star Q|_F`.
    pub q: DMatrix<f64>,
    pub dist_sq: f64,
    /// `|z_hat_i - Q^T z_star_i|` per node.
    pub per_row: DVector<f64>,
}

/// Aligns `z_star` to `z_hat` over the full orthogonal group (reflections
/// included). With `U S V^T` the SVD of `Z_hat^T Z_star`, `Q = V U^T`.
pub fn procrustes(z_hat: &DMatrix<f64>, z_star: &DMatrix<f64>) -> Result<AlignmentResult> {
    if z_hat.shape() != z_star.shape() {
        return Err(Error::shape("procrustes", format!("{:?}", z_star.shape()), format!("{:?}", z_hat.shape())));
    }
    if z_hat.ncols() == 0 {
        return Err(Error::InvalidInput("procrustes needs k >= 1".into()));
    }
    let cross = z_hat.transpose() * z_star;
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return V".into()))?;
    let q = v_t.transpose() * u.transpose();
    let aligned = z_star * &q;
    let diff = z_hat - aligned;
    let per_row = DVector::from_iterator(diff.nrows(), diff.row_iter().map(|r| r.norm()));
    let dist_sq = per_row.iter().map(|d| d * d).sum();
    Ok(AlignmentResult { q, dist_sq, per_row })
}

/// `|G_hat - G_star|_F^2 / n`.
pub fn g_error(g_hat: &DMatrix<f64>, g_star: &DMatrix<f64>) -> Result<f64> {
    if g_hat.shape() != g_star.shape() {
        return Err(Error::shape("g_error", format!("{:?}", g_star.shape()), format!("{:?}", g_hat.shape())));
    }
    Ok((g_hat - g_star).norm_squared() / g_hat.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `log(error)` on `log(T)`.
pub fn slope_fit(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!("slope fit needs >= 3 points, got {}", pairs.len())));
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidInput(format!("slope fit needs positive values, got ({x}, {y})")));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit needs at least two distinct T values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// `max_{i,t} (|alpha_hat_it - alpha_star_it| + dist_i)`, the elementwise
/// initializer error.
pub fn max_elementwise_error(
    z_hat: &DMatrix<f64>,
    alpha_hat: &DMatrix<f64>,
    z_star: &DMatrix<f64>,
    alpha_star: &DMatrix<f64>,
) -> Result<f64> {
    if alpha_hat.shape() != alpha_star.shape() {
        return Err(Error::shape("max_elementwise_error", format!("{:?}", alpha_star.shape()), format!("{:?}", alpha_hat.shape())));
    }
    let al = procrustes(z_hat, z_star)?;
    let mut worst = 0.0_f64;
    for t in 0..alpha_hat.ncols() {
        for i in 0..alpha_hat.nrows() {
            worst = worst.max((alpha_hat[(i, t)] - alpha_star[(i, t)]).abs() + al.per_row[i]);
        }
    }
    Ok(worst)
}
