//! Ground-truth generation and Poisson sampling for simulation studies.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{theta_slice, Baseline, CountTensor, LatentPositions, ModelBounds, THETA_CLAMP};
use crate::rng::stream;

const LATENT_TAG: u64 = 1;
const ALPHA_TAG: u64 = 2;
const COUNTS_TAG: u64 = 3;

/// Generating law of the baseline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaCase {
    /// `alpha_it ~ U(-2, 0)` independently.
    #[default]
    Uniform,
    /// First half of the nodes drift upward in `t`, second half downward.
    TwoBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    #[serde(default)]
    pub alpha_case: AlphaCase,
    pub seed: u64,
    /// Bounds handed to downstream constrained procedures. Derived from the
    /// generated truth when absent.
    #[serde(default)]
    pub bounds: Option<ModelBounds>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 1 || self.k < 1 || self.k >= self.n {
            return Err(Error::InvalidInput(format!(
                "need n >= 2, T >= 1, 1 <= k < n; got n={}, T={}, k={}",
                self.n, self.t, self.k
            )));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub config: SimConfig,
    pub z_star: LatentPositions,
    pub alpha_star: Baseline,
    pub counts: CountTensor,
    pub bounds: ModelBounds,
}

/// `n` i.i.d. points uniform on the unit `k`-ball: a normalized Gaussian
/// direction scaled by `U^(1/k)`.
pub fn sample_unit_ball(n: usize, k: usize, seed: u64, attempt: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, &[LATENT_TAG, attempt]);
    let mut w = DMatrix::zeros(n, k);
    for i in 0..n {
        let dir: Vec<f64> = loop {
            let d: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            if d.iter().any(|x: &f64| *x != 0.0) {
                break d;
            }
        };
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = rng.random::<f64>().powf(1.0 / k as f64);
        for (a, d) in dir.iter().enumerate() {
            w[(i, a)] = radius * d / norm;
        }
    }
    w
}

/// Centered latent positions scaled so that `|Z Z^T|_F = n`.
pub fn gen_latent(n: usize, k: usize, seed: u64) -> Result<LatentPositions> {
    if k < 1 || k >= n {
        return Err(Error::InvalidInput(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    for attempt in 0..10 {
        let mut w = sample_unit_ball(n, k, seed, attempt);
        crate::linalg::center_columns(&mut w);
        let sv = w.singular_values();
        let smax = sv.max();
        if !(sv.min() > 1e-10 * smax) {
            continue;
        }
        // |W W^T|_F = |W^T W|_F
        let gram_norm = (w.transpose() * &w).norm();
        let scale = (n as f64).sqrt() / gram_norm.sqrt();
        return Ok(LatentPositions::new(w * scale));
    }
    Err(Error::RankDeficient(format!(
        "latent sample for n={n}, k={k} stayed rank deficient after 10 attempts"
    )))
}

pub fn gen_alpha(n: usize, t_len: usize, case: AlphaCase, seed: u64) -> Result<Baseline> {
    if n < 2 || t_len < 1 {
        return Err(Error::InvalidInput(format!("need n >= 2 and T >= 1, got n={n}, T={t_len}")));
    }
    let mut rng = stream(seed, &[ALPHA_TAG]);
    let half = n / 2;
    let mut alpha = DMatrix::zeros(n, t_len);
    for t in 0..t_len {
        let frac = (t + 1) as f64 / t_len as f64;
        for i in 0..n {
            alpha[(i, t)] = match case {
                AlphaCase::Uniform => rng.random_range(-2.0..0.0),
                AlphaCase::TwoBlock if i < half => frac + rng.random_range(-3.0..-1.0),
                AlphaCase::TwoBlock => -2.0 * frac + rng.random_range(-2.0..0.0),
            };
        }
    }
    Ok(Baseline::new(alpha))
}

/// Draws `A_t,ij = A_t,ji ~ Poisson(exp(Theta_t,ij))` for `i <= j`, each
/// cell from its own stream keyed by `(seed, t, i, j)`.
pub fn sample_counts(z: &LatentPositions, alpha: &Baseline, seed: u64) -> Result<CountTensor> {
    if z.n() != alpha.n() {
        return Err(Error::shape("sample_counts", z.n(), alpha.n()));
    }
    let n = z.n();
    let g = z.gram();
    let slices: Vec<DMatrix<f64>> = (0..alpha.n_times())
        .into_par_iter()
        .map(|t| {
            let theta = theta_slice(&g, alpha.matrix(), t)?;
            let mut a = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..=j {
                    let th = theta[(i, j)];
                    if th > THETA_CLAMP {
                        return Err(Error::NumericOverflow { t, i, j });
                    }
                    let lambda = th.exp();
                    let count = if lambda > 0.0 {
                        let mut rng = stream(seed, &[COUNTS_TAG, t as u64, i as u64, j as u64]);
                        Poisson::new(lambda)
                            .map_err(|e| Error::Numeric(format!("poisson({lambda}): {e}")))?
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    a[(i, j)] = count;
                    a[(j, i)] = count;
                }
            }
            Ok(a)
        })
        .collect::<Result<_>>()?;
    CountTensor::new(slices)
}

/// Default downstream bounds: `m_z1 = 1.25 max_i |z_i|^2`, `m_alpha = 4`.
pub fn default_bounds(z_star: &LatentPositions) -> ModelBounds {
    ModelBounds {
        m_z1: 1.25 * z_star.max_row_norm_sq(),
        m_alpha: 4.0,
        m_theta1: 0.0,
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let z_star = gen_latent(cfg.n, cfg.k, cfg.seed)?;
    let alpha_star = gen_alpha(cfg.n, cfg.t, cfg.alpha_case, cfg.seed)?;
    let counts = sample_counts(&z_star, &alpha_star, cfg.seed)?;
    let bounds = cfg.bounds.unwrap_or_else(|| default_bounds(&z_star));
    Ok(SimulatedData {
        config: cfg.clone(),
        z_star,
        alpha_star,
        counts,
        bounds,
    })
}
