#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semilsm::model::{score, Baseline, CountTensor, LatentPositions};
use semilsm::simulate::sample_counts;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Centered positions with entries drawn from `U(-s, s)` before centering.
pub fn random_z(r: &mut ChaCha8Rng, n: usize, k: usize, s: f64) -> LatentPositions {
    let z = DMatrix::from_fn(n, k, |_, _| r.random_range(-s..s));
    LatentPositions::centered(z)
}

pub fn random_alpha(r: &mut ChaCha8Rng, n: usize, t: usize, lo: f64, hi: f64) -> Baseline {
    Baseline::new(DMatrix::from_fn(n, t, |_, _| r.random_range(lo..hi)))
}

pub struct Instance {
    pub z: LatentPositions,
    pub alpha: Baseline,
    pub a: CountTensor,
}

pub fn instance(seed: u64, n: usize, t: usize, k: usize) -> Instance {
    let mut r = rng(seed);
    let z = random_z(&mut r, n, k, 1.0);
    let alpha = random_alpha(&mut r, n, t, -0.5, 0.5);
    let a = sample_counts(&z, &alpha, seed ^ 0x5eed).unwrap();
    Instance { z, alpha, a }
}

/// Slice-wise `exp(Theta)` computed by direct loops, stored as a real tensor.
pub fn mean_tensor(z: &LatentPositions, alpha: &Baseline) -> CountTensor {
    let (n, k) = (z.n(), z.k());
    let zm = z.matrix();
    let am = alpha.matrix();
    let slices = (0..alpha.n_times())
        .map(|t| {
            DMatrix::from_fn(n, n, |i, j| {
                let dot: f64 = (0..k).map(|a| zm[(i, a)] * zm[(j, a)]).sum();
                (am[(i, t)] + am[(j, t)] + dot).exp()
            })
        })
        .collect();
    CountTensor::from_real(slices).unwrap()
}

/// Joint parameter vector `(vec_rows(Z), vec(alpha))`.
pub fn pack(z: &LatentPositions, alpha: &Baseline) -> DVector<f64> {
    let zv = z.to_vec();
    let av = alpha.to_vec();
    DVector::from_iterator(zv.len() + av.len(), zv.iter().chain(av.iter()).copied())
}

pub fn unpack(v: &DVector<f64>, n: usize, k: usize, t: usize) -> (LatentPositions, Baseline) {
    let nk = n * k;
    let z = LatentPositions::from_vec(&v.rows(0, nk).into_owned(), n, k).unwrap();
    let alpha = Baseline::from_vec(&v.rows(nk, n * t).into_owned(), n, t).unwrap();
    (z, alpha)
}

pub fn joint_score(a: &CountTensor, v: &DVector<f64>, n: usize, k: usize, t: usize) -> DVector<f64> {
    let (z, alpha) = unpack(v, n, k, t);
    let s = score(a, &z, &alpha).unwrap();
    DVector::from_iterator(s.z.len() + s.alpha.len(), s.z.iter().chain(s.alpha.iter()).copied())
}

/// Negative Hessian of the log-likelihood by central differences of the
/// analytic score, symmetrized.
pub fn fd_neg_hessian(a: &CountTensor, z: &LatentPositions, alpha: &Baseline, h: f64) -> DMatrix<f64> {
    let (n, k, t) = (z.n(), z.k(), alpha.n_times());
    let x = pack(z, alpha);
    let p = x.len();
    let mut hess = DMatrix::zeros(p, p);
    for c in 0..p {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let col = (joint_score(a, &xp, n, k, t) - joint_score(a, &xm, n, k, t)) / (2.0 * h);
        hess.set_column(c, &(-col));
    }
    (&hess + hess.transpose()) * 0.5
}

/// Schur complement of the alpha block in a joint `(Z, alpha)` matrix.
pub fn schur_z(m: &DMatrix<f64>, nk: usize) -> DMatrix<f64> {
    let p = m.nrows();
    let zz = m.view((0, 0), (nk, nk));
    let za = m.view((0, nk), (nk, p - nk));
    let aa = m.view((nk, nk), (p - nk, p - nk)).into_owned();
    let inv = aa.try_inverse().expect("alpha block invertible");
    zz - za * inv * za.transpose()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
