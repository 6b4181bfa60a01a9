mod common;

use common::*;
use nalgebra::DMatrix;

use semilsm::model::{Baseline, LatentPositions};
use semilsm::simulate::{gen_alpha, gen_latent, sample_counts, sample_unit_ball, simulate, AlphaCase, SimConfig};

#[test]
fn latent_positions_are_normalized() {
    for seed in 0..5 {
        let z = gen_latent(120, 3, seed).unwrap();
        assert!(z.centering_residual() < 1e-12);
        let g = z.gram();
        assert!((g.norm() / 120.0 - 1.0).abs() < 1e-12);
        assert_eq!(z.matrix(), gen_latent(120, 3, seed).unwrap().matrix());
    }
}

#[test]
fn ball_radii_follow_the_uniform_law() {
    // Kolmogorov-Smirnov against F(r) = r^2, 1% critical value ~ 1.628 / sqrt(n)
    let n = 1000;
    let w = sample_unit_ball(n, 2, 17, 0);
    let mut r: Vec<f64> = w.row_iter().map(|row| row.norm()).collect();
    r.sort_by(f64::total_cmp);
    let d = r
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = x * x;
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn alpha_laws() {
    let a = gen_alpha(200, 80, AlphaCase::Uniform, 3).unwrap();
    assert!(a.matrix().iter().all(|v| *v > -2.0 && *v < 0.0));
    let mean = a.matrix().mean();
    assert!((mean + 1.0).abs() < 0.02, "mean {mean}");

    let b = gen_alpha(10, 4, AlphaCase::TwoBlock, 3).unwrap();
    for i in 0..5 {
        let v = b.matrix()[(i, 3)];
        assert!(v > -2.0 && v < 0.0);
    }
    for i in 5..10 {
        let v = b.matrix()[(i, 3)];
        assert!(v > -4.0 && v < -2.0);
    }
}

#[test]
fn vanishing_intensity_gives_empty_tensor() {
    let z = LatentPositions::centered(DMatrix::from_fn(6, 2, |i, j| (i + j) as f64 * 0.1));
    let a = sample_counts(&z, &Baseline::new(DMatrix::from_element(6, 3, -20.0)), 1).unwrap();
    assert_eq!(a.total_events(), 0.0);
}

#[test]
fn counts_are_symmetric_and_deterministic() {
    let inst = instance(5, 12, 4, 2);
    for s in inst.a.slices() {
        assert_eq!(s, &s.transpose());
    }
    let again = sample_counts(&inst.z, &inst.alpha, 5 ^ 0x5eed).unwrap();
    assert_eq!(inst.a.slices(), again.slices());
}

#[test]
fn entry_mean_matches_intensity() {
    let mut r = rng(8);
    let z = random_z(&mut r, 3, 1, 1.0);
    let alpha = random_alpha(&mut r, 3, 1, 0.0, 0.5);
    let lambda = mean_tensor(&z, &alpha).slice(0)[(0, 1)];
    let reps = 10_000;
    let total: f64 = (0..reps).map(|s| sample_counts(&z, &alpha, s).unwrap().slice(0)[(0, 1)]).sum();
    let mean = total / reps as f64;
    assert!((mean - lambda).abs() < 4.0 * (lambda / reps as f64).sqrt(), "{mean} vs {lambda}");
}

#[test]
fn cells_look_independent() {
    let sim = simulate(&SimConfig {
        n: 60,
        t: 6,
        k: 2,
        alpha_case: AlphaCase::Uniform,
        seed: 4,
        bounds: None,
    })
    .unwrap();
    let mean = mean_tensor(&sim.z_star, &sim.alpha_star);
    let mut std = Vec::new();
    for t in 0..6 {
        for j in 0..60 {
            for i in 0..=j {
                let l = mean.slice(t)[(i, j)];
                std.push((sim.counts.slice(t)[(i, j)] - l) / l.sqrt());
            }
        }
    }
    let n = std.len() as f64;
    let m = std.iter().sum::<f64>() / n;
    let var = std.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    for lag in 1..4 {
        let c = std.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum::<f64>() / (n * var);
        assert!(c.abs() < 4.0 / n.sqrt(), "lag {lag}: {c}");
    }
}
