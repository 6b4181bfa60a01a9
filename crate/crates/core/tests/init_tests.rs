mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rayon::prelude::*;

use semilsm::eval::{max_elementwise_error, procrustes};
use semilsm::init::{init_alpha, init_stage2_pgd, initialize, stage1_from_estimates, usvt_denoise, InitConfig};
use semilsm::model::{log_likelihood, ModelBounds};
use semilsm::simulate::{sample_counts, simulate, AlphaCase, SimConfig};

fn h_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) * n as f64 + DMatrix::from_element(n, n, 1.0)
}

#[test]
fn closed_form_inverse_of_h() {
    for n in [2, 5, 50] {
        let h = h_matrix(n);
        // init_alpha(diag(v)) = H^{-1} v, so H applied to it must give v back
        for c in 0..n {
            let v = DVector::from_fn(n, |i, _| if i == c { 1.0 } else { 0.0 });
            let back = &h * init_alpha(&DMatrix::from_diagonal(&v));
            assert!((back - v).amax() < 1e-12);
        }
    }
}

#[test]
fn alpha_recovered_from_exact_theta() {
    let mut r = rng(1);
    let z = random_z(&mut r, 9, 2, 1.0);
    let alpha = random_alpha(&mut r, 9, 1, -2.0, 0.0);
    let theta = semilsm::model::natural_params(&z, &alpha).unwrap().theta.remove(0);
    let got = init_alpha(&theta);
    assert!((got - alpha.matrix().column(0)).amax() < 1e-10);
    assert!(init_alpha(&DMatrix::zeros(4, 4)).amax() == 0.0);
}

#[test]
fn noiseless_stage_one_is_exact() {
    let sim = simulate(&SimConfig {
        n: 40,
        t: 5,
        k: 2,
        alpha_case: AlphaCase::TwoBlock,
        seed: 2,
        bounds: None,
    })
    .unwrap();
    let mean = mean_tensor(&sim.z_star, &sim.alpha_star);
    let s1 = stage1_from_estimates(mean.slices(), 2).unwrap();
    let d = procrustes(s1.z.matrix(), sim.z_star.matrix()).unwrap();
    assert!(d.dist_sq.sqrt() < 1e-8);
    assert!((s1.alpha.matrix() - sim.alpha_star.matrix()).amax() < 1e-8);
}

#[test]
fn stage_one_sign_ambiguity() {
    let e = vec![DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]).map(f64::exp)];
    let s1 = stage1_from_estimates(&e, 1).unwrap();
    let z = s1.z.matrix();
    assert!((z[(0, 0)].abs() - 1.0).abs() < 1e-10);
    assert!((z[(0, 0)] + z[(1, 0)]).abs() < 1e-10);
}

#[test]
fn usvt_beats_raw_counts_on_low_rank_intensity() {
    let n = 200;
    let mut r = rng(3);
    let z = random_z(&mut r, n, 3, 1.2);
    let alpha = random_alpha(&mut r, n, 1, 0.5, 1.5);
    let a = sample_counts(&z, &alpha, 9).unwrap();
    let e_star = mean_tensor(&z, &alpha).slice(0).clone();
    let a0 = a.slice(0);
    let d = usvt_denoise(a0, 2.1, 1e-6).unwrap();
    let err = (&d.estimate - &e_star).norm() / e_star.norm();

    // oracle: exact top-3 truncation of the noisy slice
    let eig = a0.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let mut trunc = DMatrix::zeros(n, n);
    for &i in &idx[..3] {
        let v = eig.eigenvectors.column(i);
        trunc += v * v.transpose() * eig.eigenvalues[i];
    }
    let oracle = (&trunc - &e_star).norm() / e_star.norm();
    let raw = (a0 - &e_star).norm() / e_star.norm();
    assert!(err < raw);
    assert!(err < 1.05 * oracle, "usvt {err}, oracle {oracle}");
}

#[test]
fn stationary_start_is_unchanged() {
    let mut r = rng(4);
    let z = random_z(&mut r, 8, 2, 0.5);
    let alpha = random_alpha(&mut r, 8, 3, -1.0, 0.0);
    let mean = mean_tensor(&z, &alpha);
    let bounds = ModelBounds::new(10.0, 4.0, 0.0).unwrap();
    let (z2, a2, trace) = init_stage2_pgd(&mean, &z, &alpha, &bounds, 0.01, 0.01, 50, 1e-9).unwrap();
    assert!((z2.matrix() - z.matrix()).amax() < 1e-12);
    assert!((a2.matrix() - alpha.matrix()).amax() < 1e-12);
    assert!(trace.converged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pgd_output_is_feasible_and_monotone(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let z_true = random_z(&mut r, 10, 2, 1.0);
        let alpha_true = random_alpha(&mut r, 10, 3, -1.0, 0.5);
        let a = sample_counts(&z_true, &alpha_true, seed).unwrap();
        let start = random_z(&mut r, 10, 2, 2.0);
        let alpha0 = random_alpha(&mut r, 10, 3, -6.0, 6.0);
        let bounds = ModelBounds::new(0.8, 3.0, 0.0).unwrap();
        let (z, alpha, trace) = init_stage2_pgd(&a, &start, &alpha0, &bounds, 0.01, 0.05, 100, 1e-8).unwrap();
        prop_assert!(z.centering_residual() < 1e-12);
        prop_assert!(z.max_row_norm_sq() <= bounds.m_z1 * (1.0 + 1e-12));
        prop_assert!(alpha.max_abs() <= bounds.m_alpha);
        for w in trace.loglik.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }
}

#[test]
fn stage_two_improves_stage_one() {
    let outcomes: Vec<(bool, bool, f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let sim = simulate(&SimConfig {
                n: 200,
                t: 20,
                k: 2,
                alpha_case: AlphaCase::Uniform,
                seed: 1000 + seed,
                bounds: None,
            })
            .unwrap();
            let cfg = InitConfig {
                bounds: Some(sim.bounds),
                ..Default::default()
            };
            let init = initialize(&sim.counts, 2, &cfg).unwrap();
            let ll0 = log_likelihood(&sim.counts, &init.stage1.z, &init.stage1.alpha).unwrap();
            let ll1 = log_likelihood(&sim.counts, &init.z, &init.alpha).unwrap();
            let d0 = procrustes(init.stage1.z.matrix(), sim.z_star.matrix()).unwrap().dist_sq;
            let d1 = procrustes(init.z.matrix(), sim.z_star.matrix()).unwrap().dist_sq;
            let e0 = max_elementwise_error(init.stage1.z.matrix(), init.stage1.alpha.matrix(), sim.z_star.matrix(), sim.alpha_star.matrix()).unwrap();
            let e1 = max_elementwise_error(init.z.matrix(), init.alpha.matrix(), sim.z_star.matrix(), sim.alpha_star.matrix()).unwrap();
            (ll1 >= ll0, d1 <= d0, e0, e1)
        })
        .collect();
    let ll_wins = outcomes.iter().filter(|o| o.0).count();
    let dist_wins = outcomes.iter().filter(|o| o.1).count();
    assert_eq!(ll_wins, 50);
    assert!(dist_wins >= 45, "stage two reduced dist^2 in {dist_wins}/50 seeds");
    assert!(outcomes.iter().all(|o| o.2 < 5.0 * o.3));
}
