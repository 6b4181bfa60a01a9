mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use semilsm::model::{
    efficient_system, fisher_blocks, log_likelihood, natural_params, score, Baseline, CountTensor, InfoMode,
    LatentPositions,
};
use semilsm::onestep::null_space_basis;

fn loop_loglik(a: &CountTensor, z: &LatentPositions, alpha: &Baseline) -> f64 {
    let (n, k) = (z.n(), z.k());
    let mut total = 0.0;
    for t in 0..a.n_times() {
        for i in 0..n {
            for j in i..n {
                let mut theta = alpha.matrix()[(i, t)] + alpha.matrix()[(j, t)];
                for c in 0..k {
                    theta += z.matrix()[(i, c)] * z.matrix()[(j, c)];
                }
                total += a.slice(t)[(i, j)] * theta - theta.exp();
            }
        }
    }
    total
}

#[test]
fn natural_params_match_loops() {
    let inst = instance(1, 7, 3, 2);
    let np = natural_params(&inst.z, &inst.alpha).unwrap();
    for (t, theta) in np.theta.iter().enumerate() {
        for i in 0..7 {
            for j in 0..7 {
                let want = inst.alpha.matrix()[(i, t)]
                    + inst.alpha.matrix()[(j, t)]
                    + inst.z.matrix().row(i).dot(&inst.z.matrix().row(j));
                assert!((theta[(i, j)] - want).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn loglik_matches_loops() {
    for seed in 0..5 {
        let inst = instance(seed, 6, 4, 2);
        let got = log_likelihood(&inst.a, &inst.z, &inst.alpha).unwrap();
        let want = loop_loglik(&inst.a, &inst.z, &inst.alpha);
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn score_matches_central_differences() {
    let (n, k, t) = (6, 2, 3);
    for seed in 10..15 {
        let inst = instance(seed, n, t, k);
        let x = pack(&inst.z, &inst.alpha);
        let analytic = joint_score(&inst.a, &x, n, k, t);
        let h = 1e-6;
        for c in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (zp, ap) = unpack(&xp, n, k, t);
            let (zm, am) = unpack(&xm, n, k, t);
            let fd = (loop_loglik(&inst.a, &zp, &ap) - loop_loglik(&inst.a, &zm, &am)) / (2.0 * h);
            assert!((fd - analytic[c]).abs() < 1e-6 * analytic[c].abs().max(1.0), "coord {c}: {fd} vs {}", analytic[c]);
        }
    }
}

#[test]
fn fisher_blocks_match_negative_hessian_at_the_mean() {
    let (n, k, t) = (5, 2, 3);
    let inst = instance(21, n, t, k);
    let mean = mean_tensor(&inst.z, &inst.alpha);
    let h = fd_neg_hessian(&mean, &inst.z, &inst.alpha, 1e-5);
    let fb = fisher_blocks(&inst.z, &inst.alpha).unwrap();
    let nk = n * k;
    let zz = h.view((0, 0), (nk, nk)).into_owned();
    let za = h.view((0, nk), (nk, n * t)).into_owned();
    let aa = h.view((nk, nk), (n * t, n * t)).into_owned();
    assert!(rel_err(&fb.zz, &zz) < 1e-7);
    assert!(rel_err(&fb.z_alpha_dense(), &za) < 1e-7);
    assert!(rel_err(&fb.alpha_alpha_dense(), &aa) < 1e-7);
}

#[test]
fn efficient_information_is_the_schur_complement() {
    let (n, k, t) = (5, 2, 3);
    let nk = n * k;
    let inst = instance(22, n, t, k);
    let mean = mean_tensor(&inst.z, &inst.alpha);
    let fisher = fd_neg_hessian(&mean, &inst.z, &inst.alpha, 1e-5);
    let sys = efficient_system(&inst.a, &inst.z, &inst.alpha, InfoMode::Fisher).unwrap();
    assert!(rel_err(&sys.i_eff, &schur_z(&fisher, nk)) < 1e-6);

    // efficient score: s_Z - I_Za I_aa^{-1} s_a
    let s = score(&inst.a, &inst.z, &inst.alpha).unwrap();
    let za = fisher.view((0, nk), (nk, n * t)).into_owned();
    let aa = fisher.view((nk, nk), (n * t, n * t)).into_owned();
    let want = &s.z - za * aa.try_inverse().unwrap() * &s.alpha;
    assert!((&sys.s_eff - &want).norm() < 1e-6 * want.norm().max(1.0));
}

#[test]
fn observed_efficient_information_uses_the_observed_hessian() {
    let (n, k, t) = (5, 2, 3);
    let nk = n * k;
    let inst = instance(23, n, t, k);
    let observed = fd_neg_hessian(&inst.a, &inst.z, &inst.alpha, 1e-5);
    let sys = efficient_system(&inst.a, &inst.z, &inst.alpha, InfoMode::Observed).unwrap();
    assert!(rel_err(&sys.i_eff, &schur_z(&observed, nk)) < 1e-6);
}

#[test]
fn null_directions_are_annihilated() {
    let (n, k, t) = (8, 2, 3);
    let inst = instance(31, n, t, k);
    let sys = efficient_system(&inst.a, &inst.z, &inst.alpha, InfoMode::Fisher).unwrap();
    let zm = inst.z.matrix();
    let ones_a = DMatrix::from_fn(n, k, |_, c| [0.3, -0.7][c]);
    let rot = zm * DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    for dir in [ones_a, rot] {
        let v = DVector::from_row_slice(dir.transpose().as_slice());
        let r = (&sys.i_eff * &v).norm() / (sys.i_eff.norm() * v.norm());
        assert!(r < 1e-10, "residual {r}");
        assert!(sys.s_eff.dot(&v).abs() < 1e-8 * sys.s_eff.norm() * v.norm());
    }
    let basis = null_space_basis(&inst.z).unwrap();
    assert!((&sys.i_eff * basis).norm() < 1e-9 * sys.i_eff.norm());
}

#[test]
fn zero_residual_gives_zero_efficient_score() {
    let inst = instance(41, 6, 3, 2);
    let mean = mean_tensor(&inst.z, &inst.alpha);
    let sys = efficient_system(&mean, &inst.z, &inst.alpha, InfoMode::Fisher).unwrap();
    assert!(sys.s_eff.amax() < 1e-12);
}

#[test]
fn duplicated_slices_double_the_latent_information() {
    let inst = instance(42, 6, 2, 2);
    let fb = fisher_blocks(&inst.z, &inst.alpha).unwrap();
    let doubled = Baseline::new(DMatrix::from_fn(6, 4, |i, t| inst.alpha.matrix()[(i, t % 2)]));
    let fb2 = fisher_blocks(&inst.z, &doubled).unwrap();
    assert!(rel_err(&fb2.zz, &(&fb.zz * 2.0)) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_and_theta_are_symmetric(seed in 0u64..10_000, n in 2usize..9, t in 1usize..4) {
        let mut r = rng(seed);
        let k = 1 + (seed as usize) % (n - 1).min(3);
        let z = random_z(&mut r, n, k, 1.0);
        let alpha = random_alpha(&mut r, n, t, -1.0, 1.0);
        let np = natural_params(&z, &alpha).unwrap();
        for theta in &np.theta {
            prop_assert!((theta - theta.transpose()).amax() == 0.0);
        }
        prop_assert!(z.centering_residual() < 1e-12);
    }

    #[test]
    fn fisher_information_is_psd(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let z = random_z(&mut r, 5, 2, 1.0);
        let alpha = random_alpha(&mut r, 5, 2, -1.0, 0.5);
        let fb = fisher_blocks(&z, &alpha).unwrap();
        let min = fb.zz.clone().symmetric_eigenvalues().min();
        prop_assert!(min > -1e-10 * fb.zz.norm());
        for b in &fb.alpha_alpha {
            prop_assert!(b.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }
}
