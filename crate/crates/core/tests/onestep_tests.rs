mod common;

use common::*;
use nalgebra::DMatrix;
use rayon::prelude::*;

use semilsm::eval::procrustes;
use semilsm::init::{initialize, InitConfig};
use semilsm::model::{efficient_system, InfoMode, LatentPositions};
use semilsm::onestep::{effective_basis, null_space_basis, one_step, BasisMethod, OneStepConfig};
use semilsm::simulate::{simulate, AlphaCase, SimConfig};

fn projector(u: &DMatrix<f64>) -> DMatrix<f64> {
    u * u.transpose()
}

#[test]
fn pseudo_inverse_form_matches_horizontal_form() {
    let (n, k, t) = (8, 2, 3);
    for seed in 0..4 {
        let inst = instance(100 + seed, n, t, k);
        let (z_new, _) = one_step(&inst.a, &inst.z, &inst.alpha, &OneStepConfig::default()).unwrap();
        let sys = efficient_system(&inst.a, &inst.z, &inst.alpha, InfoMode::Fisher).unwrap();
        let pinv = sys.i_eff.clone().pseudo_inverse(1e-9 * sys.i_eff.norm()).unwrap();
        let want = inst.z.to_vec() + pinv * &sys.s_eff;
        let got = z_new.to_vec();
        assert!((&got - &want).amax() < 1e-8 * want.amax().max(1.0));
    }
}

#[test]
fn basis_methods_agree() {
    let (n, k, t) = (6, 2, 3);
    for seed in 0..5 {
        let inst = instance(200 + seed, n, t, k);
        let sys = efficient_system(&inst.a, &inst.z, &inst.alpha, InfoMode::Fisher).unwrap();
        let analytic = effective_basis(&inst.z, Some(&sys.i_eff), &OneStepConfig::default()).unwrap();
        let cfg = OneStepConfig {
            basis_method: BasisMethod::EigenThreshold,
            ..Default::default()
        };
        let eigen = effective_basis(&inst.z, Some(&sys.i_eff), &cfg).unwrap();
        assert_eq!(analytic.ncols(), n * k - 3);
        assert_eq!(eigen.ncols(), n * k - 3);
        let diff = projector(&analytic) - projector(&eigen);
        assert!(diff.clone().symmetric_eigenvalues().amax() < 1e-6);
        let null = null_space_basis(&inst.z).unwrap();
        assert!((analytic.transpose() * null).amax() < 1e-10);
    }
}

#[test]
fn zero_efficient_score_is_a_fixed_point() {
    let inst = instance(300, 7, 3, 2);
    let mean = mean_tensor(&inst.z, &inst.alpha);
    let (z_new, diag) = one_step(&mean, &inst.z, &inst.alpha, &OneStepConfig::default()).unwrap();
    assert!((z_new.matrix() - inst.z.matrix()).amax() < 1e-12);
    assert!(diag.update_norms[0] < 1e-12);
}

#[test]
fn rotation_equivariance() {
    let inst = instance(400, 8, 3, 2);
    let th: f64 = 0.7;
    let q = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    let reflect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    for q in [q.clone(), &q * reflect] {
        let cfg = OneStepConfig::default();
        let (z1, _) = one_step(&inst.a, &inst.z, &inst.alpha, &cfg).unwrap();
        let rotated = LatentPositions::new(inst.z.matrix() * &q);
        let (z2, _) = one_step(&inst.a, &rotated, &inst.alpha, &cfg).unwrap();
        assert!((z2.matrix() - z1.matrix() * &q).norm() < 1e-8);
    }
}

#[test]
fn uncentered_start_is_rejected() {
    let inst = instance(500, 6, 2, 2);
    let shifted = LatentPositions::new(inst.z.matrix().add_scalar(0.1));
    assert!(one_step(&inst.a, &shifted, &inst.alpha, &OneStepConfig::default()).is_err());
}

#[test]
fn output_stays_centered() {
    for seed in 0..10 {
        let inst = instance(600 + seed, 10, 4, 3);
        for mode in [InfoMode::Fisher, InfoMode::Observed] {
            let cfg = OneStepConfig {
                mode,
                steps: 2,
                ..Default::default()
            };
            if let Ok((z, _)) = one_step(&inst.a, &inst.z, &inst.alpha, &cfg) {
                assert!(z.centering_residual() < 1e-10);
            }
        }
    }
}

fn simulated(seed: u64, n: usize, t: usize) -> (semilsm::simulate::SimulatedData, semilsm::init::InitResult) {
    let sim = simulate(&SimConfig {
        n,
        t,
        k: 2,
        alpha_case: AlphaCase::Uniform,
        seed,
        bounds: None,
    })
    .unwrap();
    let cfg = InitConfig {
        bounds: Some(sim.bounds),
        ..Default::default()
    };
    let init = initialize(&sim.counts, 2, &cfg).unwrap();
    (sim, init)
}

#[test]
fn one_step_improves_on_the_initializer() {
    let wins: usize = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let (sim, init) = simulated(seed, 100, 20);
            let (z, _) = one_step(&sim.counts, &init.z, &init.alpha, &OneStepConfig::default()).unwrap();
            let before = procrustes(init.z.matrix(), sim.z_star.matrix()).unwrap().dist_sq;
            let after = procrustes(z.matrix(), sim.z_star.matrix()).unwrap().dist_sq;
            usize::from(after < before)
        })
        .sum();
    assert!(wins >= 45, "one-step improved in {wins}/50 seeds");
}

#[test]
fn fisher_and_observed_updates_are_close_at_large_n() {
    let (sim, init) = simulated(7, 200, 10);
    let fisher = OneStepConfig::default();
    let observed = OneStepConfig {
        mode: InfoMode::Observed,
        ..Default::default()
    };
    let (zf, _) = one_step(&sim.counts, &init.z, &init.alpha, &fisher).unwrap();
    let (zo, _) = one_step(&sim.counts, &init.z, &init.alpha, &observed).unwrap();
    let update = (zf.matrix() - init.z.matrix()).norm();
    let gap = (zf.matrix() - zo.matrix()).norm();
    assert!(gap < 0.2 * update, "gap {gap}, update {update}");
}
