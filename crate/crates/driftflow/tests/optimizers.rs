mod common;

use std::sync::Arc;

use common::{assert_close, assert_vec_close};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftflow::calculus::flow_affine;
use driftflow::optimizers::{
    dal_lr, dal_momentum_step, dal_per_parameter_step, dal_step, game_alt_step, game_rk4_step,
    game_sim_step, gd_step, momentum_step, sgd_two_step, train, DalConfig, DalProxy, GameMode,
    GameStepConfig, OptimizerKind,
};
use driftflow::problems::{
    banana_new, linear_game_new, quadratic_new, quadratic_with_constant, zero_sum_game_from_loss,
    GameProblem, Problem,
};
use driftflow::Error;

fn diag_quad(entries: &[f64]) -> driftflow::problems::Quadratic {
    quadratic_new(
        DMatrix::from_diagonal(&DVector::from_row_slice(entries)),
        DVector::zeros(entries.len()),
    )
    .unwrap()
}

/// E = (phi * theta) as a two-player zero-sum game: f = theta, g = -phi.
fn bilinear_game() -> impl driftflow::problems::GameProblem {
    let loss = quadratic_new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DVector::zeros(2),
    )
    .unwrap();
    zero_sum_game_from_loss(Arc::new(loss), 1).unwrap()
}

// --- gd_step ----------------------------------------------------------------

#[test]
fn gd_step_boundary_oscillation() {
    let p = diag_quad(&[4.0]);
    let out = gd_step(&p, &DVector::from_element(1, 1.0), 0.5).unwrap();
    assert_eq!(out[0], -1.0);
}

#[test]
fn gd_step_halves_at_half_rate() {
    let p = diag_quad(&[1.0]);
    let out = gd_step(&p, &DVector::from_element(1, 1.0), 0.5).unwrap();
    assert_eq!(out[0], 0.5);
}

#[test]
fn gd_step_fixed_at_critical_point() {
    let p = quadratic_new(
        DMatrix::from_element(1, 1, 2.0),
        DVector::from_element(1, -2.0),
    )
    .unwrap();
    let theta = DVector::from_element(1, 1.0);
    let out = gd_step(&p, &theta, 0.3).unwrap();
    assert_eq!(out[0], theta[0]);
}

#[test]
fn gd_step_rejects_bad_h_and_reports_overflow() {
    let p = diag_quad(&[1.0]);
    let theta = DVector::from_element(1, 1.0);
    assert!(matches!(
        gd_step(&p, &theta, 0.0),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        gd_step(&p, &theta, -0.1),
        Err(Error::ConfigError(_))
    ));
    let huge = DVector::from_element(1, f64::MAX);
    assert!(matches!(
        gd_step(&diag_quad(&[4.0]), &huge, 1.0),
        Err(Error::Nonfinite { .. })
    ));
}

// --- momentum_step ------------------------------------------------------------

#[test]
fn momentum_without_memory_is_gd_bit_for_bit() {
    let p = banana_new();
    let theta = DVector::from_vec(vec![0.437, -0.291]);
    let v = DVector::from_vec(vec![3.7, -1.2]);
    let (out, _) = momentum_step(&p, &theta, &v, 0.0125, 0.0).unwrap();
    let gd = gd_step(&p, &theta, 0.0125).unwrap();
    assert_eq!(out, gd);
}

#[test]
fn momentum_first_step_from_rest() {
    let p = diag_quad(&[2.0]);
    let theta = DVector::from_element(1, 1.5);
    let (out, v) = momentum_step(&p, &theta, &DVector::zeros(1), 0.1, 0.9).unwrap();
    assert_close(out[0], 1.5 - 0.1 * 3.0, 1e-15);
    assert_close(v[0], -0.3, 1e-15);
}

#[test]
fn momentum_accumulates_on_constant_gradient() {
    // E = c . theta has constant gradient c.
    let c = DVector::from_vec(vec![0.5, -0.3]);
    let p = quadratic_new(DMatrix::zeros(2, 2), c.clone()).unwrap();
    let h = 0.1;
    let beta = 0.9;
    let theta0 = DVector::from_vec(vec![1.0, 1.0]);
    let (theta1, v1) = momentum_step(&p, &theta0, &DVector::zeros(2), h, beta).unwrap();
    let (theta2, v2) = momentum_step(&p, &theta1, &v1, h, beta).unwrap();
    let expected_v2 = -&c * ((1.0 + beta) * h);
    assert_vec_close(&v2, &expected_v2, 1e-15);
    let expected_theta2 = &theta0 - &c * h - &c * ((1.0 + beta) * h);
    assert_vec_close(&theta2, &expected_theta2, 1e-15);
}

#[test]
fn momentum_validates_inputs() {
    let p = diag_quad(&[1.0]);
    let theta = DVector::from_element(1, 1.0);
    let v = DVector::zeros(1);
    assert!(matches!(
        momentum_step(&p, &theta, &v, 0.1, 1.0),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        momentum_step(&p, &theta, &v, 0.1, -0.2),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        momentum_step(&p, &theta, &DVector::zeros(2), 0.1, 0.5),
        Err(Error::DimensionMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn momentum_beta_zero_equals_gd_everywhere(
        x in -1.5..1.5f64,
        y in -1.0..2.0f64,
        h in 1e-4..0.01f64,
    ) {
        let p = banana_new();
        let theta = DVector::from_vec(vec![x, y]);
        let v = DVector::from_vec(vec![x * 2.0, y - 3.0]);
        let (out, _) = momentum_step(&p, &theta, &v, h, 0.0).unwrap();
        let gd = gd_step(&p, &theta, h).unwrap();
        prop_assert_eq!(out, gd);
    }
}

// --- DAL family ---------------------------------------------------------------

#[test]
fn dal_lr_on_anisotropic_quadratic() {
    let p = diag_quad(&[1.0, 4.0]);
    let cfg = DalConfig::default();
    let soft = DVector::from_vec(vec![1.0, 0.0]);
    assert_close(dal_lr(&p, &soft, &cfg).unwrap(), 2.0, 1e-12);
    let sharp = DVector::from_vec(vec![0.0, 1.0]);
    assert_close(dal_lr(&p, &sharp, &cfg).unwrap(), 0.5, 1e-12);
    let damped = DalConfig {
        p: 0.5,
        ..DalConfig::default()
    };
    assert_close(dal_lr(&p, &sharp, &damped).unwrap(), 1.0, 1e-12);
}

#[test]
fn dal_lr_cap_engages_on_flat_curvature() {
    let p = diag_quad(&[0.1, 0.1]);
    let theta = DVector::from_vec(vec![1.0, 0.0]);
    assert_close(dal_lr(&p, &theta, &DalConfig::default()).unwrap(), 5.0, 1e-12);
    let tight = DalConfig {
        lr_cap: 3.0,
        ..DalConfig::default()
    };
    assert_close(dal_lr(&p, &theta, &tight).unwrap(), 3.0, 1e-12);
}

#[test]
fn dal_lr_fd_proxy_agrees_with_exact_hvp() {
    let fd = DalConfig {
        proxy: DalProxy::FdApprox { scale: 0.01 },
        ..DalConfig::default()
    };
    let exact = DalConfig::default();

    let q = quadratic_new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        DVector::from_vec(vec![0.2, -0.4]),
    )
    .unwrap();
    let theta = DVector::from_vec(vec![0.7, -0.3]);
    assert_close(
        dal_lr(&q, &theta, &fd).unwrap(),
        dal_lr(&q, &theta, &exact).unwrap(),
        1e-9,
    );

    let b = banana_new();
    let point = DVector::from_vec(vec![0.4, -0.3]);
    let lr_fd = dal_lr(&b, &point, &fd).unwrap();
    let lr_exact = dal_lr(&b, &point, &exact).unwrap();
    assert!((lr_fd - lr_exact).abs() <= 0.05 * lr_exact);
}

#[test]
fn dal_lr_refuses_critical_points() {
    let p = diag_quad(&[2.0]);
    assert_eq!(
        dal_lr(&p, &DVector::zeros(1), &DalConfig::default()),
        Err(Error::ZeroGradient)
    );
}

#[test]
fn dal_config_validation() {
    let p = diag_quad(&[2.0]);
    let theta = DVector::from_element(1, 1.0);
    for bad in [
        DalConfig {
            p: 0.0,
            ..DalConfig::default()
        },
        DalConfig {
            p: 1.5,
            ..DalConfig::default()
        },
        DalConfig {
            lr_cap: 0.0,
            ..DalConfig::default()
        },
    ] {
        assert!(matches!(
            dal_lr(&p, &theta, &bad),
            Err(Error::ConfigError(_))
        ));
    }
}

#[test]
fn dal_step_reflects_through_the_origin_in_one_dimension() {
    let p = diag_quad(&[3.0]);
    for theta in [0.7, -2.4, 0.01] {
        let out = dal_step(&p, &DVector::from_element(1, theta), &DalConfig::default()).unwrap();
        assert_close(out[0], -theta, 1e-12);
    }
}

#[test]
fn dal_rate_times_curvature_is_two_below_cap() {
    let p = banana_new();
    let theta = DVector::from_vec(vec![0.4, -0.3]);
    let cfg = DalConfig::default();
    let lr = dal_lr(&p, &theta, &cfg).unwrap();
    let g = p.grad(&theta).unwrap();
    let d = p.hvp(&theta, &(&g / g.norm())).unwrap();
    assert!(lr < cfg.lr_cap);
    assert_close(lr * d.norm(), 2.0, 1e-12);
}

#[test]
fn dal_momentum_without_memory_matches_unit_power_dal_step() {
    let p = banana_new();
    let theta = DVector::from_vec(vec![0.8, 0.5]);
    // cfg.p deliberately not 1: the momentum variant pins p = 1 internally.
    let cfg = DalConfig {
        p: 0.5,
        ..DalConfig::default()
    };
    let (out, _) =
        dal_momentum_step(&p, &theta, &DVector::zeros(2), 0.0, &cfg).unwrap();
    let reference = dal_step(
        &p,
        &theta,
        &DalConfig {
            p: 1.0,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(out, reference);
}

#[test]
fn dal_per_parameter_divides_coordinatewise() {
    let p = diag_quad(&[1.0, 4.0]);
    let theta = DVector::from_vec(vec![1.0, 1.0]);
    let out = dal_per_parameter_step(&p, &theta, &DalConfig::default()).unwrap();

    let g: DVector<f64> = DVector::from_vec(vec![1.0, 4.0]);
    let gn = g.norm();
    let d: DVector<f64> = DVector::from_vec(vec![1.0 / gn, 16.0 / gn]);
    let root_d = 2f64.sqrt();
    let lr0 = (2.0 / (d[0] / root_d).abs()).min(5.0);
    let lr1 = (2.0 / (d[1] / root_d).abs()).min(5.0);
    assert_close(out[0], 1.0 - lr0 * g[0], 1e-12);
    assert_close(out[1], 1.0 - lr1 * g[1], 1e-12);
    // The flat coordinate hits the cap.
    assert_close(lr0, 5.0, 1e-12);
}

#[test]
fn dal_per_parameter_flat_coordinate_takes_the_cap() {
    let p = diag_quad(&[2.0, 0.0]);
    let theta = DVector::from_vec(vec![1.0, 0.0]);
    let out = dal_per_parameter_step(&p, &theta, &DalConfig::default()).unwrap();
    let lr0 = 2.0 / (2.0 / 2f64.sqrt());
    assert_close(out[0], 1.0 - lr0 * 2.0, 1e-12);
    assert_eq!(out[1], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn dal_lr_is_scale_invariant_on_homogeneous_quadratics(
        dim in 1usize..=6,
        seed in any::<u64>(),
        c in 0.1..10.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&raw + raw.transpose()) * 0.5 + DMatrix::identity(dim, dim) * 0.5;
        let p = quadratic_new(a.clone(), DVector::zeros(dim)).unwrap();
        let theta = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));
        prop_assume!((&a * &theta).norm() > 1e-6);
        let cfg = DalConfig::default();
        let base = dal_lr(&p, &theta, &cfg).unwrap();
        let scaled = dal_lr(&p, &(&theta * c), &cfg).unwrap();
        prop_assert!((base - scaled).abs() < 1e-12 * (1.0 + base));
    }
}

// --- game steps -----------------------------------------------------------------

#[test]
fn simultaneous_step_on_bilinear_game() {
    let game = bilinear_game();
    let cfg = GameStepConfig::new(0.1);
    let (phi, theta) = game_sim_step(
        &game,
        &DVector::from_element(1, 1.0),
        &DVector::from_element(1, 1.0),
        &cfg,
    )
    .unwrap();
    assert_close(phi[0], 1.1, 1e-15);
    assert_close(theta[0], 0.9, 1e-15);

    let (phi, theta) =
        game_sim_step(&game, &DVector::zeros(1), &DVector::zeros(1), &cfg).unwrap();
    assert_eq!(phi[0], 0.0);
    assert_eq!(theta[0], 0.0);
}

#[test]
fn simultaneous_step_on_weakly_regularized_linear_game() {
    let game = linear_game_new(0.09, 0.09);
    let cfg = GameStepConfig::new(0.2);
    let (phi, theta) = game_sim_step(
        &game,
        &DVector::from_element(1, 1.0),
        &DVector::zeros(1),
        &cfg,
    )
    .unwrap();
    assert_close(phi[0], 0.982, 1e-15);
    assert_close(theta[0], -0.2, 1e-15);
}

#[test]
fn alternating_step_sees_the_updated_first_player() {
    let game = bilinear_game();
    let cfg = GameStepConfig {
        mode: GameMode::Alternating,
        ..GameStepConfig::new(0.1)
    };
    let (phi, theta) = game_alt_step(
        &game,
        &DVector::from_element(1, 1.0),
        &DVector::from_element(1, 1.0),
        &cfg,
    )
    .unwrap();
    assert_close(phi[0], 1.1, 1e-15);
    assert_close(theta[0], 1.0 - 0.1 * 1.1, 1e-15);

    // With f free of phi and g free of theta, sub-update counts cannot matter.
    let split = GameStepConfig { m: 2, k: 2, ..cfg };
    let (phi2, theta2) = game_alt_step(
        &game,
        &DVector::from_element(1, 1.0),
        &DVector::from_element(1, 1.0),
        &split,
    )
    .unwrap();
    assert_close(phi2[0], phi[0], 1e-14);
    assert_close(theta2[0], theta[0], 1e-14);
}

#[test]
fn alternating_equals_simultaneous_after_substituting_the_new_first_player() {
    let game = bilinear_game();
    let sim_cfg = GameStepConfig::new(0.1);
    let alt_cfg = GameStepConfig {
        mode: GameMode::Alternating,
        ..sim_cfg
    };
    let phi0 = DVector::from_element(1, 1.0);
    let theta0 = DVector::from_element(1, 1.0);
    let (sim_phi, _) = game_sim_step(&game, &phi0, &theta0, &sim_cfg).unwrap();
    let (alt_phi, alt_theta) = game_alt_step(&game, &phi0, &theta0, &alt_cfg).unwrap();
    assert_eq!(alt_phi, sim_phi);
    let g_at_new_phi = game.g(&sim_phi, &theta0).unwrap();
    assert_close(alt_theta[0], theta0[0] + 0.1 * g_at_new_phi[0], 1e-15);
}

#[test]
fn game_steps_enforce_mode_and_shapes() {
    let game = bilinear_game();
    let phi = DVector::from_element(1, 1.0);
    let theta = DVector::from_element(1, 1.0);
    let sim_cfg = GameStepConfig::new(0.1);
    let alt_cfg = GameStepConfig {
        mode: GameMode::Alternating,
        ..sim_cfg
    };
    assert!(matches!(
        game_sim_step(&game, &phi, &theta, &alt_cfg),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        game_alt_step(&game, &phi, &theta, &sim_cfg),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        game_sim_step(&game, &DVector::zeros(2), &theta, &sim_cfg),
        Err(Error::DimensionMismatch { .. })
    ));
    let bad = GameStepConfig {
        m: 0,
        ..alt_cfg
    };
    assert!(matches!(
        game_alt_step(&game, &phi, &theta, &bad),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn rk4_step_tracks_the_matrix_exponential_on_the_linear_game() {
    let game = linear_game_new(0.09, 0.09);
    let j = DMatrix::from_row_slice(2, 2, &[-0.09, 1.0, -1.0, 0.09]);
    let start = DVector::from_vec(vec![0.7, -0.4]);
    let h = 0.05;
    let exact = flow_affine(&j, &DVector::zeros(2), &start, h).unwrap();
    let (phi, theta) = game_rk4_step(
        &game,
        &DVector::from_element(1, start[0]),
        &DVector::from_element(1, start[1]),
        &GameStepConfig::new(h),
    )
    .unwrap();
    assert!((phi[0] - exact[0]).abs() < 1e-8);
    assert!((theta[0] - exact[1]).abs() < 1e-8);

    let (phi, theta) =
        game_rk4_step(&game, &DVector::zeros(1), &DVector::zeros(1), &GameStepConfig::new(h))
            .unwrap();
    assert_eq!(phi[0], 0.0);
    assert_eq!(theta[0], 0.0);
}

#[test]
fn rk4_step_matches_scalar_decay_on_decoupled_players() {
    // E = -(phi^2)/2 + (theta^2)/2 decouples into two independent decays.
    let loss = quadratic_new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
        DVector::zeros(2),
    )
    .unwrap();
    let game = zero_sum_game_from_loss(Arc::new(loss), 1).unwrap();
    let h = 0.1;
    let (phi, theta) = game_rk4_step(
        &game,
        &DVector::from_element(1, 1.0),
        &DVector::from_element(1, -0.7),
        &GameStepConfig::new(h),
    )
    .unwrap();
    let factor = (-h).exp();
    assert!((phi[0] - factor).abs() < 2e-7);
    assert!((theta[0] - (-0.7) * factor).abs() < 2e-7);
}

// --- sgd_two_step -----------------------------------------------------------------

fn scalar_offset_batch(x: f64) -> Arc<dyn Problem> {
    Arc::new(
        quadratic_with_constant(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -x),
            0.5 * x * x,
        )
        .unwrap(),
    )
}

#[test]
fn sgd_visits_batches_in_order() {
    let batches = vec![scalar_offset_batch(0.0), scalar_offset_batch(2.0)];
    let out = sgd_two_step(&batches, &DVector::from_element(1, 1.0), 0.1).unwrap();
    assert_close(out[0], 1.01, 1e-14);
}

#[test]
fn sgd_on_identical_batches_is_plain_gd() {
    let batches = vec![scalar_offset_batch(0.5), scalar_offset_batch(0.5)];
    let theta = DVector::from_element(1, 1.3);
    let out = sgd_two_step(&batches, &theta, 0.2).unwrap();
    let p = scalar_offset_batch(0.5);
    let one = gd_step(p.as_ref(), &theta, 0.2).unwrap();
    let two = gd_step(p.as_ref(), &one, 0.2).unwrap();
    assert_eq!(out, two);
}

#[test]
fn sgd_with_zero_rate_is_identity() {
    let batches = vec![scalar_offset_batch(0.0), scalar_offset_batch(2.0)];
    let theta = DVector::from_element(1, 1.0);
    let out = sgd_two_step(&batches, &theta, 0.0).unwrap();
    assert_eq!(out, theta);
}

#[test]
fn sgd_rejects_empty_batch_list() {
    assert!(matches!(
        sgd_two_step(&[], &DVector::from_element(1, 1.0), 0.1),
        Err(Error::ConfigError(_))
    ));
}

// --- divergence criterion ------------------------------------------------------------

#[test]
fn gd_divergence_matches_spectral_criterion_on_a_grid() {
    for &lambda in &[0.5, 1.3, 2.7, 5.1] {
        for &h in &[0.15, 0.45, 0.85] {
            let p = diag_quad(&[lambda, 0.3]);
            let theta0 = DVector::from_vec(vec![1.0, 1.0]);
            let mut theta = theta0.clone();
            for _ in 0..200 {
                theta = gd_step(&p, &theta, h).unwrap();
            }
            let grows = theta.norm() / theta0.norm() > 1.0;
            let predicted = (1.0 - h * lambda).abs().max((1.0 - h * 0.3).abs()) > 1.0;
            assert_eq!(
                grows, predicted,
                "lambda={lambda}, h={h}: growth {}",
                theta.norm()
            );
        }
    }
}

// --- training loop ---------------------------------------------------------------------

#[test]
fn train_gd_matches_manual_loop() {
    let p = quadratic_new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        DVector::from_vec(vec![0.1, -0.3]),
    )
    .unwrap();
    let theta0 = DVector::from_vec(vec![1.0, -1.0]);
    let run = train(&p, &theta0, &OptimizerKind::Gd { h: 0.1 }, 10, false).unwrap();
    let mut manual = theta0.clone();
    for _ in 0..10 {
        manual = gd_step(&p, &manual, 0.1).unwrap();
    }
    assert_eq!(run.final_params, manual);
    assert_eq!(run.records.len(), 10);
    assert!(run.records.iter().all(|r| r.lr == 0.1));
    assert!(run.records.windows(2).all(|w| w[1].loss <= w[0].loss));
}

#[test]
fn train_dal_records_the_dynamic_rate() {
    let p = diag_quad(&[3.0]);
    let run = train(
        &p,
        &DVector::from_element(1, 0.7),
        &OptimizerKind::Dal(DalConfig::default()),
        4,
        true,
    )
    .unwrap();
    for r in &run.records {
        assert_close(r.lr, 2.0 / 3.0, 1e-12);
        assert_close(r.lambda0.unwrap(), 3.0, 1e-12);
    }
    // DAL at p=1 reflects in one dimension, so the loss is exactly preserved.
    assert_close(run.records[3].loss, run.records[0].loss, 1e-12);
}

#[test]
fn train_csv_layout() {
    let p = diag_quad(&[2.0]);
    let run = train(
        &p,
        &DVector::from_element(1, 1.0),
        &OptimizerKind::Gd { h: 0.25 },
        2,
        false,
    )
    .unwrap();
    let csv = run.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,loss,grad_norm,lr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,1.0000000000000000e0,2.0000000000000000e0,2.5000000000000000e-1"));

    let tracked = train(
        &p,
        &DVector::from_element(1, 1.0),
        &OptimizerKind::Gd { h: 0.25 },
        2,
        true,
    )
    .unwrap();
    assert!(tracked.to_csv().starts_with("iter,loss,grad_norm,lr,lambda0\n"));
}
