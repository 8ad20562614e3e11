mod common;

use std::sync::Arc;

use common::assert_close;
use driftflow::error::Error;
use driftflow::flows::{FlowKind, IntegratorConfig, Scheme};
use driftflow::measures::{
    depth_study_csv, drift_proxy, drift_report, gc_init_depth_study, gc_relu_piecewise,
    geometric_complexity, order_estimate, per_iteration_drift, spearman,
};
use driftflow::optimizers::gd_step;
use driftflow::problems::{
    banana_new, mlp_new, quadratic_new, Activation, Init, LossKind, Mlp, MlpSpec, Problem,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag_quad(entries: &[f64], b: &[f64]) -> impl Problem {
    quadratic_new(
        DMatrix::from_diagonal(&DVector::from_row_slice(entries)),
        DVector::from_row_slice(b),
    )
    .unwrap()
}

fn rk4_config(delta: f64) -> IntegratorConfig {
    IntegratorConfig {
        delta,
        scheme: Scheme::Rk4,
        ..IntegratorConfig::default()
    }
}

#[test]
fn ngf_drift_approaches_its_leading_term() {
    let problem = diag_quad(&[1.0, 4.0], &[0.5, -0.3]);
    let theta = DVector::from_row_slice(&[1.0, 1.0]);
    let mut gaps = Vec::new();
    for h in [1e-3, 1e-4] {
        let drift =
            per_iteration_drift(&problem, &theta, h, FlowKind::Ngf, &rk4_config(h / 100.0))
                .unwrap();
        let (hg, _) = drift_proxy(&problem, &theta).unwrap();
        let ratio = drift / (h * h / 2.0 * hg);
        assert!((ratio - 1.0).abs() < 0.05, "h={h}: ratio {ratio}");
        gaps.push((ratio - 1.0).abs());
    }
    assert!(gaps[1] < gaps[0]);
}

#[test]
fn pf_drift_on_a_quadratic_is_integrator_limited() {
    let problem = diag_quad(&[1.0, 4.0], &[0.5, -0.3]);
    let theta = DVector::from_row_slice(&[1.0, 1.0]);
    let h = 0.2;
    let drift = per_iteration_drift(
        &problem,
        &theta,
        h,
        FlowKind::Pf(h),
        &rk4_config(h / 1000.0),
    )
    .unwrap();
    assert!(drift < 1e-6, "drift {drift}");
}

#[test]
fn drift_vanishes_at_a_critical_point() {
    let problem = diag_quad(&[1.0, 4.0], &[0.0, 0.0]);
    let theta = DVector::zeros(2);
    for flow in [FlowKind::Ngf, FlowKind::Igr(0.1)] {
        let drift =
            per_iteration_drift(&problem, &theta, 0.1, flow, &rk4_config(1e-3)).unwrap();
        assert_close(drift, 0.0, 0.0);
    }
}

#[test]
fn proxy_values_on_the_diagonal_quadratic() {
    let problem = diag_quad(&[1.0, 4.0], &[0.0, 0.0]);

    let (hg, hg_hat) = drift_proxy(&problem, &DVector::from_row_slice(&[0.0, 1.0])).unwrap();
    assert_close(hg, 16.0, 1e-12);
    assert_close(hg_hat, 4.0, 1e-12);

    // At an eigenvector the normalized proxy is exactly the eigenvalue.
    let (_, hg_hat) = drift_proxy(&problem, &DVector::from_row_slice(&[1.0, 0.0])).unwrap();
    assert_close(hg_hat, 1.0, 1e-12);

    // Homogeneous in the point when the linear term vanishes.
    for c in [2.0, 10.0, 0.3] {
        let (_, hg_hat) = drift_proxy(&problem, &DVector::from_row_slice(&[0.0, c])).unwrap();
        assert_close(hg_hat, 4.0, 1e-12);
    }

    assert!(matches!(
        drift_proxy(&problem, &DVector::zeros(2)),
        Err(Error::ZeroGradient)
    ));
}

#[test]
fn spearman_is_a_rank_statistic() {
    assert_close(
        spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 40.0, 80.0]).unwrap(),
        1.0,
        1e-14,
    );
    assert_close(
        spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 1.0, 0.0, -2.0]).unwrap(),
        -1.0,
        1e-14,
    );
    // Tie in the first sample: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
    assert_close(
        spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        0.9f64.sqrt(),
        1e-14,
    );
    assert!(matches!(
        spearman(&[1.0, 2.0], &[1.0]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
        Err(Error::DegenerateFit(_))
    ));
    assert!(matches!(
        spearman(&[1.0, f64::NAN], &[1.0, 2.0]),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn order_fit_recovers_exact_powers() {
    let pairs: Vec<(f64, f64)> = (0..5)
        .map(|k| {
            let h = 0.1 * 0.5f64.powi(k);
            (h, 7.0 * h.powi(3))
        })
        .collect();
    let fit = order_estimate(&pairs).unwrap();
    assert_close(fit.slope, 3.0, 1e-12);
    assert_close(fit.intercept, 7.0f64.ln(), 1e-12);
    assert!(fit.r2 > 1.0 - 1e-12);
    assert_eq!(fit.h.len(), 5);
}

#[test]
fn order_fit_tolerates_repeated_step_sizes() {
    let e = |h: f64| 5.0 * h * h;
    let pairs = [(0.1, e(0.1)), (0.1, e(0.1)), (0.2, e(0.2)), (0.2, e(0.2))];
    let fit = order_estimate(&pairs).unwrap();
    assert_close(fit.slope, 2.0, 1e-12);
}

#[test]
fn order_fit_shrugs_off_additive_noise_below_the_signal() {
    let pairs: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let h = 0.8 * 0.5f64.powi(k);
            (h, h * h + 1e-12 * (1.0 + 0.5 * k as f64))
        })
        .collect();
    let fit = order_estimate(&pairs).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.01, "slope {}", fit.slope);
    assert!(fit.r2 > 0.9999);
}

#[test]
fn order_fit_validates_its_input() {
    assert!(matches!(
        order_estimate(&[(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)]),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        order_estimate(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0), (0.1, 4.0)]),
        Err(Error::DegenerateFit(_))
    ));
    assert!(matches!(
        order_estimate(&[(0.1, 1.0), (0.2, 0.0), (0.3, 3.0), (0.4, 4.0)]),
        Err(Error::ConfigError(_))
    ));
}

fn linear_model(w: DMatrix<f64>, inputs: DMatrix<f64>) -> Mlp {
    let out = w.nrows();
    let n = inputs.ncols();
    let spec = MlpSpec {
        widths: vec![w.ncols(), out],
        activation: Activation::Relu,
        loss: LossKind::Mse,
        weights: vec![w],
        biases: vec![DVector::from_element(out, 0.1)],
        inputs,
        targets: DMatrix::zeros(out, n),
    };
    mlp_new(spec).unwrap()
}

#[test]
fn linear_model_complexity_is_the_frobenius_norm() {
    let w = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 1.1, -0.7]);
    let expected = w.norm_squared();
    for seed in [1u64, 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = DMatrix::from_fn(3, 7, |_, _| rng.gen_range(-3.0..3.0));
        let model = linear_model(w.clone(), inputs.clone());
        let theta = model.spec().flatten();
        let gc = geometric_complexity(&model, &theta, &inputs).unwrap();
        assert_close(gc, expected, 1e-12);
        let pw = gc_relu_piecewise(&model, &theta, &inputs).unwrap();
        assert_close(pw, expected, 1e-12);
    }

    let eye = DMatrix::identity(2, 2);
    let inputs = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.9, 0.4]);
    let model = linear_model(eye, inputs.clone());
    let theta = model.spec().flatten();
    assert_close(
        geometric_complexity(&model, &theta, &inputs).unwrap(),
        2.0,
        1e-14,
    );
}

fn random_relu_net(widths: Vec<usize>, n_inputs: usize, seed: u64) -> (Mlp, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = DMatrix::from_fn(widths[0], n_inputs, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let targets = DMatrix::zeros(*widths.last().unwrap(), n_inputs);
    let spec = MlpSpec::random(
        widths,
        Activation::Relu,
        LossKind::Mse,
        inputs.clone(),
        targets,
        Init::GlorotUniform,
        &mut rng,
    )
    .unwrap();
    (mlp_new(spec).unwrap(), inputs)
}

#[test]
fn piecewise_and_jacobian_complexity_agree_on_random_nets() {
    for seed in 0..5u64 {
        let (model, inputs) = random_relu_net(vec![2, 4, 2], 50, seed);
        let theta = model.spec().flatten();
        let dense = geometric_complexity(&model, &theta, &inputs).unwrap();
        let piecewise = gc_relu_piecewise(&model, &theta, &inputs).unwrap();
        assert_close(piecewise, dense, 1e-8 * (1.0 + dense));
    }
}

#[test]
fn single_region_complexity_is_the_composite_operator_norm() {
    // Positive weights, positive bias, positive inputs: every unit active,
    // so the whole batch sits in one linear region.
    let w1 = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.1, 0.9]);
    let w2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 0.75]);
    let spec = MlpSpec {
        widths: vec![2, 2, 2],
        activation: Activation::Relu,
        loss: LossKind::Mse,
        weights: vec![w1.clone(), w2.clone()],
        biases: vec![DVector::from_element(2, 0.5), DVector::zeros(2)],
        inputs: DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.4, 0.8, 0.2, 0.6]),
        targets: DMatrix::zeros(2, 3),
    };
    let model = mlp_new(spec).unwrap();
    let theta = model.spec().flatten();
    let inputs = model.spec().inputs.clone();
    let expected = (&w2 * &w1).norm_squared();
    assert_close(
        geometric_complexity(&model, &theta, &inputs).unwrap(),
        expected,
        1e-13,
    );
    assert_close(
        gc_relu_piecewise(&model, &theta, &inputs).unwrap(),
        expected,
        1e-13,
    );
}

#[test]
fn dead_units_do_not_contribute() {
    // The second hidden unit's bias pins it below zero on the whole batch,
    // so its outgoing weights must be invisible to the measure.
    let w1 = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.1, 0.9]);
    let mut w2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 0.75]);
    let make = |w2: DMatrix<f64>| {
        let spec = MlpSpec {
            widths: vec![2, 2, 2],
            activation: Activation::Relu,
            loss: LossKind::Mse,
            weights: vec![w1.clone(), w2],
            biases: vec![
                DVector::from_row_slice(&[0.5, -10.0]),
                DVector::zeros(2),
            ],
            inputs: DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.4, 0.8, 0.2, 0.6]),
            targets: DMatrix::zeros(2, 3),
        };
        mlp_new(spec).unwrap()
    };
    let base = make(w2.clone());
    let theta = base.spec().flatten();
    let inputs = base.spec().inputs.clone();
    let gc0 = gc_relu_piecewise(&base, &theta, &inputs).unwrap();

    w2.column_mut(1).scale_mut(1000.0);
    let scaled = make(w2);
    let theta = scaled.spec().flatten();
    let gc1 = gc_relu_piecewise(&scaled, &theta, &inputs).unwrap();
    assert_close(gc1, gc0, 1e-15 * gc0);
    assert_close(
        geometric_complexity(&scaled, &theta, &inputs).unwrap(),
        gc0,
        1e-12 * gc0,
    );
}

#[test]
fn complexity_survives_an_identity_layer() {
    let (model, inputs) = random_relu_net(vec![3, 5, 2], 20, 9);
    let theta = model.spec().flatten();
    let gc0 = geometric_complexity(&model, &theta, &inputs).unwrap();

    let spec = model.spec();
    let padded = MlpSpec {
        widths: vec![3, 5, 5, 2],
        activation: Activation::Relu,
        loss: LossKind::Mse,
        weights: vec![
            spec.weights[0].clone(),
            DMatrix::identity(5, 5),
            spec.weights[1].clone(),
        ],
        biases: vec![
            spec.biases[0].clone(),
            DVector::zeros(5),
            spec.biases[1].clone(),
        ],
        inputs: spec.inputs.clone(),
        targets: spec.targets.clone(),
    };
    let padded = mlp_new(padded).unwrap();
    let theta = padded.spec().flatten();
    assert_close(
        geometric_complexity(&padded, &theta, &inputs).unwrap(),
        gc0,
        1e-14 * (1.0 + gc0),
    );
    assert_close(
        gc_relu_piecewise(&padded, &theta, &inputs).unwrap(),
        gc0,
        1e-14 * (1.0 + gc0),
    );
}

#[test]
fn piecewise_measure_rejects_smooth_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
    let targets = DMatrix::zeros(2, 4);
    let spec = MlpSpec::random(
        vec![2, 3, 2],
        Activation::Tanh,
        LossKind::Mse,
        inputs.clone(),
        targets,
        Init::GlorotUniform,
        &mut rng,
    )
    .unwrap();
    let model = mlp_new(spec).unwrap();
    let theta = model.spec().flatten();
    assert!(matches!(
        gc_relu_piecewise(&model, &theta, &inputs),
        Err(Error::NotPiecewiseLinear(_))
    ));
}

#[test]
fn zero_parameters_have_zero_complexity() {
    let inputs = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.4, 0.8, 0.2, 0.6]);
    let targets = DMatrix::zeros(2, 3);
    let spec = MlpSpec::zeros(
        vec![2, 4, 2],
        Activation::Relu,
        LossKind::Mse,
        inputs.clone(),
        targets,
    )
    .unwrap();
    let model = mlp_new(spec).unwrap();
    let theta = model.spec().flatten();
    assert_close(geometric_complexity(&model, &theta, &inputs).unwrap(), 0.0, 0.0);
    assert_close(gc_relu_piecewise(&model, &theta, &inputs).unwrap(), 0.0, 0.0);
}

#[test]
fn complexity_checks_input_shapes() {
    let (model, _) = random_relu_net(vec![3, 5, 2], 4, 1);
    let theta = model.spec().flatten();
    let wrong_rows = DMatrix::zeros(2, 4);
    assert!(matches!(
        geometric_complexity(&model, &theta, &wrong_rows),
        Err(Error::ShapeMismatch(_))
    ));
    let empty = DMatrix::zeros(3, 0);
    assert!(matches!(
        gc_relu_piecewise(&model, &theta, &empty),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn depth_one_glorot_complexity_matches_its_expectation() {
    let seeds: Vec<u64> = (0..8).collect();
    let rows = gc_init_depth_study(16, &[1], Init::GlorotUniform, &seeds, 16, 4).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].depth, 1);
    // E‖W‖²_F = in·out·Var(w) = 2·in·out/(in+out) = 16 for square layers.
    assert!(
        (rows[0].mean_gc - 16.0).abs() < 1.3,
        "mean {}",
        rows[0].mean_gc
    );
    assert!(rows[0].std_gc > 0.0);

    let again = gc_init_depth_study(16, &[1], Init::GlorotUniform, &seeds, 16, 4).unwrap();
    assert_eq!(rows[0].mean_gc.to_bits(), again[0].mean_gc.to_bits());
    assert_eq!(rows[0].std_gc.to_bits(), again[0].std_gc.to_bits());

    let csv = depth_study_csv(&rows);
    assert!(csv.starts_with("depth,mean_gc,std_gc\n"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn initial_complexity_falls_with_depth() {
    let seeds: Vec<u64> = (0..6).collect();
    let rows =
        gc_init_depth_study(64, &[2, 4, 6], Init::StandardTruncated, &seeds, 10, 8).unwrap();
    assert_eq!(rows.len(), 3);
    for pair in rows.windows(2) {
        assert!(
            pair[1].mean_gc < pair[0].mean_gc,
            "depth {} mean {} !< depth {} mean {}",
            pair[1].depth,
            pair[1].mean_gc,
            pair[0].depth,
            pair[0].mean_gc
        );
    }
}

#[test]
fn depth_study_validates_its_arguments() {
    assert!(matches!(
        gc_init_depth_study(0, &[1], Init::GlorotUniform, &[1], 2, 2),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        gc_init_depth_study(4, &[], Init::GlorotUniform, &[1], 2, 2),
        Err(Error::ConfigError(_))
    ));
    assert!(matches!(
        gc_init_depth_study(4, &[1, 0], Init::GlorotUniform, &[1], 2, 2),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn banana_drift_tracks_the_normalized_proxy() {
    let problem = banana_new();
    let theta0 = DVector::from_row_slice(&[0.9, 0.81]);
    let h = 1.5e-3;
    // h·λ₀ stays between 1 and 2 along this run: the oscillatory band.
    let report = drift_report(
        &problem,
        &theta0,
        h,
        FlowKind::Ngf,
        &rk4_config(h / 50.0),
        500,
    )
    .unwrap();
    assert!(report.spearman >= 0.8, "spearman {}", report.spearman);
    assert!(report.spearman <= 1.0);
    assert_eq!(report.drift.len(), 500);
    assert_eq!(report.hg.len(), 500);
    assert_eq!(report.hg_hat.len(), 500);
    assert_eq!(report.grad_norm.len(), 500);
    assert!(report.hg_hat.iter().all(|v| v.is_finite()));

    let csv = report.to_csv();
    assert!(csv.starts_with("iteration,drift,hg,hg_hat,grad_norm\n"));
    assert_eq!(csv.lines().count(), 501);

    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"spearman\""));
}

#[test]
fn principal_flow_tracks_descent_closer_than_the_inertial_flow() {
    let problem = banana_new();
    let mut theta = DVector::from_row_slice(&[0.9, 0.81]);
    let h = 2e-4;
    let config = rk4_config(h / 100.0);
    for _ in 0..20 {
        let pf = per_iteration_drift(&problem, &theta, h, FlowKind::Pf(h), &config).unwrap();
        let igr = per_iteration_drift(&problem, &theta, h, FlowKind::Igr(h), &config).unwrap();
        assert!(igr > 5.0 * pf, "igr {igr} pf {pf}");
        theta = gd_step(&problem, &theta, h).unwrap();
    }
}

#[test]
fn drift_report_needs_at_least_one_iteration() {
    let problem = diag_quad(&[1.0, 4.0], &[0.5, -0.3]);
    let theta0 = DVector::from_row_slice(&[1.0, 1.0]);
    assert!(matches!(
        drift_report(
            &problem,
            &theta0,
            0.1,
            FlowKind::Ngf,
            &rk4_config(1e-3),
            0
        ),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn report_builder_and_standalone_drift_agree() {
    let problem = diag_quad(&[1.0, 4.0], &[0.5, -0.3]);
    let theta0 = DVector::from_row_slice(&[1.0, 1.0]);
    let h = 0.05;
    let config = rk4_config(h / 100.0);
    let report =
        drift_report(&problem, &theta0, h, FlowKind::Ngf, &config, 5).unwrap();

    let mut theta = theta0.clone();
    for i in 0..5 {
        let d = per_iteration_drift(&problem, &theta, h, FlowKind::Ngf, &config).unwrap();
        assert_close(report.drift[i], d, 1e-15);
        let (hg, hg_hat) = drift_proxy(&problem, &theta).unwrap();
        assert_close(report.hg[i], hg, 1e-15);
        assert_close(report.hg_hat[i], hg_hat, 1e-15);
        theta = gd_step(&problem, &theta, h).unwrap();
    }
}

#[test]
fn arc_problems_work_through_the_measure_api() {
    // The measure functions take &dyn Problem, so shared handles flow through.
    let problem: Arc<dyn Problem> = Arc::new(diag_quad(&[2.0, 3.0], &[0.1, 0.2]));
    let theta = DVector::from_row_slice(&[0.5, -0.5]);
    let (hg, _) = drift_proxy(problem.as_ref(), &theta).unwrap();
    assert!(hg > 0.0);
}
