mod common;

use common::{assert_c_close, assert_close, assert_vec_close, C64};
use driftflow::calculus::{
    eig_general, eig_general_c, eig_sym, fd_grad, fd_hvp, fd_third, flow_affine, promote_matrix,
};
use driftflow::problems::{banana_new, quadratic_new};
use driftflow::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

#[test]
fn eig_sym_diagonal_matrix() {
    let h = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let s = eig_sym(&h, None).unwrap();
    assert_c_close(s.eigenvalues[0], C64::new(3.0, 0.0), 1e-12);
    assert_c_close(s.eigenvalues[1], C64::new(1.0, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(0, 0)], C64::new(1.0, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(1, 1)], C64::new(1.0, 0.0), 1e-12);
}

#[test]
fn eig_sym_coupled_two_by_two() {
    // Hand eigensolve of [[2,1],[1,2]]: eigenpairs (3, (1,1)/√2), (1, (1,−1)/√2).
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let s = eig_sym(&h, None).unwrap();
    let r = 0.5f64.sqrt();
    assert_c_close(s.eigenvalues[0], C64::new(3.0, 0.0), 1e-12);
    assert_c_close(s.eigenvalues[1], C64::new(1.0, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(0, 0)], C64::new(r, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(1, 0)], C64::new(r, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(0, 1)], C64::new(r, 0.0), 1e-12);
    assert_c_close(s.eigenvectors[(1, 1)], C64::new(-r, 0.0), 1e-12);
}

#[test]
fn eig_sym_zero_matrix_passes_residual() {
    let h = DMatrix::zeros(3, 3);
    let s = eig_sym(&h, None).unwrap();
    for i in 0..3 {
        assert_c_close(s.eigenvalues[i], C64::new(0.0, 0.0), 1e-14);
    }
    assert!(s.max_residual(&promote_matrix(&h)) <= 1e-8);
}

#[test]
fn eig_sym_sign_fixed_against_reference_gradient() {
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let g = DVector::from_vec(vec![-1.0, -1.0]);
    let s = eig_sym(&h, Some(&g)).unwrap();
    for i in 0..2 {
        let dot: C64 = (0..2).map(|k| C64::new(g[k], 0.0) * s.eigenvectors[(k, i)]).sum();
        assert!(
            dot.re >= -1e-12,
            "column {i} has negative gradient overlap {dot}"
        );
    }
}

#[test]
fn eig_sym_rejects_asymmetric_input() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    match eig_sym(&h, None) {
        Err(Error::NonSymmetric { max_asymmetry }) => assert_close(max_asymmetry, 0.5, 1e-12),
        other => panic!("expected NonSymmetric, got {other:?}"),
    }
}

#[test]
fn eig_general_rotation_gives_conjugate_imaginary_pair() {
    // Characteristic polynomial of [[0,1],[−1,0]] is λ²+1.
    let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let s = eig_general(&j).unwrap();
    assert_c_close(s.eigenvalues[0], C64::new(0.0, 1.0), 1e-10);
    assert_c_close(s.eigenvalues[1], C64::new(0.0, -1.0), 1e-10);
    assert!(s.max_residual(&promote_matrix(&j)) <= 1e-8 * 2.0);
}

#[test]
fn eig_general_damped_rotation_matches_trace_and_det() {
    // 2×2 trace/det: det = 0.00919·(−0.01081) + 0.982 = 0.9819006561, and the
    // discriminant is negative so both eigenvalues share Re = trace/2 < 0.
    let j = DMatrix::from_row_slice(2, 2, &[0.00919, 1.0, -0.982, -0.01081]);
    let s = eig_general(&j).unwrap();
    assert!(s.eigenvalues[0].re < 0.0);
    assert!(s.eigenvalues[1].re < 0.0);
    let det = s.eigenvalues[0] * s.eigenvalues[1];
    assert_c_close(det, C64::new(0.9819006561, 0.0), 1e-9);
    assert_close(s.eigenvalues[0].re, -0.00081, 1e-12);
}

#[test]
fn eig_general_upper_triangular_reads_diagonal() {
    let j = DMatrix::from_row_slice(3, 3, &[5.0, 1.0, 2.0, 0.0, -3.0, 7.0, 0.0, 0.0, 1.5]);
    let s = eig_general(&j).unwrap();
    assert_c_close(s.eigenvalues[0], C64::new(5.0, 0.0), 1e-9);
    assert_c_close(s.eigenvalues[1], C64::new(1.5, 0.0), 1e-9);
    assert_c_close(s.eigenvalues[2], C64::new(-3.0, 0.0), 1e-9);
}

#[test]
fn eig_general_identity_has_full_repeated_eigenspace() {
    let j = DMatrix::identity(3, 3);
    let s = eig_general(&j).unwrap();
    for i in 0..3 {
        assert_c_close(s.eigenvalues[i], C64::new(1.0, 0.0), 1e-10);
    }
    assert!(s.max_residual(&promote_matrix(&j)) <= 1e-8 * 2.0);
    // The recovered vectors must be mutually orthogonal, not copies.
    for i in 0..3 {
        for k in (i + 1)..3 {
            let dot: C64 = (0..3)
                .map(|r| s.eigenvectors[(r, i)].conj() * s.eigenvectors[(r, k)])
                .sum();
            assert!(dot.norm() < 1e-10);
        }
    }
}

#[test]
fn eig_general_refuses_jordan_block() {
    let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    match eig_general(&j) {
        Err(Error::Defective { .. }) => {}
        other => panic!("expected Defective, got {other:?}"),
    }
}

#[test]
fn eig_general_complex_input() {
    // diag(i, −2i) plus a coupling entry keeps the diagonal the spectrum.
    let mut m = nalgebra::DMatrix::<C64>::zeros(2, 2);
    m[(0, 0)] = C64::new(0.0, 1.0);
    m[(0, 1)] = C64::new(0.5, 0.25);
    m[(1, 1)] = C64::new(0.0, -2.0);
    let s = eig_general_c(&m).unwrap();
    assert_c_close(s.eigenvalues[0], C64::new(0.0, 1.0), 1e-10);
    assert_c_close(s.eigenvalues[1], C64::new(0.0, -2.0), 1e-10);
    assert!(s.max_residual(&m) <= 1e-8 * 3.0);
}

#[test]
fn eig_sym_large_random_reconstruction() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let n = 64;
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
    let h = (&raw + raw.transpose()) * 0.5;
    let s = eig_sym(&h, None).unwrap();
    let u = &s.eigenvectors;
    let lam = nalgebra::DMatrix::from_diagonal(&s.eigenvalues);
    let recon = u * lam * u.adjoint();
    let diff = (&recon - promote_matrix(&h)).map(|z| z.norm()).max();
    assert!(
        diff <= 1e-7 * h.norm(),
        "reconstruction error {diff:.3e} too large"
    );
}

#[test]
fn fd_grad_exact_on_quadratics() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let b = DVector::from_vec(vec![1.0, -1.0]);
    let q = quadratic_new(a.clone(), b.clone()).unwrap();
    let theta = DVector::from_vec(vec![0.3, -0.7]);
    let fd = fd_grad(&q, &theta, 1e-5).unwrap();
    assert_vec_close(&fd, &(&a * &theta + &b), 1e-10);
}

#[test]
fn fd_grad_banana_origin() {
    let banana = banana_new();
    let fd = fd_grad(&banana, &DVector::from_vec(vec![0.0, 0.0]), 1e-5).unwrap();
    assert_vec_close(&fd, &DVector::from_vec(vec![-2.0, 0.0]), 1e-6);
}

#[test]
fn fd_third_vanishes_on_quadratics() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let q = quadratic_new(a, DVector::zeros(2)).unwrap();
    let theta = DVector::from_vec(vec![0.3, -0.7]);
    let v = DVector::from_vec(vec![1.0, 2.0]);
    let w = DVector::from_vec(vec![-1.0, 0.5]);
    let t = fd_third(&q, &theta, &v, &w, 1e-4).unwrap();
    assert_vec_close(&t, &DVector::zeros(2), 1e-6);
}

#[test]
fn fd_hvp_matches_analytic_on_banana() {
    let banana = banana_new();
    let theta = DVector::from_vec(vec![0.4, -0.2]);
    let v = DVector::from_vec(vec![1.0, -1.5]);
    use driftflow::problems::Problem;
    let analytic = banana.hvp(&theta, &v).unwrap();
    let fd = fd_hvp(&banana, &theta, &v, 1e-6).unwrap();
    assert_vec_close(&fd, &analytic, 1e-5);
}

#[test]
fn fd_oracles_converge_at_second_order() {
    // Halving ε must quarter the error on a smooth non-quadratic problem.
    let banana = banana_new();
    use driftflow::problems::Problem;
    let theta = DVector::from_vec(vec![0.7, 0.3]);
    let analytic = banana.grad(&theta).unwrap();
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eps| (fd_grad(&banana, &theta, eps).unwrap() - &analytic).norm())
        .collect();
    for pair in errs.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!(
            (ratio - 4.0).abs() < 0.6,
            "error ratio {ratio} not close to 4 (errors {errs:?})"
        );
    }
}

#[test]
fn fd_rejects_nonpositive_step() {
    let banana = banana_new();
    let theta = DVector::zeros(2);
    assert!(matches!(
        fd_grad(&banana, &theta, 0.0),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn flow_affine_scalar_relaxation() {
    // ẋ = −x + 1 from 0: x(t) = 1 − e^{−t}.
    let m = DMatrix::from_row_slice(1, 1, &[-1.0]);
    let c = DVector::from_vec(vec![1.0]);
    let x0 = DVector::zeros(1);
    for &t in &[0.1, 1.0, 3.0] {
        let x = flow_affine(&m, &c, &x0, t).unwrap();
        assert_close(x[0], 1.0 - (-t).exp(), 1e-12);
    }
}

#[test]
fn flow_affine_rotation_preserves_radius() {
    let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let c = DVector::zeros(2);
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let x = flow_affine(&m, &c, &x0, 2.0).unwrap();
    assert_close(x.norm(), 1.0, 1e-12);
    assert_close(x[0], 2.0f64.cos(), 1e-12);
    assert_close(x[1], -2.0f64.sin(), 1e-12);
}

fn arb_square(max_dim: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_dim)
        .prop_flat_map(move |n| {
            proptest::collection::vec(-scale..scale, n * n)
                .prop_map(move |v| DMatrix::from_vec(n, n, v))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eig_sym_reconstructs_random_symmetric(m in arb_square(8, 3.0)) {
        let h = (&m + m.transpose()) * 0.5;
        let s = eig_sym(&h, None).unwrap();
        let lam = nalgebra::DMatrix::from_diagonal(&s.eigenvalues);
        let recon = &s.eigenvectors * lam * s.eigenvectors.adjoint();
        let diff = (&recon - promote_matrix(&h)).map(|z| z.norm()).max();
        prop_assert!(diff <= 1e-7 * (1.0 + h.norm()));
    }

    #[test]
    fn eig_general_real_input_conjugate_paired(m in arb_square(6, 3.0)) {
        let s = eig_general(&m).unwrap();
        // Every eigenvalue with positive imaginary part must have a conjugate
        // partner of matching multiplicity.
        let tol = 1e-6 * (1.0 + common::inf_norm(&m));
        for lam in s.eigenvalues.iter() {
            if lam.im.abs() > tol {
                let found = s
                    .eigenvalues
                    .iter()
                    .any(|mu| (mu - lam.conj()).norm() <= tol);
                prop_assert!(found, "no conjugate partner for {lam}");
            }
        }
    }

    #[test]
    fn eig_general_residuals_within_contract(m in arb_square(6, 3.0)) {
        let s = eig_general(&m).unwrap();
        let bound = 1e-8 * (1.0 + common::inf_norm(&m));
        prop_assert!(s.max_residual(&promote_matrix(&m)) <= bound * 10.0);
    }
}
