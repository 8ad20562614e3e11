#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub type C64 = Complex<f64>;

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!(
        (a - b).abs() <= tol,
        "expected {b}, got {a} (|diff| = {:.3e} > tol {tol:.1e})",
        (a - b).abs()
    );
}

pub fn assert_c_close(a: C64, b: C64, tol: f64) {
    assert!(
        (a - b).norm() <= tol,
        "expected {b}, got {a} (|diff| = {:.3e} > tol {tol:.1e})",
        (a - b).norm()
    );
}

pub fn assert_vec_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch: {} vs {}", a.len(), b.len());
    for i in 0..a.len() {
        assert!(
            (a[i] - b[i]).abs() <= tol,
            "entry {i}: expected {}, got {} (tol {tol:.1e})\nfull: {a} vs {b}",
            b[i],
            a[i]
        );
    }
}

pub fn assert_mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            assert!(
                (a[(i, j)] - b[(i, j)]).abs() <= tol,
                "entry ({i},{j}): expected {}, got {} (tol {tol:.1e})",
                b[(i, j)],
                a[(i, j)]
            );
        }
    }
}

/// Matrix infinity norm (max absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
