use super::{ensure_dim, Problem};
use crate::calculus::{C64, CMatrix, CVector};
use crate::error::Result;

/// A one-dimensional piecewise objective with a cosine valley on the left:
/// E(θ) = cos(θ) + θ for θ < 0, and 2(θ/3)² + θ/3 + 1 for θ ≥ 0.
///
/// The branches meet continuously at θ = 0 but the derivative jumps there, so
/// the point θ = 0 uses the right branch. For complex inputs the branch is
/// chosen by the real part; each branch is analytic on its own.
pub struct Cos1d;

/// Build the piecewise cosine objective.
pub fn cos1d_new() -> Cos1d {
    Cos1d
}

fn left_branch(theta: C64) -> bool {
    theta.re < 0.0
}

impl Problem for Cos1d {
    fn dim(&self) -> usize {
        1
    }

    fn supports_complex(&self) -> bool {
        true
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        ensure_dim(1, theta.len())?;
        let t = theta[0];
        if left_branch(t) {
            Ok(t.cos() + t)
        } else {
            let third = t / C64::new(3.0, 0.0);
            Ok(C64::new(2.0, 0.0) * third * third + third + C64::new(1.0, 0.0))
        }
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        ensure_dim(1, theta.len())?;
        let t = theta[0];
        let g = if left_branch(t) {
            -t.sin() + C64::new(1.0, 0.0)
        } else {
            C64::new(4.0 / 9.0, 0.0) * t + C64::new(1.0 / 3.0, 0.0)
        };
        Ok(CVector::from_vec(vec![g]))
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        ensure_dim(1, theta.len())?;
        let t = theta[0];
        let h = if left_branch(t) {
            -t.cos()
        } else {
            C64::new(4.0 / 9.0, 0.0)
        };
        Ok(CMatrix::from_row_slice(1, 1, &[h]))
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        ensure_dim(1, theta.len())?;
        ensure_dim(1, v.len())?;
        ensure_dim(1, w.len())?;
        let t = theta[0];
        let third = if left_branch(t) {
            t.sin()
        } else {
            C64::new(0.0, 0.0)
        };
        Ok(CVector::from_vec(vec![third * v[0] * w[0]]))
    }
}
