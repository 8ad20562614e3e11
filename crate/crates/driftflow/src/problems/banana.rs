use super::{ensure_dim, Problem};
use crate::calculus::{C64, CMatrix, CVector};
use crate::error::Result;

/// The banana-valley objective E(x, y) = (1−x)² + 100(y−x²)².
///
/// A polynomial, so all derivatives are exact and the complex extension is
/// immediate. Its narrow curved valley is the standard stress test for how a
/// flow handles sharp curvature next to a flat direction.
pub struct Banana;

/// Build the banana objective.
pub fn banana_new() -> Banana {
    Banana
}

impl Problem for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn supports_complex(&self) -> bool {
        true
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        ensure_dim(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let one = C64::new(1.0, 0.0);
        let hundred = C64::new(100.0, 0.0);
        Ok((one - x) * (one - x) + hundred * (y - x * x) * (y - x * x))
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        ensure_dim(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let one = C64::new(1.0, 0.0);
        let gx = C64::new(-2.0, 0.0) * (one - x) - C64::new(400.0, 0.0) * x * (y - x * x);
        let gy = C64::new(200.0, 0.0) * (y - x * x);
        Ok(CVector::from_vec(vec![gx, gy]))
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        ensure_dim(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let hxx = C64::new(2.0, 0.0) - C64::new(400.0, 0.0) * y + C64::new(1200.0, 0.0) * x * x;
        let hxy = C64::new(-400.0, 0.0) * x;
        let hyy = C64::new(200.0, 0.0);
        Ok(CMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]))
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        ensure_dim(2, theta.len())?;
        ensure_dim(2, v.len())?;
        ensure_dim(2, w.len())?;
        // Nonzero third partials: ∂³/∂x³ = 2400x and ∂³/∂x²∂y = −400 (in all
        // index orders).
        let x = theta[0];
        let c2400 = C64::new(2400.0, 0.0);
        let c400 = C64::new(400.0, 0.0);
        let tx = c2400 * x * v[0] * w[0] - c400 * (v[0] * w[1] + v[1] * w[0]);
        let ty = -c400 * v[0] * w[0];
        Ok(CVector::from_vec(vec![tx, ty]))
    }
}
