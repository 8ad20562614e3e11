use nalgebra::{DMatrix, DVector};

use super::{ensure_dim, Problem};
use crate::calculus::{promote, promote_matrix, C64, CMatrix, CVector};
use crate::error::{Error, Result};

/// The quadratic objective E(θ) = ½θᵀAθ + bᵀθ + c with symmetric A.
///
/// Derivatives are exact and the analytic extension to complex θ is the same
/// polynomial, so every flow in this crate can be checked against closed
/// forms on it.
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    constant: f64,
    a_c: CMatrix,
    b_c: CVector,
}

impl Quadratic {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// The minimiser −A⁻¹b when A is invertible.
    pub fn minimizer(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&(-&self.b))
    }
}

/// Build the quadratic ½θᵀAθ + bᵀθ. A must be symmetric to 1e-10 (absolute,
/// per entry).
pub fn quadratic_new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Quadratic> {
    quadratic_with_constant(a, b, 0.0)
}

/// Build ½θᵀAθ + bᵀθ + c. The constant shifts values only; all derivatives
/// ignore it.
pub fn quadratic_with_constant(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Quadratic> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    ensure_dim(rows, b.len())?;
    let mut max_asymmetry: f64 = 0.0;
    for i in 0..rows {
        for j in (i + 1)..cols {
            max_asymmetry = max_asymmetry.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if max_asymmetry > 1e-10 {
        return Err(Error::NonSymmetric { max_asymmetry });
    }
    Ok(Quadratic {
        a_c: promote_matrix(&a),
        b_c: promote(&b),
        a,
        b,
        constant: c,
    })
}

impl Problem for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn supports_complex(&self) -> bool {
        true
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        ensure_dim(self.dim(), theta.len())?;
        let a_theta = &self.a_c * theta;
        let quad = theta.dot(&a_theta) * C64::new(0.5, 0.0);
        let lin = self.b_c.dot(theta);
        Ok(quad + lin + C64::new(self.constant, 0.0))
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        ensure_dim(self.dim(), theta.len())?;
        Ok(&self.a_c * theta + &self.b_c)
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        ensure_dim(self.dim(), theta.len())?;
        Ok(self.a_c.clone())
    }

    fn hvp_c(&self, theta: &CVector, v: &CVector) -> Result<CVector> {
        ensure_dim(self.dim(), theta.len())?;
        ensure_dim(self.dim(), v.len())?;
        Ok(&self.a_c * v)
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        ensure_dim(self.dim(), theta.len())?;
        ensure_dim(self.dim(), v.len())?;
        ensure_dim(self.dim(), w.len())?;
        Ok(CVector::zeros(self.dim()))
    }
}
