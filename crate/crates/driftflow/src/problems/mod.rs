//! The test-problem zoo: losses, gradients, Hessians, Hessian-vector
//! products, and third-derivative contractions for every desk-scale objective
//! and game the crate studies.
//!
//! Problems evaluate over complex parameter vectors. Analytic problems
//! (quadratics, the banana, the one-dimensional cosine, the games' losses)
//! extend off the real axis; the MLP is real-only and reports
//! [`Error::ComplexUnsupported`](crate::Error::ComplexUnsupported) when handed
//! a point with a nonzero imaginary part. Real-input convenience methods wrap
//! the complex ones, so implementors only write the `_c` family.

mod banana;
mod cos1d;
mod games;
mod mlp;
mod quadratic;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::calculus::{promote, re_matrix, re_vector, C64, CMatrix, CVector};
use crate::error::{Error, Result};

pub use banana::{banana_new, Banana};
pub use cos1d::{cos1d_new, Cos1d};
pub use games::{
    dirac_gan_new, linear_game_new, zero_sum_game_from_loss, DiracGan, DiracGanLoss, GanLoss,
    LinearGame, ZeroSumFromLoss,
};
pub use mlp::{mlp_new, Activation, Init, LossKind, Mlp, MlpSpec};
pub use quadratic::{quadratic_new, quadratic_with_constant, Quadratic};

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// A scalar objective with derivative oracles up to third order.
///
/// The third-derivative contraction follows the index convention where the
/// k-th output entry is Σᵢⱼ ∂³E/∂θᵢ∂θₖ∂θⱼ vᵢwⱼ; with symmetric partials this
/// is the directional derivative of the Hessian-vector product with `v` along
/// `w`.
pub trait Problem: Send + Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;

    /// True iff the evaluators are analytic extensions valid off the real
    /// axis. Real-only problems still accept complex inputs whose imaginary
    /// parts are all zero.
    fn supports_complex(&self) -> bool;

    fn eval_c(&self, theta: &CVector) -> Result<C64>;

    fn grad_c(&self, theta: &CVector) -> Result<CVector>;

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix>;

    fn hvp_c(&self, theta: &CVector, v: &CVector) -> Result<CVector> {
        ensure_dim(self.dim(), v.len())?;
        Ok(self.hess_c(theta)? * v)
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector>;

    fn eval(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.eval_c(&promote(theta))?.re)
    }

    fn grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(re_vector(&self.grad_c(&promote(theta))?))
    }

    fn hess(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(re_matrix(&self.hess_c(&promote(theta))?))
    }

    fn hvp(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(re_vector(&self.hvp_c(&promote(theta), &promote(v))?))
    }

    fn third_contraction(
        &self,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(re_vector(&self.third_contraction_c(
            &promote(theta),
            &promote(v),
            &promote(w),
        )?))
    }
}

/// A problem negated in value; used to express a player's loss in zero-sum
/// games, where one side minimises −E.
pub struct NegatedProblem(pub Arc<dyn Problem>);

impl Problem for NegatedProblem {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn supports_complex(&self) -> bool {
        self.0.supports_complex()
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        Ok(-self.0.eval_c(theta)?)
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        Ok(-self.0.grad_c(theta)?)
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        Ok(-self.0.hess_c(theta)?)
    }

    fn hvp_c(&self, theta: &CVector, v: &CVector) -> Result<CVector> {
        Ok(-self.0.hvp_c(theta, v)?)
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        Ok(-self.0.third_contraction_c(theta, v, w)?)
    }
}

/// Loss pair attached to a game whose fields derive from losses. Each player
/// minimises its own entry, so the fields satisfy f = −∇_φE_φ, g = −∇_θE_θ.
/// Both problems are defined over the joint (φ, θ) parameter vector.
#[derive(Clone)]
pub struct GameLossPair {
    pub e_phi: Arc<dyn Problem>,
    pub e_theta: Arc<dyn Problem>,
}

/// A two-player game given by per-player vector fields and their Jacobian
/// blocks. The continuous dynamics are φ̇ = f(φ, θ), θ̇ = g(φ, θ), possibly
/// rate-scaled by the caller.
pub trait GameProblem: Send + Sync {
    fn dim_phi(&self) -> usize;

    fn dim_theta(&self) -> usize;

    fn f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    fn g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// ∂f/∂φ, shape dim_phi × dim_phi.
    fn jac_phi_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// ∂f/∂θ, shape dim_phi × dim_theta.
    fn jac_theta_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// ∂g/∂φ, shape dim_theta × dim_phi.
    fn jac_phi_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// ∂g/∂θ, shape dim_theta × dim_theta.
    fn jac_theta_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// The generating losses, when the fields derive from losses.
    fn losses(&self) -> Option<GameLossPair> {
        None
    }

    /// The joint Jacobian [[∂f/∂φ, ∂f/∂θ], [∂g/∂φ, ∂g/∂θ]].
    fn joint_jacobian(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (dp, dt) = (self.dim_phi(), self.dim_theta());
        let mut j = DMatrix::zeros(dp + dt, dp + dt);
        j.view_mut((0, 0), (dp, dp)).copy_from(&self.jac_phi_f(phi, theta)?);
        j.view_mut((0, dp), (dp, dt)).copy_from(&self.jac_theta_f(phi, theta)?);
        j.view_mut((dp, 0), (dt, dp)).copy_from(&self.jac_phi_g(phi, theta)?);
        j.view_mut((dp, dp), (dt, dt)).copy_from(&self.jac_theta_g(phi, theta)?);
        Ok(j)
    }
}

pub(crate) fn join_point(phi: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        phi.len() + theta.len(),
        phi.iter().chain(theta.iter()).copied(),
    )
}
