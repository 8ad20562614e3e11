use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    ensure_dim, join_point, quadratic_new, GameLossPair, GameProblem, NegatedProblem, Problem,
};
use crate::calculus::{C64, CMatrix, CVector};
use crate::error::{Error, Result};

/// Discriminator loss shape for the point-mass GAN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanLoss {
    /// l(z) = −log(1 + e^{−z}), the saturating log-sigmoid.
    SaturatingLogSigmoid,
}

fn sigmoid(z: C64) -> C64 {
    C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) + (-z).exp())
}

impl GanLoss {
    /// l(z).
    pub fn l(self, z: C64) -> C64 {
        let one = C64::new(1.0, 0.0);
        -(one + (-z).exp()).ln()
    }

    /// l′(z) = σ(−z).
    pub fn d1(self, z: C64) -> C64 {
        sigmoid(-z)
    }

    /// l″(z) = −σ(−z)σ(z).
    pub fn d2(self, z: C64) -> C64 {
        -sigmoid(-z) * sigmoid(z)
    }

    /// l‴(z) = σ(−z)σ(z)(σ(z) − σ(−z)).
    pub fn d3(self, z: C64) -> C64 {
        sigmoid(-z) * sigmoid(z) * (sigmoid(z) - sigmoid(-z))
    }

    pub fn l_real(self, z: f64) -> f64 {
        self.l(C64::new(z, 0.0)).re
    }

    pub fn d1_real(self, z: f64) -> f64 {
        self.d1(C64::new(z, 0.0)).re
    }

    pub fn d2_real(self, z: f64) -> f64 {
        self.d2(C64::new(z, 0.0)).re
    }
}

/// The point-mass GAN's zero-sum objective E(φ, θ) = l(θφ) + l(0) over the
/// joint vector (φ, θ). The generator places its mass at θ, the linear
/// discriminator has slope φ, and the generator minimises E while the
/// discriminator maximises it.
pub struct DiracGanLoss {
    pub loss: GanLoss,
}

impl Problem for DiracGanLoss {
    fn dim(&self) -> usize {
        2
    }

    fn supports_complex(&self) -> bool {
        true
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        ensure_dim(2, theta.len())?;
        let u = theta[0] * theta[1];
        Ok(self.loss.l(u) + self.loss.l(C64::new(0.0, 0.0)))
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        ensure_dim(2, theta.len())?;
        let u = theta[0] * theta[1];
        let d1 = self.loss.d1(u);
        Ok(CVector::from_vec(vec![d1 * theta[1], d1 * theta[0]]))
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        ensure_dim(2, theta.len())?;
        let (phi, th) = (theta[0], theta[1]);
        let u = phi * th;
        let d1 = self.loss.d1(u);
        let d2 = self.loss.d2(u);
        let hpp = d2 * th * th;
        let hpt = d2 * phi * th + d1;
        let htt = d2 * phi * phi;
        Ok(CMatrix::from_row_slice(2, 2, &[hpp, hpt, hpt, htt]))
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        ensure_dim(2, theta.len())?;
        ensure_dim(2, v.len())?;
        ensure_dim(2, w.len())?;
        // E = l(u) with u = φθ: the third tensor is
        // l‴·uᵢuⱼuₖ + l″·(uᵢⱼuₖ + uᵢₖuⱼ + uⱼₖuᵢ), where ∇u = (θ, φ) and the
        // only nonzero second partials of u are the mixed ones.
        let (phi, th) = (theta[0], theta[1]);
        let u = phi * th;
        let d2 = self.loss.d2(u);
        let d3 = self.loss.d3(u);
        let grad_u = [th, phi];
        let s = |a: &CVector| grad_u[0] * a[0] + grad_u[1] * a[1];
        let swap = |a: &CVector| [a[1], a[0]];
        let b = v[0] * w[1] + v[1] * w[0];
        let (sv, sw) = (s(v), s(w));
        let (pv, pw) = (swap(v), swap(w));
        let mut out = CVector::zeros(2);
        for k in 0..2 {
            out[k] = d3 * sv * sw * grad_u[k] + d2 * (b * grad_u[k] + sv * pw[k] + sw * pv[k]);
        }
        Ok(out)
    }
}

/// The point-mass GAN as a two-player game: fields f = l′(θφ)·θ for the
/// discriminator and g = −l′(θφ)·φ for the generator.
pub struct DiracGan {
    loss: GanLoss,
}

/// Build the point-mass GAN game.
pub fn dirac_gan_new(loss: GanLoss) -> DiracGan {
    DiracGan { loss }
}

impl DiracGan {
    pub fn loss_shape(&self) -> GanLoss {
        self.loss
    }

    fn parts(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64, f64, f64)> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        let u = phi[0] * theta[0];
        Ok((phi[0], theta[0], self.loss.d1_real(u), self.loss.d2_real(u)))
    }
}

impl GameProblem for DiracGan {
    fn dim_phi(&self) -> usize {
        1
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, th, d1, _) = self.parts(phi, theta)?;
        Ok(DVector::from_vec(vec![d1 * th]))
    }

    fn g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (p, _, d1, _) = self.parts(phi, theta)?;
        Ok(DVector::from_vec(vec![-d1 * p]))
    }

    fn jac_phi_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, th, _, d2) = self.parts(phi, theta)?;
        Ok(DMatrix::from_row_slice(1, 1, &[d2 * th * th]))
    }

    fn jac_theta_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, th, d1, d2) = self.parts(phi, theta)?;
        Ok(DMatrix::from_row_slice(1, 1, &[d2 * p * th + d1]))
    }

    fn jac_phi_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, th, d1, d2) = self.parts(phi, theta)?;
        Ok(DMatrix::from_row_slice(1, 1, &[-(d2 * p * th + d1)]))
    }

    fn jac_theta_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, _, _, d2) = self.parts(phi, theta)?;
        Ok(DMatrix::from_row_slice(1, 1, &[-d2 * p * p]))
    }

    fn losses(&self) -> Option<GameLossPair> {
        let e: Arc<dyn Problem> = Arc::new(DiracGanLoss { loss: self.loss });
        Some(GameLossPair {
            e_phi: Arc::new(NegatedProblem(e.clone())),
            e_theta: e,
        })
    }
}

/// The two-dimensional linear game f = −ε₁φ + θ, g = ε₂θ − φ.
///
/// Its Jacobian is constant, so every discretisation statement about it can
/// be checked in closed form. It is the zero-sum game generated by
/// E = −ε₁φ²/2 + φθ − ε₂θ²/2.
pub struct LinearGame {
    eps1: f64,
    eps2: f64,
}

/// Build the linear game with the given self-interaction strengths.
pub fn linear_game_new(eps1: f64, eps2: f64) -> LinearGame {
    LinearGame { eps1, eps2 }
}

impl LinearGame {
    pub fn eps(&self) -> (f64, f64) {
        (self.eps1, self.eps2)
    }
}

impl GameProblem for LinearGame {
    fn dim_phi(&self) -> usize {
        1
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DVector::from_vec(vec![-self.eps1 * phi[0] + theta[0]]))
    }

    fn g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DVector::from_vec(vec![self.eps2 * theta[0] - phi[0]]))
    }

    fn jac_phi_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DMatrix::from_row_slice(1, 1, &[-self.eps1]))
    }

    fn jac_theta_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DMatrix::from_row_slice(1, 1, &[1.0]))
    }

    fn jac_phi_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DMatrix::from_row_slice(1, 1, &[-1.0]))
    }

    fn jac_theta_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(1, phi.len())?;
        ensure_dim(1, theta.len())?;
        Ok(DMatrix::from_row_slice(1, 1, &[self.eps2]))
    }

    fn losses(&self) -> Option<GameLossPair> {
        let a = DMatrix::from_row_slice(2, 2, &[-self.eps1, 1.0, 1.0, -self.eps2]);
        let b = DVector::zeros(2);
        let e: Arc<dyn Problem> =
            Arc::new(quadratic_new(a.clone(), b.clone()).expect("symmetric by construction"));
        let e_phi: Arc<dyn Problem> =
            Arc::new(quadratic_new(-a, b).expect("symmetric by construction"));
        Some(GameLossPair {
            e_phi,
            e_theta: e,
        })
    }
}

/// A zero-sum game assembled from a scalar loss E over the joint (φ, θ)
/// vector: f = ∇_φE, g = −∇_θE, with Jacobian blocks cut from the Hessian.
pub struct ZeroSumFromLoss {
    e: Arc<dyn Problem>,
    split: usize,
}

/// Build a zero-sum game from a loss; `split` is the number of leading
/// coordinates owned by the φ player. Both players must own at least one.
pub fn zero_sum_game_from_loss(e: Arc<dyn Problem>, split: usize) -> Result<ZeroSumFromLoss> {
    if split == 0 || split >= e.dim() {
        return Err(Error::BadSplit(format!(
            "split {} must lie strictly inside dimension {}",
            split,
            e.dim()
        )));
    }
    Ok(ZeroSumFromLoss { e, split })
}

impl ZeroSumFromLoss {
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn loss(&self) -> &Arc<dyn Problem> {
        &self.e
    }

    fn check_dims(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        ensure_dim(self.split, phi.len())?;
        ensure_dim(self.e.dim() - self.split, theta.len())
    }
}

impl GameProblem for ZeroSumFromLoss {
    fn dim_phi(&self) -> usize {
        self.split
    }

    fn dim_theta(&self) -> usize {
        self.e.dim() - self.split
    }

    fn f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(phi, theta)?;
        let grad = self.e.grad(&join_point(phi, theta))?;
        Ok(grad.rows(0, self.split).into_owned())
    }

    fn g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(phi, theta)?;
        let grad = self.e.grad(&join_point(phi, theta))?;
        Ok(-grad.rows(self.split, self.dim_theta()).into_owned())
    }

    fn jac_phi_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(phi, theta)?;
        let h = self.e.hess(&join_point(phi, theta))?;
        Ok(h.view((0, 0), (self.split, self.split)).into_owned())
    }

    fn jac_theta_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(phi, theta)?;
        let h = self.e.hess(&join_point(phi, theta))?;
        Ok(h.view((0, self.split), (self.split, self.dim_theta()))
            .into_owned())
    }

    fn jac_phi_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(phi, theta)?;
        let h = self.e.hess(&join_point(phi, theta))?;
        Ok(-h.view((self.split, 0), (self.dim_theta(), self.split))
            .into_owned())
    }

    fn jac_theta_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(phi, theta)?;
        let h = self.e.hess(&join_point(phi, theta))?;
        Ok(-h
            .view(
                (self.split, self.split),
                (self.dim_theta(), self.dim_theta()),
            )
            .into_owned())
    }

    fn losses(&self) -> Option<GameLossPair> {
        Some(GameLossPair {
            e_phi: Arc::new(NegatedProblem(self.e.clone())),
            e_theta: self.e.clone(),
        })
    }
}
