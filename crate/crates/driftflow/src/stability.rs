//! Regime classification, stability coefficients, critical-point spectra for
//! the flows, and modified Jacobians for two-player games.
//!
//! The discrete behaviour of descent along an eigendirection is governed by
//! hλ alone: below 1 the matching flow is real and attracting, between 1 and
//! 2 it spirals in, above 2 it spirals out. The stability coefficient
//! sc_i = α(hλᵢ)(∇E·uᵢ) packages that regime together with how strongly the
//! gradient excites the direction. For games, the drift of the discrete
//! updates shifts the Jacobian at an equilibrium to J − (h/2)K, whose
//! spectrum decides whether the drift helps or hurts convergence.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::{eig_general, eig_sym, C64, CVector};
use crate::error::{Error, Result};
use crate::flows::{alpha, FlowKind};
use crate::optimizers::{GameMode, GameStepConfig};
use crate::problems::{GameProblem, Problem};

/// Position of hλ relative to the regime boundaries at 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    RealStable,
    ComplexStable,
    UnstableComplex,
}

/// A regime call, flagged when hλ sits on a boundary (the boundary point is
/// reported with the regime above it).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub on_boundary: bool,
}

/// Classify hλ against the boundaries at 1 and 2.
pub fn classify(h_lambda: f64) -> Regime {
    let boundary = |b: f64| (h_lambda - b).abs() <= 1e-12;
    if boundary(1.0) {
        Regime {
            kind: RegimeKind::ComplexStable,
            on_boundary: true,
        }
    } else if boundary(2.0) {
        Regime {
            kind: RegimeKind::UnstableComplex,
            on_boundary: true,
        }
    } else if h_lambda < 1.0 {
        Regime {
            kind: RegimeKind::RealStable,
            on_boundary: false,
        }
    } else if h_lambda < 2.0 {
        Regime {
            kind: RegimeKind::ComplexStable,
            on_boundary: false,
        }
    } else {
        Regime {
            kind: RegimeKind::UnstableComplex,
            on_boundary: false,
        }
    }
}

/// Stability data for one Hessian eigendirection.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub lambda: f64,
    /// ∇E·uᵢ, nonnegative under the eigenvector sign convention.
    pub g_dot_u: f64,
    /// Stability coefficient α(hλᵢ)·(∇E·uᵢ).
    pub sc: C64,
    pub regime: Regime,
}

/// Per-direction stability coefficients at a point, for step size h.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub h: f64,
    /// Directions in descending eigenvalue order; truncated to top_k when
    /// requested (mandatory above dimension 256).
    pub directions: Vec<DirectionRecord>,
    /// Total problem dimension, which may exceed directions.len().
    pub dim: usize,
}

impl StabilityReport {
    /// The leading direction's record.
    pub fn leading(&self) -> &DirectionRecord {
        &self.directions[0]
    }
}

/// Eigendecompose the Hessian at θ and report the stability coefficient of
/// each direction for step size h.
pub fn stability_report(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    h: f64,
    top_k: Option<usize>,
) -> Result<StabilityReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let dim = problem.dim();
    if dim > 256 && top_k.is_none() {
        return Err(Error::ConfigError(format!(
            "dimension {dim} exceeds 256; a top_k cut is required"
        )));
    }
    let g = problem.grad(theta)?;
    let h_mat = problem.hess(theta)?;
    let s = eig_sym(&h_mat, Some(&g))?;
    let keep = top_k.map_or(dim, |k| k.min(dim));
    let mut directions = Vec::with_capacity(keep);
    for i in 0..keep {
        let lambda = s.eigenvalues[i].re;
        let u = s.eigenvectors.column(i);
        let g_dot_u: f64 = u.iter().zip(g.iter()).map(|(a, &b)| a.re * b).sum();
        let a = alpha(FlowKind::Pf(h), C64::new(h * lambda, 0.0))?;
        directions.push(DirectionRecord {
            lambda,
            g_dot_u,
            sc: a * C64::new(g_dot_u, 0.0),
            regime: classify(h * lambda),
        });
    }
    Ok(StabilityReport { h, directions, dim })
}

/// Flow selector for [`critical_jacobian_eigs`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalFlow {
    Ngf,
    Igr,
    Pf,
}

/// Eigenvalues of the flow Jacobian at a critical point with Hessian
/// eigenvalues λ*: NGF −λ*, IGR −(λ* + (h/2)λ*²), PF log(1−hλ*)/h.
pub fn critical_jacobian_eigs(
    flow: CriticalFlow,
    lambda_star: &DVector<f64>,
    h: f64,
) -> Result<CVector> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let mut out = CVector::zeros(lambda_star.len());
    for (i, &l) in lambda_star.iter().enumerate() {
        out[i] = match flow {
            CriticalFlow::Ngf => C64::new(-l, 0.0),
            CriticalFlow::Igr => C64::new(-(l + 0.5 * h * l * l), 0.0),
            CriticalFlow::Pf => {
                let z = C64::new(1.0 - h * l, 0.0);
                if z.norm() < 1e-12 {
                    return Err(Error::SingularArgument);
                }
                z.ln() / C64::new(h, 0.0)
            }
        };
    }
    Ok(out)
}

/// Continuous-time stability verdict with a ±1e-10 dead band around zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

fn verdict_from_eigs(eigs: &CVector) -> Verdict {
    let max_re = eigs.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re));
    if max_re < -1e-10 {
        Verdict::Stable
    } else if max_re > 1e-10 {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    }
}

/// Eigenvalues of a real 2×2 matrix by the quadratic formula; defective
/// inputs are fine here.
fn eigs_2x2(m: &DMatrix<f64>) -> CVector {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        CVector::from_vec(vec![
            C64::new((tr + r) / 2.0, 0.0),
            C64::new((tr - r) / 2.0, 0.0),
        ])
    } else {
        let r = (-disc).sqrt();
        CVector::from_vec(vec![
            C64::new(tr / 2.0, r / 2.0),
            C64::new(tr / 2.0, -r / 2.0),
        ])
    }
}

fn spectrum_of(m: &DMatrix<f64>) -> Result<CVector> {
    if m.nrows() == 2 {
        Ok(eigs_2x2(m))
    } else {
        Ok(eig_general(m)?.eigenvalues)
    }
}

/// Is exp(tJ) asymptotically stable: all eigenvalue real parts strictly
/// negative (within the dead band)?
pub fn exp_stable(j: &DMatrix<f64>) -> Result<Verdict> {
    if j.nrows() != j.ncols() {
        return Err(Error::NonSquare {
            rows: j.nrows(),
            cols: j.ncols(),
        });
    }
    Ok(verdict_from_eigs(&spectrum_of(j)?))
}

/// An equilibrium Jacobian analysis: the unmodified J, the drift matrix K,
/// the modified J − (h/2)K, and its spectrum and verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameJacobianReport {
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub j_mod: DMatrix<f64>,
    pub spectrum: CVector,
    pub trace: f64,
    pub det: f64,
    pub verdict: Verdict,
}

fn report_from(j: DMatrix<f64>, k: DMatrix<f64>, h: f64) -> Result<GameJacobianReport> {
    let j_mod = &j - &k * (h / 2.0);
    let spectrum = spectrum_of(&j_mod)?;
    Ok(GameJacobianReport {
        trace: j_mod.trace(),
        det: j_mod.determinant(),
        verdict: verdict_from_eigs(&spectrum),
        j,
        k,
        j_mod,
        spectrum,
    })
}

/// Assemble four blocks into one (p+t)×(p+t) matrix.
fn assemble(
    b11: &DMatrix<f64>,
    b12: &DMatrix<f64>,
    b21: &DMatrix<f64>,
    b22: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = b11.nrows();
    let t = b22.nrows();
    let mut out = DMatrix::zeros(p + t, p + t);
    out.view_mut((0, 0), (p, p)).copy_from(b11);
    out.view_mut((0, p), (p, t)).copy_from(b12);
    out.view_mut((p, 0), (t, p)).copy_from(b21);
    out.view_mut((p, p), (t, t)).copy_from(b22);
    out
}

/// Modified Jacobian J − (h/2)K of the discretized game at an equilibrium,
/// with K from the configured mode, rates, and sub-update counts.
pub fn game_modified_jacobian(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<GameJacobianReport> {
    cfg.check()?;
    let f = game.f(phi, theta)?;
    let g = game.g(phi, theta)?;
    let residual = f.norm().max(g.norm());
    if residual >= 1e-8 {
        return Err(Error::NotEquilibrium { residual });
    }

    let jpf = game.jac_phi_f(phi, theta)?;
    let jtf = game.jac_theta_f(phi, theta)?;
    let jpg = game.jac_phi_g(phi, theta)?;
    let jtg = game.jac_theta_g(phi, theta)?;
    let j = assemble(&jpf, &jtf, &jpg, &jtg);

    let (up, ut) = (cfg.rate_phi, cfg.rate_theta);
    let k = match cfg.mode {
        GameMode::Simultaneous => {
            let k11 = (&jpf * &jpf + &jtf * &jpg) * up;
            let k12 = (&jpf * &jtf + &jtf * &jtg) * up;
            let k21 = (&jpg * &jpf + &jtg * &jpg) * ut;
            let k22 = (&jpg * &jtf + &jtg * &jtg) * ut;
            assemble(&k11, &k12, &k21, &k22)
        }
        GameMode::Alternating => {
            let m = cfg.m as f64;
            let kk = cfg.k as f64;
            let cross = 1.0 - 2.0 * up / ut;
            let k11 = (&jpf * &jpf / m + &jtf * &jpg) * up;
            let k12 = (&jpf * &jtf / m + &jtf * &jtg) * up;
            let k21 = (&jpg * &jpf * cross + &jtg * &jpg / kk) * ut;
            let k22 = (&jpg * &jtf * cross + &jtg * &jtg / kk) * ut;
            assemble(&k11, &k12, &k21, &k22)
        }
    };
    report_from(j, k, cfg.h)
}

/// Modified Jacobian of the regularized two-parameter GAN at the origin:
/// [[(hυ_φ/2 − 2γ)l′², l′], [−l′, (hυ_θ/2 − 2ζ)l′²]].
pub fn dirac_regularized_jacobian(
    h: f64,
    rate_phi: f64,
    rate_theta: f64,
    gamma: f64,
    zeta: f64,
    l_prime_0: f64,
) -> Result<GameJacobianReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let lp = l_prime_0;
    let lp2 = lp * lp;
    let j = DMatrix::from_row_slice(2, 2, &[0.0, lp, -lp, 0.0]);
    let j_mod = DMatrix::from_row_slice(
        2,
        2,
        &[
            (h * rate_phi / 2.0 - 2.0 * gamma) * lp2,
            lp,
            -lp,
            (h * rate_theta / 2.0 - 2.0 * zeta) * lp2,
        ],
    );
    // K is defined by the decomposition J_mod = J − (h/2)K.
    let k = (&j - &j_mod) * (2.0 / h);
    report_from(j, k, h)
}

/// Does GD with step h converge on the linear system with Hessian eigenvalue
/// λ = x + iy: (1 − hx)² + (hy)² < 1?
pub fn linear_game_converges(lambda: C64, h: f64) -> bool {
    let lhs = (1.0 - h * lambda.re).powi(2) + (h * lambda.im).powi(2);
    lhs < 1.0
}
