//! Discrete update rules: gradient descent, momentum, the drift-adjusted
//! learning-rate family, and the two-player simultaneous, alternating, and
//! RK4 steppers.
//!
//! The drift-adjusted rules resize the step so that h‖∇²E ĝ‖ stays at the
//! stability boundary value 2 (raised to a damping power p), which is what
//! keeps descent pinned to the edge instead of drifting past it.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::calculus::eig_sym;
use crate::error::{Error, Result};
use crate::problems::{GameProblem, Problem};

fn ensure_finite(v: &DVector<f64>, time: f64) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Nonfinite { time });
    }
    Ok(())
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

/// One gradient descent step θ − h∇E(θ).
pub fn gd_step(problem: &dyn Problem, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    check_h(h)?;
    let g = problem.grad(theta)?;
    let out = theta - g * h;
    ensure_finite(&out, 0.0)?;
    Ok(out)
}

/// Heavy-ball step: v' = βv − h∇E(θ), θ' = θ + v'.
pub fn momentum_step(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    h: f64,
    beta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_h(h)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::ConfigError(format!(
            "momentum coefficient must lie in [0, 1), got {beta}"
        )));
    }
    if v.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: v.len(),
        });
    }
    let g = problem.grad(theta)?;
    let v_new = v * beta - g * h;
    let theta_new = theta + &v_new;
    ensure_finite(&theta_new, 0.0)?;
    Ok((theta_new, v_new))
}

/// How the curvature-along-the-gradient term ‖∇²E ĝ‖ is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DalProxy {
    /// Exact Hessian-vector product with the normalized gradient.
    ExactHvp,
    /// Forward difference of gradients along the gradient, probe length
    /// scale/‖∇E‖ (1e-6 when ‖∇E‖ > 1e4, to keep the probe from vanishing).
    FdApprox { scale: f64 },
}

/// Settings for the drift-adjusted learning rate h(θ) = 2/‖∇²E ĝ‖^p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DalConfig {
    /// Damping power in (0, 1]; higher p trains slower.
    pub p: f64,
    /// Upper bound applied after exponentiation by p.
    pub lr_cap: f64,
    pub proxy: DalProxy,
}

impl Default for DalConfig {
    fn default() -> Self {
        DalConfig {
            p: 1.0,
            lr_cap: 5.0,
            proxy: DalProxy::ExactHvp,
        }
    }
}

impl DalConfig {
    fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::ConfigError(format!(
                "drift-adjustment power must lie in (0, 1], got {}",
                self.p
            )));
        }
        if !(self.lr_cap > 0.0) {
            return Err(Error::ConfigError(format!(
                "learning-rate cap must be positive, got {}",
                self.lr_cap
            )));
        }
        if let DalProxy::FdApprox { scale } = self.proxy {
            if !(scale > 0.0) {
                return Err(Error::ConfigError(format!(
                    "probe scale must be positive, got {scale}"
                )));
            }
        }
        Ok(())
    }
}

/// ∇²E·ĝ at θ, by the configured proxy. Also returns the gradient.
fn curvature_along_gradient(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    cfg: &DalConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = problem.grad(theta)?;
    let gn = g.norm();
    if gn == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let d = match cfg.proxy {
        DalProxy::ExactHvp => problem.hvp(theta, &(&g / gn))?,
        DalProxy::FdApprox { scale } => {
            let eps = if gn > 1e4 { 1e-6 } else { scale / gn };
            let probed = problem.grad(&(theta + &g * eps))?;
            (probed - &g) / (eps * gn)
        }
    };
    Ok((g, d))
}

/// The drift-adjusted learning rate min(cap, 2/‖∇²E ĝ‖^p).
pub fn dal_lr(problem: &dyn Problem, theta: &DVector<f64>, cfg: &DalConfig) -> Result<f64> {
    cfg.check()?;
    let (_, d) = curvature_along_gradient(problem, theta, cfg)?;
    Ok((2.0 / d.norm().powf(cfg.p)).min(cfg.lr_cap))
}

/// One descent step at the drift-adjusted rate.
pub fn dal_step(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    cfg: &DalConfig,
) -> Result<DVector<f64>> {
    cfg.check()?;
    let (g, d) = curvature_along_gradient(problem, theta, cfg)?;
    let lr = (2.0 / d.norm().powf(cfg.p)).min(cfg.lr_cap);
    let out = theta - g * lr;
    ensure_finite(&out, 0.0)?;
    Ok(out)
}

/// Heavy-ball step at the drift-adjusted rate.
///
/// The rate is the p = 1 drift-adjusted rate (capped as usual) regardless of
/// cfg.p, so that β = 0 reproduces dal_step at p = 1 exactly.
pub fn dal_momentum_step(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    beta: f64,
    cfg: &DalConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    cfg.check()?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::ConfigError(format!(
            "momentum coefficient must lie in [0, 1), got {beta}"
        )));
    }
    if v.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: v.len(),
        });
    }
    let unit_power = DalConfig { p: 1.0, ..*cfg };
    let (g, d) = curvature_along_gradient(problem, theta, &unit_power)?;
    let lr = (2.0 / d.norm()).min(cfg.lr_cap);
    let v_new = v * beta - g * lr;
    let theta_new = theta + &v_new;
    ensure_finite(&theta_new, 0.0)?;
    Ok((theta_new, v_new))
}

/// Coordinate-wise drift-adjusted step: each coordinate uses the rate
/// min(cap, 2/|(∇²E ĝ)ᵢ/√D|^p); coordinates whose denominator is below
/// 1e-12 fall back to the cap.
pub fn dal_per_parameter_step(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    cfg: &DalConfig,
) -> Result<DVector<f64>> {
    cfg.check()?;
    let (g, d) = curvature_along_gradient(problem, theta, cfg)?;
    let scale = (theta.len() as f64).sqrt();
    let mut out = theta.clone();
    for i in 0..theta.len() {
        let den = (d[i] / scale).abs();
        let lr = if den < 1e-12 {
            cfg.lr_cap
        } else {
            (2.0 / den.powf(cfg.p)).min(cfg.lr_cap)
        };
        out[i] -= lr * g[i];
    }
    ensure_finite(&out, 0.0)?;
    Ok(out)
}

/// Whether a two-player step moves both players at once or in turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    Simultaneous,
    Alternating,
}

/// Two-player step settings: shared step h, per-player rate multipliers, and
/// the alternating sub-update counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameStepConfig {
    pub h: f64,
    pub rate_phi: f64,
    pub rate_theta: f64,
    pub mode: GameMode,
    /// Sub-updates of the first player per alternating step.
    pub m: usize,
    /// Sub-updates of the second player per alternating step.
    pub k: usize,
}

impl GameStepConfig {
    pub fn new(h: f64) -> Self {
        GameStepConfig {
            h,
            rate_phi: 1.0,
            rate_theta: 1.0,
            mode: GameMode::Simultaneous,
            m: 1,
            k: 1,
        }
    }

    pub fn check(&self) -> Result<()> {
        check_h(self.h)?;
        if !(self.rate_phi > 0.0) || !(self.rate_theta > 0.0) {
            return Err(Error::ConfigError(format!(
                "player rates must be positive, got ({}, {})",
                self.rate_phi, self.rate_theta
            )));
        }
        if self.m == 0 || self.k == 0 {
            return Err(Error::ConfigError(
                "alternating sub-update counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_game_point(game: &dyn GameProblem, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
    if phi.len() != game.dim_phi() {
        return Err(Error::DimensionMismatch {
            expected: game.dim_phi(),
            got: phi.len(),
        });
    }
    if theta.len() != game.dim_theta() {
        return Err(Error::DimensionMismatch {
            expected: game.dim_theta(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Simultaneous step: both players move from the old point.
pub fn game_sim_step(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    cfg.check()?;
    if cfg.mode != GameMode::Simultaneous {
        return Err(Error::ConfigError(
            "simultaneous step requested with alternating mode configured".into(),
        ));
    }
    check_game_point(game, phi, theta)?;
    let f = game.f(phi, theta)?;
    let g = game.g(phi, theta)?;
    let phi_new = phi + f * (cfg.rate_phi * cfg.h);
    let theta_new = theta + g * (cfg.rate_theta * cfg.h);
    ensure_finite(&phi_new, 0.0)?;
    ensure_finite(&theta_new, 0.0)?;
    Ok((phi_new, theta_new))
}

/// Alternating step: m sub-updates of the first player against the frozen
/// old second player, then k sub-updates of the second against the new first.
pub fn game_alt_step(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    cfg.check()?;
    if cfg.mode != GameMode::Alternating {
        return Err(Error::ConfigError(
            "alternating step requested with simultaneous mode configured".into(),
        ));
    }
    check_game_point(game, phi, theta)?;
    let mut phi_new = phi.clone();
    let sub_phi = cfg.rate_phi * cfg.h / cfg.m as f64;
    for _ in 0..cfg.m {
        let f = game.f(&phi_new, theta)?;
        phi_new += f * sub_phi;
    }
    ensure_finite(&phi_new, 0.0)?;
    let mut theta_new = theta.clone();
    let sub_theta = cfg.rate_theta * cfg.h / cfg.k as f64;
    for _ in 0..cfg.k {
        let g = game.g(&phi_new, &theta_new)?;
        theta_new += g * sub_theta;
    }
    ensure_finite(&theta_new, 0.0)?;
    Ok((phi_new, theta_new))
}

/// Classical four-stage step with per-player stage offsets scaled by each
/// player's rate.
pub fn game_rk4_step(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    cfg.check()?;
    check_game_point(game, phi, theta)?;
    let hp = cfg.rate_phi * cfg.h;
    let ht = cfg.rate_theta * cfg.h;

    let stage = |off: f64,
                 kf: &DVector<f64>,
                 kg: &DVector<f64>|
     -> Result<(DVector<f64>, DVector<f64>)> {
        let p = phi + kf * (hp * off);
        let t = theta + kg * (ht * off);
        Ok((game.f(&p, &t)?, game.g(&p, &t)?))
    };

    let k1f = game.f(phi, theta)?;
    let k1g = game.g(phi, theta)?;
    let (k2f, k2g) = stage(0.5, &k1f, &k1g)?;
    let (k3f, k3g) = stage(0.5, &k2f, &k2g)?;
    let (k4f, k4g) = stage(1.0, &k3f, &k3g)?;

    let phi_new = phi + (k1f + k2f * 2.0 + k3f * 2.0 + k4f) * (hp / 6.0);
    let theta_new = theta + (k1g + k2g * 2.0 + k3g * 2.0 + k4g) * (ht / 6.0);
    ensure_finite(&phi_new, 0.0)?;
    ensure_finite(&theta_new, 0.0)?;
    Ok((phi_new, theta_new))
}

/// Sequential descent steps, one per batch loss in order.
pub fn sgd_two_step(
    batches: &[Arc<dyn Problem>],
    theta: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if batches.is_empty() {
        return Err(Error::ConfigError("batch list must be nonempty".into()));
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be nonnegative and finite, got {h}"
        )));
    }
    let mut out = theta.clone();
    for (i, batch) in batches.iter().enumerate() {
        let g = batch.grad(&out)?;
        out -= g * h;
        ensure_finite(&out, i as f64)?;
    }
    Ok(out)
}

/// Single-objective optimizer selection for [`train`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "optimizer")]
pub enum OptimizerKind {
    Gd { h: f64 },
    Momentum { h: f64, beta: f64 },
    Dal(DalConfig),
    DalMomentum { beta: f64, dal: DalConfig },
}

/// One training-iteration record: loss and gradient norm before the step,
/// the rate the step used, and optionally the leading Hessian eigenvalue.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub lambda0: Option<f64>,
}

/// A finished training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRun {
    pub final_params: DVector<f64>,
    pub records: Vec<TrainRecord>,
}

impl TrainRun {
    /// One CSV row per iteration; the λ₀ column appears when it was tracked.
    pub fn to_csv(&self) -> String {
        let tracked = self.records.iter().any(|r| r.lambda0.is_some());
        let mut out = String::from(if tracked {
            "iter,loss,grad_norm,lr,lambda0\n"
        } else {
            "iter,loss,grad_norm,lr\n"
        });
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}",
                r.iter, r.loss, r.grad_norm, r.lr
            ));
            if tracked {
                out.push_str(&format!(",{:.16e}", r.lambda0.unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// Run `iters` optimizer steps, recording loss, ‖g‖, and the rate used at
/// every iterate (λ₀ too when `track_leading`).
pub fn train(
    problem: &dyn Problem,
    theta0: &DVector<f64>,
    kind: &OptimizerKind,
    iters: usize,
    track_leading: bool,
) -> Result<TrainRun> {
    let mut theta = theta0.clone();
    let mut v = DVector::zeros(theta0.len());
    let mut records = Vec::with_capacity(iters);
    for iter in 0..iters {
        let loss = problem.eval(&theta)?;
        let g = problem.grad(&theta)?;
        let lambda0 = if track_leading {
            let h_mat = problem.hess(&theta)?;
            Some(eig_sym(&h_mat, Some(&g))?.eigenvalues[0].re)
        } else {
            None
        };
        let lr = match kind {
            OptimizerKind::Gd { h } => *h,
            OptimizerKind::Momentum { h, .. } => *h,
            OptimizerKind::Dal(cfg) => dal_lr(problem, &theta, cfg)?,
            OptimizerKind::DalMomentum { dal, .. } => {
                dal_lr(problem, &theta, &DalConfig { p: 1.0, ..*dal })?
            }
        };
        records.push(TrainRecord {
            iter,
            loss,
            grad_norm: g.norm(),
            lr,
            lambda0,
        });
        theta = match kind {
            OptimizerKind::Gd { h } => gd_step(problem, &theta, *h),
            OptimizerKind::Momentum { h, beta } => {
                let (t, vn) = momentum_step(problem, &theta, &v, *h, *beta)?;
                v = vn;
                Ok(t)
            }
            OptimizerKind::Dal(cfg) => dal_step(problem, &theta, cfg),
            OptimizerKind::DalMomentum { beta, dal } => {
                let (t, vn) = dal_momentum_step(problem, &theta, &v, *beta, dal)?;
                v = vn;
                Ok(t)
            }
        }
        .map_err(|e| match e {
            Error::Nonfinite { .. } => Error::Nonfinite {
                time: iter as f64,
            },
            other => other,
        })?;
    }
    Ok(TrainRun {
        final_params: theta,
        records,
    })
}
