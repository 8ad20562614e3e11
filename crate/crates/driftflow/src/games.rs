//! Drift-corrected two-player fields, modified losses for zero-sum and
//! common-payoff games, drift-cancelling explicit regularizers, and the
//! multi-batch SGD modified loss.
//!
//! Conventions: φ ascends f, θ ascends g, and a discrete step moves each
//! player by its rate times h. The per-player-time corrections below make
//! the continuous system track the discrete iterates to third order; the
//! same-physical-time variants fold the rates into the fields instead.
//! For a zero-sum loss E this means f = ∇_φE and g = −∇_θE.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{GameMode, GameStepConfig};
use crate::problems::{join_point, GameLossPair, GameProblem, Problem};

/// Payoff structure selecting which modified-loss corollary applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    ZeroSum,
    CommonPayoff,
}

/// Like GameStepConfig::check, but h = 0 is allowed: every field and loss
/// here degrades gracefully to the uncorrected quantity at h = 0.
fn check_cfg(cfg: &GameStepConfig) -> Result<()> {
    if !cfg.h.is_finite() || cfg.h < 0.0 {
        return Err(Error::ConfigError(format!(
            "step size must be nonnegative and finite, got {}",
            cfg.h
        )));
    }
    for (name, v) in [("rate_phi", cfg.rate_phi), ("rate_theta", cfg.rate_theta)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::ConfigError(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    if cfg.m == 0 || cfg.k == 0 {
        return Err(Error::ConfigError(
            "sub-update counts m and k must be at least 1".into(),
        ));
    }
    Ok(())
}

fn game_parts(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<(
    DVector<f64>,
    DVector<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
)> {
    Ok((
        game.f(phi, theta)?,
        game.g(phi, theta)?,
        game.jac_phi_f(phi, theta)?,
        game.jac_theta_f(phi, theta)?,
        game.jac_phi_g(phi, theta)?,
        game.jac_theta_g(phi, theta)?,
    ))
}

/// First-order drift-corrected fields in per-player time: each player's
/// clock advances by its own rate times h per discrete step.
pub fn modified_game_field(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_cfg(cfg)?;
    let (f, g, jpf, jtf, jpg, jtg) = game_parts(game, phi, theta)?;
    let (up, ut, h) = (cfg.rate_phi, cfg.rate_theta, cfg.h);
    match cfg.mode {
        GameMode::Simultaneous => {
            let fm = &f - (&jpf * &f + &jtf * &g) * (up * h / 2.0);
            let gm = &g - (&jpg * &f + &jtg * &g) * (ut * h / 2.0);
            Ok((fm, gm))
        }
        GameMode::Alternating => {
            let m = cfg.m as f64;
            let k = cfg.k as f64;
            let cross = 1.0 - 2.0 * up / ut;
            let fm = &f - (&jpf * &f / m + &jtf * &g) * (up * h / 2.0);
            let gm = &g - (&jpg * &f * cross + &jtg * &g / k) * (ut * h / 2.0);
            Ok((fm, gm))
        }
    }
}

/// Drift-corrected fields in shared physical time: rates are folded into
/// the fields, so both players integrate over the same horizon h.
pub fn modified_game_field_same_time(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_cfg(cfg)?;
    let (f, g, jpf, jtf, jpg, jtg) = game_parts(game, phi, theta)?;
    let (up, ut, h) = (cfg.rate_phi, cfg.rate_theta, cfg.h);
    match cfg.mode {
        GameMode::Simultaneous => {
            let fm = &f * up - (&jpf * &f * (up * up) + &jtf * &g * (up * ut)) * (h / 2.0);
            let gm = &g * ut - (&jpg * &f * (up * ut) + &jtg * &g * (ut * ut)) * (h / 2.0);
            Ok((fm, gm))
        }
        GameMode::Alternating => {
            let m = cfg.m as f64;
            let k = cfg.k as f64;
            // The cross term of the second player flips sign: it has already
            // seen the first player's update within the step.
            let fm = &f * up - (&jpf * &f * (up * up / m) + &jtf * &g * (up * ut)) * (h / 2.0);
            let gm = &g * ut - (&jpg * &f * (-(up * ut)) + &jtg * &g * (ut * ut / k)) * (h / 2.0);
            Ok((fm, gm))
        }
    }
}

/// The drift of the two-player RK4 step in per-player time. With equal
/// rates the correction vanishes; with unequal rates the step keeps a
/// second-order interaction drift even though each stage is fourth order.
pub fn rk4_modified_game_field(
    game: &dyn GameProblem,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    cfg: &GameStepConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_cfg(cfg)?;
    let (f, g, _, jtf, jpg, _) = game_parts(game, phi, theta)?;
    let (up, ut, h) = (cfg.rate_phi, cfg.rate_theta, cfg.h);
    let fm = &f + &jtf * &g * ((ut - up) * h / 2.0);
    let gm = &g + &jpg * &f * ((up - ut) * h / 2.0);
    Ok((fm, gm))
}

/// Modified per-player losses at a point, in per-player time.
///
/// For zero-sum games the uncorrected pair is (−E, E); each player gains a
/// self term that penalizes its own gradient norm and an interaction term
/// on the opponent's. Common-payoff games get both norms with a plus sign.
pub fn zero_sum_modified_losses(
    e: &dyn Problem,
    split: usize,
    point: &DVector<f64>,
    cfg: &GameStepConfig,
    payoff: Payoff,
) -> Result<(f64, f64)> {
    check_cfg(cfg)?;
    let dim = e.dim();
    if split == 0 || split >= dim {
        return Err(Error::BadSplit(format!(
            "split {split} out of range for dimension {dim}"
        )));
    }
    if point.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: point.len(),
        });
    }
    let value = e.eval(point)?;
    let grad = e.grad(point)?;
    let gp2: f64 = grad.rows(0, split).norm_squared();
    let gt2: f64 = grad.rows(split, dim - split).norm_squared();

    let (up, ut, h) = (cfg.rate_phi, cfg.rate_theta, cfg.h);
    let (m, k) = (cfg.m as f64, cfg.k as f64);
    let cross = 1.0 - 2.0 * up / ut;
    Ok(match (payoff, cfg.mode) {
        (Payoff::ZeroSum, GameMode::Simultaneous) => (
            -value + (up * h / 4.0) * (gp2 - gt2),
            value + (ut * h / 4.0) * (gt2 - gp2),
        ),
        (Payoff::ZeroSum, GameMode::Alternating) => (
            -value + (up * h / 4.0) * (gp2 / m - gt2),
            value - (ut * h / 4.0) * cross * gp2 + (ut * h / (4.0 * k)) * gt2,
        ),
        (Payoff::CommonPayoff, GameMode::Simultaneous) => (
            value + (up * h / 4.0) * (gp2 + gt2),
            value + (ut * h / 4.0) * (gp2 + gt2),
        ),
        (Payoff::CommonPayoff, GameMode::Alternating) => (
            value + (up * h / 4.0) * (gp2 / m + gt2),
            value + (ut * h / 4.0) * (cross * gp2 + gt2 / k),
        ),
    })
}

/// Explicit regularization schemes over a zero-sum loss E, resolved to the
/// coefficient quadruple of E_φ = −E + c₁‖∇_θE‖² + s₁‖∇_φE‖² and
/// E_θ = E + c₂‖∇_φE‖² + s₂‖∇_θE‖².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "zeta", rename_all = "snake_case")]
pub enum RegScheme {
    /// Cancel both interaction terms of simultaneous updates.
    DdCancelSim,
    /// Cancel both interaction terms of alternating updates.
    DdCancelAlt,
    /// Cancel only the first player's interaction term (the alternating
    /// variant that leaves the second player's often-benign term alone).
    DdCancelAltDiscOnly,
    /// Fixed-coefficient interaction adjustment; the classic choice is
    /// ζ = −1/2, giving c₁ = c₂ = 1/2.
    Sga(f64),
    /// Consensus-style regularization: every player penalizes both gradient
    /// norms with the same weight.
    Co(f64),
    /// Cancel interactions and double the self terms, all at drift strength.
    StrengthenSelf,
}

/// Resolved regularizer coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub s1: f64,
    pub s2: f64,
}

impl RegScheme {
    /// Resolve against the step size and rates.
    pub fn resolve(self, cfg: &GameStepConfig) -> RegCoefficients {
        let (up, ut, h) = (cfg.rate_phi, cfg.rate_theta, cfg.h);
        match self {
            RegScheme::DdCancelSim => RegCoefficients {
                c1: up * h / 4.0,
                c2: ut * h / 4.0,
                s1: 0.0,
                s2: 0.0,
            },
            RegScheme::DdCancelAlt => RegCoefficients {
                c1: up * h / 4.0,
                c2: (ut * h / 4.0) * (1.0 - 2.0 * up / ut),
                s1: 0.0,
                s2: 0.0,
            },
            RegScheme::DdCancelAltDiscOnly => RegCoefficients {
                c1: up * h / 4.0,
                c2: 0.0,
                s1: 0.0,
                s2: 0.0,
            },
            RegScheme::Sga(zeta) => RegCoefficients {
                c1: -zeta,
                c2: -zeta,
                s1: 0.0,
                s2: 0.0,
            },
            RegScheme::Co(zeta) => RegCoefficients {
                c1: zeta,
                c2: zeta,
                s1: zeta,
                s2: zeta,
            },
            RegScheme::StrengthenSelf => RegCoefficients {
                c1: up * h / 4.0,
                c2: ut * h / 4.0,
                s1: up * h / 4.0,
                s2: ut * h / 4.0,
            },
        }
    }
}

/// Loss input for [`regularized_game`]. The schemes are all stated in terms
/// of a single zero-sum objective; general pairs are carried for signature
/// completeness and rejected at construction.
pub enum GameLosses {
    ZeroSum {
        e: Arc<dyn Problem>,
        split: usize,
    },
    General {
        e_phi: Arc<dyn Problem>,
        e_theta: Arc<dyn Problem>,
        split: usize,
    },
}

/// A zero-sum game with explicit gradient-norm regularizers added to each
/// player's loss. Fields are exact (Hessian-vector products); Jacobian
/// blocks use central differences because they carry third derivatives.
pub struct RegularizedGame {
    e: Arc<dyn Problem>,
    split: usize,
    coeffs: RegCoefficients,
}

impl RegularizedGame {
    pub fn coefficients(&self) -> RegCoefficients {
        self.coeffs
    }

    fn fields(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.split;
        let t = self.e.dim() - p;
        if phi.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: phi.len(),
            });
        }
        if theta.len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                got: theta.len(),
            });
        }
        let x = join_point(phi, theta);
        let g = self.e.grad(&x)?;
        let hm = self.e.hess(&x)?;
        let mut gp = g.clone();
        gp.rows_mut(p, t).fill(0.0);
        let gt = &g - &gp;
        let hgp = &hm * &gp;
        let hgt = &hm * &gt;
        let c = self.coeffs;
        let f = DVector::from_fn(p, |i, _| g[i] - 2.0 * (c.c1 * hgt[i] + c.s1 * hgp[i]));
        let gg = DVector::from_fn(t, |j, _| {
            -g[p + j] - 2.0 * (c.c2 * hgp[p + j] + c.s2 * hgt[p + j])
        });
        Ok((f, gg))
    }
}

/// Central-difference Jacobian of a vector field with respect to x0.
fn fd_jac(
    field: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x0: &DVector<f64>,
    out_dim: usize,
) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(out_dim, x0.len());
    for col in 0..x0.len() {
        let eps = 1e-5 * (1.0 + x0[col].abs());
        let mut xp = x0.clone();
        xp[col] += eps;
        let mut xm = x0.clone();
        xm[col] -= eps;
        let fp = field(&xp)?;
        let fm = field(&xm)?;
        for row in 0..out_dim {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

impl GameProblem for RegularizedGame {
    fn dim_phi(&self) -> usize {
        self.split
    }

    fn dim_theta(&self) -> usize {
        self.e.dim() - self.split
    }

    fn f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.fields(phi, theta)?.0)
    }

    fn g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.fields(phi, theta)?.1)
    }

    fn jac_phi_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jac(|x| self.f(x, theta), phi, self.dim_phi())
    }

    fn jac_theta_f(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jac(|x| self.f(phi, x), theta, self.dim_phi())
    }

    fn jac_phi_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jac(|x| self.g(x, theta), phi, self.dim_theta())
    }

    fn jac_theta_g(&self, phi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jac(|x| self.g(phi, x), theta, self.dim_theta())
    }

    fn losses(&self) -> Option<GameLossPair> {
        None
    }
}

/// Attach a regularization scheme to a zero-sum loss, producing a game whose
/// fields are the negative gradients of the regularized per-player losses.
pub fn regularized_game(
    losses: GameLosses,
    scheme: RegScheme,
    cfg: &GameStepConfig,
) -> Result<RegularizedGame> {
    check_cfg(cfg)?;
    let (e, split) = match losses {
        GameLosses::ZeroSum { e, split } => (e, split),
        GameLosses::General { .. } => return Err(Error::SchemeRequiresZeroSum),
    };
    let dim = e.dim();
    if split == 0 || split >= dim {
        return Err(Error::BadSplit(format!(
            "split {split} out of range for dimension {dim}"
        )));
    }
    Ok(RegularizedGame {
        e,
        split,
        coeffs: scheme.resolve(cfg),
    })
}

/// Growth rate of the squared radius under the point-mass GAN's modified
/// simultaneous flow: h(θ² + φ²)·l′(θφ)², nonnegative and zero only at the
/// equilibrium.
pub fn dirac_radius_derivative(phi: f64, theta: f64, h: f64) -> f64 {
    let lp = crate::problems::GanLoss::SaturatingLogSigmoid.d1_real(theta * phi);
    h * (theta * theta + phi * phi) * lp * lp
}

/// Input for the multi-batch SGD modified loss: the per-batch losses seen
/// in order within one pass, the current parameters, and the frozen
/// reference parameters from the start of the pass.
pub struct SgdModifiedLossInput {
    pub batches: Vec<Arc<dyn Problem>>,
    pub theta: DVector<f64>,
    pub theta_ref: DVector<f64>,
    pub h: f64,
}

impl SgdModifiedLossInput {
    fn check(&self) -> Result<usize> {
        let n = self.batches.len();
        if n == 0 {
            return Err(Error::ConfigError("need at least one batch loss".into()));
        }
        if !self.h.is_finite() || self.h < 0.0 {
            return Err(Error::ConfigError(format!(
                "step size must be nonnegative and finite, got {}",
                self.h
            )));
        }
        let dim = self.batches[0].dim();
        for b in &self.batches {
            if b.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b.dim(),
                });
            }
        }
        for v in [&self.theta, &self.theta_ref] {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(n)
    }
}

/// Modified loss tracked by n sequential SGD steps: the mean loss, an IGR
/// style penalty on the mean gradient, and alignment terms pairing each
/// batch gradient with the gradients of the batches consumed before it
/// (evaluated at the frozen reference parameters).
pub fn sgd_modified_loss(input: &SgdModifiedLossInput) -> Result<f64> {
    let n = input.check()?;
    let nf = n as f64;
    let mut mean_e = 0.0;
    let mut mean_g = DVector::zeros(input.theta.len());
    for b in &input.batches {
        mean_e += b.eval(&input.theta)?;
        mean_g += b.grad(&input.theta)?;
    }
    mean_e /= nf;
    mean_g /= nf;

    let mut alignment = 0.0;
    let mut prefix = DVector::zeros(input.theta.len());
    for mu in 1..n {
        prefix += input.batches[mu - 1].grad(&input.theta_ref)?;
        alignment += input.batches[mu].grad(&input.theta)?.dot(&prefix);
    }

    Ok(mean_e + (nf * input.h / 4.0) * mean_g.norm_squared() - (input.h / nf) * alignment)
}

/// Negative gradient of [`sgd_modified_loss`] with the reference parameters
/// held constant.
pub fn sgd_modified_flow_field(input: &SgdModifiedLossInput) -> Result<DVector<f64>> {
    let n = input.check()?;
    let nf = n as f64;
    let dim = input.theta.len();
    let mut mean_g = DVector::zeros(dim);
    let mut mean_h = DMatrix::zeros(dim, dim);
    for b in &input.batches {
        mean_g += b.grad(&input.theta)?;
        mean_h += b.hess(&input.theta)?;
    }
    mean_g /= nf;
    mean_h /= nf;

    let mut field = -&mean_g - &mean_h * &mean_g * (nf * input.h / 2.0);
    let mut prefix = DVector::zeros(dim);
    for mu in 1..n {
        prefix += input.batches[mu - 1].grad(&input.theta_ref)?;
        field += input.batches[mu].hess(&input.theta)? * &prefix * (input.h / nf);
    }
    Ok(field)
}
