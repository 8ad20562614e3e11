//! Continuous-time vector fields that model gradient descent at step size h,
//! and the integrators used to follow them.
//!
//! The negative gradient flow is only the zeroth-order model of descent. The
//! inertial and third-order flows add the h and h² backward-error terms, and
//! the principal flow resums the whole series through the principal branch of
//! log(1 − hλ) along each Hessian eigendirection, which keeps it meaningful
//! even where hλ > 2 and descent oscillates or diverges. Two auxiliary flows
//! (positive gradient, sign-swapped leading direction) isolate single
//! eigendirections for comparison experiments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::{
    eig_general_c, eig_sym, max_imag, promote, promote_matrix, re_matrix, re_vector, C64,
    CMatrix, CVector,
};
use crate::error::{Error, Result};
use crate::problems::Problem;

/// A continuous-time model of gradient descent. Kinds that model a specific
/// step size carry it as `h > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "h")]
pub enum FlowKind {
    /// Negative gradient flow θ̇ = −∇E.
    Ngf,
    /// Inertial flow θ̇ = −∇E − (h/2)∇²E∇E.
    Igr(f64),
    /// Third-order flow, adding the h² terms including the non-principal one.
    ThirdOrder(f64),
    /// Principal flow: log(1−hλᵢ)/(hλᵢ) along each eigendirection.
    Pf(f64),
    /// Principal flow plus the third-order non-principal term.
    PfNonPrincipal(f64),
    /// θ̇ = +∇E; ascends every eigendirection.
    PositiveGradient,
    /// Ascends the leading eigendirection, descends all others.
    SignSwapLeading,
}

impl FlowKind {
    /// The modeled step size, for kinds that carry one.
    pub fn h(&self) -> Option<f64> {
        match *self {
            FlowKind::Igr(h)
            | FlowKind::ThirdOrder(h)
            | FlowKind::Pf(h)
            | FlowKind::PfNonPrincipal(h) => Some(h),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        if let Some(h) = self.h() {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::ConfigError(format!(
                    "flow step size must be positive and finite, got {h}"
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for FlowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowKind::Ngf => write!(f, "ngf"),
            FlowKind::Igr(h) => write!(f, "igr(h={h})"),
            FlowKind::ThirdOrder(h) => write!(f, "third_order(h={h})"),
            FlowKind::Pf(h) => write!(f, "pf(h={h})"),
            FlowKind::PfNonPrincipal(h) => write!(f, "pf_non_principal(h={h})"),
            FlowKind::PositiveGradient => write!(f, "positive_gradient"),
            FlowKind::SignSwapLeading => write!(f, "sign_swap_leading"),
        }
    }
}

/// Clear a negative-zero imaginary part so branch cuts land on Im = +0.
fn normalize_imag(x: C64) -> C64 {
    if x.im == 0.0 {
        C64::new(x.re, 0.0)
    } else {
        x
    }
}

/// The principal-flow coefficient log(1−x)/x on the principal branch, with
/// the removable singularity at 0 filled by its series.
fn pf_alpha(x: C64) -> Result<C64> {
    let x = normalize_imag(x);
    let one = C64::new(1.0, 0.0);
    if (one - x).norm() < 1e-12 {
        return Err(Error::SingularArgument);
    }
    if x.norm() < 1e-6 {
        // −1 − x/2 − x²/3; the truncation error is below 1e-24 here.
        return Ok(-one - x / C64::new(2.0, 0.0) - x * x / C64::new(3.0, 0.0));
    }
    Ok((one - x).ln() / x)
}

/// Per-eigendirection flow coefficient α(hλ), as a function of x = hλ.
///
/// The sign-swap flow has no scalar coefficient (its sign depends on the
/// eigenindex, not on hλ), so requesting it is a configuration error.
pub fn alpha(kind: FlowKind, h_lambda: C64) -> Result<C64> {
    kind.check()?;
    let x = normalize_imag(h_lambda);
    let one = C64::new(1.0, 0.0);
    match kind {
        FlowKind::Ngf => Ok(-one),
        FlowKind::Igr(_) => Ok(-(one + x / C64::new(2.0, 0.0))),
        FlowKind::ThirdOrder(_) => {
            Ok(-(one + x / C64::new(2.0, 0.0) + x * x / C64::new(3.0, 0.0)))
        }
        FlowKind::Pf(_) | FlowKind::PfNonPrincipal(_) => pf_alpha(x),
        FlowKind::PositiveGradient => Ok(one),
        FlowKind::SignSwapLeading => Err(Error::ConfigError(
            "the sign-swap flow has no scalar coefficient; its sign depends on the eigenindex"
                .into(),
        )),
    }
}

fn max_imag_matrix(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

/// Eigen-expansion field Σ coeff(i, λᵢ)·cᵢ·uᵢ where c are the coordinates of
/// g in the eigenbasis of the Hessian at θ.
fn spectral_field(
    problem: &dyn Problem,
    theta: &CVector,
    g: &CVector,
    coeff: impl Fn(usize, C64) -> Result<C64>,
) -> Result<CVector> {
    let h_mat = problem.hess_c(theta)?;
    let n = g.len();
    let mut field = CVector::zeros(n);
    if max_imag_matrix(&h_mat) == 0.0 {
        // A real Hessian has a real orthonormal eigenbasis, which projects a
        // complex gradient exactly; the field is invariant under the sign of
        // each eigenvector, so orientation only needs a real reference.
        let orient = if max_imag(g) == 0.0 {
            Some(re_vector(g))
        } else {
            None
        };
        let s = eig_sym(&re_matrix(&h_mat), orient.as_ref())?;
        for i in 0..n {
            let u = s.eigenvectors.column(i);
            let c: C64 = u.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let ac = coeff(i, s.eigenvalues[i])? * c;
            for r in 0..n {
                field[r] += ac * u[r];
            }
        }
    } else {
        // Complex-symmetric Hessian from an analytic extension: the
        // eigenbasis is no longer unitary, so project by solving.
        let s = eig_general_c(&h_mat)?;
        let coords = s
            .eigenvectors
            .clone()
            .lu()
            .solve(g)
            .ok_or(Error::NoConvergence)?;
        for i in 0..n {
            let u = s.eigenvectors.column(i);
            let ac = coeff(i, s.eigenvalues[i])? * coords[i];
            for r in 0..n {
                field[r] += ac * u[r];
            }
        }
    }
    Ok(field)
}

/// Evaluate the continuous-time vector field of `kind` at θ.
pub fn flow_field(kind: FlowKind, problem: &dyn Problem, theta: &CVector) -> Result<CVector> {
    kind.check()?;
    if max_imag(theta) != 0.0 && !problem.supports_complex() {
        return Err(Error::ComplexUnsupported);
    }
    let g = problem.grad_c(theta)?;
    match kind {
        FlowKind::Ngf => Ok(-g),
        FlowKind::PositiveGradient => Ok(g),
        FlowKind::Igr(h) => {
            let hg = problem.hvp_c(theta, &g)?;
            Ok(-&g - hg * C64::new(h / 2.0, 0.0))
        }
        FlowKind::ThirdOrder(h) => {
            let hg = problem.hvp_c(theta, &g)?;
            let hhg = problem.hvp_c(theta, &hg)?;
            let t = problem.third_contraction_c(theta, &g, &g)?;
            Ok(-&g
                - hg * C64::new(h / 2.0, 0.0)
                - hhg * C64::new(h * h / 3.0, 0.0)
                - t * C64::new(h * h / 12.0, 0.0))
        }
        FlowKind::Pf(h) => spectral_field(problem, theta, &g, |_, lam| {
            pf_alpha(lam * C64::new(h, 0.0))
        }),
        FlowKind::PfNonPrincipal(h) => {
            let pf = spectral_field(problem, theta, &g, |_, lam| {
                pf_alpha(lam * C64::new(h, 0.0))
            })?;
            let t = problem.third_contraction_c(theta, &g, &g)?;
            Ok(pf - t * C64::new(h * h / 12.0, 0.0))
        }
        FlowKind::SignSwapLeading => spectral_field(problem, theta, &g, |i, _| {
            Ok(if i == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(-1.0, 0.0)
            })
        }),
    }
}

/// Sub-stepping scheme for [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Integrator settings. The default substep matches the estimation procedure
/// used throughout: forward Euler at δ = 5e-5.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Substep length; must not exceed the requested horizon.
    pub delta: f64,
    pub scheme: Scheme,
    /// Cap on the total number of substeps.
    pub max_steps: usize,
    /// Also record λ₀ and the leading stability coefficient at each substep.
    pub track_leading: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            delta: 5e-5,
            scheme: Scheme::Euler,
            max_steps: 50_000_000,
            track_leading: false,
        }
    }
}

/// Per-time diagnostics recorded along a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    /// Re(E) at the state.
    pub value: f64,
    /// 2-norm of the (complex) gradient.
    pub grad_norm: f64,
    /// Leading Hessian eigenvalue (real part), when tracked.
    pub lambda0: Option<f64>,
    /// Leading stability coefficient α(hλ₀)·(gᵀu₀), when tracked and the
    /// flow kind carries an h.
    pub sc0: Option<C64>,
}

/// A recorded flow solution: states every substep from 0 to the horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
    pub diagnostics: Vec<DiagnosticRecord>,
}

impl Trajectory {
    pub fn final_state(&self) -> &CVector {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Render as CSV with one row per recorded time. Columns: t, then
    /// re/im of each coordinate, then Re(E) and ‖g‖, then λ₀ and the real and
    /// imaginary parts of sc₀ when tracked.
    pub fn to_csv(&self) -> String {
        let dim = self.states.first().map_or(0, |s| s.len());
        let tracked = self.diagnostics.iter().any(|d| d.lambda0.is_some());
        let mut out = String::new();
        out.push('t');
        for i in 0..dim {
            out.push_str(&format!(",x{i}_re,x{i}_im"));
        }
        out.push_str(",energy,grad_norm");
        if tracked {
            out.push_str(",lambda0,sc0_re,sc0_im");
        }
        out.push('\n');
        for k in 0..self.times.len() {
            out.push_str(&format!("{:.16e}", self.times[k]));
            for z in self.states[k].iter() {
                out.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
            }
            let d = &self.diagnostics[k];
            out.push_str(&format!(",{:.16e},{:.16e}", d.value, d.grad_norm));
            if tracked {
                out.push_str(&format!(
                    ",{:.16e},{:.16e},{:.16e}",
                    d.lambda0.unwrap_or(f64::NAN),
                    d.sc0.map_or(f64::NAN, |z| z.re),
                    d.sc0.map_or(f64::NAN, |z| z.im)
                ));
            }
            out.push('\n');
        }
        out
    }
}

fn check_finite(state: &CVector, time: f64) -> Result<()> {
    if state
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::Nonfinite { time });
    }
    Ok(())
}

/// One substep of the chosen scheme on an arbitrary field.
fn substep(
    kind: FlowKind,
    problem: &dyn Problem,
    state: &CVector,
    dt: f64,
    scheme: Scheme,
) -> Result<CVector> {
    let dt_c = C64::new(dt, 0.0);
    match scheme {
        Scheme::Euler => {
            let k = flow_field(kind, problem, state)?;
            Ok(state + k * dt_c)
        }
        Scheme::Rk4 => {
            let half = C64::new(dt / 2.0, 0.0);
            let k1 = flow_field(kind, problem, state)?;
            let k2 = flow_field(kind, problem, &(state + &k1 * half))?;
            let k3 = flow_field(kind, problem, &(state + &k2 * half))?;
            let k4 = flow_field(kind, problem, &(state + &k3 * dt_c))?;
            let combo = (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
                * C64::new(dt / 6.0, 0.0);
            Ok(state + combo)
        }
    }
}

fn diagnostics_at(
    kind: FlowKind,
    problem: &dyn Problem,
    state: &CVector,
    track: bool,
) -> Result<DiagnosticRecord> {
    let value = problem.eval_c(state)?.re;
    let g = problem.grad_c(state)?;
    let grad_norm = g.norm();
    let (mut lambda0, mut sc0) = (None, None);
    if track {
        let h_mat = problem.hess_c(state)?;
        let s = if max_imag_matrix(&h_mat) == 0.0 {
            eig_sym(&re_matrix(&h_mat), Some(&re_vector(&g)))?
        } else {
            eig_general_c(&h_mat)?
        };
        if s.len() > 0 {
            lambda0 = Some(s.eigenvalues[0].re);
            if let Some(h) = kind.h() {
                let proj: C64 = s
                    .eigenvectors
                    .column(0)
                    .iter()
                    .zip(g.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                sc0 = Some(alpha(kind, s.eigenvalues[0] * C64::new(h, 0.0))? * proj);
            }
        }
    }
    Ok(DiagnosticRecord {
        value,
        grad_norm,
        lambda0,
        sc0,
    })
}

/// Follow `kind` from θ0 for time `horizon`, recording every substep.
///
/// Real-only problems integrate the h-step flows in frozen-spectrum mode: the
/// Hessian eigensystem is taken once at θ0 and the local-quadratic principal
/// flow is evolved in closed form, matching the per-iteration usage on
/// networks. All other combinations step the exact field with the configured
/// scheme.
pub fn integrate(
    kind: FlowKind,
    problem: &dyn Problem,
    theta0: &CVector,
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    kind.check()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::ConfigError(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if !(config.delta > 0.0) || config.delta > horizon {
        return Err(Error::ConfigError(format!(
            "substep {} must be positive and no larger than the horizon {horizon}",
            config.delta
        )));
    }
    let frozen = matches!(kind, FlowKind::Pf(_) | FlowKind::PfNonPrincipal(_))
        && !problem.supports_complex();
    if frozen {
        return integrate_frozen(kind, problem, theta0, horizon, config);
    }
    if (horizon / config.delta).ceil() as usize > config.max_steps {
        return Err(Error::ConfigError(format!(
            "horizon {horizon} at substep {} exceeds the {}-step budget",
            config.delta, config.max_steps
        )));
    }

    let mut times = vec![0.0];
    let mut states = vec![theta0.clone()];
    let mut diagnostics = vec![diagnostics_at(kind, problem, theta0, config.track_leading)?];
    let mut t = 0.0;
    let mut x = theta0.clone();
    while t < horizon - 1e-15 * horizon.max(1.0) {
        let dt = config.delta.min(horizon - t);
        x = substep(kind, problem, &x, dt, config.scheme)?;
        t += dt;
        check_finite(&x, t)?;
        times.push(t);
        states.push(x.clone());
        diagnostics.push(diagnostics_at(kind, problem, &x, config.track_leading)?);
    }
    Ok(Trajectory {
        times,
        states,
        diagnostics,
    })
}

/// e^{μt}, computed as (1−hλ)ⁿ when t is an integer number n of steps h so
/// that whole-step values of unstable modes stay exactly real.
fn pf_propagator(z: C64, mu: C64, h: f64, t: f64) -> C64 {
    let ratio = t / h;
    let n = ratio.round();
    if (ratio - n).abs() < 1e-9 && n.abs() < 1e9 {
        z.powi(n as i32)
    } else {
        (mu * C64::new(t, 0.0)).exp()
    }
}

/// φ₁(x) = (eˣ − 1)/x given a precomputed eˣ, with the series filling the
/// removable singularity.
fn phi1(x: C64, exp_x: C64) -> C64 {
    if x.norm() < 1e-4 {
        let one = C64::new(1.0, 0.0);
        one + x / C64::new(2.0, 0.0) + x * x / C64::new(6.0, 0.0)
    } else {
        (exp_x - C64::new(1.0, 0.0)) / x
    }
}

/// Modal solution of ċ = μc + β from c(0): e^{μt}c₀ + tβφ₁(μt).
fn pf_mode(c0: C64, beta: C64, lambda: f64, h: f64, t: f64) -> Result<C64> {
    let hl = C64::new(h * lambda, 0.0);
    let alpha = pf_alpha(hl)?;
    let mu = alpha * C64::new(lambda, 0.0);
    let z = C64::new(1.0 - h * lambda, 0.0);
    let e = pf_propagator(z, mu, h, t);
    let mut x = mu * C64::new(t, 0.0);
    x = normalize_imag(x);
    Ok(e * c0 + C64::new(t, 0.0) * beta * phi1(x, e))
}

fn integrate_frozen(
    kind: FlowKind,
    problem: &dyn Problem,
    theta0: &CVector,
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    if max_imag(theta0) != 0.0 {
        return Err(Error::ComplexUnsupported);
    }
    let h = kind.h().expect("frozen mode only serves h-step flows");
    let theta0_re = re_vector(theta0);
    let e0 = problem.eval(&theta0_re)?;
    let g = problem.grad(&theta0_re)?;
    let h_mat = problem.hess(&theta0_re)?;
    let s = eig_sym(&h_mat, Some(&g))?;
    let dim = g.len();

    // Constant drift from the non-principal term, projected onto the basis.
    let extra = match kind {
        FlowKind::PfNonPrincipal(_) => {
            let t = problem.third_contraction(&theta0_re, &g, &g)?;
            Some(t * (-h * h / 12.0))
        }
        _ => None,
    };

    let mut proj_g = Vec::with_capacity(dim);
    let mut proj_extra = Vec::with_capacity(dim);
    for i in 0..dim {
        let u = s.eigenvectors.column(i);
        let b: C64 = u
            .iter()
            .zip(g.iter())
            .map(|(a, &x)| a * C64::new(x, 0.0))
            .sum();
        proj_g.push(b);
        let ex: C64 = match &extra {
            Some(extra) => u
                .iter()
                .zip(extra.iter())
                .map(|(a, &x)| a * C64::new(x, 0.0))
                .sum(),
            None => C64::new(0.0, 0.0),
        };
        proj_extra.push(ex);
    }

    let state_at = |t: f64| -> Result<CVector> {
        let mut y = CVector::zeros(dim);
        for i in 0..dim {
            let lambda = s.eigenvalues[i].re;
            let alpha = pf_alpha(C64::new(h * lambda, 0.0))?;
            // Mode equation ċ = μc + β with β = α·(gᵀuᵢ) + non-principal drift.
            let beta = alpha * proj_g[i] + proj_extra[i];
            let c = pf_mode(C64::new(0.0, 0.0), beta, lambda, h, t)?;
            let u = s.eigenvectors.column(i);
            for r in 0..dim {
                y[r] += c * u[r];
            }
        }
        Ok(theta0 + y)
    };

    // Diagnostics use the frozen quadratic model: the true problem cannot be
    // evaluated at the complex states of unstable modes.
    let gc = promote(&g);
    let h_c = promote_matrix(&h_mat);
    let diag_at = |state: &CVector| -> DiagnosticRecord {
        let y = state - theta0;
        let hy = &h_c * &y;
        let value = e0
            + y.iter().zip(gc.iter()).map(|(a, b)| a * b).sum::<C64>().re
            + (y.dot(&hy) * C64::new(0.5, 0.0)).re;
        let grad_loc = &gc + hy;
        let lambda0 = config.track_leading.then(|| s.eigenvalues[0].re);
        let sc0 = if config.track_leading {
            pf_alpha(C64::new(h * s.eigenvalues[0].re, 0.0))
                .ok()
                .map(|a| a * proj_g[0])
        } else {
            None
        };
        DiagnosticRecord {
            value,
            grad_norm: grad_loc.norm(),
            lambda0,
            sc0,
        }
    };

    let n_steps = (horizon / config.delta).ceil() as usize;
    if n_steps > config.max_steps {
        return Err(Error::ConfigError(format!(
            "horizon {horizon} at substep {} exceeds the {}-step budget",
            config.delta, config.max_steps
        )));
    }
    let mut times = vec![0.0];
    let mut states = vec![theta0.clone()];
    let mut t = 0.0;
    while t < horizon - 1e-15 * horizon.max(1.0) {
        t = (t + config.delta).min(horizon);
        let x = state_at(t)?;
        check_finite(&x, t)?;
        times.push(t);
        states.push(x);
    }
    let diagnostics = states.iter().map(|x| diag_at(x)).collect();
    Ok(Trajectory {
        times,
        states,
        diagnostics,
    })
}

/// Exact principal-flow solution on the quadratic ½θᵀAθ + bᵀθ.
///
/// Each eigenmode obeys ċᵢ = α(hλᵢ)(λᵢcᵢ + bᵢ), solved in closed form; at
/// whole-step times t = nh the propagator is evaluated as (1−hλᵢ)ⁿ, which
/// keeps the result exactly real and reproduces gradient descent exactly.
pub fn pf_quadratic_closed_form(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    theta0: &DVector<f64>,
    t: f64,
    h: f64,
) -> Result<CVector> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let s = eig_sym(a, None)?;
    let dim = theta0.len();
    if b.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: b.len(),
        });
    }
    let mut out = CVector::zeros(dim);
    for i in 0..dim {
        let u = s.eigenvectors.column(i);
        let lambda = s.eigenvalues[i].re;
        let c0: C64 = u
            .iter()
            .zip(theta0.iter())
            .map(|(a, &x)| a * C64::new(x, 0.0))
            .sum();
        let bi: C64 = u
            .iter()
            .zip(b.iter())
            .map(|(a, &x)| a * C64::new(x, 0.0))
            .sum();
        let alpha = pf_alpha(C64::new(h * lambda, 0.0))?;
        let c = pf_mode(c0, alpha * bi, lambda, h, t)?;
        for r in 0..dim {
            out[r] += c * u[r];
        }
    }
    Ok(out)
}

/// Predicted gradient overlap with an eigendirection of eigenvalue λ:
/// (∇E·u)(t) = (∇E·u)(0)·e^{log(1−hλ)t/h}. Magnitude decays iff λ < 2/h and
/// is constant exactly at λ = 2/h.
pub fn grad_dot_u_prediction(g_dot_u0: f64, lambda: f64, h: f64, t: f64) -> Result<C64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ConfigError(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let z = C64::new(1.0 - h * lambda, 0.0);
    if z.norm() < 1e-12 {
        return Err(Error::SingularArgument);
    }
    let mu = z.ln() / C64::new(h, 0.0);
    Ok(C64::new(g_dot_u0, 0.0) * pf_propagator(z, mu, h, t))
}
