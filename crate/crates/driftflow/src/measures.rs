//! Drift measurement, convergence-order fits, and Geometric Complexity.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::promote;
use crate::error::{Error, Result};
use crate::flows::{integrate, FlowKind, IntegratorConfig};
use crate::optimizers::gd_step;
use crate::problems::{mlp_new, Activation, Init, LossKind, Mlp, MlpSpec, Problem};

/// Norm of the gap between one gradient-descent step of size `h` and the
/// `flow` followed from the same point for time `h`.
pub fn per_iteration_drift(
    problem: &dyn Problem,
    theta: &DVector<f64>,
    h: f64,
    flow: FlowKind,
    config: &IntegratorConfig,
) -> Result<f64> {
    let discrete = gd_step(problem, theta, h)?;
    let trajectory = integrate(flow, problem, &promote(theta), h, config)?;
    Ok((trajectory.final_state() - promote(&discrete)).norm())
}

/// The drift proxies (‖Hg‖, ‖Hĝ‖) with ĝ the unit gradient.
///
/// Both come from one exact Hessian-vector product. Below gradient norm
/// 1e-12 the normalized proxy is undefined and the call fails; ‖Hg‖ is
/// exactly zero there anyway.
pub fn drift_proxy(problem: &dyn Problem, theta: &DVector<f64>) -> Result<(f64, f64)> {
    let g = problem.grad(theta)?;
    let gn = g.norm();
    if gn < 1e-12 {
        return Err(Error::ZeroGradient);
    }
    let hg = problem.hvp(theta, &g)?.norm();
    Ok((hg, hg / gn))
}

/// Per-iteration drift and proxies recorded along a gradient-descent run.
///
/// All vectors have one entry per iteration, indexed by the iterate the step
/// started from. Entries of `hg_hat` where the gradient norm fell below
/// 1e-12 are NaN (absent) and are excluded from the rank correlation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub drift: Vec<f64>,
    pub hg: Vec<f64>,
    pub hg_hat: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Spearman rank correlation between `drift` and `hg_hat`.
    pub spearman: f64,
}

impl DriftReport {
    /// One row per iteration: iteration, drift, hg, hg_hat, grad_norm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,drift,hg,hg_hat,grad_norm\n");
        for i in 0..self.drift.len() {
            out.push_str(&format!(
                "{i},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.drift[i], self.hg[i], self.hg_hat[i], self.grad_norm[i]
            ));
        }
        out
    }
}

/// Run `iterations` gradient-descent steps from `theta0`, measuring the
/// per-iteration drift against `flow` and the proxies at every iterate.
pub fn drift_report(
    problem: &dyn Problem,
    theta0: &DVector<f64>,
    h: f64,
    flow: FlowKind,
    config: &IntegratorConfig,
    iterations: usize,
) -> Result<DriftReport> {
    if iterations == 0 {
        return Err(Error::ConfigError("need at least one iteration".into()));
    }
    let mut theta = theta0.clone();
    let mut drift = Vec::with_capacity(iterations);
    let mut hg = Vec::with_capacity(iterations);
    let mut hg_hat = Vec::with_capacity(iterations);
    let mut grad_norm = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        drift.push(per_iteration_drift(problem, &theta, h, flow, config)?);
        let g = problem.grad(&theta)?;
        let gn = g.norm();
        let hgn = problem.hvp(&theta, &g)?.norm();
        hg.push(hgn);
        hg_hat.push(if gn < 1e-12 { f64::NAN } else { hgn / gn });
        grad_norm.push(gn);
        theta = gd_step(problem, &theta, h)?;
    }
    let (a, b): (Vec<f64>, Vec<f64>) = drift
        .iter()
        .zip(hg_hat.iter())
        .filter(|(_, p)| p.is_finite())
        .map(|(&d, &p)| (d, p))
        .unzip();
    let spearman = spearman(&a, &b)?;
    Ok(DriftReport {
        drift,
        hg,
        hg_hat,
        grad_norm,
        spearman,
    })
}

/// Ranks with ties averaged, 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut at = 0;
    while at < order.len() {
        let mut end = at + 1;
        while end < order.len() && values[order[end]] == values[order[at]] {
            end += 1;
        }
        let rank = (at + 1 + end) as f64 / 2.0;
        for &idx in &order[at..end] {
            out[idx] = rank;
        }
        at = end;
    }
    out
}

/// Spearman rank correlation of two equal-length samples.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::DegenerateFit(
            "rank correlation needs at least two samples".into(),
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::ConfigError("samples must be finite".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (da, db) = (ra[i] - mean, rb[i] - mean);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateFit("a sample has constant rank".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// A log-log least-squares fit of error against step size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderEstimate {
    pub h: Vec<f64>,
    pub error: Vec<f64>,
    /// Fitted order: d ln(error) / d ln(h).
    pub slope: f64,
    /// ln(error) at ln(h) = 0.
    pub intercept: f64,
    pub r2: f64,
}

/// Fit ln(error) = slope·ln(h) + intercept over at least four pairs.
pub fn order_estimate(pairs: &[(f64, f64)]) -> Result<OrderEstimate> {
    if pairs.len() < 4 {
        return Err(Error::ConfigError(format!(
            "order fit needs at least 4 pairs, got {}",
            pairs.len()
        )));
    }
    for &(h, e) in pairs {
        if !(h > 0.0) || !h.is_finite() || !(e > 0.0) || !e.is_finite() {
            return Err(Error::ConfigError(format!(
                "order fit needs positive finite pairs, got ({h}, {e})"
            )));
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "all step sizes coincide; the slope is unidentifiable".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(OrderEstimate {
        h: pairs.iter().map(|p| p.0).collect(),
        error: pairs.iter().map(|p| p.1).collect(),
        slope,
        intercept,
        r2,
    })
}

fn check_inputs(model: &Mlp, inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.ncols() == 0 || inputs.nrows() != model.spec().widths[0] {
        return Err(Error::ShapeMismatch(format!(
            "inputs must be {}xN with N > 0, got {}x{}",
            model.spec().widths[0],
            inputs.nrows(),
            inputs.ncols()
        )));
    }
    Ok(())
}

/// Geometric Complexity: the mean over `inputs` of the squared Frobenius
/// norm of the logit Jacobian with respect to the input. The logits are the
/// final pre-activations, so a linear model scores exactly ‖W‖²_F.
pub fn geometric_complexity(
    model: &Mlp,
    theta: &DVector<f64>,
    inputs: &DMatrix<f64>,
) -> Result<f64> {
    check_inputs(model, inputs)?;
    let mut total = 0.0;
    for j in 0..inputs.ncols() {
        let jac = model.input_jacobian(theta, &inputs.column(j).into_owned())?;
        total += jac.norm_squared();
    }
    Ok(total / inputs.ncols() as f64)
}

/// Geometric Complexity of a ReLU network via its linear regions: group the
/// inputs by realized activation pattern, build each pattern's masked weight
/// product A_p, and average ‖A_p‖²_F weighted by pattern counts.
pub fn gc_relu_piecewise(
    model: &Mlp,
    theta: &DVector<f64>,
    inputs: &DMatrix<f64>,
) -> Result<f64> {
    if model.spec().activation != Activation::Relu {
        return Err(Error::NotPiecewiseLinear(format!(
            "activation {:?} does not induce linear regions",
            model.spec().activation
        )));
    }
    check_inputs(model, inputs)?;
    let (weights, _) = model.spec().unflatten(theta)?;
    let mut counts: BTreeMap<Vec<Vec<bool>>, usize> = BTreeMap::new();
    for j in 0..inputs.ncols() {
        let pattern = model.activation_pattern(theta, &inputs.column(j).into_owned())?;
        *counts.entry(pattern).or_insert(0) += 1;
    }
    let n = inputs.ncols() as f64;
    let mut total = 0.0;
    for (pattern, count) in counts {
        let mut a = weights[0].clone();
        for (l, layer_mask) in pattern.iter().enumerate() {
            for (r, &active) in layer_mask.iter().enumerate() {
                if !active {
                    a.row_mut(r).fill(0.0);
                }
            }
            a = &weights[l + 1] * a;
        }
        total += (count as f64 / n) * a.norm_squared();
    }
    Ok(total)
}

/// One depth's Geometric Complexity statistics at initialisation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepthGcRow {
    /// Number of affine layers; depth 1 is a linear model.
    pub depth: usize,
    pub mean_gc: f64,
    pub std_gc: f64,
}

/// Geometric Complexity at initialisation across depths, for ReLU networks
/// of hidden width `width_base` on `input_dim`-dimensional standard-normal
/// probes. Each seed draws both the probes and the weights, so the table is
/// a pure function of the arguments. The std is the sample deviation over
/// seeds (zero for a single seed).
pub fn gc_init_depth_study(
    width_base: usize,
    depths: &[usize],
    init: Init,
    seeds: &[u64],
    input_dim: usize,
    n_samples: usize,
) -> Result<Vec<DepthGcRow>> {
    if width_base == 0 || input_dim == 0 || n_samples == 0 || depths.is_empty() || seeds.is_empty()
    {
        return Err(Error::ConfigError(
            "width, input dimension, sample count, depths, and seeds must all be nonempty".into(),
        ));
    }
    if depths.iter().any(|&d| d == 0) {
        return Err(Error::ConfigError("depths must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat(width_base).take(depth));
        let mut gcs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = DMatrix::from_fn(input_dim, n_samples, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let targets = DMatrix::zeros(width_base, n_samples);
            let spec = MlpSpec::random(
                widths.clone(),
                Activation::Relu,
                LossKind::Mse,
                inputs.clone(),
                targets,
                init,
                &mut rng,
            )?;
            let model = mlp_new(spec)?;
            let theta = model.spec().flatten();
            gcs.push(gc_relu_piecewise(&model, &theta, &inputs)?);
        }
        let n = gcs.len() as f64;
        let mean = gcs.iter().sum::<f64>() / n;
        let std = if gcs.len() < 2 {
            0.0
        } else {
            (gcs.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        rows.push(DepthGcRow {
            depth,
            mean_gc: mean,
            std_gc: std,
        });
    }
    Ok(rows)
}

/// Render a depth study as CSV: depth, mean_gc, std_gc.
pub fn depth_study_csv(rows: &[DepthGcRow]) -> String {
    let mut out = String::from("depth,mean_gc,std_gc\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            row.depth, row.mean_gc, row.std_gc
        ));
    }
    out
}
