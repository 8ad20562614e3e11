use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_dim, Problem};
use crate::calculus::{promote, promote_matrix, re_vector, C64, CMatrix, CVector};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear, so the
/// network's final pre-activations are the logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Identity,
}

/// Training loss over the full batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// (1/2n)·Σ‖f(x) − y‖², so a linear model's gradient is the
    /// normal-equations residual.
    Mse,
    /// −(1/n)·Σ yᵀ log softmax(f(x)), natural log.
    CrossEntropy,
}

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// N(0, 1/fan_in) resampled until within two standard deviations.
    StandardTruncated,
    /// Uniform on ±√(6/(fan_in+fan_out)).
    GlorotUniform,
}

/// Architecture, parameters, and dataset of a fully-connected network.
///
/// `widths` lists layer sizes input-first; `weights[l]` has shape
/// (widths[l+1], widths[l]). Dataset matrices hold one example per column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl MlpSpec {
    /// Validate all shapes against `widths` and the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::ShapeMismatch(
                "need at least an input and an output layer".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        let layers = self.widths.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::ShapeMismatch(format!(
                "expected {layers} weight/bias pairs, got {}/{}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..layers {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            if self.weights[l].shape() != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "weight {l} must be {rows}x{cols}, got {:?}",
                    self.weights[l].shape()
                )));
            }
            if self.biases[l].len() != rows {
                return Err(Error::ShapeMismatch(format!(
                    "bias {l} must have length {rows}, got {}",
                    self.biases[l].len()
                )));
            }
        }
        if self.inputs.nrows() != self.widths[0] {
            return Err(Error::ShapeMismatch(format!(
                "inputs must have {} rows, got {}",
                self.widths[0],
                self.inputs.nrows()
            )));
        }
        if self.targets.nrows() != *self.widths.last().unwrap() {
            return Err(Error::ShapeMismatch(format!(
                "targets must have {} rows, got {}",
                self.widths.last().unwrap(),
                self.targets.nrows()
            )));
        }
        if self.inputs.ncols() != self.targets.ncols() || self.inputs.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "inputs/targets must share a positive sample count, got {}/{}",
                self.inputs.ncols(),
                self.targets.ncols()
            )));
        }
        Ok(())
    }

    /// Total parameter count Σ(widths[l]·widths[l+1] + widths[l+1]).
    pub fn param_len(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Concatenate all weights (column-major) and biases, layer by layer.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].as_slice());
            out.extend_from_slice(self.biases[l].as_slice());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten); exact round-trip.
    pub fn unflatten(&self, theta: &DVector<f64>) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
        ensure_dim(self.param_len(), theta.len())?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut at = 0usize;
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wlen = fan_in * fan_out;
            weights.push(DMatrix::from_column_slice(
                fan_out,
                fan_in,
                &theta.as_slice()[at..at + wlen],
            ));
            at += wlen;
            biases.push(DVector::from_column_slice(
                &theta.as_slice()[at..at + fan_out],
            ));
            at += fan_out;
        }
        Ok((weights, biases))
    }

    /// Copy of this spec with parameters replaced by `theta`.
    pub fn with_params(&self, theta: &DVector<f64>) -> Result<MlpSpec> {
        let (weights, biases) = self.unflatten(theta)?;
        Ok(MlpSpec {
            weights,
            biases,
            ..self.clone()
        })
    }

    /// Spec with all parameters zero.
    pub fn zeros(
        widths: Vec<usize>,
        activation: Activation,
        loss: LossKind,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
    ) -> Result<MlpSpec> {
        let weights = widths
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = widths.windows(2).map(|w| DVector::zeros(w[1])).collect();
        let spec = MlpSpec {
            widths,
            activation,
            loss,
            weights,
            biases,
            inputs,
            targets,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with weights drawn from `init` and zero biases.
    pub fn random<R: Rng>(
        widths: Vec<usize>,
        activation: Activation,
        loss: LossKind,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        init: Init,
        rng: &mut R,
    ) -> Result<MlpSpec> {
        let mut spec = MlpSpec::zeros(widths, activation, loss, inputs, targets)?;
        for l in 0..spec.weights.len() {
            let (fan_out, fan_in) = spec.weights[l].shape();
            match init {
                Init::StandardTruncated => {
                    let sigma = (1.0 / fan_in as f64).sqrt();
                    for entry in spec.weights[l].iter_mut() {
                        *entry = loop {
                            let draw: f64 =
                                rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                            if draw.abs() <= 2.0 * sigma {
                                break draw;
                            }
                        };
                    }
                }
                Init::GlorotUniform => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for entry in spec.weights[l].iter_mut() {
                        *entry = rng.gen_range(-bound..=bound);
                    }
                }
            }
        }
        Ok(spec)
    }
}

/// Forward-mode dual number; carries one directional derivative.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.v * o.d + self.d * o.v,
        }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl std::ops::Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            v: -self.v,
            d: -self.d,
        }
    }
}

/// Scalar abstraction so one forward/backward implementation serves plain
/// evaluation (f64) and exact Hessian-vector products (Dual).
trait Num:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Num for f64 {
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
}

impl Num for Dual {
    fn from_f64(x: f64) -> Dual {
        Dual { v: x, d: 0.0 }
    }
    fn re(self) -> f64 {
        self.v
    }
    fn exp(self) -> Dual {
        let e = self.v.exp();
        Dual {
            v: e,
            d: self.d * e,
        }
    }
    fn ln(self) -> Dual {
        Dual {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }
    fn tanh(self) -> Dual {
        let t = self.v.tanh();
        Dual {
            v: t,
            d: self.d * (1.0 - t * t),
        }
    }
}

impl Activation {
    fn apply<S: Num>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z.re() > 0.0 {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Elu => {
                if z.re() > 0.0 {
                    z
                } else {
                    z.exp() - S::one()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative<S: Num>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z.re() > 0.0 {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Elu => {
                if z.re() > 0.0 {
                    S::one()
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                S::one() - t * t
            }
            Activation::Identity => S::one(),
        }
    }
}

/// A fully-connected network as a [`Problem`] over its flattened parameters.
///
/// Gradients come from reverse accumulation, Hessian-vector products from the
/// same reverse pass run in dual arithmetic (exact), the Hessian from one
/// product per basis vector, and the third-derivative contraction from a
/// central difference of products with step 1e-4·(1+‖θ‖∞). Real-only: complex
/// inputs must lie on the real axis.
pub struct Mlp {
    spec: MlpSpec,
    dim: usize,
}

/// Build an MLP problem from a validated spec.
pub fn mlp_new(spec: MlpSpec) -> Result<Mlp> {
    spec.validate()?;
    let dim = spec.param_len();
    Ok(Mlp { spec, dim })
}

struct Forward<S> {
    /// Pre-activations per layer; the last entry is the logits.
    pre: Vec<Vec<S>>,
    /// Post-activations per layer, including the input at index 0.
    act: Vec<Vec<S>>,
}

impl Mlp {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// The spec's own parameters, flattened; a convenient starting point.
    pub fn initial_point(&self) -> DVector<f64> {
        self.spec.flatten()
    }

    fn layers(&self) -> usize {
        self.spec.widths.len() - 1
    }

    fn n_samples(&self) -> usize {
        self.spec.inputs.ncols()
    }

    /// Offset of weight layer `l` in the flat vector; biases follow weights.
    fn weight_offset(&self, layer: usize) -> usize {
        self.spec.widths.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn forward<S: Num>(&self, params: &[S], x: &[S]) -> Forward<S> {
        let layers = self.layers();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers + 1);
        act.push(x.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w_off = self.weight_offset(l);
            let b_off = w_off + fan_in * fan_out;
            let prev = &act[l];
            let mut z = Vec::with_capacity(fan_out);
            for r in 0..fan_out {
                let mut acc = params[b_off + r];
                for c in 0..fan_in {
                    // Column-major weight layout: entry (r, c) at c*fan_out + r.
                    acc = acc + params[w_off + c * fan_out + r] * prev[c];
                }
                z.push(acc);
            }
            let a: Vec<S> = if l + 1 < layers {
                z.iter().map(|&zi| self.spec.activation.apply(zi)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(a);
        }
        Forward { pre, act }
    }

    /// Loss for one sample given its logits, plus ∂loss/∂logits. Both already
    /// carry the 1/n batch factor.
    fn sample_loss<S: Num>(&self, logits: &[S], target_col: usize) -> (S, Vec<S>) {
        let n = S::from_f64(self.n_samples() as f64);
        let y: Vec<S> = self
            .spec
            .targets
            .column(target_col)
            .iter()
            .map(|&t| S::from_f64(t))
            .collect();
        match self.spec.loss {
            LossKind::Mse => {
                let mut loss = S::zero();
                let mut dlogits = Vec::with_capacity(logits.len());
                let half = S::from_f64(0.5);
                for (f, yv) in logits.iter().zip(&y) {
                    let r = *f - *yv;
                    loss = loss + half * r * r / n;
                    dlogits.push(r / n);
                }
                (loss, dlogits)
            }
            LossKind::CrossEntropy => {
                // Shift by the max real part; the shift cancels exactly, so
                // treating it as a constant keeps derivatives exact.
                let shift = logits
                    .iter()
                    .map(|z| z.re())
                    .fold(f64::NEG_INFINITY, f64::max);
                let shift = S::from_f64(shift);
                let mut sum_exp = S::zero();
                for z in logits {
                    sum_exp = sum_exp + (*z - shift).exp();
                }
                let lse = shift + sum_exp.ln();
                let mut loss = S::zero();
                let mut sum_y = S::zero();
                for (z, yv) in logits.iter().zip(&y) {
                    loss = loss - *yv * (*z - lse) / n;
                    sum_y = sum_y + *yv;
                }
                let mut dlogits = Vec::with_capacity(logits.len());
                for (z, yv) in logits.iter().zip(&y) {
                    let p = (*z - lse).exp();
                    dlogits.push((p * sum_y - *yv) / n);
                }
                (loss, dlogits)
            }
        }
    }

    fn eval_generic<S: Num>(&self, params: &[S]) -> S {
        let mut total = S::zero();
        for s in 0..self.n_samples() {
            let x: Vec<S> = self
                .spec
                .inputs
                .column(s)
                .iter()
                .map(|&v| S::from_f64(v))
                .collect();
            let fwd = self.forward(params, &x);
            let logits = fwd.pre.last().unwrap();
            let (loss, _) = self.sample_loss(logits, s);
            total = total + loss;
        }
        total
    }

    fn grad_generic<S: Num>(&self, params: &[S]) -> Vec<S> {
        let layers = self.layers();
        let mut grad = vec![S::zero(); self.dim];
        for s in 0..self.n_samples() {
            let x: Vec<S> = self
                .spec
                .inputs
                .column(s)
                .iter()
                .map(|&v| S::from_f64(v))
                .collect();
            let fwd = self.forward(params, &x);
            let (_, mut delta) = self.sample_loss(fwd.pre.last().unwrap(), s);
            for l in (0..layers).rev() {
                let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
                let w_off = self.weight_offset(l);
                let b_off = w_off + fan_in * fan_out;
                let prev = &fwd.act[l];
                for r in 0..fan_out {
                    grad[b_off + r] = grad[b_off + r] + delta[r];
                    for c in 0..fan_in {
                        let idx = w_off + c * fan_out + r;
                        grad[idx] = grad[idx] + delta[r] * prev[c];
                    }
                }
                if l > 0 {
                    let mut next = vec![S::zero(); fan_in];
                    for c in 0..fan_in {
                        let mut acc = S::zero();
                        for r in 0..fan_out {
                            acc = acc + params[w_off + c * fan_out + r] * delta[r];
                        }
                        next[c] = acc * self.spec.activation.derivative(fwd.pre[l - 1][c]);
                    }
                    delta = next;
                }
            }
        }
        grad
    }

    fn eval_real(&self, theta: &DVector<f64>) -> Result<f64> {
        ensure_dim(self.dim, theta.len())?;
        Ok(self.eval_generic(theta.as_slice()))
    }

    fn grad_real(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.dim, theta.len())?;
        Ok(DVector::from_vec(self.grad_generic(theta.as_slice())))
    }

    fn hvp_real(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.dim, theta.len())?;
        ensure_dim(self.dim, v.len())?;
        let params: Vec<Dual> = theta
            .iter()
            .zip(v.iter())
            .map(|(&t, &d)| Dual { v: t, d })
            .collect();
        let grad = self.grad_generic(&params);
        Ok(DVector::from_iterator(self.dim, grad.iter().map(|g| g.d)))
    }

    fn hess_real(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(self.dim, theta.len())?;
        let mut h = DMatrix::zeros(self.dim, self.dim);
        let mut seed = DVector::zeros(self.dim);
        for i in 0..self.dim {
            seed[i] = 1.0;
            let col = self.hvp_real(theta, &seed)?;
            h.set_column(i, &col);
            seed[i] = 0.0;
        }
        // Dual-mode products are exact, so asymmetry is pure rounding noise.
        let sym = (&h + h.transpose()) * 0.5;
        Ok(sym)
    }

    fn third_real(
        &self,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        ensure_dim(self.dim, theta.len())?;
        ensure_dim(self.dim, v.len())?;
        ensure_dim(self.dim, w.len())?;
        let eps = 1e-4 * (1.0 + theta.amax());
        let plus = self.hvp_real(&(theta + w * eps), v)?;
        let minus = self.hvp_real(&(theta - w * eps), v)?;
        Ok((plus - minus) / (2.0 * eps))
    }

    /// Network output (logits) for one input column.
    pub fn logits(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.dim, theta.len())?;
        ensure_dim(self.spec.widths[0], x.len())?;
        let fwd = self.forward(theta.as_slice(), x.as_slice());
        Ok(DVector::from_vec(fwd.pre.last().unwrap().clone()))
    }

    /// Jacobian of the logits with respect to the input, shape
    /// (output width, input width). Forward-mode, one pass per input column.
    pub fn input_jacobian(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(self.dim, theta.len())?;
        ensure_dim(self.spec.widths[0], x.len())?;
        let params: Vec<Dual> = theta.iter().map(|&t| Dual { v: t, d: 0.0 }).collect();
        let out_w = *self.spec.widths.last().unwrap();
        let in_w = self.spec.widths[0];
        let mut jac = DMatrix::zeros(out_w, in_w);
        for i in 0..in_w {
            let xd: Vec<Dual> = x
                .iter()
                .enumerate()
                .map(|(k, &v)| Dual {
                    v,
                    d: if k == i { 1.0 } else { 0.0 },
                })
                .collect();
            let fwd = self.forward(&params, &xd);
            for (r, z) in fwd.pre.last().unwrap().iter().enumerate() {
                jac[(r, i)] = z.d;
            }
        }
        Ok(jac)
    }

    /// Sign pattern of every hidden pre-activation for one input, outer index
    /// hidden layer. Only defined for ReLU networks, whose logits are linear
    /// within each pattern.
    pub fn activation_pattern(
        &self,
        theta: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Result<Vec<Vec<bool>>> {
        if self.spec.activation != Activation::Relu {
            return Err(Error::NotPiecewiseLinear(format!(
                "activation {:?} does not induce linear regions",
                self.spec.activation
            )));
        }
        ensure_dim(self.dim, theta.len())?;
        ensure_dim(self.spec.widths[0], x.len())?;
        let fwd = self.forward(theta.as_slice(), x.as_slice());
        let hidden = self.layers() - 1;
        Ok(fwd.pre[..hidden]
            .iter()
            .map(|z| z.iter().map(|&v| v > 0.0).collect())
            .collect())
    }
}

fn require_real(v: &CVector) -> Result<DVector<f64>> {
    if v.iter().any(|z| z.im != 0.0) {
        return Err(Error::ComplexUnsupported);
    }
    Ok(re_vector(v))
}

impl Problem for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn supports_complex(&self) -> bool {
        false
    }

    fn eval_c(&self, theta: &CVector) -> Result<C64> {
        Ok(C64::new(self.eval_real(&require_real(theta)?)?, 0.0))
    }

    fn grad_c(&self, theta: &CVector) -> Result<CVector> {
        Ok(promote(&self.grad_real(&require_real(theta)?)?))
    }

    fn hess_c(&self, theta: &CVector) -> Result<CMatrix> {
        Ok(promote_matrix(&self.hess_real(&require_real(theta)?)?))
    }

    fn hvp_c(&self, theta: &CVector, v: &CVector) -> Result<CVector> {
        Ok(promote(&self.hvp_real(
            &require_real(theta)?,
            &require_real(v)?,
        )?))
    }

    fn third_contraction_c(&self, theta: &CVector, v: &CVector, w: &CVector) -> Result<CVector> {
        Ok(promote(&self.third_real(
            &require_real(theta)?,
            &require_real(v)?,
            &require_real(w)?,
        )?))
    }

    fn eval(&self, theta: &DVector<f64>) -> Result<f64> {
        self.eval_real(theta)
    }

    fn grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.grad_real(theta)
    }

    fn hess(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.hess_real(theta)
    }

    fn hvp(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.hvp_real(theta, v)
    }

    fn third_contraction(
        &self,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.third_real(theta, v, w)
    }
}
