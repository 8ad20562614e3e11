//! Experiment configuration: a TOML file describing one run.
//!
//! Every stochastic choice in a run is fixed by `seed`, so two invocations
//! with the same file produce byte-identical traces.

use std::path::Path;
use std::sync::Arc;

use driftflow::error::{Error, Result};
use driftflow::problems::{
    banana_new, cos1d_new, dirac_gan_new, linear_game_new, mlp_new, quadratic_new, Activation,
    GameProblem, GanLoss, InitScheme, LossKind, MlpSpec, Problem,
};
use driftflow::repro::three_class_blobs;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One experiment: a problem, an optimizer, and what to record.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub optimizer: OptimizerConfig,
    /// Flows to measure per-iteration drift against. Ignored for game runs.
    #[serde(default)]
    pub flows: Vec<String>,
    pub iters: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<String>,
}

fn default_seed() -> u64 {
    driftflow::repro::DEFAULT_SEED
}

/// Problem selector plus its parameters. Fields not used by `id` must be
/// left unset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub id: String,
    /// quadratic: dimension (defaults to eigenvalue count, else 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// quadratic: curvature spectrum, placed on the diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    /// quadratic: linear term, defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Initial point. Games read the first player first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// lineargame: self-interaction strength for both players.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// mlp: layer widths, input first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    /// mlp: relu | elu | tanh | identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    /// mlp: mse | cross_entropy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    /// mlp: number of training examples drawn from the seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<usize>,
}

/// Optimizer selector. Training ids take gd | momentum | dal | dal_momentum,
/// game ids take sim | alt.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// dal: drift exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// dal: learning-rate cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_cap: Option<f64>,
    /// Game learning-rate scales for the two players.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_theta: Option<f64>,
    /// Record the leading Hessian eigenvalue each iteration.
    #[serde(default)]
    pub track_leading: bool,
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
    validate(&config)?;
    Ok(config)
}

pub fn validate(config: &ExperimentConfig) -> Result<()> {
    if config.iters == 0 {
        return Err(Error::ConfigError("iters must be at least 1".into()));
    }
    let game = match config.problem.id.as_str() {
        "quadratic" | "banana" | "cos1d" | "mlp" => false,
        "diracgan" | "lineargame" => true,
        other => {
            return Err(Error::ConfigError(format!("unknown problem id \"{other}\"")));
        }
    };
    let kind = config.optimizer.kind.as_str();
    match (game, kind) {
        (false, "gd" | "momentum" | "dal" | "dal_momentum") => {}
        (true, "sim" | "alt") => {}
        (false, "sim" | "alt") => {
            return Err(Error::ConfigError(format!(
                "optimizer \"{kind}\" needs a game problem, got \"{}\"",
                config.problem.id
            )));
        }
        (true, "gd" | "momentum" | "dal" | "dal_momentum") => {
            return Err(Error::ConfigError(format!(
                "game problem \"{}\" needs optimizer sim or alt, got \"{kind}\"",
                config.problem.id
            )));
        }
        (_, other) => {
            return Err(Error::ConfigError(format!("unknown optimizer kind \"{other}\"")));
        }
    }
    if kind != "dal" && kind != "dal_momentum" {
        let h = config.optimizer.h.ok_or_else(|| {
            Error::ConfigError(format!("optimizer \"{kind}\" requires h"))
        })?;
        if !(h > 0.0) {
            return Err(Error::ConfigError(format!("h must be positive, got {h}")));
        }
    }
    if (kind == "momentum" || kind == "dal_momentum") && config.optimizer.beta.is_none() {
        return Err(Error::ConfigError(format!("optimizer \"{kind}\" requires beta")));
    }
    for flow in &config.flows {
        parse_flow(flow, 0.1)?;
    }
    if game && !config.flows.is_empty() {
        return Err(Error::ConfigError("flows apply to training runs only".into()));
    }
    Ok(())
}

pub fn parse_flow(name: &str, h: f64) -> Result<driftflow::flows::FlowKind> {
    use driftflow::flows::FlowKind;
    Ok(match name {
        "ngf" => FlowKind::Ngf,
        "igr" => FlowKind::Igr(h),
        "third_order" => FlowKind::ThirdOrder(h),
        "pf" => FlowKind::Pf(h),
        "pf_non_principal" => FlowKind::PfNonPrincipal(h),
        other => {
            return Err(Error::ConfigError(format!("unknown flow \"{other}\"")));
        }
    })
}

/// A problem instance ready to run, with its initial state.
pub enum BuiltProblem {
    Training {
        problem: Arc<dyn Problem>,
        theta0: DVector<f64>,
    },
    Game {
        game: Arc<dyn GameProblem>,
        phi0: DVector<f64>,
        theta0: DVector<f64>,
    },
}

fn vector_param(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

fn check_len(name: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ConfigError(format!(
            "{name} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

/// Instantiates the configured problem. The seed fixes the mlp weights and
/// dataset; the other problems are deterministic.
pub fn build_problem(config: &ExperimentConfig) -> Result<BuiltProblem> {
    let p = &config.problem;
    match p.id.as_str() {
        "quadratic" => {
            let eigenvalues = match (&p.eigenvalues, p.dim) {
                (Some(eigs), dim) => {
                    if let Some(d) = dim {
                        check_len("eigenvalues", eigs.len(), d)?;
                    }
                    eigs.clone()
                }
                (None, dim) => vec![1.0; dim.unwrap_or(2)],
            };
            let dim = eigenvalues.len();
            let a = DMatrix::from_diagonal(&vector_param(&eigenvalues));
            let b = match &p.b {
                Some(b) => {
                    check_len("b", b.len(), dim)?;
                    vector_param(b)
                }
                None => DVector::zeros(dim),
            };
            let theta0 = match &p.theta0 {
                Some(t) => {
                    check_len("theta0", t.len(), dim)?;
                    vector_param(t)
                }
                None => DVector::from_element(dim, 1.0),
            };
            Ok(BuiltProblem::Training {
                problem: Arc::new(quadratic_new(a, b)?),
                theta0,
            })
        }
        "banana" => {
            let theta0 = match &p.theta0 {
                Some(t) => {
                    check_len("theta0", t.len(), 2)?;
                    vector_param(t)
                }
                None => DVector::from_column_slice(&[-1.0, 1.0]),
            };
            Ok(BuiltProblem::Training {
                problem: Arc::new(banana_new()),
                theta0,
            })
        }
        "cos1d" => {
            let theta0 = match &p.theta0 {
                Some(t) => {
                    check_len("theta0", t.len(), 1)?;
                    vector_param(t)
                }
                None => DVector::from_element(1, 1.0),
            };
            Ok(BuiltProblem::Training {
                problem: Arc::new(cos1d_new()),
                theta0,
            })
        }
        "mlp" => {
            if p.theta0.is_some() {
                return Err(Error::ConfigError(
                    "mlp draws theta0 from the seed; remove theta0".into(),
                ));
            }
            let widths = p.widths.clone().unwrap_or_else(|| vec![4, 10, 10, 10, 3]);
            let activation = match p.activation.as_deref().unwrap_or("elu") {
                "relu" => Activation::Relu,
                "elu" => Activation::Elu,
                "tanh" => Activation::Tanh,
                "identity" => Activation::Identity,
                other => {
                    return Err(Error::ConfigError(format!("unknown activation \"{other}\"")));
                }
            };
            let loss = match p.loss.as_deref().unwrap_or("cross_entropy") {
                "mse" => LossKind::Mse,
                "cross_entropy" => LossKind::CrossEntropy,
                other => {
                    return Err(Error::ConfigError(format!("unknown loss \"{other}\"")));
                }
            };
            let examples = p.examples.unwrap_or(60);
            let input_dim = *widths.first().ok_or_else(|| {
                Error::ConfigError("widths must name at least two layers".into())
            })?;
            if input_dim != 4 || *widths.last().unwrap() != 3 {
                return Err(Error::ConfigError(
                    "the blob dataset fixes 4 inputs and 3 classes".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let (inputs, targets) = three_class_blobs(&mut rng, examples);
            let spec = MlpSpec::random(
                widths,
                activation,
                loss,
                inputs,
                targets,
                InitScheme::GlorotUniform,
                &mut rng,
            )?;
            let theta0 = spec.flatten();
            Ok(BuiltProblem::Training {
                problem: Arc::new(mlp_new(spec)?),
                theta0,
            })
        }
        "diracgan" => {
            let (phi0, theta0) = match &p.theta0 {
                Some(t) => {
                    check_len("theta0", t.len(), 2)?;
                    (
                        DVector::from_element(1, t[0]),
                        DVector::from_element(1, t[1]),
                    )
                }
                None => (
                    DVector::from_element(1, 0.5),
                    DVector::from_element(1, 0.5),
                ),
            };
            Ok(BuiltProblem::Game {
                game: Arc::new(dirac_gan_new(GanLoss::SaturatingLogSigmoid)),
                phi0,
                theta0,
            })
        }
        "lineargame" => {
            let eps = p.eps.unwrap_or(0.09);
            let (phi0, theta0) = match &p.theta0 {
                Some(t) => {
                    check_len("theta0", t.len(), 2)?;
                    (
                        DVector::from_element(1, t[0]),
                        DVector::from_element(1, t[1]),
                    )
                }
                None => (
                    DVector::from_element(1, 1e-3),
                    DVector::from_element(1, 1e-3),
                ),
            };
            Ok(BuiltProblem::Game {
                game: Arc::new(linear_game_new(eps, eps)),
                phi0,
                theta0,
            })
        }
        other => Err(Error::ConfigError(format!("unknown problem id \"{other}\""))),
    }
}
