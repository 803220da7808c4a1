//! Gradient descent and Adam over a selected subset of the design
//! parameters.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::{value_and_grad, ThetaGradient};
use crate::equilibrium::{EquilibriumModel, EquilibriumState, Theta};
use crate::error::{FdmError, Result};
use crate::goals::LossSpec;
use crate::network::FdmNetwork;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
}

/// A block of [`Theta`] that may be trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParameterBlock {
    #[serde(rename = "q")]
    ForceDensities,
    #[serde(rename = "loads")]
    Loads,
    #[serde(rename = "support_xyz")]
    SupportXyz,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Stop once the largest trainable gradient component falls below this.
    pub grad_tol: f64,
    pub trainable: BTreeSet<ParameterBlock>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Adam,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 5000,
            grad_tol: 1e-9,
            trainable: BTreeSet::from([ParameterBlock::ForceDensities]),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FdmError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {beta}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return bad(format!(
                "grad_tol must be nonnegative, got {}",
                self.grad_tol
            ));
        }
        if self.trainable.is_empty() {
            return bad("at least one parameter block must be trainable".into());
        }
        Ok(())
    }
}

/// Moment estimates carried between steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Mutable views of the trainable blocks of `theta`, paired with the
/// matching gradient blocks, in the fixed order q, loads, support_xyz.
fn blocks<'a>(
    theta: &'a mut Theta,
    grad: &'a ThetaGradient,
    trainable: &BTreeSet<ParameterBlock>,
) -> Vec<(&'a mut [f64], &'a [f64])> {
    let mut out: Vec<(&mut [f64], &[f64])> = Vec::new();
    if trainable.contains(&ParameterBlock::ForceDensities) {
        out.push((&mut theta.q, &grad.q));
    }
    if trainable.contains(&ParameterBlock::Loads) {
        out.push((theta.loads.as_flattened_mut(), grad.loads.as_flattened()));
    }
    if trainable.contains(&ParameterBlock::SupportXyz) {
        out.push((
            theta.support_xyz.as_flattened_mut(),
            grad.support_xyz.as_flattened(),
        ));
    }
    out
}

/// Largest absolute gradient component over the trainable blocks.
pub fn trainable_grad_norm(grad: &ThetaGradient, trainable: &BTreeSet<ParameterBlock>) -> f64 {
    let mut norm = 0.0_f64;
    let mut take = |values: &[f64]| {
        for v in values {
            norm = norm.max(v.abs());
        }
    };
    if trainable.contains(&ParameterBlock::ForceDensities) {
        take(&grad.q);
    }
    if trainable.contains(&ParameterBlock::Loads) {
        take(grad.loads.as_flattened());
    }
    if trainable.contains(&ParameterBlock::SupportXyz) {
        take(grad.support_xyz.as_flattened());
    }
    norm
}

/// One parameter update. Non-trainable blocks are returned untouched.
pub fn step(
    theta: &Theta,
    grad: &ThetaGradient,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<Theta> {
    let mut next = theta.clone();
    let pairs = blocks(&mut next, grad, &config.trainable);
    let total: usize = pairs.iter().map(|(p, _)| p.len()).sum();
    if pairs.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(FdmError::NonFiniteGradient);
    }
    if state.first_moment.len() != total {
        state.first_moment = vec![0.0; total];
        state.second_moment = vec![0.0; total];
    }
    state.step += 1;

    let lr = config.learning_rate;
    match config.method {
        Method::Sgd => {
            for (params, g) in pairs {
                for (p, g) in params.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
        }
        Method::Adam => {
            let t = state.step as i32;
            let bias1 = 1.0 - config.beta1.powi(t);
            let bias2 = 1.0 - config.beta2.powi(t);
            let mut k = 0;
            for (params, g) in pairs {
                for (p, &g) in params.iter_mut().zip(g) {
                    let m = &mut state.first_moment[k];
                    let v = &mut state.second_moment[k];
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
                    k += 1;
                }
            }
        }
    }
    Ok(next)
}

/// Why an optimization run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    Converged,
    SingularMatrix,
    NonFiniteLoss,
    NonFiniteGradient,
}

impl Termination {
    /// True when the run was cut short by a numerical failure.
    pub fn is_failure(self) -> bool {
        !matches!(self, Termination::MaxIterations | Termination::Converged)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    /// Seconds since the start of the run, per recorded iteration.
    pub elapsed: Vec<f64>,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub best_theta: Theta,
    pub best_state: EquilibriumState,
    pub termination: Termination,
    /// The error that ended the run early, if any.
    pub failure: Option<FdmError>,
    /// Edges whose force density changed sign between the start and the
    /// best parameters.
    pub sign_flipped_edges: Vec<usize>,
}

impl OptimizationTrace {
    fn stop(&mut self, termination: Termination, failure: FdmError) {
        self.termination = termination;
        self.failure = Some(failure);
    }
}

/// Snapshot handed to an observer after every evaluated iteration.
pub struct Iteration<'a> {
    pub index: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub theta: &'a Theta,
    pub matrix: &'a SparseMatrix,
}

pub fn optimize(
    network: &FdmNetwork,
    theta0: &Theta,
    spec: &LossSpec,
    config: &OptimizerConfig,
) -> Result<OptimizationTrace> {
    let model = EquilibriumModel::new(network.clone());
    optimize_with(&model, theta0, spec, config, |_| {})
}

/// Runs the optimization on an existing model, calling `observe` after
/// every evaluated iteration.
///
/// Fails only if the starting parameters cannot be solved. Later numerical
/// failures end the run early with the best parameters seen so far.
pub fn optimize_with(
    model: &EquilibriumModel,
    theta0: &Theta,
    spec: &LossSpec,
    config: &OptimizerConfig,
    mut observe: impl FnMut(&Iteration<'_>),
) -> Result<OptimizationTrace> {
    config.validate()?;
    let start = Instant::now();

    let (loss0, mut grad, solution0) = value_and_grad(model, theta0, spec)?;
    let mut theta = theta0.clone();
    let mut trace = OptimizationTrace {
        loss_history: Vec::new(),
        grad_norm_history: Vec::new(),
        elapsed: Vec::new(),
        best_loss: f64::INFINITY,
        best_iteration: 0,
        best_theta: theta0.clone(),
        best_state: solution0.state.clone(),
        termination: Termination::MaxIterations,
        failure: None,
        sign_flipped_edges: Vec::new(),
    };
    let mut opt_state = OptimizerState::new();
    let mut loss = loss0;
    let mut solution = solution0;

    for index in 0..=config.max_iterations {
        if !loss.is_finite() {
            trace.stop(Termination::NonFiniteLoss, FdmError::NonFiniteLoss);
            break;
        }
        let grad_norm = trainable_grad_norm(&grad, &config.trainable);
        trace.loss_history.push(loss);
        trace.grad_norm_history.push(grad_norm);
        trace.elapsed.push(start.elapsed().as_secs_f64());
        if loss < trace.best_loss {
            trace.best_loss = loss;
            trace.best_iteration = index;
            trace.best_theta = theta.clone();
            trace.best_state = solution.state.clone();
        }
        observe(&Iteration {
            index,
            loss,
            grad_norm,
            theta: &theta,
            matrix: &solution.matrix,
        });

        if !grad_norm.is_finite() {
            trace.stop(Termination::NonFiniteGradient, FdmError::NonFiniteGradient);
            break;
        }
        if grad_norm < config.grad_tol {
            trace.termination = Termination::Converged;
            break;
        }
        if index == config.max_iterations {
            break;
        }

        theta = match step(&theta, &grad, &mut opt_state, config) {
            Ok(t) => t,
            Err(e) => {
                trace.stop(Termination::NonFiniteGradient, e);
                break;
            }
        };
        match value_and_grad(model, &theta, spec) {
            Ok((l, g, s)) => {
                loss = l;
                grad = g;
                solution = s;
            }
            Err(e) => {
                let termination = match e {
                    FdmError::SingularMatrix { .. } => Termination::SingularMatrix,
                    FdmError::NonFiniteInput { .. } | FdmError::NonFiniteLoss => {
                        Termination::NonFiniteLoss
                    }
                    FdmError::NonFiniteGradient | FdmError::ZeroLengthEdge { .. } => {
                        Termination::NonFiniteGradient
                    }
                    e => return Err(e),
                };
                trace.stop(termination, e);
                break;
            }
        }
    }

    trace.sign_flipped_edges = theta0
        .q
        .iter()
        .zip(&trace.best_theta.q)
        .enumerate()
        .filter(|(_, (a, b))| a.signum() != b.signum())
        .map(|(i, _)| i)
        .collect();
    Ok(trace)
}
