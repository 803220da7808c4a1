//! Goal functions on the equilibrium state and the weighted loss.
//!
//! All goals are squared-L2 misfits. Goals read only the
//! [`EquilibriumState`]; the chain rule back to the design parameters lives
//! in [`crate::adjoint`].

use crate::equilibrium::EquilibriumState;
use crate::error::{FdmError, Result};
use crate::network::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum GoalKind {
    /// `Σ ‖X_v - target_v‖²` over the listed vertices.
    NodePoint {
        vertices: Vec<usize>,
        targets: Vec<Vec3>,
    },
    /// `Σ (l_i - target_i)²` over the listed edges.
    EdgeLength {
        edges: Vec<usize>,
        targets: Vec<f64>,
    },
    /// `Σ (t_i - target_i)²` over the listed edges.
    EdgeForce {
        edges: Vec<usize>,
        targets: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub kind: GoalKind,
    pub weight: f64,
}

impl Goal {
    pub fn node_point(vertices: Vec<usize>, targets: Vec<Vec3>) -> Goal {
        Goal {
            kind: GoalKind::NodePoint { vertices, targets },
            weight: 1.0,
        }
    }

    pub fn edge_length(edges: Vec<usize>, targets: Vec<f64>) -> Goal {
        Goal {
            kind: GoalKind::EdgeLength { edges, targets },
            weight: 1.0,
        }
    }

    pub fn edge_force(edges: Vec<usize>, targets: Vec<f64>) -> Goal {
        Goal {
            kind: GoalKind::EdgeForce { edges, targets },
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Goal {
        self.weight = weight;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            GoalKind::NodePoint { .. } => "node_point",
            GoalKind::EdgeLength { .. } => "edge_length",
            GoalKind::EdgeForce { .. } => "edge_force",
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(format!(
                "weight must be finite and positive, got {}",
                self.weight
            ));
        }
        let (elements, targets, finite) = match &self.kind {
            GoalKind::NodePoint { vertices, targets } => (
                vertices.len(),
                targets.len(),
                targets.iter().flatten().all(|v| v.is_finite()),
            ),
            GoalKind::EdgeLength { edges, targets } | GoalKind::EdgeForce { edges, targets } => (
                edges.len(),
                targets.len(),
                targets.iter().all(|v| v.is_finite()),
            ),
        };
        if elements != targets {
            return Err(format!("{elements} elements but {targets} targets"));
        }
        if !finite {
            return Err("targets must be finite".into());
        }
        Ok(())
    }

    fn check_indices(&self, state: &EquilibriumState) -> Result<()> {
        let (what, indices, len) = match &self.kind {
            GoalKind::NodePoint { vertices, .. } => ("vertex", vertices, state.xyz.len()),
            GoalKind::EdgeLength { edges, .. } | GoalKind::EdgeForce { edges, .. } => {
                ("edge", edges, state.lengths.len())
            }
        };
        match indices.iter().find(|&&i| i >= len) {
            Some(&index) => Err(FdmError::IndexOutOfRange { what, index, len }),
            None => Ok(()),
        }
    }

    /// Unweighted goal value.
    pub fn value(&self, state: &EquilibriumState) -> Result<f64> {
        self.check_indices(state)?;
        Ok(match &self.kind {
            GoalKind::NodePoint { vertices, targets } => vertices
                .iter()
                .zip(targets)
                .map(|(&v, t)| {
                    (0..3)
                        .map(|d| (state.xyz[v][d] - t[d]).powi(2))
                        .sum::<f64>()
                })
                .sum(),
            GoalKind::EdgeLength { edges, targets } => {
                squared_misfit(&state.lengths, edges, targets)
            }
            GoalKind::EdgeForce { edges, targets } => squared_misfit(&state.forces, edges, targets),
        })
    }

    /// Adds `scale · ∂g/∂U` into `grad`.
    fn accumulate(
        &self,
        state: &EquilibriumState,
        scale: f64,
        grad: &mut StateGradient,
    ) -> Result<()> {
        self.check_indices(state)?;
        match &self.kind {
            GoalKind::NodePoint { vertices, targets } => {
                for (&v, t) in vertices.iter().zip(targets) {
                    for d in 0..3 {
                        grad.xyz[v][d] += 2.0 * scale * (state.xyz[v][d] - t[d]);
                    }
                }
            }
            GoalKind::EdgeLength { edges, targets } => {
                for (&i, t) in edges.iter().zip(targets) {
                    grad.lengths[i] += 2.0 * scale * (state.lengths[i] - t);
                }
            }
            GoalKind::EdgeForce { edges, targets } => {
                for (&i, t) in edges.iter().zip(targets) {
                    grad.forces[i] += 2.0 * scale * (state.forces[i] - t);
                }
            }
        }
        Ok(())
    }
}

fn squared_misfit(values: &[f64], indices: &[usize], targets: &[f64]) -> f64 {
    indices
        .iter()
        .zip(targets)
        .map(|(&i, t)| (values[i] - t).powi(2))
        .sum()
}

pub fn eval_goal(goal: &Goal, state: &EquilibriumState) -> Result<f64> {
    goal.value(state)
}

/// Weighted sum of goals.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    goals: Vec<Goal>,
}

impl LossSpec {
    pub fn new(goals: Vec<Goal>) -> Result<LossSpec> {
        if goals.is_empty() {
            return Err(FdmError::EmptyLossSpec);
        }
        for (index, goal) in goals.iter().enumerate() {
            goal.check()
                .map_err(|reason| FdmError::InvalidGoal { index, reason })?;
        }
        Ok(LossSpec { goals })
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn eval(&self, state: &EquilibriumState) -> Result<f64> {
        self.goals
            .iter()
            .map(|g| Ok(g.weight * g.value(state)?))
            .sum()
    }

    pub fn state_gradient(&self, state: &EquilibriumState) -> Result<StateGradient> {
        let mut grad = StateGradient::zeros(state);
        for g in &self.goals {
            g.accumulate(state, g.weight, &mut grad)?;
        }
        Ok(grad)
    }
}

pub fn eval_loss(spec: &LossSpec, state: &EquilibriumState) -> Result<f64> {
    spec.eval(state)
}

pub fn loss_state_gradient(spec: &LossSpec, state: &EquilibriumState) -> Result<StateGradient> {
    spec.state_gradient(state)
}

/// Cotangent of the loss with respect to each field of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    /// `∂L/∂X`, global vertex order.
    pub xyz: Vec<Vec3>,
    pub forces: Vec<f64>,
    pub lengths: Vec<f64>,
    /// `∂L/∂R_s`; none of the shipped goals read reactions.
    pub reactions: Vec<Vec3>,
}

impl StateGradient {
    pub fn zeros(state: &EquilibriumState) -> StateGradient {
        StateGradient {
            xyz: vec![[0.0; 3]; state.xyz.len()],
            forces: vec![0.0; state.forces.len()],
            lengths: vec![0.0; state.lengths.len()],
            reactions: vec![[0.0; 3]; state.reactions.len()],
        }
    }
}
