//! Exact gradient of the loss with respect to `(q, P, X_s)`.
//!
//! The explicit parts of the state (`t`, `l`, `R_s`) are differentiated in
//! closed form and folded into a cotangent on `X`. The free block of that
//! cotangent is pushed through the linear solve with one adjoint solve
//! `A λ = g_u`, reusing the forward factorization since `A` is symmetric:
//!
//! ```text
//! ∂L/∂q_i   += -(C_u λ)_i · (C X)_i
//! ∂L/∂P_u   += λ
//! ∂L/∂X_s   += g_s - C_sᵀ Q C_u λ
//! ```

use crate::equilibrium::{EquilibriumModel, EquilibriumState, Solution, Theta};
use crate::error::{FdmError, Result};
use crate::goals::{LossSpec, StateGradient};
use crate::network::{dot, Connectivity, FdmNetwork, Vec3, VertexSlot};
use crate::sparse::Factorization;

/// Gradient with the same layout as [`Theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub q: Vec<f64>,
    pub loads: Vec<Vec3>,
    pub support_xyz: Vec<Vec3>,
}

impl ThetaGradient {
    pub fn zeros_like(theta: &Theta) -> ThetaGradient {
        ThetaGradient {
            q: vec![0.0; theta.q.len()],
            loads: vec![[0.0; 3]; theta.loads.len()],
            support_xyz: vec![[0.0; 3]; theta.support_xyz.len()],
        }
    }

    /// All components, in the order q, loads, support coordinates.
    pub fn flatten(&self) -> Vec<f64> {
        self.q
            .iter()
            .copied()
            .chain(self.loads.iter().flatten().copied())
            .chain(self.support_xyz.iter().flatten().copied())
            .collect()
    }
}

/// Reverse pass for a state produced by `fact`.
pub fn backward(
    conn: &Connectivity,
    theta: &Theta,
    state: &EquilibriumState,
    sgrad: &StateGradient,
    fact: &Factorization,
) -> Result<ThetaGradient> {
    let q = &theta.q;
    let edge_vectors = conn.edge_vectors(&state.xyz);
    let mut grad = ThetaGradient::zeros_like(theta);
    let mut g_xyz = sgrad.xyz.clone();

    for (s, &v) in conn.support_vertices().iter().enumerate() {
        for d in 0..3 {
            grad.loads[v][d] += sgrad.reactions[s][d];
        }
    }

    for (i, &(a, b)) in conn.edges().iter().enumerate() {
        let d_i = edge_vectors[i];
        let l_i = state.lengths[i];
        let mut g_d = [0.0; 3];

        // R_s = P_s - C_sᵀ Q C X
        let mut cs_gr = [0.0; 3];
        for (v, sign) in [(a, 1.0), (b, -1.0)] {
            if let VertexSlot::Support(s) = conn.slot(v) {
                for d in 0..3 {
                    cs_gr[d] += sign * sgrad.reactions[s][d];
                }
            }
        }
        grad.q[i] -= dot(d_i, cs_gr);
        for d in 0..3 {
            g_d[d] -= q[i] * cs_gr[d];
        }

        // t = q l, l = ‖C X‖
        grad.q[i] += sgrad.forces[i] * l_i;
        let g_len = sgrad.lengths[i] + sgrad.forces[i] * q[i];
        if l_i > 0.0 {
            for d in 0..3 {
                g_d[d] += g_len * d_i[d] / l_i;
            }
        } else if g_len != 0.0 {
            return Err(FdmError::ZeroLengthEdge { edge: i });
        }

        for d in 0..3 {
            g_xyz[a][d] += g_d[d];
            g_xyz[b][d] -= g_d[d];
        }
    }

    let g_free: Vec<Vec3> = conn.free_vertices().iter().map(|&v| g_xyz[v]).collect();
    let lambda = fact.solve(&g_free)?;

    for (i, &(a, b)) in conn.edges().iter().enumerate() {
        let mut cu_lambda = [0.0; 3];
        for (v, sign) in [(a, 1.0), (b, -1.0)] {
            if let VertexSlot::Free(j) = conn.slot(v) {
                for d in 0..3 {
                    cu_lambda[d] += sign * lambda[j][d];
                }
            }
        }
        grad.q[i] -= dot(cu_lambda, edge_vectors[i]);
        for (v, sign) in [(a, 1.0), (b, -1.0)] {
            if let VertexSlot::Support(s) = conn.slot(v) {
                for d in 0..3 {
                    grad.support_xyz[s][d] -= sign * q[i] * cu_lambda[d];
                }
            }
        }
    }
    for (j, &v) in conn.free_vertices().iter().enumerate() {
        for d in 0..3 {
            grad.loads[v][d] += lambda[j][d];
        }
    }
    for (s, &v) in conn.support_vertices().iter().enumerate() {
        for d in 0..3 {
            grad.support_xyz[s][d] += g_xyz[v][d];
        }
    }
    Ok(grad)
}

/// Forward solve, loss and gradient in one pass. The adjoint solve reuses
/// the forward factorization.
pub fn value_and_grad(
    model: &EquilibriumModel,
    theta: &Theta,
    spec: &LossSpec,
) -> Result<(f64, ThetaGradient, Solution)> {
    let solution = model.solve(theta)?;
    let loss = spec.eval(&solution.state)?;
    let sgrad = spec.state_gradient(&solution.state)?;
    let grad = backward(
        model.connectivity(),
        theta,
        &solution.state,
        &sgrad,
        &solution.factorization,
    )?;
    Ok((loss, grad, solution))
}

/// Central differences of the loss over every entry of `theta`, with step
/// `h · max(1, |θ_j|)`.
pub fn finite_difference_gradient(
    network: &FdmNetwork,
    theta: &Theta,
    spec: &LossSpec,
    h: f64,
) -> Result<ThetaGradient> {
    finite_difference_gradient_with(&EquilibriumModel::new(network.clone()), theta, spec, h)
}

/// As [`finite_difference_gradient`], reusing an existing model.
pub fn finite_difference_gradient_with(
    model: &EquilibriumModel,
    theta: &Theta,
    spec: &LossSpec,
    h: f64,
) -> Result<ThetaGradient> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(FdmError::InvalidConfig(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let loss = |t: &Theta| -> Result<f64> { spec.eval(&model.solve(t)?.state) };
    let mut work = theta.clone();
    let mut central = |get: &dyn Fn(&mut Theta) -> &mut f64| -> Result<f64> {
        let x0 = *get(&mut work);
        let step = h * x0.abs().max(1.0);
        *get(&mut work) = x0 + step;
        let plus = loss(&work)?;
        *get(&mut work) = x0 - step;
        let minus = loss(&work)?;
        *get(&mut work) = x0;
        Ok((plus - minus) / (2.0 * step))
    };

    let mut grad = ThetaGradient::zeros_like(theta);
    for i in 0..theta.q.len() {
        grad.q[i] = central(&|t| &mut t.q[i])?;
    }
    for v in 0..theta.loads.len() {
        for d in 0..3 {
            grad.loads[v][d] = central(&|t| &mut t.loads[v][d])?;
        }
    }
    for s in 0..theta.support_xyz.len() {
        for d in 0..3 {
            grad.support_xyz[s][d] = central(&|t| &mut t.support_xyz[s][d])?;
        }
    }
    Ok(grad)
}

/// Largest componentwise relative error between two gradients. Components
/// whose absolute difference is at most `abs_tol` count as exact.
pub fn max_relative_error(
    analytic: &ThetaGradient,
    reference: &ThetaGradient,
    abs_tol: f64,
) -> f64 {
    analytic
        .flatten()
        .into_iter()
        .zip(reference.flatten())
        .map(|(a, r)| {
            let diff = (a - r).abs();
            if diff <= abs_tol {
                0.0
            } else {
                diff / a.abs().max(r.abs())
            }
        })
        .fold(0.0, f64::max)
}
