//! Differentiable force density form-finding.
//!
//! A pin-jointed bar network ([`FdmNetwork`]) is brought into static
//! equilibrium for design parameters [`Theta`] (force densities, loads and
//! support positions). Weighted goals on the resulting
//! [`EquilibriumState`] form a scalar loss whose exact gradient with
//! respect to `Theta` comes from an adjoint solve that reuses the forward
//! factorization. [`optimize`] runs gradient descent or Adam on that loss.

#![allow(clippy::needless_range_loop)]

pub mod adjoint;
pub mod equilibrium;
pub mod error;
pub mod goals;
pub mod io;
pub mod network;
pub mod optimizer;
pub mod sparse;

#[cfg(test)]
mod test_support;

pub use adjoint::{backward, finite_difference_gradient, value_and_grad, ThetaGradient};
pub use equilibrium::{fdm_solve, EquilibriumModel, EquilibriumState, Solution, Theta};
pub use error::{FdmError, Result};
pub use goals::{Goal, GoalKind, LossSpec, StateGradient};
pub use io::{
    export_obj, load_job, load_network, save_network, save_results, IdMap, LoadedNetwork,
};
pub use network::{build_network, Connectivity, FdmNetwork, Vec3};
pub use optimizer::{
    optimize, optimize_with, Method, OptimizationTrace, OptimizerConfig, ParameterBlock,
    Termination,
};
pub use sparse::{dense_solve_oracle, factorize, Factorization, SparseMatrix};
