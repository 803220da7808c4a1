mod common;

use common::{
    free_residual_inf, inf_norm, internal_forces, max_abs_diff, random_loads, random_q, rng,
    sum_rows, Layout,
};
use fdm_core::adjoint::{finite_difference_gradient_with, max_relative_error, value_and_grad};
use fdm_core::{fdm_solve, EquilibriumModel, FdmNetwork, Goal, LossSpec, Theta};
use proptest::prelude::*;
use rand::RngExt;

/// Small connected network with positive force densities.
fn tree_case(seed: u64) -> (FdmNetwork, Theta) {
    let mut r = rng(seed);
    let n = r.random_range(5..=30);
    let layout = Layout::random_tree(&mut r, n);
    let loads = random_loads(&mut r, n, false);
    let net = layout.build(loads);
    let mut theta = Theta::from_network(&net, 0.0);
    theta.q = random_q(&mut r, net.edge_count(), 0.5, 2.0, false);
    (net, theta)
}

fn mixed_spec(net: &FdmNetwork, seed: u64) -> LossSpec {
    let mut r = rng(seed ^ 0x5eed);
    let free = net.free_vertices();
    let v = free[r.random_range(0..free.len())];
    let e = r.random_range(0..net.edge_count());
    LossSpec::new(vec![
        Goal::node_point(vec![v], vec![[1.0, 2.0, -0.5]]),
        Goal::edge_length(vec![e], vec![0.7]).with_weight(0.3),
        Goal::edge_force(vec![e], vec![1.5]).with_weight(0.2),
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_in_equilibrium(seed in any::<u64>()) {
        let (net, theta) = tree_case(seed);
        let state = fdm_solve(&net, &theta).unwrap();
        let scale = inf_norm(&theta.loads).max(1.0);
        prop_assert!(free_residual_inf(&net, &theta, &state.xyz) <= 1e-9 * scale);

        // Internal forces cancel over the whole network, so the support
        // reactions carry the total applied load.
        let internal = sum_rows(&internal_forces(&net, &theta, &state.xyz));
        prop_assert!(internal.iter().all(|c| c.abs() <= 1e-9 * scale));
        let gap = max_abs_diff(&[sum_rows(&state.reactions)], &[sum_rows(&theta.loads)]);
        prop_assert!(gap <= 1e-9 * scale);
    }

    #[test]
    fn forces_are_q_times_length(seed in any::<u64>()) {
        let (net, theta) = tree_case(seed);
        let state = fdm_solve(&net, &theta).unwrap();
        for ((t, l), q) in state.forces.iter().zip(&state.lengths).zip(&theta.q) {
            prop_assert!((t - q * l).abs() <= 1e-12 * t.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_q_and_loads_keeps_geometry(seed in any::<u64>(), c in 0.1_f64..10.0) {
        let (net, theta) = tree_case(seed);
        let base = fdm_solve(&net, &theta).unwrap();
        let scaled = fdm_solve(&net, &theta.scaled(c)).unwrap();
        let x_scale = inf_norm(&base.free_xyz).max(1.0);
        prop_assert!(max_abs_diff(&scaled.free_xyz, &base.free_xyz) <= 1e-10 * x_scale);
    }

    #[test]
    fn adjoint_matches_central_differences(seed in any::<u64>()) {
        let (net, theta) = tree_case(seed);
        let spec = mixed_spec(&net, seed);
        let model = EquilibriumModel::new(net);
        let (loss, analytic, _) = value_and_grad(&model, &theta, &spec).unwrap();
        let numeric = finite_difference_gradient_with(&model, &theta, &spec, 1e-6).unwrap();
        // Central differences carry roundoff of order eps * loss / h.
        let noise = 1e-8 * loss.max(1.0);
        let err = max_relative_error(&analytic, &numeric, noise);
        prop_assert!(err <= 1e-4, "err {err:e}\n{analytic:?}\n{numeric:?}");
    }

    #[test]
    fn small_step_against_gradient_lowers_loss(seed in any::<u64>()) {
        let (net, theta) = tree_case(seed);
        let spec = mixed_spec(&net, seed);
        let model = EquilibriumModel::new(net);
        let (loss, grad, _) = value_and_grad(&model, &theta, &spec).unwrap();
        let norm = grad.q.iter().map(|g| g * g).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        let step = 1e-4 / norm;
        let mut next = theta.clone();
        for (q, g) in next.q.iter_mut().zip(&grad.q) {
            *q -= step * g;
        }
        let lower = spec.eval(&model.solve(&next).unwrap().state).unwrap();
        prop_assert!(lower < loss);
    }
}
