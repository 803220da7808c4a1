//! Forward force density map: design parameters to equilibrium state.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{FdmError, Result};
use crate::network::{norm, Connectivity, FdmNetwork, Vec3, VertexSlot};
use crate::sparse::{
    assemble, plan_assembly, AssemblyPlan, Factorization, SparseMatrix, SymbolicFactorization,
};

/// Design parameters: force densities, loads on every vertex and the
/// coordinates of the supports (in ascending support-vertex order).
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub q: Vec<f64>,
    pub loads: Vec<Vec3>,
    pub support_xyz: Vec<Vec3>,
}

impl Theta {
    /// Uniform force density `q0`, with loads and support positions taken
    /// from the network.
    pub fn from_network(network: &FdmNetwork, q0: f64) -> Theta {
        Theta {
            q: vec![q0; network.edge_count()],
            loads: network.loads().to_vec(),
            support_xyz: network
                .support_vertices()
                .into_iter()
                .map(|v| network.coordinates()[v])
                .collect(),
        }
    }

    pub fn validate(&self, conn: &Connectivity) -> Result<()> {
        check_len("force densities", conn.edge_count(), self.q.len())?;
        check_len("loads rows", conn.vertex_count(), self.loads.len())?;
        check_len(
            "support coordinates rows",
            conn.support_count(),
            self.support_xyz.len(),
        )?;
        if let Some(i) = self.q.iter().position(|v| !v.is_finite()) {
            return Err(FdmError::NonFiniteInput {
                what: "force densities",
                index: i,
            });
        }
        for (what, rows) in [
            ("loads", &self.loads),
            ("support coordinates", &self.support_xyz),
        ] {
            if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(FdmError::NonFiniteInput { what, index: i });
            }
        }
        Ok(())
    }

    /// `(c q, c P, X_s)`.
    pub fn scaled(&self, c: f64) -> Theta {
        Theta {
            q: self.q.iter().map(|v| c * v).collect(),
            loads: self.loads.iter().map(|p| p.map(|v| c * v)).collect(),
            support_xyz: self.support_xyz.clone(),
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(FdmError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Static equilibrium of the network for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    /// Free-vertex coordinates, in free-column order.
    pub free_xyz: Vec<Vec3>,
    /// All coordinates in global vertex order.
    pub xyz: Vec<Vec3>,
    /// Support reactions, in support-column order.
    pub reactions: Vec<Vec3>,
    /// Axial forces, positive in tension.
    pub forces: Vec<f64>,
    pub lengths: Vec<f64>,
}

/// A solved state together with the matrix and factorization that produced
/// it, so the backward pass can reuse them.
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: EquilibriumState,
    pub matrix: SparseMatrix,
    pub factorization: Factorization,
}

/// Precomputed connectivity and assembly plan for one network. The
/// fill-reducing ordering is computed on the first solve and reused by
/// every later one.
#[derive(Debug)]
pub struct EquilibriumModel {
    network: FdmNetwork,
    connectivity: Connectivity,
    plan: AssemblyPlan,
    symbolic: Mutex<Option<Arc<SymbolicFactorization>>>,
    symbolic_runs: AtomicUsize,
}

impl EquilibriumModel {
    pub fn new(network: FdmNetwork) -> Self {
        let connectivity = network.connectivity();
        let plan = plan_assembly(&connectivity);
        EquilibriumModel {
            network,
            connectivity,
            plan,
            symbolic: Mutex::new(None),
            symbolic_runs: AtomicUsize::new(0),
        }
    }

    pub fn network(&self) -> &FdmNetwork {
        &self.network
    }

    pub fn connectivity(&self) -> &Connectivity {
        &self.connectivity
    }

    pub fn plan(&self) -> &AssemblyPlan {
        &self.plan
    }

    /// How many times symbolic analysis has run for this model.
    pub fn symbolic_analyses(&self) -> usize {
        self.symbolic_runs.load(Ordering::Relaxed)
    }

    /// Numeric factorization of `a`, which must carry the plan's pattern.
    pub fn factorize(&self, a: &SparseMatrix) -> Result<Factorization> {
        let symbolic = {
            let mut cached = self.symbolic.lock().unwrap_or_else(|e| e.into_inner());
            match cached.as_ref() {
                Some(s) => s.clone(),
                None => {
                    let s = Arc::new(SymbolicFactorization::analyze(a)?);
                    self.symbolic_runs.fetch_add(1, Ordering::Relaxed);
                    *cached = Some(s.clone());
                    s
                }
            }
        };
        Factorization::numeric(symbolic, a)
    }

    pub fn solve(&self, theta: &Theta) -> Result<Solution> {
        let conn = &self.connectivity;
        theta.validate(conn)?;

        let matrix = assemble(&self.plan, &theta.q)?;
        let factorization = self.factorize(&matrix)?;

        // b = P_u - C_uᵀ Q C_s X_s
        let mut rhs: Vec<Vec3> = conn
            .free_vertices()
            .iter()
            .map(|&v| theta.loads[v])
            .collect();
        for (i, &(a, b)) in conn.edges().iter().enumerate() {
            let mut support_term = [0.0; 3];
            for (v, sign) in [(a, 1.0), (b, -1.0)] {
                if let VertexSlot::Support(s) = conn.slot(v) {
                    for d in 0..3 {
                        support_term[d] += sign * theta.support_xyz[s][d];
                    }
                }
            }
            for (v, sign) in [(a, 1.0), (b, -1.0)] {
                if let VertexSlot::Free(j) = conn.slot(v) {
                    for d in 0..3 {
                        rhs[j][d] -= sign * theta.q[i] * support_term[d];
                    }
                }
            }
        }

        let mut free_xyz = factorization.solve(&rhs)?;
        // One step of refinement against a residual accumulated in double-
        // word arithmetic, which brings the forward error down to roughly
        // machine precision even for poorly conditioned force densities.
        let residual = extended_residual(&matrix, &free_xyz, &rhs);
        let correction = factorization.solve(&residual)?;
        for (x, dx) in free_xyz.iter_mut().zip(&correction) {
            for d in 0..3 {
                x[d] += dx[d];
            }
        }
        let xyz = conn.scatter(&free_xyz, &theta.support_xyz);
        let lengths = edge_lengths(conn, &xyz);
        let forces = member_forces(&theta.q, &lengths);
        let support_loads: Vec<Vec3> = conn
            .support_vertices()
            .iter()
            .map(|&v| theta.loads[v])
            .collect();
        let reactions = reactions(conn, &theta.q, &xyz, &support_loads);

        Ok(Solution {
            state: EquilibriumState {
                free_xyz,
                xyz,
                reactions,
                forces,
                lengths,
            },
            matrix,
            factorization,
        })
    }
}

/// `b - A x` with products and sums carried as unevaluated pairs.
fn extended_residual(a: &SparseMatrix, x: &[Vec3], b: &[Vec3]) -> Vec<Vec3> {
    (0..a.row_count())
        .map(|r| {
            let (cols, vals) = a.row(r);
            let mut out = [0.0; 3];
            for d in 0..3 {
                let (mut hi, mut lo) = (b[r][d], 0.0);
                for (&c, &v) in cols.iter().zip(vals) {
                    let p = -v * x[c][d];
                    let p_err = (-v).mul_add(x[c][d], -p);
                    let s = hi + p;
                    let z = s - hi;
                    let s_err = (hi - (s - z)) + (p - z);
                    hi = s;
                    lo += s_err + p_err;
                }
                out[d] = hi + lo;
            }
            out
        })
        .collect()
}

/// One-off forward solve.
pub fn fdm_solve(network: &FdmNetwork, theta: &Theta) -> Result<EquilibriumState> {
    EquilibriumModel::new(network.clone())
        .solve(theta)
        .map(|s| s.state)
}

/// Row-wise Euclidean norms of `C X`.
pub fn edge_lengths(conn: &Connectivity, xyz: &[Vec3]) -> Vec<f64> {
    conn.edge_vectors(xyz).into_iter().map(norm).collect()
}

/// `R_s = P_s - C_sᵀ Q C X`, in support-column order.
pub fn reactions(
    conn: &Connectivity,
    q: &[f64],
    xyz: &[Vec3],
    support_loads: &[Vec3],
) -> Vec<Vec3> {
    let mut r = support_loads.to_vec();
    for (i, (&(a, b), v)) in conn.edges().iter().zip(conn.edge_vectors(xyz)).enumerate() {
        for (vertex, sign) in [(a, 1.0), (b, -1.0)] {
            if let VertexSlot::Support(s) = conn.slot(vertex) {
                for d in 0..3 {
                    r[s][d] -= sign * q[i] * v[d];
                }
            }
        }
    }
    r
}

/// `t_i = q_i l_i`.
pub fn member_forces(q: &[f64], lengths: &[f64]) -> Vec<f64> {
    q.iter().zip(lengths).map(|(q, l)| q * l).collect()
}

/// Out-of-balance force at every free vertex, `C_uᵀ Q C X - P_u`.
pub fn free_residual(conn: &Connectivity, q: &[f64], xyz: &[Vec3], loads: &[Vec3]) -> Vec<Vec3> {
    let mut res: Vec<Vec3> = conn
        .free_vertices()
        .iter()
        .map(|&v| loads[v].map(|p| -p))
        .collect();
    for (i, (&(a, b), v)) in conn.edges().iter().zip(conn.edge_vectors(xyz)).enumerate() {
        for (vertex, sign) in [(a, 1.0), (b, -1.0)] {
            if let VertexSlot::Free(j) = conn.slot(vertex) {
                for d in 0..3 {
                    res[j][d] += sign * q[i] * v[d];
                }
            }
        }
    }
    res
}
