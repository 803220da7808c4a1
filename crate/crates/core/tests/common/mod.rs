//! Network generators and dense reference computations shared by the
//! integration tests. Everything here works from the raw edge list so it
//! stays independent of the sparse code under test.

#![allow(dead_code)]

use std::collections::HashSet;

use fdm_core::{build_network, EquilibriumState, FdmNetwork, Theta, Vec3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Geometry and topology before loads are attached.
#[derive(Debug, Clone)]
pub struct Layout {
    pub xyz: Vec<Vec3>,
    pub edges: Vec<(usize, usize)>,
    pub supports: Vec<usize>,
}

impl Layout {
    /// `nx × ny` grid in the plane z = 0, vertex `j·nx + i` at
    /// `(i, j)·spacing`, boundary supported.
    pub fn grid(nx: usize, ny: usize, spacing: f64) -> Layout {
        let mut xyz = Vec::with_capacity(nx * ny);
        let mut supports = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                xyz.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
                if i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
                    supports.push(j * nx + i);
                }
            }
        }
        let mut edges = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v = j * nx + i;
                if i + 1 < nx {
                    edges.push((v, v + 1));
                }
                if j + 1 < ny {
                    edges.push((v, v + nx));
                }
            }
        }
        Layout {
            xyz,
            edges,
            supports,
        }
    }

    /// Random spanning tree on `n` vertices plus roughly `n / 5` extra
    /// edges, with a random tenth of the vertices (at least one) supported.
    pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Layout {
        let xyz = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        for v in 1..n {
            let u = rng.random_range(0..v);
            let e = if rng.random_bool(0.5) { (v, u) } else { (u, v) };
            seen.insert((u.min(v), u.max(v)));
            edges.push(e);
        }
        for _ in 0..n / 5 {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && seen.insert((a.min(b), a.max(b))) {
                edges.push((a, b));
            }
        }
        let mut supports: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.1)).collect();
        if supports.is_empty() {
            supports.push(rng.random_range(0..n));
        }
        Layout {
            xyz,
            edges,
            supports,
        }
    }

    /// A grid or a tree with at most `max_vertices` vertices.
    pub fn random(rng: &mut ChaCha8Rng, max_vertices: usize, grid: bool) -> Layout {
        if grid {
            loop {
                let nx = rng.random_range(3..=14);
                let ny = rng.random_range(3..=14);
                if nx * ny <= max_vertices {
                    let mut layout = Layout::grid(nx, ny, 1.0);
                    layout.lift_supports(rng);
                    return layout;
                }
            }
        }
        let n = rng.random_range(5..=max_vertices);
        Layout::random_tree(rng, n)
    }

    pub fn vertex_count(&self) -> usize {
        self.xyz.len()
    }

    /// Random support heights in [-1, 1].
    pub fn lift_supports(&mut self, rng: &mut ChaCha8Rng) {
        for &s in &self.supports {
            self.xyz[s][2] = rng.random_range(-1.0..1.0);
        }
    }

    pub fn flatten_supports(&mut self) {
        for &s in &self.supports {
            self.xyz[s][2] = 0.0;
        }
    }

    /// Drops edges whose ends are both supported.
    pub fn without_support_edges(mut self) -> Layout {
        let supported: HashSet<usize> = self.supports.iter().copied().collect();
        self.edges
            .retain(|(a, b)| !(supported.contains(a) && supported.contains(b)));
        self
    }

    pub fn build(&self, loads: Vec<Vec3>) -> FdmNetwork {
        build_network(self.xyz.clone(), self.edges.clone(), &self.supports, loads)
            .expect("generated network is valid")
    }
}

pub fn random_loads(rng: &mut ChaCha8Rng, n: usize, vertical_only: bool) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let z = rng.random_range(-1.0..1.0);
            if vertical_only {
                [0.0, 0.0, z]
            } else {
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z]
            }
        })
        .collect()
}

/// Magnitudes drawn from `[lo, hi)`. With `mixed`, each sign is random.
pub fn random_q(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64, mixed: bool) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let q = rng.random_range(lo..hi);
            if mixed && rng.random_bool(0.5) {
                -q
            } else {
                q
            }
        })
        .collect()
}

/// A solved network together with its parameters.
#[derive(Debug, Clone)]
pub struct Case {
    pub label: String,
    pub network: FdmNetwork,
    pub theta: Theta,
}

impl Case {
    pub fn new(label: impl Into<String>, network: FdmNetwork, q: Vec<f64>) -> Case {
        let mut theta = Theta::from_network(&network, 0.0);
        theta.q = q;
        Case {
            label: label.into(),
            network,
            theta,
        }
    }
}

/// Position of each vertex among the free vertices, if free.
pub fn free_positions(net: &FdmNetwork) -> Vec<Option<usize>> {
    let mut pos = vec![None; net.vertex_count()];
    let mut k = 0;
    for (v, slot) in pos.iter_mut().enumerate() {
        if !net.is_support(v) {
            *slot = Some(k);
            k += 1;
        }
    }
    pos
}

fn support_coordinate(net: &FdmNetwork, theta: &Theta, v: usize) -> Vec3 {
    let k = (0..v).filter(|&u| net.is_support(u)).count();
    theta.support_xyz[k]
}

/// Dense `A = C_uᵀ Q C_u` and right-hand side `P_u - C_uᵀ Q C_s X_s`,
/// accumulated edge by edge.
pub fn dense_system(net: &FdmNetwork, theta: &Theta) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pos = free_positions(net);
    let n = net.free_count();
    let mut a = vec![vec![0.0; n]; n];
    let mut b: Vec<Vec<f64>> = (0..net.vertex_count())
        .filter(|&v| !net.is_support(v))
        .map(|v| theta.loads[v].to_vec())
        .collect();
    for (i, &(s, e)) in net.edges().iter().enumerate() {
        let q = theta.q[i];
        let ends = [(s, 1.0), (e, -1.0)];
        for &(u, su) in &ends {
            let Some(ru) = pos[u] else { continue };
            for &(w, sw) in &ends {
                match pos[w] {
                    Some(cw) => a[ru][cw] += su * sw * q,
                    None => {
                        let x = support_coordinate(net, theta, w);
                        for d in 0..3 {
                            b[ru][d] -= su * sw * q * x[d];
                        }
                    }
                }
            }
        }
    }
    (a, b)
}

/// `‖C_uᵀ Q C X - P_u‖∞` evaluated edge by edge.
pub fn free_residual_inf(net: &FdmNetwork, theta: &Theta, xyz: &[Vec3]) -> f64 {
    let internal = internal_forces(net, theta, xyz);
    (0..net.vertex_count())
        .filter(|&v| !net.is_support(v))
        .flat_map(|v| (0..3).map(move |d| (v, d)))
        .map(|(v, d)| (internal[v][d] - theta.loads[v][d]).abs())
        .fold(0.0, f64::max)
}

/// `(Cᵀ Q C X)_v` for every vertex.
pub fn internal_forces(net: &FdmNetwork, theta: &Theta, xyz: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![[0.0; 3]; net.vertex_count()];
    for (i, &(s, e)) in net.edges().iter().enumerate() {
        for d in 0..3 {
            let f = theta.q[i] * (xyz[s][d] - xyz[e][d]);
            out[s][d] += f;
            out[e][d] -= f;
        }
    }
    out
}

pub fn inf_norm(rows: &[Vec3]) -> f64 {
    rows.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |d| (x[d] - y[d]).abs()))
        .fold(0.0, f64::max)
}

pub fn sum_rows(rows: &[Vec3]) -> Vec3 {
    rows.iter().fold([0.0; 3], |acc, r| {
        [acc[0] + r[0], acc[1] + r[1], acc[2] + r[2]]
    })
}

pub fn free_rows(net: &FdmNetwork, state: &EquilibriumState) -> Vec<Vec3> {
    (0..net.vertex_count())
        .filter(|&v| !net.is_support(v))
        .map(|v| state.xyz[v])
        .collect()
}

pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
