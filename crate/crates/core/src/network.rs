//! Bar-network graph, support partition and signed incidence matrices.
//!
//! Edge `i = (start, end)` contributes `+1` at its start vertex and `-1` at
//! its end vertex in row `i` of the connectivity matrix `C`. Free and
//! support columns are numbered in ascending global vertex order.

use std::collections::HashMap;

use crate::error::{FdmError, Result};
use crate::sparse::SparseMatrix;

/// A point or force in 3D.
pub type Vec3 = [f64; 3];

/// Immutable pin-jointed bar network with its support partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmNetwork {
    edges: Vec<(usize, usize)>,
    is_support: Vec<bool>,
    coordinates: Vec<Vec3>,
    loads: Vec<Vec3>,
}

/// Position of a global vertex in either the free or the support block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexSlot {
    Free(usize),
    Support(usize),
}

impl VertexSlot {
    pub fn free(self) -> Option<usize> {
        match self {
            VertexSlot::Free(j) => Some(j),
            VertexSlot::Support(_) => None,
        }
    }

    pub fn support(self) -> Option<usize> {
        match self {
            VertexSlot::Support(j) => Some(j),
            VertexSlot::Free(_) => None,
        }
    }
}

/// Validates and assembles a network.
///
/// `supports` may list a vertex more than once; duplicates are ignored.
pub fn build_network(
    vertices: Vec<Vec3>,
    edges: Vec<(usize, usize)>,
    supports: &[usize],
    loads: Vec<Vec3>,
) -> Result<FdmNetwork> {
    let n = vertices.len();
    if loads.len() != n {
        return Err(FdmError::DimensionMismatch {
            what: "loads rows",
            expected: n,
            found: loads.len(),
        });
    }
    for (i, p) in vertices.iter().chain(loads.iter()).enumerate() {
        if p.iter().any(|c| !c.is_finite()) {
            let what = if i < n { "vertex coordinates" } else { "loads" };
            return Err(FdmError::NonFiniteInput {
                what,
                index: i % n.max(1),
            });
        }
    }

    let mut is_support = vec![false; n];
    for &s in supports {
        if s >= n {
            return Err(FdmError::IndexOutOfRange {
                what: "support vertex",
                index: s,
                len: n,
            });
        }
        is_support[s] = true;
    }
    if !is_support.iter().any(|&s| s) {
        return Err(FdmError::NoSupports);
    }

    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    for (i, &(a, b)) in edges.iter().enumerate() {
        for v in [a, b] {
            if v >= n {
                return Err(FdmError::IndexOutOfRange {
                    what: "edge vertex",
                    index: v,
                    len: n,
                });
            }
        }
        if a == b {
            return Err(FdmError::SelfLoop { edge: i, vertex: a });
        }
        let key = (a.min(b), a.max(b));
        if let Some(&first) = seen.get(&key) {
            return Err(FdmError::DuplicateEdge {
                edge: i,
                first,
                a,
                b,
            });
        }
        seen.insert(key, i);
    }

    // Every component holding a free vertex must reach a support, otherwise
    // the equilibrium system is structurally singular.
    let mut sets = DisjointSets::new(n);
    for &(a, b) in &edges {
        sets.union(a, b);
    }
    let mut anchored = vec![false; n];
    for v in (0..n).filter(|&v| is_support[v]) {
        let root = sets.find(v);
        anchored[root] = true;
    }
    for v in 0..n {
        if !is_support[v] && !anchored[sets.find(v)] {
            return Err(FdmError::OrphanFreeComponent { vertex: v });
        }
    }

    Ok(FdmNetwork {
        edges,
        is_support,
        coordinates: vertices,
        loads,
    })
}

impl FdmNetwork {
    pub fn vertex_count(&self) -> usize {
        self.coordinates.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_support(&self, vertex: usize) -> bool {
        self.is_support[vertex]
    }

    pub fn support_count(&self) -> usize {
        self.is_support.iter().filter(|&&s| s).count()
    }

    pub fn free_count(&self) -> usize {
        self.vertex_count() - self.support_count()
    }

    /// Supported vertices in ascending order.
    pub fn support_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| self.is_support[v])
            .collect()
    }

    /// Free vertices in ascending order.
    pub fn free_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| !self.is_support[v])
            .collect()
    }

    /// Input coordinates. For supports these are `X_s`; for free vertices
    /// they are reference positions only.
    pub fn coordinates(&self) -> &[Vec3] {
        &self.coordinates
    }

    pub fn loads(&self) -> &[Vec3] {
        &self.loads
    }

    /// A copy of the network with every edge in `flip` reversed.
    pub fn with_flipped_edges(&self, flip: &[usize]) -> Result<FdmNetwork> {
        let mut net = self.clone();
        for &i in flip {
            let e = net.edges.get_mut(i).ok_or(FdmError::IndexOutOfRange {
                what: "edge",
                index: i,
                len: self.edges.len(),
            })?;
            *e = (e.1, e.0);
        }
        Ok(net)
    }

    pub fn connectivity(&self) -> Connectivity {
        connectivity(self)
    }
}

/// Signed incidence matrix and its free/support column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectivity {
    full: SparseMatrix,
    free: SparseMatrix,
    support: SparseMatrix,
    edges: Vec<(usize, usize)>,
    slots: Vec<VertexSlot>,
    free_vertices: Vec<usize>,
    support_vertices: Vec<usize>,
}

pub fn connectivity(network: &FdmNetwork) -> Connectivity {
    let n = network.vertex_count();
    let m = network.edge_count();
    let free_vertices = network.free_vertices();
    let support_vertices = network.support_vertices();

    let mut slots = vec![VertexSlot::Free(0); n];
    for (j, &v) in free_vertices.iter().enumerate() {
        slots[v] = VertexSlot::Free(j);
    }
    for (j, &v) in support_vertices.iter().enumerate() {
        slots[v] = VertexSlot::Support(j);
    }

    let mut full = Vec::with_capacity(2 * m);
    let mut free = Vec::new();
    let mut support = Vec::new();
    for (i, &(a, b)) in network.edges().iter().enumerate() {
        for (v, sign) in [(a, 1.0), (b, -1.0)] {
            full.push((i, v, sign));
            match slots[v] {
                VertexSlot::Free(j) => free.push((i, j, sign)),
                VertexSlot::Support(j) => support.push((i, j, sign)),
            }
        }
    }

    Connectivity {
        full: SparseMatrix::from_triplets(m, n, full),
        free: SparseMatrix::from_triplets(m, free_vertices.len(), free),
        support: SparseMatrix::from_triplets(m, support_vertices.len(), support),
        edges: network.edges().to_vec(),
        slots,
        free_vertices,
        support_vertices,
    }
}

impl Connectivity {
    /// `C`, m × n.
    pub fn matrix(&self) -> &SparseMatrix {
        &self.full
    }

    /// `C_u`, m × n_u.
    pub fn free_matrix(&self) -> &SparseMatrix {
        &self.free
    }

    /// `C_s`, m × n_s.
    pub fn support_matrix(&self) -> &SparseMatrix {
        &self.support
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.slots.len()
    }

    pub fn free_count(&self) -> usize {
        self.free_vertices.len()
    }

    pub fn support_count(&self) -> usize {
        self.support_vertices.len()
    }

    pub fn slot(&self, vertex: usize) -> VertexSlot {
        self.slots[vertex]
    }

    /// Global vertex id of each free column.
    pub fn free_vertices(&self) -> &[usize] {
        &self.free_vertices
    }

    /// Global vertex id of each support column.
    pub fn support_vertices(&self) -> &[usize] {
        &self.support_vertices
    }

    /// Row-wise edge vectors `C X` for global coordinates `xyz`.
    pub fn edge_vectors(&self, xyz: &[Vec3]) -> Vec<Vec3> {
        self.edges
            .iter()
            .map(|&(a, b)| sub(xyz[a], xyz[b]))
            .collect()
    }

    /// Scatters free and support blocks into global vertex order.
    pub fn scatter(&self, free_xyz: &[Vec3], support_xyz: &[Vec3]) -> Vec<Vec3> {
        self.slots
            .iter()
            .map(|slot| match *slot {
                VertexSlot::Free(j) => free_xyz[j],
                VertexSlot::Support(j) => support_xyz[j],
            })
            .collect()
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
