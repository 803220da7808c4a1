//! JSON network, job and results files, and OBJ export.
//!
//! Vertices and edges are identified in files by non-negative integer ids.
//! Internally they are numbered by ascending id, so every output lists
//! them in id order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::equilibrium::{EquilibriumState, Theta};
use crate::error::{FdmError, Result};
use crate::goals::Goal;
use crate::network::{build_network, FdmNetwork, Vec3};
use crate::optimizer::{Method, OptimizationTrace, OptimizerConfig, ParameterBlock, Termination};

pub const FORMAT_VERSION: &str = "1";

/// A float written with 17 significant digits, so it reads back to the same
/// double. Non-finite values are written as `null` and read back as NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw =
            RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(Real(
            Option::<f64>::deserialize(deserializer)?.unwrap_or(f64::NAN),
        ))
    }
}

fn reals(values: &[f64]) -> Vec<Real> {
    values.iter().map(|&v| Real(v)).collect()
}

fn real3(v: Vec3) -> [Real; 3] {
    v.map(Real)
}

fn reals3(values: &[Vec3]) -> Vec<[Real; 3]> {
    values.iter().map(|&v| real3(v)).collect()
}

fn vec3(v: [Real; 3]) -> Vec3 {
    v.map(|r| r.0)
}

fn default_version() -> String {
    FORMAT_VERSION.to_string()
}

fn default_edge_q() -> Real {
    Real(-1.0)
}

fn zero_load() -> [Real; 3] {
    [Real(0.0); 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRecord {
    pub id: u64,
    pub xyz: [Real; 3],
    #[serde(default)]
    pub support: bool,
    #[serde(default = "zero_load")]
    pub load: [Real; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub id: u64,
    pub start: u64,
    pub end: u64,
    #[serde(default = "default_edge_q")]
    pub q: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default = "default_version")]
    pub version: String,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
}

/// File ids of the vertices and edges, indexed by internal position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdMap {
    vertex_ids: Vec<u64>,
    edge_ids: Vec<u64>,
    vertex_index: HashMap<u64, usize>,
    edge_index: HashMap<u64, usize>,
}

impl IdMap {
    fn new(vertex_ids: Vec<u64>, edge_ids: Vec<u64>) -> Self {
        let vertex_index = vertex_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let edge_index = edge_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        IdMap {
            vertex_ids,
            edge_ids,
            vertex_index,
            edge_index,
        }
    }

    /// Ids `0..n` and `0..m`.
    pub fn sequential(vertex_count: usize, edge_count: usize) -> Self {
        IdMap::new(
            (0..vertex_count as u64).collect(),
            (0..edge_count as u64).collect(),
        )
    }

    pub fn vertex_ids(&self) -> &[u64] {
        &self.vertex_ids
    }

    pub fn edge_ids(&self) -> &[u64] {
        &self.edge_ids
    }

    pub fn vertex_index(&self, id: u64) -> Option<usize> {
        self.vertex_index.get(&id).copied()
    }

    pub fn edge_index(&self, id: u64) -> Option<usize> {
        self.edge_index.get(&id).copied()
    }
}

/// A network read from disk with the parameters stored alongside it.
#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub network: FdmNetwork,
    pub theta: Theta,
    pub ids: IdMap,
}

fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| FdmError::Parse(format!("{origin}: {e}")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FdmError::io(path, e))
}

impl NetworkFile {
    pub fn parse(text: &str) -> Result<NetworkFile> {
        parse_json(text, "network")
    }

    /// Resolves ids, validates the graph and extracts the parameters.
    pub fn into_network(self) -> Result<LoadedNetwork> {
        let mut vertices = self.vertices;
        let mut edges = self.edges;
        vertices.sort_by_key(|v| v.id);
        edges.sort_by_key(|e| e.id);
        if let Some(w) = vertices.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(FdmError::Parse(format!("duplicate vertex id {}", w[0].id)));
        }
        if let Some(w) = edges.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(FdmError::Parse(format!("duplicate edge id {}", w[0].id)));
        }
        let ids = IdMap::new(
            vertices.iter().map(|v| v.id).collect(),
            edges.iter().map(|e| e.id).collect(),
        );

        let mut pairs = Vec::with_capacity(edges.len());
        for e in &edges {
            let lookup = |id: u64| {
                ids.vertex_index(id).ok_or_else(|| {
                    FdmError::Parse(format!("edge {} references unknown vertex id {id}", e.id))
                })
            };
            pairs.push((lookup(e.start)?, lookup(e.end)?));
        }
        let coordinates: Vec<Vec3> = vertices.iter().map(|v| vec3(v.xyz)).collect();
        let loads: Vec<Vec3> = vertices.iter().map(|v| vec3(v.load)).collect();
        let supports: Vec<usize> = (0..vertices.len())
            .filter(|&i| vertices[i].support)
            .collect();

        let network = build_network(coordinates, pairs, &supports, loads)?;
        let mut theta = Theta::from_network(&network, 0.0);
        theta.q = edges.iter().map(|e| e.q.0).collect();
        if let Some(i) = theta.q.iter().position(|q| !q.is_finite()) {
            return Err(FdmError::NonFiniteInput {
                what: "force densities",
                index: i,
            });
        }
        Ok(LoadedNetwork {
            network,
            theta,
            ids,
        })
    }

    /// Canonical file form: records in id order, free vertices at their
    /// stored coordinates, supports at `theta.support_xyz`.
    pub fn from_network(network: &FdmNetwork, theta: &Theta, ids: &IdMap) -> NetworkFile {
        let conn_supports = network.support_vertices();
        let mut xyz = network.coordinates().to_vec();
        for (s, &v) in conn_supports.iter().enumerate() {
            xyz[v] = theta.support_xyz[s];
        }
        let vertices = (0..network.vertex_count())
            .map(|v| VertexRecord {
                id: ids.vertex_ids[v],
                xyz: real3(xyz[v]),
                support: network.is_support(v),
                load: real3(theta.loads[v]),
            })
            .collect();
        let edges = network
            .edges()
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| EdgeRecord {
                id: ids.edge_ids[i],
                start: ids.vertex_ids[a],
                end: ids.vertex_ids[b],
                q: Real(theta.q[i]),
            })
            .collect();
        NetworkFile {
            version: default_version(),
            vertices,
            edges,
        }
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<LoadedNetwork> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_json::<NetworkFile>(&text, &path.display().to_string())?.into_network()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| FdmError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| FdmError::io(path, std::io::Error::other(e)))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| FdmError::io(path, e))
}

pub fn save_network(
    path: impl AsRef<Path>,
    network: &FdmNetwork,
    theta: &Theta,
    ids: &IdMap,
) -> Result<()> {
    write_json(
        path.as_ref(),
        &NetworkFile::from_network(network, theta, ids),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSource {
    Path(PathBuf),
    Inline(NetworkFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalType {
    NodePoint,
    EdgeLength,
    EdgeForce,
}

fn default_weight() -> f64 {
    1.0
}

/// `targets` is either one target per element or a single target shared by
/// all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRecord {
    #[serde(rename = "type")]
    pub kind: GoalType,
    pub elements: Vec<u64>,
    pub targets: serde_json::Value,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Optimizer settings in a job file. Missing fields take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub method: Option<Method>,
    #[serde(alias = "lr")]
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(alias = "max_iterations")]
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
}

impl OptimizerRecord {
    pub fn apply(&self, config: &mut OptimizerConfig) {
        if let Some(m) = self.method {
            config.method = m;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut config.learning_rate, self.learning_rate);
        set(&mut config.beta1, self.beta1);
        set(&mut config.beta2, self.beta2);
        set(&mut config.epsilon, self.epsilon);
        set(&mut config.grad_tol, self.grad_tol);
        if let Some(n) = self.max_iter {
            config.max_iterations = n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub network: NetworkSource,
    #[serde(default)]
    pub goals: Vec<GoalRecord>,
    #[serde(default)]
    pub optimizer: OptimizerRecord,
    pub trainable: Option<Vec<ParameterBlock>>,
}

/// A job resolved against its network.
#[derive(Debug, Clone)]
pub struct Job {
    pub loaded: LoadedNetwork,
    pub goals: Vec<Goal>,
    pub config: OptimizerConfig,
}

fn broadcast<T: Clone + DeserializeOwned>(
    value: &serde_json::Value,
    count: usize,
    index: usize,
) -> Result<Vec<T>> {
    let invalid = |reason: String| FdmError::InvalidGoal { index, reason };
    if let Ok(one) = serde_json::from_value::<T>(value.clone()) {
        return Ok(vec![one; count]);
    }
    let many: Vec<T> = serde_json::from_value(value.clone())
        .map_err(|e| invalid(format!("malformed targets: {e}")))?;
    if many.len() != count {
        return Err(invalid(format!(
            "{} elements but {} targets",
            count,
            many.len()
        )));
    }
    Ok(many)
}

impl GoalRecord {
    fn resolve(&self, index: usize, ids: &IdMap) -> Result<Goal> {
        let count = self.elements.len();
        let lookup = |id: u64, vertex: bool| {
            let found = if vertex {
                ids.vertex_index(id)
            } else {
                ids.edge_index(id)
            };
            found.ok_or_else(|| {
                let what = if vertex { "vertex" } else { "edge" };
                FdmError::Parse(format!("goal {index} references unknown {what} id {id}"))
            })
        };
        let goal = match self.kind {
            GoalType::NodePoint => {
                let vertices = self
                    .elements
                    .iter()
                    .map(|&id| lookup(id, true))
                    .collect::<Result<_>>()?;
                Goal::node_point(vertices, broadcast(&self.targets, count, index)?)
            }
            GoalType::EdgeLength | GoalType::EdgeForce => {
                let edges = self
                    .elements
                    .iter()
                    .map(|&id| lookup(id, false))
                    .collect::<Result<_>>()?;
                let targets = broadcast(&self.targets, count, index)?;
                if self.kind == GoalType::EdgeLength {
                    Goal::edge_length(edges, targets)
                } else {
                    Goal::edge_force(edges, targets)
                }
            }
        };
        Ok(goal.with_weight(self.weight))
    }
}

impl JobFile {
    pub fn parse(text: &str) -> Result<JobFile> {
        parse_json(text, "job")
    }

    /// Relative network paths are taken from `base_dir`.
    pub fn resolve(self, base_dir: &Path) -> Result<Job> {
        let loaded = match self.network {
            NetworkSource::Path(p) => load_network(base_dir.join(p))?,
            NetworkSource::Inline(file) => file.into_network()?,
        };
        let goals = self
            .goals
            .iter()
            .enumerate()
            .map(|(i, g)| g.resolve(i, &loaded.ids))
            .collect::<Result<Vec<_>>>()?;
        let mut config = OptimizerConfig::default();
        self.optimizer.apply(&mut config);
        if let Some(blocks) = self.trainable {
            config.trainable = blocks.into_iter().collect::<BTreeSet<_>>();
        }
        Ok(Job {
            loaded,
            goals,
            config,
        })
    }
}

pub fn load_job(path: impl AsRef<Path>) -> Result<Job> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: JobFile = parse_json(&text, &path.display().to_string())?;
    file.resolve(path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub q: Vec<Real>,
    pub loads: Vec<[Real; 3]>,
    pub support_xyz: Vec<[Real; 3]>,
}

impl ThetaRecord {
    pub fn new(theta: &Theta) -> Self {
        ThetaRecord {
            q: reals(&theta.q),
            loads: reals3(&theta.loads),
            support_xyz: reals3(&theta.support_xyz),
        }
    }

    pub fn to_theta(&self) -> Theta {
        Theta {
            q: self.q.iter().map(|r| r.0).collect(),
            loads: self.loads.iter().map(|&v| vec3(v)).collect(),
            support_xyz: self.support_xyz.iter().map(|&v| vec3(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub method: Method,
    pub learning_rate: Real,
    pub max_iter: usize,
    pub trainable: Vec<ParameterBlock>,
    pub iterations: usize,
    pub termination: Termination,
    pub best_iteration: usize,
    pub best_loss: Real,
    pub loss_history: Vec<Real>,
    pub grad_norm_history: Vec<Real>,
    /// Edge ids whose force density changed sign.
    pub sign_flipped_edges: Vec<u64>,
}

/// Solved state plus parameters. Vertex rows follow `vertex_ids`, reaction
/// rows follow `support_ids` and edge entries follow `edge_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub version: String,
    pub vertex_ids: Vec<u64>,
    pub edge_ids: Vec<u64>,
    pub support_ids: Vec<u64>,
    pub xyz: Vec<[Real; 3]>,
    pub reactions: Vec<[Real; 3]>,
    pub forces: Vec<Real>,
    pub lengths: Vec<Real>,
    pub loss: Option<Real>,
    pub theta: ThetaRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimization: Option<OptimizationRecord>,
}

impl ResultsFile {
    pub fn new(
        network: &FdmNetwork,
        ids: &IdMap,
        theta: &Theta,
        state: &EquilibriumState,
        loss: Option<f64>,
        trace: Option<(&OptimizationTrace, &OptimizerConfig)>,
    ) -> ResultsFile {
        let optimization = trace.map(|(t, config)| OptimizationRecord {
            method: config.method,
            learning_rate: Real(config.learning_rate),
            max_iter: config.max_iterations,
            trainable: config.trainable.iter().copied().collect(),
            iterations: t.loss_history.len(),
            termination: t.termination,
            best_iteration: t.best_iteration,
            best_loss: Real(t.best_loss),
            loss_history: reals(&t.loss_history),
            grad_norm_history: reals(&t.grad_norm_history),
            sign_flipped_edges: t
                .sign_flipped_edges
                .iter()
                .map(|&e| ids.edge_ids[e])
                .collect(),
        });
        ResultsFile {
            version: default_version(),
            vertex_ids: ids.vertex_ids.clone(),
            edge_ids: ids.edge_ids.clone(),
            support_ids: network
                .support_vertices()
                .into_iter()
                .map(|v| ids.vertex_ids[v])
                .collect(),
            xyz: reals3(&state.xyz),
            reactions: reals3(&state.reactions),
            forces: reals(&state.forces),
            lengths: reals(&state.lengths),
            loss: loss.map(Real),
            theta: ThetaRecord::new(theta),
            optimization,
        }
    }
}

pub fn save_results(path: impl AsRef<Path>, results: &ResultsFile) -> Result<()> {
    write_json(path.as_ref(), results)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultsFile> {
    let path = path.as_ref();
    parse_json(&read_text(path)?, &path.display().to_string())
}

/// Wavefront OBJ polylines: a `v` line per vertex, an `l` line per edge.
pub fn write_obj(
    mut out: impl Write,
    network: &FdmNetwork,
    state: &EquilibriumState,
) -> std::io::Result<()> {
    for p in &state.xyz {
        writeln!(out, "v {} {} {}", p[0], p[1], p[2])?;
    }
    for &(a, b) in network.edges() {
        writeln!(out, "l {} {}", a + 1, b + 1)?;
    }
    out.flush()
}

pub fn export_obj(
    path: impl AsRef<Path>,
    network: &FdmNetwork,
    state: &EquilibriumState,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| FdmError::io(path, e))?;
    write_obj(BufWriter::new(file), network, state).map_err(|e| FdmError::io(path, e))
}
