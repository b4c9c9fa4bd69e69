//! Exhaustive lattice oracle: builds the full reachable graph of free grid
//! states under the primitive database, extracts the resolution-optimal
//! branch by uniform-cost search, and evaluates the analytical iteration
//! and cost bounds.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::collision::{collision_free, state_free, OccupancyGrid};
use crate::database::{PrimitiveDatabase, PrimitiveKey};
use crate::geometry::GridState;
use crate::planner::GoalRegion;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("lattice closure exceeded the node cap at {reached} nodes")]
    GraphExplosion { reached: usize },
    #[error("invalid bound parameters: {0}")]
    DomainError(String),
}

/// One outgoing lattice edge: target node, generating key, exact cost.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeEdge {
    pub target: usize,
    pub key: PrimitiveKey,
    pub cost: f64,
}

/// The reachable free-space graph from the start state: every node can be
/// reached by concatenating collision-free translated primitives.
#[derive(Clone, Debug)]
pub struct LatticeGraph {
    pub nodes: Vec<GridState>,
    pub edges: Vec<Vec<LatticeEdge>>,
    index: HashMap<GridState, usize>,
}

impl LatticeGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    pub fn id_of(&self, q: &GridState) -> Option<usize> {
        self.index.get(q).copied()
    }

    pub fn has_edge(&self, from: &GridState, to: &GridState) -> bool {
        match (self.id_of(from), self.id_of(to)) {
            (Some(a), Some(b)) => self.edges[a].iter().any(|e| e.target == b),
            _ => false,
        }
    }
}

/// The optimal branch of the lattice: node sequence, its exact cost, and
/// the number of edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionOptimum {
    pub sequence: Vec<usize>,
    pub cost: f64,
    pub k: usize,
}

/// Default node cap for the lattice closure.
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

/// Breadth-first closure of the free grid states reachable from `q0`
/// through collision-free translated primitives. Deterministic: the
/// frontier is a FIFO queue and keys expand in sorted order.
pub fn build_lattice(
    q0: GridState,
    map: &OccupancyGrid,
    db: &PrimitiveDatabase,
    node_cap: usize,
) -> Result<LatticeGraph, OracleError> {
    // group answerable keys by (initial heading, initial velocity)
    let mut by_source: HashMap<(u16, u16), Vec<PrimitiveKey>> = HashMap::new();
    for key in db.answerable_keys() {
        by_source.entry((key.theta0, key.v0)).or_default().push(key);
    }

    let mut nodes = vec![q0];
    let mut index = HashMap::from([(q0, 0usize)]);
    let mut edges: Vec<Vec<LatticeEdge>> = vec![Vec::new()];
    let mut head = 0usize;
    while head < nodes.len() {
        let node = nodes[head];
        let keys = db
            .heading_of_orientation(node.theta)
            .and_then(|h| by_source.get(&(h, node.vel as u16)));
        if let Some(keys) = keys {
            for key in keys {
                let target = GridState {
                    pos: [
                        node.pos[0] + key.dpos[0] as i64,
                        node.pos[1] + key.dpos[1] as i64,
                    ],
                    theta: key.thetaf as usize,
                    vel: key.vf as usize,
                };
                if !state_free(&target.resolve(&db.grid), map) {
                    continue;
                }
                let Ok((edge, cost)) = db.find_trajectory_grid(&node, &target) else {
                    continue;
                };
                if !collision_free(&edge, map) {
                    continue;
                }
                let target_id = match index.get(&target) {
                    Some(&id) => id,
                    None => {
                        let id = nodes.len();
                        if id >= node_cap {
                            return Err(OracleError::GraphExplosion { reached: id + 1 });
                        }
                        nodes.push(target);
                        index.insert(target, id);
                        edges.push(Vec::new());
                        id
                    }
                };
                edges[head].push(LatticeEdge {
                    target: target_id,
                    key: *key,
                    cost,
                });
            }
        }
        head += 1;
    }
    Ok(LatticeGraph { nodes, edges, index })
}

#[derive(PartialEq)]
struct QueueEntry {
    cost: f64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; cost ties resolve to the smaller node id
        other
            .cost
            .partial_cmp(&self.cost)
            .expect("edge costs are finite")
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform-cost search from the root node to the cheapest node inside the
/// goal region. Ties resolve to the smaller node enumeration index.
pub fn shortest_path(graph: &LatticeGraph, goal: &GoalRegion, grid: &crate::geometry::GridSpec) -> Option<ResolutionOptimum> {
    let n = graph.n_nodes();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(QueueEntry { cost: 0.0, node: 0 });
    while let Some(QueueEntry { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for e in &graph.edges[node] {
            // exact left-to-right accumulation along the predecessor chain
            let next = cost + e.cost;
            if next < dist[e.target] {
                dist[e.target] = next;
                pred[e.target] = Some(node);
                heap.push(QueueEntry { cost: next, node: e.target });
            }
        }
    }
    let mut best: Option<usize> = None;
    for (id, q) in graph.nodes.iter().enumerate() {
        if dist[id].is_finite() && goal.contains(q, grid) {
            if best.map(|b| dist[id] < dist[b]).unwrap_or(true) {
                best = Some(id);
            }
        }
    }
    let target = best?;
    let mut sequence = vec![target];
    let mut cur = target;
    while let Some(p) = pred[cur] {
        sequence.push(p);
        cur = p;
    }
    sequence.reverse();
    Some(ResolutionOptimum {
        k: sequence.len() - 1,
        cost: dist[target],
        sequence,
    })
}

/// Expected-iteration bound `k * |V|` for reaching the optimal branch, and
/// the per-step advance probability used by the statistical harness.
pub fn expected_iteration_bound(graph: &LatticeGraph, optimum: &ResolutionOptimum) -> f64 {
    optimum.k as f64 * graph.n_nodes() as f64
}

pub fn advance_probability(graph: &LatticeGraph) -> f64 {
    1.0 / graph.n_nodes() as f64
}

/// User-supplied constants for the analytical cost bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuboptimalityBoundParams {
    /// Dynamics Lipschitz constant (must be at least 1).
    pub k_f: f64,
    /// Cost Lipschitz constant.
    pub k_c: f64,
    /// Ball-shrinking factor in (0, 1].
    pub alpha: f64,
    /// Clearance radius (m).
    pub epsilon: f64,
    /// Minimum cost to exit a clearance ball.
    pub l_min: f64,
}

impl SuboptimalityBoundParams {
    /// Grid dispersion required by the bound.
    pub fn delta(&self) -> f64 {
        self.alpha * self.epsilon / (2.0 * self.k_f)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.k_f < 1.0 {
            return Err(OracleError::DomainError(format!(
                "dynamics Lipschitz constant must be at least 1, got {}",
                self.k_f
            )));
        }
        if self.l_min <= 0.0 {
            return Err(OracleError::DomainError(format!(
                "minimum frontier-exit cost must be positive, got {}",
                self.l_min
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(OracleError::DomainError(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Upper bound on the resolution-optimal cost in terms of the clearance
/// optimum `c_eps`:
/// `(1 + K_c*alpha*eps / (2*K_f*l_min)) * c_eps + K_c*alpha*eps / (2*K_f)`.
pub fn suboptimality_upper_bound(params: &SuboptimalityBoundParams, c_eps: f64) -> Result<f64, OracleError> {
    params.validate()?;
    if c_eps < 0.0 {
        return Err(OracleError::DomainError(format!(
            "clearance optimum must be nonnegative, got {c_eps}"
        )));
    }
    let term = params.k_c * params.alpha * params.epsilon / (2.0 * params.k_f);
    Ok((1.0 + term / params.l_min) * c_eps + term)
}
