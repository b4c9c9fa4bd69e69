//! Sampling-based planner over the gridded free space: uniform grid-state
//! sampling, near-node selection inside the database bounding box,
//! extension through stored primitives, and rewiring with exact
//! cost-to-come propagation.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collision::{collision_free, state_free, OccupancyGrid};
use crate::database::PrimitiveDatabase;
use crate::geometry::{enumerate_free_grid, GridSpec, GridState, Region};
use crate::steering::Trajectory;

/// Axis-aligned goal box over position, with an optional required terminal
/// velocity index (e.g. "come to a stop").
#[derive(Clone, Debug, PartialEq)]
pub struct GoalRegion {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub vel_index: Option<usize>,
}

impl GoalRegion {
    pub fn contains(&self, q: &GridState, spec: &GridSpec) -> bool {
        let s = q.resolve(spec);
        let p = s.position();
        let inside = (0..2).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9);
        inside && self.vel_index.map(|v| q.vel == v).unwrap_or(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NearMode {
    /// Box filter only; the cost threshold is effectively infinite.
    BoundingBoxOnly,
    /// Additionally require a primitive of cost at most `l(n)` in at least
    /// one direction.
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtendRule {
    /// Choose the parent minimizing cost-to-come plus edge cost.
    Sum,
    /// Compatibility mode: minimize the edge cost alone.
    EdgeOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub max_iters: usize,
    pub gamma_l: f64,
    pub seed: u64,
    pub goal: GoalRegion,
    pub near_mode: NearMode,
    pub extend_rule: ExtendRule,
}

impl PlannerConfig {
    pub fn new(max_iters: usize, seed: u64, goal: GoalRegion) -> Self {
        PlannerConfig {
            max_iters,
            gamma_l: 1.0,
            seed,
            goal,
            near_mode: NearMode::BoundingBoxOnly,
            extend_rule: ExtendRule::Sum,
        }
    }

    /// Decreasing near-threshold `l(n) = gamma_l * ln(n)/n` over the tree
    /// cardinality (clamped below at n = 2, where the literal formula is
    /// identically zero and would stall the tree).
    pub fn threshold(&self, n: usize) -> f64 {
        let n = n.max(2) as f64;
        self.gamma_l * n.ln() / n
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("start state is not in the free space")]
    StartNotFree,
    #[error("no free grid state lies inside the goal region")]
    GoalUnreachableInGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub n_nodes: usize,
    /// Best goal-region cost-to-come so far; infinity before the first
    /// goal connection.
    pub best_cost: f64,
    pub elapsed_ms: f64,
}

/// Search tree rooted at the start state. Parent links carry the stored
/// edge trajectory and its exact cost; cost-to-come is maintained as the
/// exact recursive sum of edge costs.
#[derive(Clone, Debug)]
pub struct Tree {
    pub grid: GridSpec,
    nodes: Vec<GridState>,
    index: HashMap<GridState, usize>,
    parents: Vec<Option<usize>>,
    edges: Vec<Option<Trajectory>>,
    edge_costs: Vec<f64>,
    costs: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    pub fn new(root: GridState, grid: GridSpec) -> Self {
        Tree {
            grid,
            nodes: vec![root],
            index: HashMap::from([(root, 0)]),
            parents: vec![None],
            edges: vec![None],
            edge_costs: vec![0.0],
            costs: vec![0.0],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: usize) -> &GridState {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[GridState] {
        &self.nodes
    }

    pub fn id_of(&self, q: &GridState) -> Option<usize> {
        self.index.get(q).copied()
    }

    pub fn cost(&self, id: usize) -> f64 {
        self.costs[id]
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents[id]
    }

    pub fn edge(&self, id: usize) -> Option<&Trajectory> {
        self.edges[id].as_ref()
    }

    pub fn edge_cost(&self, id: usize) -> f64 {
        self.edge_costs[id]
    }

    pub fn insert(&mut self, q: GridState, parent: usize, edge: Trajectory, edge_cost: f64) -> usize {
        debug_assert!(!self.index.contains_key(&q));
        let id = self.nodes.len();
        self.nodes.push(q);
        self.index.insert(q, id);
        self.parents.push(Some(parent));
        self.edges.push(Some(edge));
        self.edge_costs.push(edge_cost);
        self.costs.push(self.costs[parent] + edge_cost);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn is_ancestor(&self, candidate: usize, of: usize) -> bool {
        let mut cur = Some(of);
        while let Some(id) = cur {
            if id == candidate {
                return true;
            }
            cur = self.parents[id];
        }
        false
    }

    /// Replace the parent edge of `id` and recompute cost-to-come for its
    /// whole subtree as the exact recursive sum of stored edge costs.
    pub fn reparent(&mut self, id: usize, new_parent: usize, edge: Trajectory, edge_cost: f64) {
        debug_assert!(id != 0, "root cannot be reparented");
        debug_assert!(
            !self.is_ancestor(id, new_parent),
            "reparenting under a descendant would create a cycle"
        );
        if let Some(old) = self.parents[id] {
            self.children[old].retain(|&c| c != id);
        }
        self.parents[id] = Some(new_parent);
        self.edges[id] = Some(edge);
        self.edge_costs[id] = edge_cost;
        self.children[new_parent].push(id);
        self.recompute_subtree(id);
    }

    fn recompute_subtree(&mut self, id: usize) {
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            let parent = self.parents[cur].expect("subtree root is not the tree root");
            self.costs[cur] = self.costs[parent] + self.edge_costs[cur];
            stack.extend(self.children[cur].iter().copied());
        }
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Full structural audit of the tree invariants: unique root with zero
    /// cost, parent/child symmetry, acyclicity, and the exact sum law
    /// C(q) = C(parent) + edge cost at every node.
    pub fn audit(&self) -> Result<(), String> {
        if self.parents[0].is_some() || self.costs[0] != 0.0 {
            return Err("root must have no parent and zero cost".into());
        }
        let mut reached = 1usize;
        for id in 1..self.nodes.len() {
            let parent = self.parents[id].ok_or(format!("node {id} has no parent"))?;
            if self.edges[id].is_none() {
                return Err(format!("node {id} has no edge"));
            }
            if self.costs[id] != self.costs[parent] + self.edge_costs[id] {
                return Err(format!(
                    "cost sum violated at node {id}: {} != {} + {}",
                    self.costs[id], self.costs[parent], self.edge_costs[id]
                ));
            }
            if !self.children[parent].contains(&id) {
                return Err(format!("child link missing for node {id}"));
            }
            if self.is_ancestor(id, parent) {
                return Err(format!("cycle through node {id}"));
            }
            reached += 1;
        }
        if reached != self.nodes.len() {
            return Err("tree is not connected".into());
        }
        Ok(())
    }

    /// Minimum cost-to-come over tree nodes inside the goal, with the node
    /// id; ties resolve to the earlier-inserted node.
    pub fn best_goal_node(&self, goal: &GoalRegion) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (id, q) in self.nodes.iter().enumerate() {
            if goal.contains(q, &self.grid)
                && best.map(|(_, c)| self.costs[id] < c).unwrap_or(true)
            {
                best = Some((id, self.costs[id]));
            }
        }
        best
    }
}

/// Uniform draw from the enumerated free grid states.
pub fn sample<'a>(free: &'a [GridState], rng: &mut impl Rng) -> &'a GridState {
    &free[rng.gen_range(0..free.len())]
}

/// Tree nodes inside the database bounding box of the sampled position for
/// which a primitive exists in at least one direction; in threshold mode
/// the cheaper direction must also cost at most `l(n)`.
pub fn near_nodes(
    q_rand: &GridState,
    tree: &Tree,
    db: &PrimitiveDatabase,
    cfg: &PlannerConfig,
) -> Vec<usize> {
    let (xl, xh) = db.grid.offset_range(0);
    let (yl, yh) = db.grid.offset_range(1);
    let in_box = |d: i64, lo: i64, hi: i64| (d >= lo && d <= hi) || (-d >= lo && -d <= hi);
    let l_n = cfg.threshold(tree.len());
    let mut out = Vec::new();
    for (id, q) in tree.nodes().iter().enumerate() {
        let dx = q_rand.pos[0] - q.pos[0];
        let dy = q_rand.pos[1] - q.pos[1];
        if !(in_box(dx, xl, xh) && in_box(dy, yl, yh)) {
            continue;
        }
        let forward = db.key_between(q, q_rand).and_then(|k| db.cost_of(&k));
        let backward = db.key_between(q_rand, q).and_then(|k| db.cost_of(&k));
        let cheapest = match (forward, backward) {
            (Ok(a), Ok(b)) => a.min(b),
            (Ok(a), Err(_)) => a,
            (Err(_), Ok(b)) => b,
            (Err(_), Err(_)) => continue,
        };
        if cfg.near_mode == NearMode::Threshold && cheapest > l_n {
            continue;
        }
        out.push(id);
    }
    out
}

/// Best collision-free connection from a near node to the sampled state.
/// Returns the parent id, the translated edge, and its stored cost; ties
/// resolve to the earlier-inserted candidate.
pub fn extend(
    q_rand: &GridState,
    near: &[usize],
    tree: &Tree,
    db: &PrimitiveDatabase,
    map: &OccupancyGrid,
    rule: ExtendRule,
) -> Option<(usize, Trajectory, f64)> {
    let mut best: Option<(usize, Trajectory, f64, f64)> = None;
    for &id in near {
        let Ok((edge, cost)) = db.find_trajectory_grid(tree.node(id), q_rand) else {
            continue;
        };
        if !collision_free(&edge, map) {
            continue;
        }
        let score = match rule {
            ExtendRule::Sum => tree.cost(id) + cost,
            ExtendRule::EdgeOnly => cost,
        };
        if best.as_ref().map(|(_, _, _, s)| score < *s).unwrap_or(true) {
            best = Some((id, edge, cost, score));
        }
    }
    best.map(|(id, edge, cost, _)| (id, edge, cost))
}

/// Rewire near nodes through the freshly inserted node whenever that
/// strictly lowers their cost-to-come; decreases propagate to all
/// descendants immediately.
pub fn rewire(
    tree: &mut Tree,
    new_id: usize,
    near: &[usize],
    db: &PrimitiveDatabase,
    map: &OccupancyGrid,
    cfg: &PlannerConfig,
) {
    let l_n = cfg.threshold(tree.len());
    for &id in near {
        if id == new_id || id == 0 {
            continue;
        }
        let Ok((edge, cost)) = db.find_trajectory_grid(tree.node(new_id), tree.node(id)) else {
            continue;
        };
        if cfg.near_mode == NearMode::Threshold && cost > l_n {
            continue;
        }
        if !collision_free(&edge, map) {
            continue;
        }
        // strict improvement; equal cost never churns the tree
        if tree.cost(new_id) + cost < tree.cost(id) {
            debug_assert!(
                !tree.is_ancestor(id, new_id),
                "positive edge costs preclude improving through a descendant"
            );
            tree.reparent(id, new_id, edge, cost);
        }
    }
}

/// Planning region spanned by a map.
pub fn map_region(map: &OccupancyGrid) -> Region {
    Region {
        min: map.origin,
        max: [
            map.origin[0] + map.width as f64 * map.resolution,
            map.origin[1] + map.height as f64 * map.resolution,
        ],
    }
}

/// Run the full planning loop: sample, select near nodes, extend (insert
/// or reparent a resampled node), rewire, log. The node counter `n`
/// increments only on insertion; the log has one row per loop iteration
/// plus an initial row at iteration zero.
pub fn plan(
    start: GridState,
    map: &OccupancyGrid,
    db: &PrimitiveDatabase,
    cfg: &PlannerConfig,
) -> Result<(Tree, Vec<LogEntry>), PlanError> {
    let region = map_region(map);
    if !state_free(&start.resolve(&db.grid), map) {
        return Err(PlanError::StartNotFree);
    }
    let free = enumerate_free_grid(&db.grid, &region, map)
        .map_err(|_| PlanError::GoalUnreachableInGrid)?;
    if !free.iter().any(|q| cfg.goal.contains(q, &db.grid)) {
        return Err(PlanError::GoalUnreachableInGrid);
    }

    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tree = Tree::new(start, db.grid.clone());
    let mut log = Vec::with_capacity(cfg.max_iters + 1);
    let mut best = tree
        .best_goal_node(&cfg.goal)
        .map(|(_, c)| c)
        .unwrap_or(f64::INFINITY);
    log.push(LogEntry {
        iter: 0,
        n_nodes: 1,
        best_cost: best,
        elapsed_ms: 0.0,
    });

    for iter in 1..=cfg.max_iters {
        let q_rand = *sample(&free, &mut rng);
        let near = near_nodes(&q_rand, &tree, db, cfg);
        match tree.id_of(&q_rand) {
            None => {
                if let Some((parent, edge, cost)) = extend(&q_rand, &near, &tree, db, map, cfg.extend_rule)
                {
                    let new_id = tree.insert(q_rand, parent, edge, cost);
                    rewire(&mut tree, new_id, &near, db, map, cfg);
                }
            }
            Some(id) if id != 0 => {
                // resampled node: adopt a better parent if one exists, then
                // rewire through it
                if let Some((parent, edge, cost)) = extend(&q_rand, &near, &tree, db, map, cfg.extend_rule)
                {
                    if tree.cost(parent) + cost < tree.cost(id) && !tree.is_ancestor(id, parent) {
                        tree.reparent(id, parent, edge, cost);
                    }
                }
                rewire(&mut tree, id, &near, db, map, cfg);
            }
            Some(_) => {
                // resampled the root: nothing to improve
                rewire(&mut tree, 0, &near, db, map, cfg);
            }
        }
        if let Some((_, c)) = tree.best_goal_node(&cfg.goal) {
            best = c;
        }
        log.push(LogEntry {
            iter,
            n_nodes: tree.len(),
            best_cost: best,
            elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((tree, log))
}

/// Concatenate the root-to-goal edges of the cheapest goal node into one
/// trajectory; junction states are stored once. The trajectory cost is the
/// exact cost-to-come of the goal node.
pub fn best_trajectory(tree: &Tree, goal: &GoalRegion) -> Option<Trajectory> {
    let (goal_id, goal_cost) = tree.best_goal_node(goal)?;
    let path = tree.path_to(goal_id);
    let root_state = tree.node(path[0]).resolve(&tree.grid);
    let mut out = Trajectory::empty(root_state);
    for &id in path.iter().skip(1) {
        let edge = tree.edge(id).expect("non-root path node has an edge");
        let t_base = out.duration;
        for (j, s) in edge.states.iter().enumerate() {
            if j == 0 {
                continue; // junction state already stored
            }
            out.times.push(t_base + edge.times[j]);
            out.states.push(s.clone());
        }
        out.controls.extend(edge.controls.iter().cloned());
        out.duration += edge.duration;
    }
    out.cost = goal_cost;
    Some(out)
}
