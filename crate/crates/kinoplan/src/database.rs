//! Motion-primitive database: an exhaustive lookup table of optimal
//! maneuvers between grid states, normalized to start at the origin and
//! translated at query time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    angle_distance, normalize_angle, translate_trajectory, GridSpec, GridState, State,
};
use crate::steering::{
    solve_tpbvp, CostModel, Dynamics, SolverOptions, Trajectory,
};

/// Identifies one boundary pair of the grid: initial heading and velocity
/// indices, final orientation and velocity indices, and the integer
/// position offset (final minus initial, in grid cells).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrimitiveKey {
    pub theta0: u16,
    pub thetaf: u16,
    pub v0: u16,
    pub vf: u16,
    pub dpos: [i32; 2],
}

/// A stored maneuver: trajectory normalized to initial position zero, with
/// its optimal cost.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPrimitive {
    pub key: PrimitiveKey,
    pub trajectory: Trajectory,
    pub cost: f64,
}

/// Reflection group element of the position plane, under which the
/// unicycle dynamics and its cost are invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// y -> -y, theta -> -theta, w -> -w
    ReflectX,
    /// x -> -x, theta -> pi - theta, w -> -w
    ReflectY,
    /// both reflections: position negated, theta -> theta + pi
    ReflectXY,
}

impl Transform {
    pub const ALL: [Transform; 4] = [
        Transform::Identity,
        Transform::ReflectX,
        Transform::ReflectY,
        Transform::ReflectXY,
    ];

    pub fn apply_angle(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => normalize_angle(theta),
            Transform::ReflectX => normalize_angle(-theta),
            Transform::ReflectY => normalize_angle(std::f64::consts::PI - theta),
            Transform::ReflectXY => normalize_angle(theta + std::f64::consts::PI),
        }
    }

    pub fn apply_position(self, p: [f64; 2]) -> [f64; 2] {
        match self {
            Transform::Identity => p,
            Transform::ReflectX => [p[0], -p[1]],
            Transform::ReflectY => [-p[0], p[1]],
            Transform::ReflectXY => [-p[0], -p[1]],
        }
    }

    pub fn apply_offset(self, d: [i32; 2]) -> [i32; 2] {
        match self {
            Transform::Identity => d,
            Transform::ReflectX => [d[0], -d[1]],
            Transform::ReflectY => [-d[0], d[1]],
            Transform::ReflectXY => [-d[0], -d[1]],
        }
    }

    pub fn apply_control(self, u: &[f64]) -> Vec<f64> {
        match self {
            Transform::Identity | Transform::ReflectXY => u.to_vec(),
            Transform::ReflectX | Transform::ReflectY => {
                let mut v = u.to_vec();
                v[0] = -v[0];
                v
            }
        }
    }

    pub fn apply_state(self, q: &State) -> State {
        let p = self.apply_position(q.position());
        State::new(p[0], p[1], self.apply_angle(q.theta()), q.v())
    }

    pub fn apply_trajectory(self, z: &Trajectory) -> Trajectory {
        Trajectory {
            times: z.times.clone(),
            states: z.states.iter().map(|s| self.apply_state(s)).collect(),
            controls: z.controls.iter().map(|u| self.apply_control(u)).collect(),
            duration: z.duration,
            cost: z.cost,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum LookupError {
    /// The normalized offset falls outside the grid extents, or the states
    /// do not resolve to grid indices.
    #[error("pair not in database: offset or indices outside the grid")]
    OutOfRange,
    /// A valid key that the build never attempted (e.g. orientation not
    /// among the initial headings).
    #[error("pair not in database: key never attempted")]
    NeverAttempted,
    /// Attempted during the build and found infeasible.
    #[error("pair not in database: recorded infeasible")]
    Infeasible,
}

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("no boundary pair of the grid is feasible")]
    EmptyDatabase,
    #[error("dynamics does not declare planar reflection symmetry")]
    SymmetryUnsupported,
    #[error("unsupported database format version: {0}")]
    FormatVersionMismatch(String),
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("truncated or malformed record data: {0}")]
    TruncatedRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable lookup table of motion primitives over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveDatabase {
    pub grid: GridSpec,
    pub dynamics_id: String,
    pub cost_id: String,
    pub solver: SolverOptions,
    primitives: BTreeMap<PrimitiveKey, MotionPrimitive>,
    infeasible: BTreeSet<PrimitiveKey>,
    /// Map from orientation index to initial-heading index, when the
    /// orientation is also an admissible initial heading.
    heading_of_orientation: Vec<Option<u16>>,
    /// When reduced, maps every answerable key to its stored
    /// representative and the transform taking representative to key.
    orbit_index: Option<BTreeMap<PrimitiveKey, (PrimitiveKey, Transform)>>,
}

fn heading_map(grid: &GridSpec) -> Vec<Option<u16>> {
    grid.orientations
        .iter()
        .map(|&theta| grid.heading_index(theta).map(|i| i as u16))
        .collect()
}

/// Every boundary pair the build attempts, in deterministic order:
/// initial heading, initial velocity, final y offset, final x offset,
/// final orientation, final velocity. The zero offset is excluded.
pub fn enumerate_keys(grid: &GridSpec) -> Vec<PrimitiveKey> {
    let (x_lo, x_hi) = grid.offset_range(0);
    let (y_lo, y_hi) = grid.offset_range(1);
    let mut keys = Vec::new();
    for theta0 in 0..grid.initial_headings.len() {
        for v0 in 0..grid.velocities.len() {
            for dy in y_lo..=y_hi {
                for dx in x_lo..=x_hi {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    for thetaf in 0..grid.orientations.len() {
                        for vf in 0..grid.velocities.len() {
                            keys.push(PrimitiveKey {
                                theta0: theta0 as u16,
                                thetaf: thetaf as u16,
                                v0: v0 as u16,
                                vf: vf as u16,
                                dpos: [dx as i32, dy as i32],
                            });
                        }
                    }
                }
            }
        }
    }
    keys
}

/// Boundary states of a key, normalized to initial position zero.
pub fn key_boundary(key: &PrimitiveKey, grid: &GridSpec) -> (State, State) {
    let q0 = State::new(
        0.0,
        0.0,
        grid.initial_headings[key.theta0 as usize],
        grid.velocities[key.v0 as usize],
    );
    let qf = State::new(
        key.dpos[0] as f64 * grid.step,
        key.dpos[1] as f64 * grid.step,
        grid.orientations[key.thetaf as usize],
        grid.velocities[key.vf as usize],
    );
    (q0, qf)
}

/// Wall-clock accounting of a database build.
#[derive(Clone, Debug, Default)]
pub struct BuildStats {
    /// Per-pair solve time, in enumeration order, seconds.
    pub pair_seconds: Vec<f64>,
    pub wall_seconds: f64,
}

/// Solve every boundary pair of the grid offline and collect the feasible
/// maneuvers. Deterministic: per-pair solver randomness is derived from
/// the physical boundary values, and results merge in enumeration order.
pub fn build_database(
    grid: &GridSpec,
    dynamics: &(dyn Dynamics + Sync),
    cost: &(dyn CostModel + Sync),
    opts: &SolverOptions,
    dynamics_id: &str,
    cost_id: &str,
) -> Result<PrimitiveDatabase, DatabaseError> {
    build_database_with_stats(grid, dynamics, cost, opts, dynamics_id, cost_id).map(|(db, _)| db)
}

/// As `build_database`, also reporting per-pair solve times.
pub fn build_database_with_stats(
    grid: &GridSpec,
    dynamics: &(dyn Dynamics + Sync),
    cost: &(dyn CostModel + Sync),
    opts: &SolverOptions,
    dynamics_id: &str,
    cost_id: &str,
) -> Result<(PrimitiveDatabase, BuildStats), DatabaseError> {
    let t0 = std::time::Instant::now();
    let keys = enumerate_keys(grid);
    let results: Vec<(PrimitiveKey, Option<MotionPrimitive>, f64)> = keys
        .par_iter()
        .map(|&key| {
            let pair_t0 = std::time::Instant::now();
            let (q0, qf) = key_boundary(&key, grid);
            let res = solve_tpbvp(&q0, &qf, dynamics, cost, opts);
            let prim = res.trajectory.map(|trajectory| MotionPrimitive {
                key,
                cost: trajectory.cost,
                trajectory,
            });
            (key, prim, pair_t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut stats = BuildStats::default();
    let mut primitives = BTreeMap::new();
    let mut infeasible = BTreeSet::new();
    for (key, prim, secs) in results {
        stats.pair_seconds.push(secs);
        match prim {
            Some(p) => {
                primitives.insert(key, p);
            }
            None => {
                infeasible.insert(key);
            }
        }
    }
    stats.wall_seconds = t0.elapsed().as_secs_f64();
    if primitives.is_empty() {
        return Err(DatabaseError::EmptyDatabase);
    }
    Ok((
        PrimitiveDatabase {
            grid: grid.clone(),
            dynamics_id: dynamics_id.to_string(),
            cost_id: cost_id.to_string(),
            solver: opts.clone(),
            primitives,
            infeasible,
            heading_of_orientation: heading_map(grid),
            orbit_index: None,
        },
        stats,
    ))
}

impl PrimitiveDatabase {
    /// Assemble a database from externally supplied primitives (e.g. for
    /// hand-built fixtures); keys must be valid for the grid.
    pub fn from_primitives(
        grid: GridSpec,
        dynamics_id: &str,
        cost_id: &str,
        solver: SolverOptions,
        primitives: Vec<MotionPrimitive>,
        infeasible: Vec<PrimitiveKey>,
    ) -> PrimitiveDatabase {
        let heading_of_orientation = heading_map(&grid);
        PrimitiveDatabase {
            grid,
            dynamics_id: dynamics_id.to_string(),
            cost_id: cost_id.to_string(),
            solver,
            primitives: primitives.into_iter().map(|p| (p.key, p)).collect(),
            infeasible: infeasible.into_iter().collect(),
            heading_of_orientation,
            orbit_index: None,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn infeasible_count(&self) -> usize {
        self.infeasible.len()
    }

    pub fn is_reduced(&self) -> bool {
        self.orbit_index.is_some()
    }

    pub fn stored_primitives(&self) -> impl Iterator<Item = &MotionPrimitive> {
        self.primitives.values()
    }

    /// Every key the database can answer (orbit expansion when reduced).
    pub fn answerable_keys(&self) -> Vec<PrimitiveKey> {
        match &self.orbit_index {
            Some(index) => index.keys().copied().collect(),
            None => self.primitives.keys().copied().collect(),
        }
    }

    /// Heading index for an orientation index, when that orientation is an
    /// admissible initial heading.
    pub fn heading_of_orientation(&self, theta_idx: usize) -> Option<u16> {
        self.heading_of_orientation.get(theta_idx).copied().flatten()
    }

    /// Key joining two grid states, if representable on this grid.
    pub fn key_between(&self, q: &GridState, target: &GridState) -> Result<PrimitiveKey, LookupError> {
        let theta0 = self
            .heading_of_orientation(q.theta)
            .ok_or(LookupError::NeverAttempted)?;
        let dx = target.pos[0] - q.pos[0];
        let dy = target.pos[1] - q.pos[1];
        let (x_lo, x_hi) = self.grid.offset_range(0);
        let (y_lo, y_hi) = self.grid.offset_range(1);
        if dx < x_lo || dx > x_hi || dy < y_lo || dy > y_hi {
            return Err(LookupError::OutOfRange);
        }
        if target.theta >= self.grid.orientations.len() || target.vel >= self.grid.velocities.len() {
            return Err(LookupError::OutOfRange);
        }
        Ok(PrimitiveKey {
            theta0,
            thetaf: target.theta as u16,
            v0: q.vel as u16,
            vf: target.vel as u16,
            dpos: [dx as i32, dy as i32],
        })
    }

    /// The normalized primitive for a key: the stored record, or a
    /// reflected representative when the store is reduced. Cost is the
    /// stored value, copied exactly.
    pub fn primitive(&self, key: &PrimitiveKey) -> Result<MotionPrimitive, LookupError> {
        match &self.orbit_index {
            None => {
                if let Some(p) = self.primitives.get(key) {
                    return Ok(p.clone());
                }
                if self.infeasible.contains(key) {
                    return Err(LookupError::Infeasible);
                }
                Err(LookupError::NeverAttempted)
            }
            Some(index) => {
                if let Some(&(rep, transform)) = index.get(key) {
                    let stored = &self.primitives[&rep];
                    let mut trajectory = transform.apply_trajectory(&stored.trajectory);
                    trajectory.cost = stored.cost;
                    return Ok(MotionPrimitive {
                        key: *key,
                        trajectory,
                        cost: stored.cost,
                    });
                }
                if self.infeasible.contains(key) {
                    return Err(LookupError::Infeasible);
                }
                Err(LookupError::NeverAttempted)
            }
        }
    }

    /// Cost of the primitive for a key without materializing a trajectory.
    pub fn cost_of(&self, key: &PrimitiveKey) -> Result<f64, LookupError> {
        match &self.orbit_index {
            None => {
                if let Some(p) = self.primitives.get(key) {
                    return Ok(p.cost);
                }
            }
            Some(index) => {
                if let Some(&(rep, _)) = index.get(key) {
                    return Ok(self.primitives[&rep].cost);
                }
            }
        }
        if self.infeasible.contains(key) {
            Err(LookupError::Infeasible)
        } else {
            Err(LookupError::NeverAttempted)
        }
    }

    /// Maneuver between two grid states: translate the pair to the origin,
    /// look up the key, translate the stored trajectory back. The returned
    /// cost is the stored optimum, never recomputed.
    pub fn find_trajectory_grid(
        &self,
        q: &GridState,
        target: &GridState,
    ) -> Result<(Trajectory, f64), LookupError> {
        let key = self.key_between(q, target)?;
        let prim = self.primitive(&key)?;
        let origin = [
            q.pos[0] as f64 * self.grid.step,
            q.pos[1] as f64 * self.grid.step,
        ];
        Ok((translate_trajectory(&prim.trajectory, origin), prim.cost))
    }

    /// As `find_trajectory_grid`, for continuous states that coincide with
    /// grid states up to a rigid translation of the pair.
    pub fn find_trajectory(&self, q: &State, target: &State) -> Result<(Trajectory, f64), LookupError> {
        let key = self.key_for_states(q, target)?;
        let prim = self.primitive(&key)?;
        Ok((translate_trajectory(&prim.trajectory, q.position()), prim.cost))
    }

    fn key_for_states(&self, q: &State, target: &State) -> Result<PrimitiveKey, LookupError> {
        let step = self.grid.step;
        let offset = |a: f64, b: f64| -> Result<i64, LookupError> {
            let raw = (b - a) / step;
            let snapped = raw.round();
            if (raw - snapped).abs() > 1e-6 {
                return Err(LookupError::OutOfRange);
            }
            Ok(snapped as i64)
        };
        let dx = offset(q.x(), target.x())?;
        let dy = offset(q.y(), target.y())?;
        let (x_lo, x_hi) = self.grid.offset_range(0);
        let (y_lo, y_hi) = self.grid.offset_range(1);
        if dx < x_lo || dx > x_hi || dy < y_lo || dy > y_hi {
            return Err(LookupError::OutOfRange);
        }
        let theta0 = self
            .grid
            .heading_index(q.theta())
            .ok_or(LookupError::NeverAttempted)? as u16;
        let thetaf = angle_index(&self.grid.orientations, target.theta()).ok_or(LookupError::OutOfRange)?;
        let v0 = value_index(&self.grid.velocities, q.v()).ok_or(LookupError::OutOfRange)?;
        let vf = value_index(&self.grid.velocities, target.v()).ok_or(LookupError::OutOfRange)?;
        Ok(PrimitiveKey {
            theta0,
            thetaf,
            v0,
            vf,
            dpos: [dx as i32, dy as i32],
        })
    }

    /// Key image under a reflection, when the image is representable on
    /// this grid.
    fn transform_key(&self, key: &PrimitiveKey, transform: Transform) -> Option<PrimitiveKey> {
        let dpos = transform.apply_offset(key.dpos);
        let (x_lo, x_hi) = self.grid.offset_range(0);
        let (y_lo, y_hi) = self.grid.offset_range(1);
        if (dpos[0] as i64) < x_lo
            || (dpos[0] as i64) > x_hi
            || (dpos[1] as i64) < y_lo
            || (dpos[1] as i64) > y_hi
        {
            return None;
        }
        let theta0_angle = transform.apply_angle(self.grid.initial_headings[key.theta0 as usize]);
        let thetaf_angle = transform.apply_angle(self.grid.orientations[key.thetaf as usize]);
        let theta0 = angle_index(&self.grid.initial_headings, theta0_angle)?;
        let thetaf = angle_index(&self.grid.orientations, thetaf_angle)?;
        Some(PrimitiveKey {
            theta0,
            thetaf,
            v0: key.v0,
            vf: key.vf,
            dpos,
        })
    }

    /// Collapse reflection orbits to one stored representative per orbit;
    /// queries for the other orbit members reconstruct the reflected
    /// trajectory on the fly with the representative's exact cost.
    pub fn symmetry_reduce(&self, dynamics: &dyn Dynamics) -> Result<PrimitiveDatabase, DatabaseError> {
        if !dynamics.axis_symmetric() {
            return Err(DatabaseError::SymmetryUnsupported);
        }
        let mut kept: BTreeMap<PrimitiveKey, MotionPrimitive> = BTreeMap::new();
        let mut orbit_index: BTreeMap<PrimitiveKey, (PrimitiveKey, Transform)> = BTreeMap::new();
        for (&key, prim) in &self.primitives {
            // canonical representative: smallest representable orbit image
            let rep = Transform::ALL
                .iter()
                .filter_map(|&t| self.transform_key(&key, t))
                .min()
                .expect("identity image always representable");
            if key == rep {
                kept.insert(key, prim.clone());
            }
            // record how to rebuild `key` from `rep`: the transform taking
            // rep to key (reflections are involutions)
            if orbit_index.contains_key(&key) {
                continue;
            }
            let transform = Transform::ALL
                .iter()
                .copied()
                .find(|&t| self.transform_key(&rep, t) == Some(key))
                .expect("orbit is closed under the group");
            orbit_index.insert(key, (rep, transform));
        }
        // a representative may itself have been infeasible while another
        // orbit member solved; keep such members as their own representative
        for (key, entry) in orbit_index.iter_mut() {
            if !kept.contains_key(&entry.0) {
                kept.insert(*key, self.primitives[key].clone());
                *entry = (*key, Transform::Identity);
            }
        }
        Ok(PrimitiveDatabase {
            grid: self.grid.clone(),
            dynamics_id: self.dynamics_id.clone(),
            cost_id: self.cost_id.clone(),
            solver: self.solver.clone(),
            primitives: kept,
            infeasible: self.infeasible.clone(),
            heading_of_orientation: self.heading_of_orientation.clone(),
            orbit_index: Some(orbit_index),
        })
    }

    /// Stable hash of the grid configuration, embedded in the file header.
    pub fn grid_hash(&self) -> u64 {
        fnv1a(config_lines(self).as_bytes())
    }

    pub fn serialize(&self, path: &Path) -> Result<(), DatabaseError> {
        let mut payload = String::new();
        writeln!(
            payload,
            "KPDB1 {:016x} {}",
            self.grid_hash(),
            self.primitives.len()
        )
        .unwrap();
        payload.push_str(&config_lines(self));
        for prim in self.primitives.values() {
            write_record(&mut payload, prim);
        }
        let checksum = crc32fast::hash(payload.as_bytes());
        writeln!(payload, "CRC32 {checksum:08x}").unwrap();
        std::fs::write(path, payload)?;

        let mut side = String::new();
        for key in &self.infeasible {
            writeln!(
                side,
                "{} {} {} {} {} {}",
                key.theta0, key.thetaf, key.v0, key.vf, key.dpos[0], key.dpos[1]
            )
            .unwrap();
        }
        std::fs::write(infeasible_sidecar(path), side)?;
        Ok(())
    }

    pub fn deserialize(path: &Path) -> Result<PrimitiveDatabase, DatabaseError> {
        let text = std::fs::read_to_string(path)?;
        let crc_pos = text
            .rfind("CRC32 ")
            .ok_or_else(|| DatabaseError::TruncatedRecord("missing CRC32 footer".into()))?;
        let payload = &text[..crc_pos];
        let stored_crc = text[crc_pos..]
            .trim()
            .strip_prefix("CRC32 ")
            .unwrap()
            .to_string();
        let computed = format!("{:08x}", crc32fast::hash(payload.as_bytes()));
        if stored_crc != computed {
            return Err(DatabaseError::ChecksumMismatch {
                stored: stored_crc,
                computed,
            });
        }

        let mut lines = payload.lines();
        let header = lines
            .next()
            .ok_or_else(|| DatabaseError::TruncatedRecord("empty file".into()))?;
        let mut head = header.split_whitespace();
        let version = head.next().unwrap_or("");
        if version != "KPDB1" {
            return Err(DatabaseError::FormatVersionMismatch(version.to_string()));
        }
        let _grid_hash = head
            .next()
            .ok_or_else(|| DatabaseError::TruncatedRecord("header missing grid hash".into()))?;
        let record_count: usize = head
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DatabaseError::TruncatedRecord("header missing record count".into()))?;

        let mut config: BTreeMap<String, String> = BTreeMap::new();
        let mut records: Vec<MotionPrimitive> = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("key: ") {
                records.push(parse_record(rest)?);
            } else if let Some((k, v)) = line.split_once(' ') {
                config.insert(k.to_string(), v.to_string());
            } else if !line.trim().is_empty() {
                return Err(DatabaseError::TruncatedRecord(format!(
                    "unparseable line: {line}"
                )));
            }
        }
        if records.len() != record_count {
            return Err(DatabaseError::TruncatedRecord(format!(
                "header promises {record_count} records, found {}",
                records.len()
            )));
        }

        let db = database_from_parts(config, records, path)?;
        Ok(db)
    }
}

fn angle_index(angles: &[f64], theta: f64) -> Option<u16> {
    angles
        .iter()
        .position(|&a| angle_distance(a, theta) < 1e-9)
        .map(|i| i as u16)
}

fn value_index(values: &[f64], v: f64) -> Option<u16> {
    values
        .iter()
        .position(|&a| (a - v).abs() < 1e-9)
        .map(|i| i as u16)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str) -> Result<Vec<f64>, DatabaseError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| DatabaseError::TruncatedRecord(format!("bad float: {t}")))
        })
        .collect()
}

fn config_lines(db: &PrimitiveDatabase) -> String {
    let g = &db.grid;
    let s = &db.solver;
    let mut out = String::new();
    let mut line = |k: &str, v: String| writeln!(out, "{k} {v}").unwrap();
    line("dynamics", db.dynamics_id.clone());
    line("cost", db.cost_id.clone());
    line("extent_x", format!("{},{}", g.extents[0].0, g.extents[0].1));
    line("extent_y", format!("{},{}", g.extents[1].0, g.extents[1].1));
    line("step", g.step.to_string());
    line("orientations", join_floats(&g.orientations));
    line("velocities", join_floats(&g.velocities));
    line("initial_headings", join_floats(&g.initial_headings));
    line("segments", s.segments.to_string());
    line("tau_min", s.tau_min.to_string());
    line("tau_max", s.tau_max.to_string());
    line("tol_bc_pos", s.tol_bc_pos.to_string());
    line("tol_bc_ang", s.tol_bc_ang.to_string());
    line("tol_bc_vel", s.tol_bc_vel.to_string());
    line("multistarts", s.multistarts.to_string());
    line("seed", s.seed.to_string());
    line("descent_iters", s.descent_iters.to_string());
    line("continuation_rounds", s.continuation_rounds.to_string());
    line("reduced", if db.orbit_index.is_some() { "1" } else { "0" }.to_string());
    out
}

fn write_record(out: &mut String, prim: &MotionPrimitive) {
    let k = &prim.key;
    let z = &prim.trajectory;
    write!(
        out,
        "key: {} {} {} {} {} {} | {} | {} |",
        k.theta0, k.thetaf, k.v0, k.vf, k.dpos[0], k.dpos[1], prim.cost, z.duration
    )
    .unwrap();
    for (i, s) in z.states.iter().enumerate() {
        // the final sample repeats the last interval's control
        let u = &z.controls[i.min(z.controls.len() - 1)];
        write!(
            out,
            " {} {} {} {} {} {} {}",
            z.times[i],
            s.x(),
            s.y(),
            s.theta(),
            s.v(),
            u[0],
            u[1]
        )
        .unwrap();
    }
    out.push('\n');
}

fn parse_record(rest: &str) -> Result<MotionPrimitive, DatabaseError> {
    let mut parts = rest.split('|');
    let head = parts
        .next()
        .ok_or_else(|| DatabaseError::TruncatedRecord("record missing key".into()))?;
    let ints: Vec<i64> = head
        .split_whitespace()
        .map(|t| {
            t.parse::<i64>()
                .map_err(|_| DatabaseError::TruncatedRecord(format!("bad key field: {t}")))
        })
        .collect::<Result<_, _>>()?;
    if ints.len() != 6 {
        return Err(DatabaseError::TruncatedRecord(format!(
            "key has {} fields, expected 6",
            ints.len()
        )));
    }
    let key = PrimitiveKey {
        theta0: ints[0] as u16,
        thetaf: ints[1] as u16,
        v0: ints[2] as u16,
        vf: ints[3] as u16,
        dpos: [ints[4] as i32, ints[5] as i32],
    };
    let cost: f64 = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| DatabaseError::TruncatedRecord("record missing cost".into()))?;
    let duration: f64 = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| DatabaseError::TruncatedRecord("record missing duration".into()))?;
    let samples: Vec<f64> = parts
        .next()
        .ok_or_else(|| DatabaseError::TruncatedRecord("record missing samples".into()))?
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| DatabaseError::TruncatedRecord(format!("bad sample: {t}")))
        })
        .collect::<Result<_, _>>()?;
    const POINTS: usize = 51;
    if samples.len() != POINTS * 7 {
        return Err(DatabaseError::TruncatedRecord(format!(
            "record has {} sample values, expected {}",
            samples.len(),
            POINTS * 7
        )));
    }
    let mut times = Vec::with_capacity(POINTS);
    let mut states = Vec::with_capacity(POINTS);
    let mut controls = Vec::with_capacity(POINTS - 1);
    for j in 0..POINTS {
        let g = &samples[j * 7..(j + 1) * 7];
        times.push(g[0]);
        states.push(State::from_values(vec![g[1], g[2], g[3], g[4]]));
        if j < POINTS - 1 {
            controls.push(vec![g[5], g[6]]);
        }
    }
    Ok(MotionPrimitive {
        key,
        trajectory: Trajectory {
            times,
            states,
            controls,
            duration,
            cost,
        },
        cost,
    })
}

fn infeasible_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".infeasible");
    path.with_file_name(name)
}

fn database_from_parts(
    config: BTreeMap<String, String>,
    records: Vec<MotionPrimitive>,
    path: &Path,
) -> Result<PrimitiveDatabase, DatabaseError> {
    let get = |k: &str| -> Result<&String, DatabaseError> {
        config
            .get(k)
            .ok_or_else(|| DatabaseError::TruncatedRecord(format!("missing config field {k}")))
    };
    let parse_f = |k: &str| -> Result<f64, DatabaseError> {
        get(k)?
            .parse()
            .map_err(|_| DatabaseError::TruncatedRecord(format!("bad config field {k}")))
    };
    let parse_u = |k: &str| -> Result<u64, DatabaseError> {
        get(k)?
            .parse()
            .map_err(|_| DatabaseError::TruncatedRecord(format!("bad config field {k}")))
    };
    let pair = |k: &str| -> Result<(f64, f64), DatabaseError> {
        let v = parse_floats(get(k)?)?;
        if v.len() != 2 {
            return Err(DatabaseError::TruncatedRecord(format!("bad extent {k}")));
        }
        Ok((v[0], v[1]))
    };
    let grid = GridSpec {
        extents: [pair("extent_x")?, pair("extent_y")?],
        step: parse_f("step")?,
        orientations: parse_floats(get("orientations")?)?,
        velocities: parse_floats(get("velocities")?)?,
        initial_headings: parse_floats(get("initial_headings")?)?,
    };
    let solver = SolverOptions {
        segments: parse_u("segments")? as usize,
        tau_min: parse_f("tau_min")?,
        tau_max: parse_f("tau_max")?,
        tol_bc_pos: parse_f("tol_bc_pos")?,
        tol_bc_ang: parse_f("tol_bc_ang")?,
        tol_bc_vel: parse_f("tol_bc_vel")?,
        multistarts: parse_u("multistarts")? as usize,
        seed: parse_u("seed")?,
        descent_iters: parse_u("descent_iters")? as usize,
        continuation_rounds: parse_u("continuation_rounds")? as usize,
    };
    let reduced = get("reduced")? == "1";

    let mut primitives = BTreeMap::new();
    for prim in records {
        primitives.insert(prim.key, prim);
    }

    let mut infeasible = BTreeSet::new();
    let sidecar = infeasible_sidecar(path);
    if sidecar.exists() {
        for line in std::fs::read_to_string(&sidecar)?.lines() {
            let ints: Vec<i64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|_| DatabaseError::TruncatedRecord(format!("bad infeasible key: {line}")))
                })
                .collect::<Result<_, _>>()?;
            if ints.len() != 6 {
                return Err(DatabaseError::TruncatedRecord(format!(
                    "bad infeasible key: {line}"
                )));
            }
            infeasible.insert(PrimitiveKey {
                theta0: ints[0] as u16,
                thetaf: ints[1] as u16,
                v0: ints[2] as u16,
                vf: ints[3] as u16,
                dpos: [ints[4] as i32, ints[5] as i32],
            });
        }
    }

    let heading_of_orientation = heading_map(&grid);
    let mut db = PrimitiveDatabase {
        grid,
        dynamics_id: get("dynamics")?.clone(),
        cost_id: get("cost")?.clone(),
        solver,
        primitives,
        infeasible,
        heading_of_orientation,
        orbit_index: None,
    };
    if reduced {
        // rebuild the orbit expansion from the stored representatives
        let mut orbit_index = BTreeMap::new();
        let reps: Vec<PrimitiveKey> = db.primitives.keys().copied().collect();
        for rep in reps {
            for t in Transform::ALL {
                if let Some(image) = db.transform_key(&rep, t) {
                    orbit_index.entry(image).or_insert((rep, t));
                }
            }
        }
        db.orbit_index = Some(orbit_index);
    }
    Ok(db)
}
