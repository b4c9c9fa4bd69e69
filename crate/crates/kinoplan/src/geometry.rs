//! State-space representation, uniform gridding, translation invariance and
//! the bounding box of grid offsets covered by the primitive database.
//!
//! Grid points live on cell corners: positions are integer multiples of the
//! step measured from the world origin, so the zero position is always a grid
//! point. Angular components are stored as their canonical representative in
//! `[0, 2*pi)` and compared by index, never by floating equality.

use thiserror::Error;

use crate::collision::OccupancyGrid;
use crate::steering::Trajectory;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Canonical angle representative in `[0, 2*pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Shortest angular distance between two angles, in `[0, pi]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (normalize_angle(a) - normalize_angle(b)).abs();
    d.min(TWO_PI - d)
}

/// A point in the planar unicycle state space `(x, y, theta, v)`.
///
/// The position sub-vector is `(x, y)`; `theta` is angular and kept in
/// canonical form by the constructors that produce states from grid indices.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub values: Vec<f64>,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        State {
            values: vec![x, y, normalize_angle(theta), v],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        State { values }
    }

    pub fn x(&self) -> f64 {
        self.values[0]
    }

    pub fn y(&self) -> f64 {
        self.values[1]
    }

    pub fn theta(&self) -> f64 {
        self.values[2]
    }

    pub fn v(&self) -> f64 {
        self.values[3]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.values[0], self.values[1]]
    }
}

/// Shift the position sub-vector of a state; all other components unchanged.
pub fn translate_state(q: &State, offset: [f64; 2]) -> State {
    let mut values = q.values.clone();
    values[0] += offset[0];
    values[1] += offset[1];
    State { values }
}

/// Rigidly shift every sampled state of a trajectory. Controls, times,
/// duration and cost are unchanged (translation invariance of the cost).
pub fn translate_trajectory(z: &Trajectory, offset: [f64; 2]) -> Trajectory {
    let mut out = z.clone();
    for s in &mut out.states {
        s.values[0] += offset[0];
        s.values[1] += offset[1];
    }
    out
}

/// Discretization of the state space, coupled to the database resolution.
///
/// `extents` is the database position bounding box (final positions relative
/// to the zero initial position), `step` the position grid spacing.
/// `orientations` and `velocities` are the value sets for the non-position
/// components; `initial_headings` lists the headings for which primitives are
/// built (a node whose heading is absent simply has no outgoing primitives).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub extents: [(f64, f64); 2],
    pub step: f64,
    pub orientations: Vec<f64>,
    pub velocities: Vec<f64>,
    pub initial_headings: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("state component out of the gridded region: {0}")]
    OutOfExtent(String),
    #[error("no free grid state in the region")]
    EmptyFreeSpace,
}

fn sorted_unique(vs: &[f64]) -> bool {
    vs.windows(2).all(|w| w[0] < w[1])
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.step <= 0.0 {
            return Err(GridError::InvalidSpec("position step must be positive".into()));
        }
        for (lo, hi) in self.extents {
            if lo > 0.0 || hi < 0.0 {
                return Err(GridError::InvalidSpec(
                    "extents must contain the zero position".into(),
                ));
            }
            for bound in [lo, hi] {
                let q = bound / self.step;
                if (q - q.round()).abs() > 1e-9 {
                    return Err(GridError::InvalidSpec(
                        "position step must divide the extent bounds exactly".into(),
                    ));
                }
            }
        }
        for (name, set) in [
            ("orientations", &self.orientations),
            ("velocities", &self.velocities),
            ("initial_headings", &self.initial_headings),
        ] {
            if set.is_empty() {
                return Err(GridError::InvalidSpec(format!("{name} set is empty")));
            }
            if !sorted_unique(set) {
                return Err(GridError::InvalidSpec(format!(
                    "{name} set must be sorted and duplicate-free"
                )));
            }
        }
        Ok(())
    }

    /// Inclusive index range of the database position offsets on one axis.
    pub fn offset_range(&self, axis: usize) -> (i64, i64) {
        let (lo, hi) = self.extents[axis];
        ((lo / self.step).round() as i64, (hi / self.step).round() as i64)
    }

    /// Index of an initial-heading value matching `theta`, if present.
    pub fn heading_index(&self, theta: f64) -> Option<usize> {
        self.initial_headings
            .iter()
            .position(|&h| angle_distance(h, theta) < 1e-9)
    }
}

/// One grid point, addressed by integer indices per dimension.
///
/// `pos` are absolute position indices (world coordinate = index * step);
/// `theta` and `vel` index into the grid's orientation and velocity sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridState {
    pub pos: [i64; 2],
    pub theta: usize,
    pub vel: usize,
}

impl GridState {
    /// Resolve the indices back to the continuous state they address.
    pub fn resolve(&self, spec: &GridSpec) -> State {
        State::new(
            self.pos[0] as f64 * spec.step,
            self.pos[1] as f64 * spec.step,
            spec.orientations[self.theta],
            spec.velocities[self.vel],
        )
    }
}

/// Axis-aligned planning region over position, in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

/// Round a coordinate to the nearest grid index; exact half-step ties break
/// toward the smaller index.
fn snap_index(value: f64, step: f64) -> i64 {
    (value / step - 0.5).ceil() as i64
}

/// Index of the value in `set` nearest to `x` under `dist`; ties toward the
/// smaller index.
fn nearest_index(set: &[f64], x: f64, dist: impl Fn(f64, f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &s) in set.iter().enumerate() {
        let d = dist(s, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Place a continuous state onto the planning grid.
pub fn snap_to_grid(q: &State, spec: &GridSpec, region: &Region) -> Result<GridState, GridError> {
    if !region.contains(q.position()) {
        return Err(GridError::OutOfExtent(format!(
            "position ({}, {}) outside the planning region",
            q.x(),
            q.y()
        )));
    }
    let pos = [snap_index(q.x(), spec.step), snap_index(q.y(), spec.step)];
    let snapped = [pos[0] as f64 * spec.step, pos[1] as f64 * spec.step];
    if !region.contains(snapped) {
        return Err(GridError::OutOfExtent(
            "nearest grid point falls outside the planning region".into(),
        ));
    }
    let theta = nearest_index(&spec.orientations, q.theta(), angle_distance);
    let vel = nearest_index(&spec.velocities, q.v(), |a, b| (a - b).abs());
    Ok(GridState { pos, theta, vel })
}

/// All grid states whose positions lie inside the database extents shifted so
/// the origin maps to `center`, over every orientation/velocity combination.
///
/// `center` must itself be grid aligned, which holds for every query issued
/// by the planner (it only centers boxes on sampled grid states).
pub fn bounding_box(center: [f64; 2], spec: &GridSpec) -> Vec<GridState> {
    let ci = [snap_index(center[0], spec.step), snap_index(center[1], spec.step)];
    let (xl, xh) = spec.offset_range(0);
    let (yl, yh) = spec.offset_range(1);
    let mut out = Vec::new();
    for dy in yl..=yh {
        for dx in xl..=xh {
            for theta in 0..spec.orientations.len() {
                for vel in 0..spec.velocities.len() {
                    out.push(GridState {
                        pos: [ci[0] + dx, ci[1] + dy],
                        theta,
                        vel,
                    });
                }
            }
        }
    }
    out
}

/// Deterministic row-major enumeration of the obstacle-free grid states whose
/// position lies inside `region` and on a free map cell.
pub fn enumerate_free_grid(
    spec: &GridSpec,
    region: &Region,
    map: &OccupancyGrid,
) -> Result<Vec<GridState>, GridError> {
    let ix_lo = (region.min[0] / spec.step).ceil() as i64;
    let ix_hi = (region.max[0] / spec.step).floor() as i64;
    let iy_lo = (region.min[1] / spec.step).ceil() as i64;
    let iy_hi = (region.max[1] / spec.step).floor() as i64;
    let mut out = Vec::new();
    for iy in iy_lo..=iy_hi {
        for ix in ix_lo..=ix_hi {
            let p = [ix as f64 * spec.step, iy as f64 * spec.step];
            if !map.position_free(p) {
                continue;
            }
            for theta in 0..spec.orientations.len() {
                for vel in 0..spec.velocities.len() {
                    out.push(GridState {
                        pos: [ix, iy],
                        theta,
                        vel,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(GridError::EmptyFreeSpace);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::OccupancyGrid;

    fn half_meter_spec() -> GridSpec {
        GridSpec {
            extents: [(-2.0, 2.0), (-2.0, 2.0)],
            step: 0.5,
            orientations: vec![0.0],
            velocities: vec![0.0],
            initial_headings: vec![0.0],
        }
    }

    fn big_region() -> Region {
        Region {
            min: [-100.0, -100.0],
            max: [100.0, 100.0],
        }
    }

    #[test]
    fn snap_exact_grid_point() {
        let spec = half_meter_spec();
        let gs = snap_to_grid(&State::new(0.0, 0.0, 0.0, 0.0), &spec, &big_region()).unwrap();
        assert_eq!(gs.pos, [0, 0]);
        assert_eq!(gs.resolve(&spec), State::new(0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn snap_nearest_cell() {
        let spec = half_meter_spec();
        let gs = snap_to_grid(&State::new(0.24, 0.26, 0.0, 0.0), &spec, &big_region()).unwrap();
        assert_eq!(gs.pos, [0, 1]);
        assert_eq!(gs.resolve(&spec).position(), [0.0, 0.5]);
    }

    #[test]
    fn snap_tie_toward_smaller_index() {
        let spec = half_meter_spec();
        let gs = snap_to_grid(&State::new(0.25, 0.0, 0.0, 0.0), &spec, &big_region()).unwrap();
        assert_eq!(gs.pos[0], 0);
    }

    #[test]
    fn snap_out_of_extent() {
        let spec = half_meter_spec();
        let region = Region {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        };
        let err = snap_to_grid(&State::new(5.0, 0.0, 0.0, 0.0), &spec, &region);
        assert!(matches!(err, Err(GridError::OutOfExtent(_))));
    }

    #[test]
    fn translate_to_origin_and_back() {
        let q = State::new(1.0, 2.0, std::f64::consts::FRAC_PI_2, 3.0);
        let shifted = translate_state(&q, [-1.0, -2.0]);
        assert_eq!(shifted, State::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 3.0));
        assert_eq!(translate_state(&q, [0.0, 0.0]), q);
        // inverse composition
        let o = [0.37, -4.21];
        let back = translate_state(&translate_state(&q, o), [-o[0], -o[1]]);
        for (a, b) in back.values.iter().zip(q.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bounding_box_shifted_extents() {
        let spec = GridSpec {
            extents: [(-2.0, 2.0), (-2.0, 2.0)],
            step: 1.0,
            orientations: vec![0.0, 1.0],
            velocities: vec![0.0],
            initial_headings: vec![0.0],
        };
        let bb = bounding_box([5.0, 5.0], &spec);
        assert_eq!(bb.len(), 5 * 5 * 2);
        for gs in &bb {
            let p = gs.resolve(&spec).position();
            assert!(p[0] >= 3.0 && p[0] <= 7.0 && p[1] >= 3.0 && p[1] <= 7.0);
        }
        // zero shift yields the database's own grid offsets
        let bb0 = bounding_box([0.0, 0.0], &spec);
        for (a, b) in bb.iter().zip(bb0.iter()) {
            assert_eq!(a.pos[0] - 5, b.pos[0]);
            assert_eq!(a.pos[1] - 5, b.pos[1]);
            assert_eq!((a.theta, a.vel), (b.theta, b.vel));
        }
    }

    #[test]
    fn bounding_box_combinatorial_count() {
        let spec = GridSpec {
            extents: [(-1.0, 1.0), (-2.0, 2.0)],
            step: 0.5,
            orientations: vec![0.0, 1.0, 2.0],
            velocities: vec![0.0, 1.0],
            initial_headings: vec![0.0],
        };
        let bb = bounding_box([0.0, 0.0], &spec);
        // exhaustive enumeration of the grid product
        let positions = 5 * 9;
        assert_eq!(bb.len(), positions * 3 * 2);
        let mut sorted = bb.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), bb.len());
    }

    #[test]
    fn enumerate_free_corner_convention() {
        // fully free 2x2-cell map, 1 orientation, 1 velocity: 3x3 cell corners
        let map = OccupancyGrid::new(2, 2, 1.0, [0.0, 0.0]);
        let spec = GridSpec {
            extents: [(-1.0, 1.0), (-1.0, 1.0)],
            step: 1.0,
            orientations: vec![0.0],
            velocities: vec![0.0],
            initial_headings: vec![0.0],
        };
        let region = Region {
            min: [0.0, 0.0],
            max: [2.0, 2.0],
        };
        let free = enumerate_free_grid(&spec, &region, &map).unwrap();
        assert_eq!(free.len(), 9);
        let mut sorted = free.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), free.len());
    }

    #[test]
    fn enumerate_free_blocked_map() {
        let mut map = OccupancyGrid::new(2, 2, 1.0, [0.0, 0.0]);
        for x in 0..2 {
            for y in 0..2 {
                map.set_occupied(x, y, true);
            }
        }
        let spec = half_meter_spec();
        let region = Region {
            min: [0.0, 0.0],
            max: [2.0, 2.0],
        };
        assert_eq!(
            enumerate_free_grid(&spec, &region, &map),
            Err(GridError::EmptyFreeSpace)
        );
    }

    #[test]
    fn blocked_cell_removes_product_block() {
        let spec = GridSpec {
            extents: [(-1.0, 1.0), (-1.0, 1.0)],
            step: 1.0,
            orientations: vec![0.0, 1.0, 2.0],
            velocities: vec![0.0, 1.0],
            initial_headings: vec![0.0],
        };
        let region = Region {
            min: [0.0, 0.0],
            max: [3.0, 3.0],
        };
        let map = OccupancyGrid::new(3, 3, 1.0, [0.0, 0.0]);
        let free = enumerate_free_grid(&spec, &region, &map).unwrap();
        let mut blocked = map.clone();
        blocked.set_occupied(1, 1, true);
        let fewer = enumerate_free_grid(&spec, &region, &blocked).unwrap();
        // positions (1,1), (2,1), (1,2), (2,2) all floor into the blocked cell
        // except those on its upper/right boundary, which floor into neighbors;
        // exactly one enumerated position, (1,1), resolves into the cell.
        assert_eq!(free.len() - fewer.len(), 3 * 2);
    }

    #[test]
    fn grid_round_trip() {
        let spec = GridSpec {
            extents: [(-2.0, 2.0), (-2.0, 2.0)],
            step: 0.5,
            orientations: vec![0.0, 1.2, 3.1, 4.9],
            velocities: vec![0.0, 2.0, 4.0],
            initial_headings: vec![0.0, 1.2],
        };
        let region = big_region();
        for &(ix, iy, t, v) in &[(0i64, 0i64, 0usize, 0usize), (3, -7, 2, 1), (-1, 4, 3, 2)] {
            let gs = GridState {
                pos: [ix, iy],
                theta: t,
                vel: v,
            };
            let resolved = gs.resolve(&spec);
            let snapped = snap_to_grid(&resolved, &spec, &region).unwrap();
            assert_eq!(snapped, gs);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = half_meter_spec();
        spec.validate().unwrap();
        spec.step = 0.3;
        assert!(spec.validate().is_err());
        let mut spec = half_meter_spec();
        spec.orientations = vec![1.0, 1.0];
        assert!(spec.validate().is_err());
        let mut spec = half_meter_spec();
        spec.extents[0] = (0.5, 2.0);
        assert!(spec.validate().is_err());
    }
}
