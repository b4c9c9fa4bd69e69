//! Kinodynamic motion planning with a precomputed database of optimal
//! motion primitives.
//!
//! The toolkit builds a lookup table of optimal point-to-point maneuvers
//! between states of a uniform grid, uses it as the steering function of an
//! asymptotically optimal sampling-based planner, and cross-checks planner
//! results against an exhaustive lattice-graph oracle.

pub mod bench;
pub mod collision;
pub mod config;
pub mod database;
pub mod geometry;
pub mod oracle;
pub mod planner;
pub mod steering;
