//! Steering: forward integration, trajectory cost, and the constrained
//! boundary value solver that produces optimal motion primitives, plus a
//! brute-force enumeration oracle used to cross-check it.
//!
//! The solver is direct transcription: piecewise-constant controls over a
//! fixed number of segments plus a free duration, minimized by projected
//! gradient descent with finite-difference gradients, deterministic
//! multi-starts, and a quadratic penalty on the terminal boundary mismatch
//! tightened over continuation rounds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{angle_distance, normalize_angle, State};

/// System dynamics `dq/dt = f(q, u)` with box bounds on controls and states.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn derivative(&self, q: &[f64], u: &[f64], out: &mut [f64]);
    fn control_bounds(&self) -> &[(f64, f64)];
    fn state_bounds(&self) -> &[(f64, f64)];
    /// Indices of the position sub-vector within the state.
    fn position_dims(&self) -> &[usize];
    /// State components that live on the circle.
    fn angular_dims(&self) -> &[usize] {
        &[]
    }
    /// State components kept inside their bounds by saturation during
    /// integration (the derivative is zeroed at the bound).
    fn saturating_dims(&self) -> &[usize] {
        &[]
    }
    /// Upper bound on the speed of the position sub-vector, when one exists;
    /// used to prescreen unreachable boundary pairs.
    fn max_position_speed(&self) -> Option<f64> {
        None
    }
    /// Whether the dynamics is symmetric under x-axis and y-axis reflection
    /// of the position plane.
    fn axis_symmetric(&self) -> bool {
        false
    }
    /// Optional warm-start control schedules for the boundary pair, each
    /// paired with the duration it is designed for.
    fn seed_schedules(&self, _q0: &[f64], _qf: &[f64], _segments: usize, _tau: f64) -> Vec<(Vec<Vec<f64>>, f64)> {
        Vec::new()
    }
    /// Optional characteristic duration for the boundary pair.
    fn suggest_duration(&self, _q0: &[f64], _qf: &[f64]) -> Option<f64> {
        None
    }
}

/// Instantaneous cost `g(q, u) >= 0`.
pub trait CostModel: Sync {
    fn instantaneous(&self, q: &[f64], u: &[f64]) -> f64;
}

/// Planar unicycle with state `(x, y, theta, v)` and input `(w, a)`.
///
/// The linear velocity saturates at its bounds so that every integrated
/// sample respects the velocity constraint by construction.
#[derive(Clone, Debug)]
pub struct Unicycle {
    control_bounds: [(f64, f64); 2],
    state_bounds: [(f64, f64); 4],
}

impl Unicycle {
    /// The benchmark instance: `v` in [0, 4] m/s, `a` in [-3, 3] m/s^2,
    /// `w` in [-5, 5] rad/s.
    pub fn benchmark() -> Self {
        Unicycle {
            control_bounds: [(-5.0, 5.0), (-3.0, 3.0)],
            state_bounds: [
                (f64::NEG_INFINITY, f64::INFINITY),
                (f64::NEG_INFINITY, f64::INFINITY),
                (f64::NEG_INFINITY, f64::INFINITY),
                (0.0, 4.0),
            ],
        }
    }

    pub fn with_bounds(control_bounds: [(f64, f64); 2], v_bounds: (f64, f64)) -> Self {
        let mut u = Unicycle::benchmark();
        u.control_bounds = control_bounds;
        u.state_bounds[3] = v_bounds;
        u
    }

    fn v_max(&self) -> f64 {
        self.state_bounds[3].1
    }
}

impl Dynamics for Unicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn derivative(&self, q: &[f64], u: &[f64], out: &mut [f64]) {
        let (theta, v) = (q[2], q[3]);
        out[0] = v * theta.cos();
        out[1] = v * theta.sin();
        out[2] = u[0];
        let (v_lo, v_hi) = self.state_bounds[3];
        out[3] = if (v <= v_lo && u[1] < 0.0) || (v >= v_hi && u[1] > 0.0) {
            0.0
        } else {
            u[1]
        };
    }

    fn control_bounds(&self) -> &[(f64, f64)] {
        &self.control_bounds
    }

    fn state_bounds(&self) -> &[(f64, f64)] {
        &self.state_bounds
    }

    fn position_dims(&self) -> &[usize] {
        &[0, 1]
    }

    fn angular_dims(&self) -> &[usize] {
        &[2]
    }

    fn saturating_dims(&self) -> &[usize] {
        &[3]
    }

    fn max_position_speed(&self) -> Option<f64> {
        Some(self.v_max())
    }

    fn axis_symmetric(&self) -> bool {
        true
    }

    fn seed_schedules(&self, q0: &[f64], qf: &[f64], segments: usize, tau: f64) -> Vec<(Vec<Vec<f64>>, f64)> {
        let (w_lo, w_hi) = self.control_bounds[0];
        let (a_lo, a_hi) = self.control_bounds[1];
        let a_ramp = ((qf[3] - q0[3]) / tau).clamp(a_lo, a_hi);

        // turn toward the goal, coast while ramping v0 -> vf, turn to the
        // final heading over the last third
        let (dx, dy) = (qf[0] - q0[0], qf[1] - q0[1]);
        let bearing = dy.atan2(dx);
        let seg = tau / segments as f64;
        let third = (segments / 3).max(1);
        let turn_in = signed_angle_to(q0[2], bearing) / (third as f64 * seg);
        let turn_out = signed_angle_to(bearing, qf[2]) / (third as f64 * seg);
        let mut in_coast_out = Vec::with_capacity(segments);
        for k in 0..segments {
            let w = if k < third {
                turn_in
            } else if k >= segments - third {
                turn_out
            } else {
                0.0
            };
            in_coast_out.push(vec![w.clamp(w_lo, w_hi), a_ramp]);
        }

        // constant-rate circular arc through the chord, at the duration
        // the arc geometry implies
        let d_theta = signed_angle_to(q0[2], qf[2]);
        let chord = (dx * dx + dy * dy).sqrt();
        let arc_len = if d_theta.abs() < 1e-9 {
            chord
        } else {
            chord / (2.0 * (d_theta.abs() / 2.0).sin()) * d_theta.abs()
        };
        let v_avg = (0.5 * (q0[3] + qf[3])).clamp(0.5, self.v_max().max(0.5));
        let tau_arc = (arc_len / v_avg).max(0.1);
        let w_arc = (d_theta / tau_arc).clamp(w_lo, w_hi);
        let arc = vec![vec![w_arc, a_ramp]; segments];

        vec![(in_coast_out, tau), (arc, tau_arc)]
    }

    fn suggest_duration(&self, q0: &[f64], qf: &[f64]) -> Option<f64> {
        let dist = ((qf[0] - q0[0]).powi(2) + (qf[1] - q0[1]).powi(2)).sqrt();
        let v_avg = (0.5 * (q0[3] + qf[3])).clamp(0.5, self.v_max().max(0.5));
        let turn = angle_distance(q0[2], qf[2]);
        Some(dist / v_avg + 0.4 * turn + 0.2)
    }
}

/// Signed shortest rotation taking angle `from` onto angle `to`, in
/// `(-pi, pi]`.
pub fn signed_angle_to(from: f64, to: f64) -> f64 {
    let mut d = normalize_angle(to) - normalize_angle(from);
    if d > std::f64::consts::PI {
        d -= crate::geometry::TWO_PI;
    } else if d <= -std::f64::consts::PI {
        d += crate::geometry::TWO_PI;
    }
    d
}

/// Unicycle benchmark cost `1 + 0.5 w^2 + 0.5 a^2` (time plus actuation
/// effort with weight R = 0.5 I).
#[derive(Clone, Copy, Debug)]
pub struct TimeEffortCost;

impl CostModel for TimeEffortCost {
    fn instantaneous(&self, _q: &[f64], u: &[f64]) -> f64 {
        1.0 + 0.5 * u.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Time-sampled trajectory: states per sample, one piecewise-constant
/// control per interval, total duration and integral cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<Vec<f64>>,
    pub duration: f64,
    pub cost: f64,
}

impl Trajectory {
    /// Zero-length trajectory at a single state, cost 0.
    pub fn empty(q: State) -> Self {
        Trajectory {
            times: vec![0.0],
            states: vec![q],
            controls: Vec::new(),
            duration: 0.0,
            cost: 0.0,
        }
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn terminal(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Equal-duration piecewise-constant control schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    pub segments: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn constant(u: Vec<f64>) -> Self {
        ControlSchedule { segments: vec![u] }
    }

    fn at(&self, t: f64, tau: f64) -> &[f64] {
        let k = ((t / tau) * self.segments.len() as f64).floor() as usize;
        &self.segments[k.min(self.segments.len() - 1)]
    }
}

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("state left its bounds during integration: component {dim} = {value}")]
    StateBoundViolation { dim: usize, value: f64 },
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
}

fn rk4_step(dynamics: &dyn Dynamics, q: &mut [f64], u: &[f64], h: f64, scratch: &mut [f64]) {
    let d = q.len();
    let (k1, rest) = scratch.split_at_mut(d);
    let (k2, rest) = rest.split_at_mut(d);
    let (k3, rest) = rest.split_at_mut(d);
    let (k4, tmp) = rest.split_at_mut(d);
    dynamics.derivative(q, u, k1);
    for i in 0..d {
        tmp[i] = q[i] + 0.5 * h * k1[i];
    }
    dynamics.derivative(tmp, u, k2);
    for i in 0..d {
        tmp[i] = q[i] + 0.5 * h * k2[i];
    }
    dynamics.derivative(tmp, u, k3);
    for i in 0..d {
        tmp[i] = q[i] + h * k3[i];
    }
    dynamics.derivative(tmp, u, k4);
    for i in 0..d {
        q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    for &i in dynamics.saturating_dims() {
        let (lo, hi) = dynamics.state_bounds()[i];
        q[i] = q[i].clamp(lo, hi);
    }
}

fn check_bounds(dynamics: &dyn Dynamics, q: &[f64]) -> Result<(), SteeringError> {
    for (i, &(lo, hi)) in dynamics.state_bounds().iter().enumerate() {
        if dynamics.angular_dims().contains(&i) {
            continue;
        }
        if q[i] < lo - 1e-9 || q[i] > hi + 1e-9 {
            return Err(SteeringError::StateBoundViolation { dim: i, value: q[i] });
        }
    }
    Ok(())
}

/// Fixed-step explicit 4-stage (RK4) forward integration under a
/// piecewise-constant control schedule. Sample times are multiples of `h`
/// plus the endpoint `tau`. The returned trajectory is costless (`cost` 0).
pub fn integrate(
    q0: &State,
    schedule: &ControlSchedule,
    tau: f64,
    dynamics: &dyn Dynamics,
    h: f64,
) -> Result<Trajectory, SteeringError> {
    if tau <= 0.0 || h <= 0.0 {
        return Err(SteeringError::InvalidRequest(format!(
            "tau = {tau}, h = {h}: both must be positive"
        )));
    }
    let d = dynamics.state_dim();
    let mut scratch = vec![0.0; 5 * d];
    let mut q = q0.values.clone();
    check_bounds(dynamics, &q)?;
    let mut times = vec![0.0];
    let mut states = vec![canonical_state(&q, dynamics)];
    let mut controls = Vec::new();
    let full_steps = (tau / h + 1e-9).floor() as usize;
    let mut t = 0.0;
    for step in 0..full_steps {
        let u = schedule.at(t, tau).to_vec();
        rk4_step(dynamics, &mut q, &u, h, &mut scratch);
        t = (step + 1) as f64 * h;
        check_bounds(dynamics, &q)?;
        times.push(t);
        states.push(canonical_state(&q, dynamics));
        controls.push(u);
    }
    if tau - t > 1e-9 * tau.max(1.0) {
        let u = schedule.at(t, tau).to_vec();
        rk4_step(dynamics, &mut q, &u, tau - t, &mut scratch);
        check_bounds(dynamics, &q)?;
        times.push(tau);
        states.push(canonical_state(&q, dynamics));
        controls.push(u);
    }
    Ok(Trajectory {
        times,
        states,
        controls,
        duration: tau,
        cost: 0.0,
    })
}

fn canonical_state(q: &[f64], dynamics: &dyn Dynamics) -> State {
    let mut values = q.to_vec();
    for &i in dynamics.angular_dims() {
        values[i] = normalize_angle(values[i]);
    }
    State::from_values(values)
}

/// Trapezoidal quadrature of the instantaneous cost along the samples,
/// using the piecewise-constant control of each interval.
pub fn evaluate_cost(z: &Trajectory, cost: &dyn CostModel) -> f64 {
    let mut total = 0.0;
    for (i, u) in z.controls.iter().enumerate() {
        let dt = z.times[i + 1] - z.times[i];
        let g0 = cost.instantaneous(&z.states[i].values, u);
        let g1 = cost.instantaneous(&z.states[i + 1].values, u);
        total += 0.5 * dt * (g0 + g1);
    }
    total
}

/// Boundary value solver configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub segments: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tol_bc_pos: f64,
    pub tol_bc_ang: f64,
    pub tol_bc_vel: f64,
    pub multistarts: usize,
    pub seed: u64,
    /// Descent iterations per continuation round.
    pub descent_iters: usize,
    /// Penalty continuation rounds (penalty weight x10 each round).
    pub continuation_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            segments: 25,
            tau_min: 0.05,
            tau_max: 10.0,
            tol_bc_pos: 0.01,
            tol_bc_ang: 0.05,
            tol_bc_vel: 0.05,
            multistarts: 8,
            seed: 1,
            descent_iters: 300,
            continuation_rounds: 4,
        }
    }
}

impl SolverOptions {
    /// Per-component boundary tolerance for state dimension `i`.
    fn tolerance_for(&self, i: usize, dynamics: &dyn Dynamics) -> f64 {
        if dynamics.position_dims().contains(&i) {
            self.tol_bc_pos
        } else if dynamics.angular_dims().contains(&i) {
            self.tol_bc_ang
        } else {
            self.tol_bc_vel
        }
    }
}

/// Outcome of a steering query: a trajectory when the boundary pair is
/// feasible, plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct SteeringResult {
    pub trajectory: Option<Trajectory>,
    /// Total descent iterations spent across starts and rounds.
    pub iterations: usize,
    /// Largest per-component boundary violation of the returned trajectory,
    /// scaled by its tolerance (<= 1 when feasible).
    pub violation: f64,
}

impl SteeringResult {
    pub fn infeasible(iterations: usize) -> Self {
        SteeringResult {
            trajectory: None,
            iterations,
            violation: f64::INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.trajectory.is_some()
    }
}

/// Deterministic seed for a boundary pair: equal physical pairs always get
/// equal solver randomness, regardless of which grid addressed them.
pub fn pair_seed(q0: &State, qf: &State, base: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ base.wrapping_mul(0x100000001b3);
    let mut eat = |v: f64| {
        let quantized = (v * 1e9).round() as i64;
        for b in quantized.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for v in &q0.values {
        eat(*v);
    }
    for v in &qf.values {
        eat(*v);
    }
    h
}

fn states_equal(q0: &State, qf: &State, dynamics: &dyn Dynamics) -> bool {
    q0.values.iter().enumerate().all(|(i, &a)| {
        let b = qf.values[i];
        if dynamics.angular_dims().contains(&i) {
            angle_distance(a, b) == 0.0
        } else {
            a == b
        }
    })
}

/// Terminal boundary mismatch per state component (angles on the circle).
fn boundary_error(terminal: &[f64], target: &State, dynamics: &dyn Dynamics) -> Vec<f64> {
    terminal
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if dynamics.angular_dims().contains(&i) {
                angle_distance(a, target.values[i])
            } else {
                a - target.values[i]
            }
        })
        .collect()
}

/// Rollout without storing samples: terminal state and trapezoidal cost.
fn rollout(
    q0: &State,
    controls: &[f64],
    segments: usize,
    tau: f64,
    dynamics: &dyn Dynamics,
    cost: &dyn CostModel,
    steps_per_segment: usize,
    terminal: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    let m = dynamics.input_dim();
    terminal.copy_from_slice(&q0.values);
    let seg_dt = tau / segments as f64;
    let h = seg_dt / steps_per_segment as f64;
    let mut total = 0.0;
    for s in 0..segments {
        let u = &controls[s * m..(s + 1) * m];
        for _ in 0..steps_per_segment {
            let g0 = cost.instantaneous(terminal, u);
            rk4_step(dynamics, terminal, u, h, scratch);
            let g1 = cost.instantaneous(terminal, u);
            total += 0.5 * h * (g0 + g1);
        }
    }
    total
}

struct PenaltyProblem<'a> {
    q0: &'a State,
    qf: &'a State,
    dynamics: &'a dyn Dynamics,
    cost: &'a dyn CostModel,
    opts: &'a SolverOptions,
    steps_per_segment: usize,
}

impl PenaltyProblem<'_> {
    fn dim(&self) -> usize {
        self.opts.segments * self.dynamics.input_dim() + 1
    }

    /// Decision vector layout: per-segment controls, then tau (last entry).
    fn objective(&self, z: &[f64], terminal: &mut [f64], scratch: &mut [f64], mu: f64) -> f64 {
        let tau = z[self.dim() - 1];
        let run_cost = rollout(
            self.q0,
            &z[..self.dim() - 1],
            self.opts.segments,
            tau,
            self.dynamics,
            self.cost,
            self.steps_per_segment,
            terminal,
            scratch,
        );
        let mut penalty = 0.0;
        for (i, e) in boundary_error(terminal, self.qf, self.dynamics)
            .iter()
            .enumerate()
        {
            let tol = self.opts.tolerance_for(i, self.dynamics);
            let scaled = e / tol;
            penalty += scaled * scaled;
        }
        run_cost + mu * penalty
    }

    fn project(&self, z: &mut [f64]) {
        let m = self.dynamics.input_dim();
        for s in 0..self.opts.segments {
            for (j, &(lo, hi)) in self.dynamics.control_bounds().iter().enumerate() {
                let idx = s * m + j;
                z[idx] = z[idx].clamp(lo, hi);
            }
        }
        let last = self.dim() - 1;
        z[last] = z[last].clamp(self.opts.tau_min, self.opts.tau_max);
    }

    /// Characteristic scale per decision variable, for step sizing and
    /// finite-difference increments.
    fn scales(&self) -> Vec<f64> {
        let m = self.dynamics.input_dim();
        let mut s = Vec::with_capacity(self.dim());
        for _ in 0..self.opts.segments {
            for &(lo, hi) in self.dynamics.control_bounds() {
                s.push(((hi - lo) * 0.5).max(1e-3));
            }
        }
        let _ = m;
        s.push(1.0); // tau
        s
    }
}

/// Projected gradient descent with backtracking line search. Returns the
/// number of iterations spent.
fn descend(
    problem: &PenaltyProblem<'_>,
    z: &mut Vec<f64>,
    mu: f64,
    max_iters: usize,
) -> usize {
    let n = problem.dim();
    let d = problem.dynamics.state_dim();
    let mut terminal = vec![0.0; d];
    let mut scratch = vec![0.0; 5 * d];
    let scales = problem.scales();
    let mut grad = vec![0.0; n];
    let mut step = 0.05;
    let mut f = problem.objective(z, &mut terminal, &mut scratch, mu);
    let mut iters = 0;
    for _ in 0..max_iters {
        iters += 1;
        // forward finite differences
        for i in 0..n {
            let delta = 1e-6 * scales[i];
            let saved = z[i];
            z[i] = saved + delta;
            let f_plus = problem.objective(z, &mut terminal, &mut scratch, mu);
            z[i] = saved;
            grad[i] = (f_plus - f) / delta;
        }
        let grad_norm: f64 = grad
            .iter()
            .zip(&scales)
            .map(|(g, s)| (g * s).powi(2))
            .sum::<f64>()
            .sqrt();
        if grad_norm < 1e-10 * (1.0 + f.abs()) {
            break;
        }
        let mut accepted = false;
        let mut local_step = step;
        for _ in 0..24 {
            let mut candidate = z.clone();
            for i in 0..n {
                candidate[i] -= local_step * scales[i] * scales[i] * grad[i] / grad_norm.max(1e-12);
            }
            problem.project(&mut candidate);
            let f_new = problem.objective(&candidate, &mut terminal, &mut scratch, mu);
            if f_new < f - 1e-12 {
                *z = candidate;
                f = f_new;
                step = (local_step * 1.6).min(0.5);
                accepted = true;
                break;
            }
            local_step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    iters
}

fn multistart_guesses(
    q0: &State,
    qf: &State,
    dynamics: &dyn Dynamics,
    opts: &SolverOptions,
) -> Vec<Vec<f64>> {
    let m = dynamics.input_dim();
    let n = opts.segments * m + 1;
    let tau0 = dynamics
        .suggest_duration(&q0.values, &qf.values)
        .unwrap_or(1.0)
        .clamp(opts.tau_min, opts.tau_max);
    let bounds = dynamics.control_bounds();
    let mid: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut guesses: Vec<Vec<f64>> = Vec::new();

    let flat = |schedule: &[Vec<f64>], tau: f64| {
        let mut z = Vec::with_capacity(n);
        for u in schedule {
            z.extend_from_slice(u);
        }
        z.push(tau);
        z
    };

    // heuristic warm starts when the dynamics provides them
    for (schedule, tau_seed) in dynamics.seed_schedules(&q0.values, &qf.values, opts.segments, tau0) {
        guesses.push(flat(&schedule, tau_seed.clamp(opts.tau_min, opts.tau_max)));
    }
    // straight-line (mid-range controls)
    guesses.push(flat(&vec![mid.clone(); opts.segments], tau0));
    // max- and min-acceleration on the last input axis
    let mut hi_schedule = vec![mid.clone(); opts.segments];
    let mut lo_schedule = vec![mid.clone(); opts.segments];
    for k in 0..opts.segments {
        hi_schedule[k][m - 1] = bounds[m - 1].1;
        lo_schedule[k][m - 1] = bounds[m - 1].0;
    }
    guesses.push(flat(&hi_schedule, (tau0 * 0.7).clamp(opts.tau_min, opts.tau_max)));
    guesses.push(flat(&lo_schedule, (tau0 * 1.3).clamp(opts.tau_min, opts.tau_max)));

    // random schedules, deterministic per boundary pair
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(q0, qf, opts.seed));
    while guesses.len() < opts.multistarts {
        let mut z = Vec::with_capacity(n);
        for _ in 0..opts.segments {
            for &(lo, hi) in bounds {
                z.push(rng.gen_range(lo..=hi));
            }
        }
        let tau_hi = (tau0 * 2.5).clamp(opts.tau_min, opts.tau_max);
        z.push(rng.gen_range(opts.tau_min..=tau_hi));
        guesses.push(z);
    }
    guesses.truncate(opts.multistarts.max(1));
    guesses
}

/// Solve the constrained two-point boundary value problem from `q0` to `qf`.
///
/// Returns the empty zero-cost trajectory when `q0 == qf`. The returned
/// trajectory is integrated at `h = tau/200` and resampled to 51 stored
/// points (50 control intervals aligned with the transcription segments).
pub fn solve_tpbvp(
    q0: &State,
    qf: &State,
    dynamics: &dyn Dynamics,
    cost: &dyn CostModel,
    opts: &SolverOptions,
) -> SteeringResult {
    if states_equal(q0, qf, dynamics) {
        return SteeringResult {
            trajectory: Some(Trajectory::empty(q0.clone())),
            iterations: 0,
            violation: 0.0,
        };
    }
    // reachability prescreen
    if let Some(v_max) = dynamics.max_position_speed() {
        let p = dynamics.position_dims();
        let dist = p
            .iter()
            .map(|&i| (qf.values[i] - q0.values[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist > v_max * opts.tau_max + 1e-9 {
            return SteeringResult::infeasible(0);
        }
    }

    let problem = PenaltyProblem {
        q0,
        qf,
        dynamics,
        cost,
        opts,
        steps_per_segment: 4,
    };
    let mut total_iters = 0;
    let mut best: Option<(f64, Trajectory, f64)> = None;

    for guess in multistart_guesses(q0, qf, dynamics, opts) {
        let mut z = guess;
        problem.project(&mut z);
        let mut mu = 10.0;
        for _ in 0..opts.continuation_rounds {
            total_iters += descend(&problem, &mut z, mu, opts.descent_iters);
            mu *= 10.0;
        }
        let tau = z[z.len() - 1];
        let schedule = ControlSchedule {
            segments: z[..z.len() - 1]
                .chunks(dynamics.input_dim())
                .map(|c| c.to_vec())
                .collect(),
        };
        let Ok(fine) = integrate(q0, &schedule, tau, dynamics, tau / 200.0) else {
            continue;
        };
        let errors = boundary_error(&fine.terminal().values, qf, dynamics);
        let violation = errors
            .iter()
            .enumerate()
            .map(|(i, e)| e.abs() / opts.tolerance_for(i, dynamics))
            .fold(0.0, f64::max);
        if violation > 1.0 {
            continue;
        }
        let stored = resample_stored(&fine, cost);
        if best.as_ref().map(|(c, _, _)| stored.cost < *c).unwrap_or(true) {
            best = Some((stored.cost, stored, violation));
        }
    }

    match best {
        Some((_, trajectory, violation)) => SteeringResult {
            trajectory: Some(trajectory),
            iterations: total_iters,
            violation,
        },
        None => SteeringResult::infeasible(total_iters),
    }
}

/// Reduce a finely integrated trajectory to the fixed 51-point record and
/// attach its trapezoidal cost.
pub fn resample_stored(fine: &Trajectory, cost: &dyn CostModel) -> Trajectory {
    const POINTS: usize = 51;
    let intervals = fine.times.len() - 1;
    debug_assert!(intervals % (POINTS - 1) == 0);
    let stride = intervals / (POINTS - 1);
    let mut times = Vec::with_capacity(POINTS);
    let mut states = Vec::with_capacity(POINTS);
    let mut controls = Vec::with_capacity(POINTS - 1);
    for j in 0..POINTS {
        let src = j * stride;
        times.push(fine.times[src]);
        states.push(fine.states[src].clone());
        if j < POINTS - 1 {
            controls.push(fine.controls[src].clone());
        }
    }
    let mut out = Trajectory {
        times,
        states,
        controls,
        duration: fine.duration,
        cost: 0.0,
    };
    out.cost = evaluate_cost(&out, cost);
    out
}

/// Options for the exhaustive enumeration oracle.
#[derive(Clone, Debug)]
pub struct EnumOptions {
    /// Candidate values per control axis.
    pub control_values: Vec<Vec<f64>>,
    /// Number of equal-duration segments (small; the enumeration is
    /// exponential in it).
    pub segments: usize,
    /// Candidate durations.
    pub taus: Vec<f64>,
    /// Acceptance ball radius as a multiple of the boundary tolerance.
    pub ball_scale: f64,
}

/// Exhaustive enumeration of lattice control sequences: integrate each and
/// return the cheapest whose terminal state lands within the acceptance
/// ball of `qf`. Ties resolve to the earliest enumerated sequence.
pub fn brute_force_steer(
    q0: &State,
    qf: &State,
    dynamics: &dyn Dynamics,
    cost: &dyn CostModel,
    opts: &SolverOptions,
    enum_opts: &EnumOptions,
) -> SteeringResult {
    assert!(enum_opts.segments >= 1 && enum_opts.segments <= 4);
    let m = dynamics.input_dim();
    assert_eq!(enum_opts.control_values.len(), m);
    let combos: Vec<Vec<f64>> = {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &enum_opts.control_values {
            let mut next = Vec::new();
            for base in &out {
                for &v in axis {
                    let mut c = base.clone();
                    c.push(v);
                    next.push(c);
                }
            }
            out = next;
        }
        out
    };
    let mut best: Option<(f64, Trajectory)> = None;
    let mut attempts = 0usize;
    for &tau in &enum_opts.taus {
        let mut indices = vec![0usize; enum_opts.segments];
        loop {
            attempts += 1;
            let schedule = ControlSchedule {
                segments: indices.iter().map(|&i| combos[i].clone()).collect(),
            };
            if let Ok(traj) = integrate(q0, &schedule, tau, dynamics, tau / 100.0) {
                let errors = boundary_error(&traj.terminal().values, qf, dynamics);
                let within = errors.iter().enumerate().all(|(i, e)| {
                    e.abs() <= enum_opts.ball_scale * opts.tolerance_for(i, dynamics)
                });
                if within {
                    let c = evaluate_cost(&traj, cost);
                    if best.as_ref().map(|(bc, _)| c < *bc).unwrap_or(true) {
                        let mut z = traj;
                        z.cost = c;
                        best = Some((c, z));
                    }
                }
            }
            // odometer over control combinations
            let mut k = enum_opts.segments;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                indices[k] += 1;
                if indices[k] < combos.len() {
                    break;
                }
                indices[k] = 0;
                if k == 0 {
                    break;
                }
            }
            if indices.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    match best {
        Some((_, trajectory)) => SteeringResult {
            trajectory: Some(trajectory),
            iterations: attempts,
            violation: 0.0,
        },
        None => SteeringResult::infeasible(attempts),
    }
}
