//! Experiment harness behind the CLI subcommands: database builds with a
//! solve-time report, multi-seed planning runs with CSV logs, the lattice
//! oracle report, and the lookup-versus-solve timing comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collision::{load_map, OccupancyGrid};
use crate::config::{Config, ConfigError};
use crate::database::{
    build_database_with_stats, key_boundary, PrimitiveDatabase,
};
use crate::geometry::{snap_to_grid, GridSpec, GridState, State};
use crate::oracle::{build_lattice, shortest_path, expected_iteration_bound, DEFAULT_NODE_CAP};
use crate::planner::{
    best_trajectory, map_region, plan, ExtendRule, GoalRegion, LogEntry, NearMode, PlannerConfig,
    Tree,
};
use crate::steering::{solve_tpbvp, SolverOptions, TimeEffortCost, Trajectory, Unicycle};

/// Command failure, split by exit-code class: configuration problems exit
/// with 2, planner/oracle/build failures with 3.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Run(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) => write!(f, "configuration error: {m}"),
            CmdError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for CmdError {}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Run(_) => 3,
        }
    }
}

pub fn grid_from_config(cfg: &Config) -> Result<GridSpec, CmdError> {
    let pair = |key: &str| -> Result<(f64, f64), CmdError> {
        let v = cfg.list_f64(key)?;
        if v.len() != 2 {
            return Err(CmdError::Config(format!("`{key}` must be two numbers")));
        }
        Ok((v[0], v[1]))
    };
    let orientations = cfg.list_f64("orientations")?;
    let initial_headings = match cfg.opt_list_f64("initial_headings")? {
        Some(v) => v,
        None => orientations.clone(),
    };
    let grid = GridSpec {
        extents: [pair("extent_x")?, pair("extent_y")?],
        step: cfg.f64("step")?,
        orientations,
        velocities: cfg.list_f64("velocities")?,
        initial_headings,
    };
    grid.validate()
        .map_err(|e| CmdError::Config(e.to_string()))?;
    Ok(grid)
}

pub fn solver_from_config(cfg: &Config) -> Result<SolverOptions, CmdError> {
    let d = SolverOptions::default();
    Ok(SolverOptions {
        segments: cfg.opt_usize("segments")?.unwrap_or(d.segments),
        tau_min: cfg.opt_f64("tau_min")?.unwrap_or(d.tau_min),
        tau_max: cfg.opt_f64("tau_max")?.unwrap_or(d.tau_max),
        tol_bc_pos: cfg.opt_f64("tol_bc_pos")?.unwrap_or(d.tol_bc_pos),
        tol_bc_ang: cfg.opt_f64("tol_bc_ang")?.unwrap_or(d.tol_bc_ang),
        tol_bc_vel: cfg.opt_f64("tol_bc_vel")?.unwrap_or(d.tol_bc_vel),
        multistarts: cfg.opt_usize("multistarts")?.unwrap_or(d.multistarts),
        seed: cfg.opt_u64("solver_seed")?.unwrap_or(d.seed),
        descent_iters: cfg.opt_usize("descent_iters")?.unwrap_or(d.descent_iters),
        continuation_rounds: cfg
            .opt_usize("continuation_rounds")?
            .unwrap_or(d.continuation_rounds),
    })
}

pub fn goal_from_config(cfg: &Config, grid: &GridSpec) -> Result<GoalRegion, CmdError> {
    let vel_index = match cfg.opt_f64("goal_vel")? {
        None => None,
        Some(v) => Some(
            grid.velocities
                .iter()
                .position(|&g| (g - v).abs() < 1e-9)
                .ok_or_else(|| {
                    CmdError::Config(format!("`goal_vel` {v} is not a grid velocity"))
                })?,
        ),
    };
    Ok(GoalRegion {
        min: [cfg.f64("goal_min_x")?, cfg.f64("goal_min_y")?],
        max: [cfg.f64("goal_max_x")?, cfg.f64("goal_max_y")?],
        vel_index,
    })
}

fn start_from_config(
    cfg: &Config,
    grid: &GridSpec,
    map: &OccupancyGrid,
) -> Result<GridState, CmdError> {
    let q = State::new(
        cfg.f64("start_x")?,
        cfg.f64("start_y")?,
        cfg.f64("start_theta")?,
        cfg.f64("start_v")?,
    );
    snap_to_grid(&q, grid, &map_region(map)).map_err(|e| CmdError::Config(e.to_string()))
}

fn out_dir(cfg: &Config) -> Result<PathBuf, CmdError> {
    let dir = cfg
        .opt_path("out_dir")
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CmdError::Config(format!("cannot create output directory: {e}")))?;
    Ok(dir)
}

fn write_file(path: &Path, content: &str) -> Result<(), CmdError> {
    std::fs::write(path, content).map_err(|e| CmdError::Run(format!("cannot write {path:?}: {e}")))
}

fn load_db(cfg: &Config) -> Result<PrimitiveDatabase, CmdError> {
    let path = cfg.path("database")?;
    PrimitiveDatabase::deserialize(&path).map_err(|e| CmdError::Config(e.to_string()))
}

fn load_map_cfg(cfg: &Config) -> Result<OccupancyGrid, CmdError> {
    let path = cfg.path("map")?;
    load_map(&path).map_err(|e| CmdError::Config(e.to_string()))
}

/// Trajectory CSV: one row per sample, with the control of the interval
/// the sample opens (the terminal sample repeats the last control).
pub fn trajectory_csv(z: &Trajectory) -> String {
    let mut out = String::from("t,x,y,theta,v,w,a\n");
    for (i, s) in z.states.iter().enumerate() {
        let (w, a) = if z.controls.is_empty() {
            (0.0, 0.0)
        } else {
            let u = &z.controls[i.min(z.controls.len() - 1)];
            (u[0], u[1])
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            z.times[i],
            s.x(),
            s.y(),
            s.theta(),
            s.v(),
            w,
            a
        )
        .unwrap();
    }
    out
}

pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from("iter,n_nodes,best_cost,elapsed_ms\n");
    for e in log {
        writeln!(
            out,
            "{},{},{},{}",
            e.iter,
            e.n_nodes,
            if e.best_cost.is_finite() {
                e.best_cost.to_string()
            } else {
                "inf".to_string()
            },
            e.elapsed_ms
        )
        .unwrap();
    }
    out
}

pub fn tree_csv(tree: &Tree) -> String {
    let mut out = String::from("node_id,parent_id,cost_to_come,x,y,theta,v\n");
    for id in 0..tree.len() {
        let s = tree.node(id).resolve(&tree.grid);
        let parent = tree
            .parent(id)
            .map(|p| p.to_string())
            .unwrap_or_else(|| "-1".to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            id,
            parent,
            tree.cost(id),
            s.x(),
            s.y(),
            s.theta(),
            s.v()
        )
        .unwrap();
    }
    out
}

/// Build the database described by the config, write it and a build report.
pub fn cmd_build_db(cfg: &Config) -> Result<(), CmdError> {
    let grid = grid_from_config(cfg)?;
    let solver = solver_from_config(cfg)?;
    let dir = out_dir(cfg)?;
    let db_path = cfg
        .opt_path("database")
        .unwrap_or_else(|| dir.join("db.kpdb"));

    let (db, stats) = build_database_with_stats(
        &grid,
        &Unicycle::benchmark(),
        &TimeEffortCost,
        &solver,
        "unicycle",
        "time-effort",
    )
    .map_err(|e| CmdError::Run(e.to_string()))?;
    let db = if cfg.opt_str("symmetry_reduce") == Some("1") {
        db.symmetry_reduce(&Unicycle::benchmark())
            .map_err(|e| CmdError::Run(e.to_string()))?
    } else {
        db
    };
    db.serialize(&db_path)
        .map_err(|e| CmdError::Run(e.to_string()))?;

    let mut report = String::new();
    writeln!(report, "database {}", db_path.display()).unwrap();
    writeln!(report, "feasible {}", db.len()).unwrap();
    writeln!(report, "infeasible {}", db.infeasible_count()).unwrap();
    writeln!(report, "wall_seconds {:.3}", stats.wall_seconds).unwrap();
    if !stats.pair_seconds.is_empty() {
        let mut sorted = stats.pair_seconds.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        writeln!(report, "pair_seconds_median {:.4}", sorted[sorted.len() / 2]).unwrap();
        let (lo, hi) = (sorted[0], *sorted.last().unwrap());
        writeln!(report, "pair_seconds_min {lo:.4}").unwrap();
        writeln!(report, "pair_seconds_max {hi:.4}").unwrap();
        writeln!(report, "histogram_bins 10").unwrap();
        let width = ((hi - lo) / 10.0).max(1e-12);
        let mut bins = [0usize; 10];
        for &s in &sorted {
            let b = (((s - lo) / width) as usize).min(9);
            bins[b] += 1;
        }
        for (i, count) in bins.iter().enumerate() {
            writeln!(
                report,
                "bin {:.4} {:.4} {count}",
                lo + i as f64 * width,
                lo + (i + 1) as f64 * width
            )
            .unwrap();
        }
    }
    print!("{report}");
    write_file(&dir.join("build_report.txt"), &report)
}

/// Plan once per seed (in parallel), writing the per-iteration log, tree
/// dump and solution trajectory per seed, plus a mean-cost aggregate.
pub fn cmd_plan(cfg: &Config) -> Result<(), CmdError> {
    let db = load_db(cfg)?;
    let map = load_map_cfg(cfg)?;
    let dir = out_dir(cfg)?;
    let start = start_from_config(cfg, &db.grid, &map)?;
    let goal = goal_from_config(cfg, &db.grid)?;
    let iters = cfg.opt_usize("iters")?.unwrap_or(1000);
    let seeds = cfg.opt_list_u64("seeds")?.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(CmdError::Config("`seeds` must be nonempty".into()));
    }
    let gamma_l = cfg.opt_f64("gamma_l")?.unwrap_or(1.0);
    let near_mode = match cfg.opt_str("near_mode").unwrap_or("bounding-box-only") {
        "bounding-box-only" => NearMode::BoundingBoxOnly,
        "threshold" => NearMode::Threshold,
        other => {
            return Err(CmdError::Config(format!("unknown near_mode `{other}`")));
        }
    };
    let extend_rule = match cfg.opt_str("extend_rule").unwrap_or("sum") {
        "sum" => ExtendRule::Sum,
        "edge-only" => ExtendRule::EdgeOnly,
        other => {
            return Err(CmdError::Config(format!("unknown extend_rule `{other}`")));
        }
    };

    let runs: Vec<Result<(u64, Tree, Vec<LogEntry>), CmdError>> = seeds
        .par_iter()
        .map(|&seed| {
            let pc = PlannerConfig {
                max_iters: iters,
                gamma_l,
                seed,
                goal: goal.clone(),
                near_mode,
                extend_rule,
            };
            plan(start, &map, &db, &pc)
                .map(|(tree, log)| (seed, tree, log))
                .map_err(|e| CmdError::Run(e.to_string()))
        })
        .collect();

    let mut logs = Vec::new();
    for run in runs {
        let (seed, tree, log) = run?;
        write_file(&dir.join(format!("plan_seed{seed}.csv")), &log_csv(&log))?;
        write_file(&dir.join(format!("tree_seed{seed}.csv")), &tree_csv(&tree))?;
        if let Some(z) = best_trajectory(&tree, &goal) {
            write_file(
                &dir.join(format!("solution_seed{seed}.csv")),
                &trajectory_csv(&z),
            )?;
        }
        logs.push(log);
    }

    // aggregate mean best cost per logged iteration
    let log_at = match cfg.opt_list_u64("log_at")? {
        Some(v) => v.into_iter().map(|x| x as usize).collect(),
        None => (0..=iters).collect::<Vec<_>>(),
    };
    let mut agg = String::from("iter,mean_best_cost\n");
    for it in log_at {
        if it >= logs[0].len() {
            continue;
        }
        let mean: f64 =
            logs.iter().map(|l| l[it].best_cost).sum::<f64>() / logs.len() as f64;
        writeln!(
            agg,
            "{it},{}",
            if mean.is_finite() {
                mean.to_string()
            } else {
                "inf".to_string()
            }
        )
        .unwrap();
    }
    write_file(&dir.join("plan_aggregate.csv"), &agg)
}

/// Build the full lattice, extract the resolution optimum, and emit the
/// oracle CSV (empty optimum fields when the goal is unreachable).
pub fn cmd_oracle(cfg: &Config) -> Result<(), CmdError> {
    let db = load_db(cfg)?;
    let map = load_map_cfg(cfg)?;
    let dir = out_dir(cfg)?;
    let start = start_from_config(cfg, &db.grid, &map)?;
    let goal = goal_from_config(cfg, &db.grid)?;
    let cap = cfg.opt_usize("node_cap")?.unwrap_or(DEFAULT_NODE_CAP);
    let graph = build_lattice(start, &map, &db, cap).map_err(|e| CmdError::Run(e.to_string()))?;
    let optimum = shortest_path(&graph, &goal, &db.grid);

    let mut out = String::from("c_star_delta,k,n_nodes,n_edges,expected_iteration_bound\n");
    match &optimum {
        Some(opt) => writeln!(
            out,
            "{},{},{},{},{}",
            opt.cost,
            opt.k,
            graph.n_nodes(),
            graph.n_edges(),
            expected_iteration_bound(&graph, opt)
        )
        .unwrap(),
        None => writeln!(out, ",,{},{},", graph.n_nodes(), graph.n_edges()).unwrap(),
    }
    write_file(&dir.join("oracle.csv"), &out)?;

    if cfg.opt_str("dump_optimum") == Some("1") {
        if let Some(opt) = &optimum {
            let mut z: Option<Trajectory> = None;
            for pair in opt.sequence.windows(2) {
                let (edge, _) = db
                    .find_trajectory_grid(&graph.nodes[pair[0]], &graph.nodes[pair[1]])
                    .expect("optimum edges exist in the database");
                z = Some(match z {
                    None => edge,
                    Some(mut acc) => {
                        let base = acc.duration;
                        for (j, s) in edge.states.iter().enumerate().skip(1) {
                            acc.times.push(base + edge.times[j]);
                            acc.states.push(s.clone());
                        }
                        acc.controls.extend(edge.controls.iter().cloned());
                        acc.duration += edge.duration;
                        acc.cost += edge.cost;
                        acc
                    }
                });
            }
            if let Some(z) = z {
                write_file(&dir.join("optimum.csv"), &trajectory_csv(&z))?;
            }
        }
    }
    Ok(())
}

/// Measure lookup latency against fresh solves of the same boundary pairs.
pub fn cmd_timing(cfg: &Config) -> Result<(), CmdError> {
    let db = load_db(cfg)?;
    let dir = out_dir(cfg)?;
    let samples = cfg.opt_usize("samples")?.unwrap_or(1000);
    let mut out = String::from("stat,lookup_ms,solve_ms,ratio\n");
    if samples == 0 {
        return write_file(&dir.join("timing.csv"), &out);
    }
    let keys = db.answerable_keys();
    if keys.is_empty() {
        return Err(CmdError::Run("database has no primitives".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.opt_u64("seed")?.unwrap_or(0));
    let pairs: Vec<(State, State)> = (0..samples)
        .map(|_| {
            let key = keys[rng.gen_range(0..keys.len())];
            key_boundary(&key, &db.grid)
        })
        .collect();

    let mut lookup_ms = Vec::with_capacity(samples);
    for (q0, qf) in &pairs {
        let t0 = Instant::now();
        let r = db.find_trajectory(q0, qf);
        lookup_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        debug_assert!(r.is_ok());
    }

    let d = SolverOptions::default();
    let solve_opts = SolverOptions {
        multistarts: cfg.opt_usize("timing_multistarts")?.unwrap_or(1),
        descent_iters: cfg.opt_usize("timing_descent_iters")?.unwrap_or(6),
        continuation_rounds: cfg.opt_usize("timing_continuation_rounds")?.unwrap_or(1),
        ..d
    };
    let dynamics = Unicycle::benchmark();
    let mut solve_ms = Vec::with_capacity(samples);
    for (q0, qf) in &pairs {
        let t0 = Instant::now();
        let _ = solve_tpbvp(q0, qf, &dynamics, &TimeEffortCost, &solve_opts);
        solve_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }

    let stat = |v: &mut Vec<f64>| -> (f64, f64, f64) {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[v.len() / 2], v[0], *v.last().unwrap())
    };
    let (l_med, l_min, l_max) = stat(&mut lookup_ms);
    let (s_med, s_min, s_max) = stat(&mut solve_ms);
    writeln!(out, "median,{l_med},{s_med},{}", s_med / l_med).unwrap();
    writeln!(out, "min,{l_min},{s_min},").unwrap();
    writeln!(out, "max,{l_max},{s_max},").unwrap();
    write_file(&dir.join("timing.csv"), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::{MotionPrimitive, PrimitiveKey};

    /// 51-point straight-line primitive so the record format round-trips.
    fn synthetic(grid: &GridSpec, dpos: [i32; 2], cost: f64) -> MotionPrimitive {
        let key = PrimitiveKey {
            theta0: 0,
            thetaf: 0,
            v0: 0,
            vf: 0,
            dpos,
        };
        let qf = [dpos[0] as f64 * grid.step, dpos[1] as f64 * grid.step];
        let points = 51;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for j in 0..points {
            let s = j as f64 / (points - 1) as f64;
            times.push(s);
            states.push(State::new(
                qf[0] * s,
                qf[1] * s,
                grid.orientations[0],
                grid.velocities[0],
            ));
            if j + 1 < points {
                controls.push(vec![0.0, 0.0]);
            }
        }
        MotionPrimitive {
            key,
            trajectory: Trajectory {
                times,
                states,
                controls,
                duration: 1.0,
                cost,
            },
            cost,
        }
    }

    fn fixture(dir: &Path) -> Config {
        let grid = GridSpec {
            extents: [(-1.0, 1.0), (-1.0, 1.0)],
            step: 1.0,
            orientations: vec![0.0],
            velocities: vec![1.0],
            initial_headings: vec![0.0],
        };
        let prims = vec![synthetic(&grid, [1, 0], 2.0)];
        let db = PrimitiveDatabase::from_primitives(
            grid,
            "unicycle",
            "time-effort",
            SolverOptions::default(),
            prims,
            Vec::new(),
        );
        db.serialize(&dir.join("db.kpdb")).unwrap();
        let map = OccupancyGrid::new(3, 1, 1.0, [0.0, 0.0]);
        map.save(&dir.join("map.txt")).unwrap();
        let text = format!(
            "database = db.kpdb\nmap = map.txt\nout_dir = {}\n\
             start_x = 0\nstart_y = 0\nstart_theta = 0\nstart_v = 1\n\
             goal_min_x = 2.75\ngoal_min_y = -0.25\ngoal_max_x = 3.25\ngoal_max_y = 0.25\n",
            dir.join("out").display()
        );
        Config::parse(&text, dir).unwrap()
    }

    #[test]
    fn oracle_csv_matches_hand_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        cmd_oracle(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
        // 4-node chain, 3 edges of cost 2
        assert_eq!(
            csv,
            "c_star_delta,k,n_nodes,n_edges,expected_iteration_bound\n6,3,4,3,12\n"
        );
        // repeated runs byte-identical
        cmd_oracle(&cfg).unwrap();
        let again = std::fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
        assert_eq!(csv, again);
    }

    #[test]
    fn oracle_unreachable_goal_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.set("goal_min_y", "5.75".into());
        cfg.set("goal_max_y", "6.25".into());
        cfg.set("goal_min_x", "-0.25".into());
        cfg.set("goal_max_x", "0.25".into());
        cmd_oracle(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
        assert_eq!(csv, "c_star_delta,k,n_nodes,n_edges,expected_iteration_bound\n,,4,3,\n");
    }

    #[test]
    fn plan_zero_iterations_emits_inf_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.set("iters", "0".into());
        cfg.set("seeds", "7".into());
        cmd_plan(&cfg).unwrap();
        let log = std::fs::read_to_string(dir.path().join("out/plan_seed7.csv")).unwrap();
        assert_eq!(log, "iter,n_nodes,best_cost,elapsed_ms\n0,1,inf,0\n");
        let agg = std::fs::read_to_string(dir.path().join("out/plan_aggregate.csv")).unwrap();
        assert_eq!(agg, "iter,mean_best_cost\n0,inf\n");
    }

    #[test]
    fn plan_emits_solution_and_tree() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.set("iters", "200".into());
        cfg.set("seeds", "1,2".into());
        cmd_plan(&cfg).unwrap();
        for seed in [1, 2] {
            let sol =
                std::fs::read_to_string(dir.path().join(format!("out/solution_seed{seed}.csv")))
                    .unwrap();
            assert!(sol.starts_with("t,x,y,theta,v,w,a\n"));
            assert!(sol.ends_with('\n'));
            let tree =
                std::fs::read_to_string(dir.path().join(format!("out/tree_seed{seed}.csv")))
                    .unwrap();
            assert!(tree.starts_with("node_id,parent_id,cost_to_come,x,y,theta,v\n"));
            assert!(tree.lines().nth(1).unwrap().starts_with("0,-1,0,"));
        }
        let agg = std::fs::read_to_string(dir.path().join("out/plan_aggregate.csv")).unwrap();
        let last = agg.lines().last().unwrap();
        assert_eq!(last, "200,6", "both seeds reach the 3-edge optimum");
    }

    #[test]
    fn timing_zero_samples_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.set("samples", "0".into());
        cmd_timing(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("out/timing.csv")).unwrap();
        assert_eq!(csv, "stat,lookup_ms,solve_ms,ratio\n");
    }

    #[test]
    fn missing_config_key_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::parse("map = nowhere.txt\n", dir.path()).unwrap();
        let err = cmd_plan(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
