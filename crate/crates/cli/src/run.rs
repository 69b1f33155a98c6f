//! Mode dispatch, artifact writing and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use leadfollow::control::{control_l1_cost, running_cost_integral, total_cost, ControlSignal};
use leadfollow::dynamics::{envelopes, integrate, Trajectory};
use leadfollow::limits_harness::{
    gamma_convergence_experiment, meanfield_convergence_experiment, optimal_control_sweep, stability_experiment, Report,
};
use leadfollow::measures::{config_norm, sample_initial_measure_with, Configuration};
use leadfollow::sparse_optimizer::{solve, OptimalControlProblem, SolveReport};
use serde::Serialize;
use serde_json::json;

use crate::config::{emit, validate_config, ControlValues, Diagnostic, ExperimentConfig, Followers, Format, Mode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LEADFOLLOW_OUT";
pub const DEFAULT_OUT_DIR: &str = "leadfollow-out";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub validate_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    /// `config.invalid`, `cli.*`, or a module-qualified library code.
    pub code: String,
    pub message: String,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    /// Artifacts written, manifest excluded.
    pub artifacts: Vec<PathBuf>,
    pub failure: Option<Failure>,
    pub config: Option<ExperimentConfig>,
}

/// Flag, then config, then environment, then the built-in default.
pub fn output_dir(flag: Option<&Path>, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(dir) = config.and_then(|c| c.output.directory.as_ref()) {
        return PathBuf::from(dir);
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

fn lib_failure(e: leadfollow::Error) -> Failure {
    Failure {
        code: e.code(),
        message: e.to_string(),
        diagnostics: Vec::new(),
    }
}

/// Validates `config_path` and, unless `validate_only`, runs it. A manifest
/// is written for every run and for every failure.
pub fn run_config_file(config_path: &Path, opts: &RunOptions) -> RunOutcome {
    let start = Instant::now();
    let mut cfg = match validate_config(config_path) {
        Ok(c) => c,
        Err(diags) => {
            let out_dir = output_dir(opts.out.as_deref(), None);
            let failure = Failure {
                code: "config.invalid".into(),
                message: format!("{} problem(s) in {}", diags.len(), config_path.display()),
                diagnostics: diags,
            };
            let mut outcome = RunOutcome {
                exit_code: EXIT_INVALID_CONFIG,
                out_dir,
                artifacts: Vec::new(),
                failure: Some(failure),
                config: None,
            };
            write_manifest_logged(&mut outcome, config_path, opts, start);
            return outcome;
        }
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let out_dir = output_dir(opts.out.as_deref(), Some(&cfg));
    let mut outcome = RunOutcome {
        exit_code: EXIT_OK,
        out_dir,
        artifacts: Vec::new(),
        failure: None,
        config: None,
    };
    if opts.validate_only {
        outcome.config = Some(cfg);
        return outcome;
    }
    let result = match opts.threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| run(&cfg, &outcome.out_dir)).map_err(lib_failure),
            Err(e) => Err(Failure {
                code: "cli.thread_pool".into(),
                message: e.to_string(),
                diagnostics: Vec::new(),
            }),
        },
        None => run(&cfg, &outcome.out_dir).map_err(lib_failure),
    };
    match result {
        Ok(a) => outcome.artifacts = a,
        Err(f) => {
            outcome.exit_code = EXIT_RUN_FAILURE;
            outcome.failure = Some(f);
        }
    }
    outcome.config = Some(cfg);
    write_manifest_logged(&mut outcome, config_path, opts, start);
    outcome
}

fn write_manifest_logged(outcome: &mut RunOutcome, config_path: &Path, opts: &RunOptions, start: Instant) {
    if let Err(e) = write_manifest(outcome, config_path, opts, start.elapsed().as_secs_f64()) {
        outcome.exit_code = outcome.exit_code.max(EXIT_RUN_FAILURE);
        if outcome.failure.is_none() {
            outcome.failure = Some(Failure {
                code: "cli.manifest".into(),
                message: e.to_string(),
                diagnostics: Vec::new(),
            });
        }
    }
}

fn write_manifest(outcome: &RunOutcome, config_path: &Path, opts: &RunOptions, wall_clock: f64) -> std::io::Result<()> {
    std::fs::create_dir_all(&outcome.out_dir)?;
    let cfg = outcome.config.as_ref();
    let names: Vec<String> = outcome
        .artifacts
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let manifest = json!({
        "tool": "leadfollow",
        "cli_version": env!("CARGO_PKG_VERSION"),
        "core_version": leadfollow::VERSION,
        "config_path": config_path.display().to_string(),
        "config": cfg.map(emit),
        "mode": cfg.map(|c| c.mode.name()),
        "seed": cfg.map(|c| c.seed),
        "threads": opts.threads.unwrap_or_else(rayon::current_num_threads),
        "status": if outcome.failure.is_none() { "ok" } else { "failed" },
        "exit_code": outcome.exit_code,
        "failure": outcome.failure,
        "artifacts": names,
        "wall_clock_seconds": wall_clock,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)? + "\n";
    std::fs::write(outcome.out_dir.join(MANIFEST_FILE), text)
}

/// Runs a validated config, writing artifacts into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> leadfollow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    match cfg.mode {
        Mode::Simulate => simulate(cfg, out_dir),
        Mode::Optimize => optimize(cfg, out_dir),
        Mode::Meanfield => write_report(&meanfield_convergence_experiment(&cfg.limit_spec()?)?, cfg, out_dir),
        Mode::Gamma => write_report(&gamma_convergence_experiment(&cfg.limit_spec()?)?, cfg, out_dir),
        Mode::Stability => write_report(&stability_experiment(&cfg.limit_spec()?, &cfg.stability_settings())?, cfg, out_dir),
        Mode::Sweep => write_report(&optimal_control_sweep(&cfg.limit_spec()?, &cfg.experiment.gamma_list)?, cfg, out_dir),
    }
}

fn write_report<R: Report>(report: &R, cfg: &ExperimentConfig, dir: &Path) -> leadfollow::Result<Vec<PathBuf>> {
    let stem = report.file_stem();
    let mut out = Vec::new();
    if cfg.output.wants(Format::Csv) {
        let p = dir.join(format!("{stem}.csv"));
        report.write_csv(BufWriter::new(File::create(&p)?))?;
        out.push(p);
    }
    if cfg.output.wants(Format::Json) {
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, report.to_json()?)?;
        out.push(p);
    }
    Ok(out)
}

fn initial_configuration(cfg: &ExperimentConfig) -> leadfollow::Result<Configuration> {
    let mu = match &cfg.followers {
        Followers::Density { spec, n, sampling } => sample_initial_measure_with(spec, *n, cfg.seed, *sampling)?,
        Followers::File { measure, .. } => measure.clone(),
    };
    Configuration::from_parts(cfg.dim, cfg.leaders.clone(), &mu)
}

fn problem(cfg: &ExperimentConfig, c0: Configuration) -> leadfollow::Result<OptimalControlProblem> {
    OptimalControlProblem::new(c0, cfg.kernel.clone(), cfg.cost.clone(), cfg.grid.clone(), cfg.radius)?.with_settings(cfg.optimizer)
}

fn write_json(path: &Path, value: &serde_json::Value) -> leadfollow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_solve(report: &SolveReport, cfg: &ExperimentConfig, dir: &Path, out: &mut Vec<PathBuf>) -> leadfollow::Result<()> {
    if cfg.output.wants(Format::Csv) {
        let p = dir.join(format!("history_seed{}.csv", cfg.seed));
        report.write_history_csv(BufWriter::new(File::create(&p)?))?;
        out.push(p);
    }
    if cfg.output.wants(Format::Json) {
        let p = dir.join(format!("solve_seed{}.json", cfg.seed));
        std::fs::write(&p, report.to_json()? + "\n")?;
        out.push(p);
    }
    Ok(())
}

/// Trajectory, control and cost summary for one control.
fn write_run(
    traj: &Trajectory,
    u: &ControlSignal,
    c0: &Configuration,
    cfg: &ExperimentConfig,
    dir: &Path,
    out: &mut Vec<PathBuf>,
) -> leadfollow::Result<()> {
    let seed = cfg.seed;
    let cadence = cfg.output.snapshot_cadence;
    if cfg.output.wants(Format::Csv) {
        let p = dir.join(format!("trajectory_seed{seed}.csv"));
        traj.write_csv(BufWriter::new(File::create(&p)?), cadence)?;
        out.push(p);
        let p = dir.join(format!("control_seed{seed}.csv"));
        u.write_csv(BufWriter::new(File::create(&p)?))?;
        out.push(p);
    }
    if cfg.output.wants(Format::Json) {
        let p = dir.join(format!("trajectory_seed{seed}.json"));
        write_json(&p, &traj.snapshots_json(cadence))?;
        out.push(p);
    }
    let env = envelopes(c0, &cfg.kernel, cfg.radius, cfg.grid.horizon);
    let max_norm = traj.states.iter().map(config_norm).fold(0.0_f64, f64::max);
    let summary = json!({
        "mode": cfg.mode.name(),
        "seed": seed,
        "dim": cfg.dim,
        "leaders": cfg.num_leaders(),
        "followers": c0.num_followers(),
        "horizon": cfg.grid.horizon,
        "steps": traj.states.len() - 1,
        "running_cost": running_cost_integral(traj, &cfg.cost)?,
        "l1_cost": control_l1_cost(u),
        "total_cost": total_cost(traj, u, &cfg.cost)?,
        "sparsity_fraction": u.sparsity_fraction(),
        "max_config_norm": max_norm,
        "growth_bound": env.growth_bound,
        "within_growth_envelope": max_norm <= env.growth_bound,
    });
    let p = dir.join(format!("summary_seed{seed}.json"));
    write_json(&p, &summary)?;
    out.push(p);
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, dir: &Path) -> leadfollow::Result<Vec<PathBuf>> {
    let c0 = initial_configuration(cfg)?;
    let mut out = Vec::new();
    let u = match cfg.control {
        ControlValues::Optimize => {
            let p = problem(cfg, c0.clone())?;
            let report = solve(&p, &p.zero_control(), cfg.seed)?;
            write_solve(&report, cfg, dir, &mut out)?;
            report.control
        }
        _ => cfg.fixed_control()?,
    };
    let traj = integrate(&c0, &u, &cfg.kernel, &cfg.grid)?;
    write_run(&traj, &u, &c0, cfg, dir, &mut out)?;
    Ok(out)
}

fn optimize(cfg: &ExperimentConfig, dir: &Path) -> leadfollow::Result<Vec<PathBuf>> {
    let c0 = initial_configuration(cfg)?;
    let p = problem(cfg, c0.clone())?;
    let u0 = cfg.fixed_control()?;
    let report = solve(&p, &u0, cfg.seed)?;
    let mut out = Vec::new();
    write_solve(&report, cfg, dir, &mut out)?;
    let traj = integrate(&c0, &report.control, &cfg.kernel, &cfg.grid)?;
    write_run(&traj, &report.control, &c0, cfg, dir, &mut out)?;
    Ok(out)
}
