//! `bregopt` command line: run experiment sweeps, print oracle objectives,
//! certify saved iterates, and tune step-size grids.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 one or more runs
//! failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bregopt::diagnostics::certify_second_order;
use bregopt::objectives::{
    bmf_nonsymmetric, bmf_objective_of_oracle, bmf_symmetric, oracle_solution, JointObjective,
    MatrixPcaInstance,
};
use bregopt_bench::config::{self, ExperimentConfig};
use bregopt_bench::experiment::{best_of_grid, run_experiment, ExperimentSummary, RunRecord};
use clap::{Parser, Subcommand};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "bregopt", about = "Benchmark harness for Bregman first-order solvers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment sweep described by a config file.
    Run {
        /// Path to a `key = value` experiment config.
        config: PathBuf,
    },
    /// Print the closed-form oracle objective for a saved instance.
    Oracle {
        /// Instance base path (reads `<base>.mat` and `<base>.json`).
        instance: PathBuf,
    },
    /// Second-order stationarity report for a saved iterate.
    Certify {
        /// Instance base path (reads `<base>.mat` and `<base>.json`).
        instance: PathBuf,
        /// Iterate file: whitespace- or comma-separated coordinates.
        point: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        grad_tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        curv_tol: f64,
    },
    /// Run every solver over the 8-point step-size grid and report winners.
    Grid {
        /// Path to a `key = value` experiment config.
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = match config::parse_file(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let summary = run_experiment(&cfg)?;
            report_runs(&summary);
            println!("summary: {}", cfg.output_dir.join("summary.json").display());
            Ok(exit_for(&summary))
        }
        Cmd::Oracle { instance } => {
            let inst = load_instance(&instance)?;
            let sol = oracle_solution(&inst)?;
            let factored = bmf_objective_of_oracle(&inst, &sol)?;
            println!("oracle value      {}", sol.value);
            println!("factored value    {factored}");
            let spectrum: Vec<String> =
                sol.kept_spectrum.iter().map(|s| format!("{s}")).collect();
            println!("kept spectrum     {}", spectrum.join(" "));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Certify { instance, point, grad_tol, curv_tol } => {
            let inst = load_instance(&instance)?;
            let x = read_point(&point)?;
            let report = certify_point(&inst, &x, grad_tol, curv_tol)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Grid { config } => {
            let mut cfg = match config::parse_file(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            force_grid(&mut cfg);
            let summary = run_experiment(&cfg)?;
            report_grid(&summary);
            println!("summary: {}", cfg.output_dir.join("summary.json").display());
            Ok(exit_for(&summary))
        }
    }
}

fn exit_for(summary: &ExperimentSummary) -> ExitCode {
    if summary.failed_runs() > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn load_instance(base: &Path) -> Result<MatrixPcaInstance> {
    MatrixPcaInstance::load(base)
        .with_context(|| format!("loading instance {}", base.display()))
}

fn read_point(path: &Path) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading point file {}", path.display()))?;
    let vals: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let vals = vals.with_context(|| format!("parsing point file {}", path.display()))?;
    if vals.is_empty() {
        bail!("point file {} is empty", path.display());
    }
    Ok(DVector::from_vec(vals))
}

fn certify_point(
    inst: &MatrixPcaInstance,
    x: &DVector<f64>,
    grad_tol: f64,
    curv_tol: f64,
) -> Result<bregopt::diagnostics::StationarityReport> {
    let r = inst.rank();
    let single_dim = inst.nrows() * r;
    let joint_dim = (inst.nrows() + inst.ncols()) * r;
    if inst.is_symmetric() && x.len() == single_dim {
        let f = bmf_symmetric(inst)?;
        return Ok(certify_second_order(&f, x, grad_tol, curv_tol)?);
    }
    if x.len() == joint_dim {
        let joint_inst = inst.as_nonsymmetric();
        let f = bmf_nonsymmetric(&joint_inst)?;
        let joint = JointObjective::new(&f);
        return Ok(certify_second_order(&joint, x, grad_tol, curv_tol)?);
    }
    bail!(
        "point length {} matches neither the factor size {} nor the joint size {}",
        x.len(),
        single_dim,
        joint_dim
    )
}

fn force_grid(cfg: &mut ExperimentConfig) {
    for (_, o) in cfg.overrides.iter_mut() {
        o.eta = None;
        o.eta_grid = true;
    }
    for &solver in &cfg.solvers {
        if !cfg.overrides.iter().any(|(v, _)| *v == solver) {
            cfg.overrides.push((
                solver,
                bregopt_bench::config::EtaOverride { eta: None, eta_grid: true },
            ));
        }
    }
}

fn describe(r: &RunRecord) -> String {
    let status = match (&r.error, r.status) {
        (Some(e), _) => format!("FAILED ({e})"),
        (None, Some(s)) => format!("{}", serde_json::to_string(&s).unwrap().trim_matches('"')),
        (None, None) => "unknown".into(),
    };
    format!(
        "{:<6} scale {:<6} eta {:.3e} ({:<5}) rep {}  {:<14} iters {:<7} gap {:.3e}",
        r.solver.to_string(),
        r.init_scale,
        r.eta,
        r.eta_source,
        r.rep,
        status,
        r.iters,
        r.rel_gap
    )
}

fn report_runs(summary: &ExperimentSummary) {
    for r in &summary.runs {
        println!("{}", describe(r));
    }
}

fn report_grid(summary: &ExperimentSummary) {
    report_runs(summary);
    for &solver in &summary.config.solvers {
        for &scale in &summary.config.init_scales {
            let slice: Vec<&RunRecord> = summary
                .runs
                .iter()
                .filter(|r| r.solver == solver && r.init_scale == scale)
                .collect();
            match best_of_grid(&slice) {
                Some(best) => println!(
                    "best {:<6} scale {:<6} -> eta {:.3e} (iters to 1e-4 gap: {})",
                    solver.to_string(),
                    scale,
                    best.eta,
                    best.iters_to_gap_1e4.map_or("never".into(), |i| i.to_string()),
                ),
                None => println!(
                    "best {:<6} scale {:<6} -> no usable grid point",
                    solver.to_string(),
                    scale
                ),
            }
        }
    }
}
