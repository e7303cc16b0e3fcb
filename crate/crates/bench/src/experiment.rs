//! Solver sweeps against the matrix-PCA oracle.
//!
//! One experiment runs every `(solver, init scale, step size, repetition)`
//! combination from the config, in parallel across runs, and emits per-run
//! trace CSVs, final iterates, a long-format plot CSV of the oracle gap, and
//! a summary JSON. Everything derives from the config seed, so repeated runs
//! produce byte-identical outputs apart from the wall-time trace column.

use std::path::PathBuf;

use anyhow::{Context, Result};
use bregopt::diagnostics::{certify_second_order, StationarityReport};
use bregopt::kernels::{
    estimate_relative_bi_smoothness, estimate_relative_smoothness, BiKernel, Kernel, PowerParams,
};
use bregopt::objectives::{
    bmf_nonsymmetric, bmf_symmetric, bmf_objective_of_oracle, oracle_solution, BiObjective,
    JointObjective, MatrixPcaInstance, NonsymmetricBmf, Objective, SymmetricBmf,
};
use bregopt::solvers::{
    random_init, run_bi, run_single, RunOutcome, RunStatus, SolverConfig, Variant,
};
use rayon::prelude::*;
use serde::Serialize;

const SMOOTHNESS_SAMPLES: usize = 64;
const SMOOTHNESS_SAFETY: f64 = 2.0;
const GRID_POINTS: usize = 8;
/// Solvers may match the oracle to roundoff but must never beat it.
const ORACLE_SLACK: f64 = 1e-8;

use crate::config::{BiKernelChoice, ExperimentConfig, KernelChoice};

/// 8 log-spaced step sizes spanning `[1e-4, 1] / l_est`, the top point pulled
/// strictly below `1/l_est` so it passes the `eta < 1/L` validation.
pub fn eta_grid(l_est: f64) -> Vec<f64> {
    let lo = 1e-4 / l_est;
    let hi = (1.0 - 1e-12) / l_est;
    let ratio = (hi / lo).ln();
    (0..GRID_POINTS)
        .map(|i| lo * (ratio * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// splitmix64 finalizer over the config seed and a role tag, so every random
/// stream in a sweep is independent yet reproducible.
fn mix(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSpec {
    pub solver: Variant,
    pub init_scale: f64,
    pub scale_idx: usize,
    pub eta: f64,
    pub eta_index: usize,
    pub eta_source: &'static str,
    pub rep: usize,
    pub smoothness_estimate: f64,
    pub run_id: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub solver: Variant,
    pub init_scale: f64,
    pub eta: f64,
    pub eta_source: &'static str,
    pub eta_index: usize,
    pub rep: usize,
    pub smoothness_estimate: f64,
    pub status: Option<RunStatus>,
    pub iters: usize,
    pub final_value: f64,
    pub final_grad_norm: f64,
    /// `(final_f - oracle) / (1 + |oracle|)`.
    pub rel_gap: f64,
    pub min_decrease_slack: f64,
    pub iters_to_gap_1e2: Option<usize>,
    pub iters_to_gap_1e4: Option<usize>,
    pub iters_to_gap_1e6: Option<usize>,
    pub oracle_dominated: bool,
    pub stationarity: Option<StationarityReport>,
    pub error: Option<String>,
    pub trace_file: Option<String>,
    pub point_file: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    /// Oracle objective of the symmetric formulation, when any single-block
    /// solver runs.
    pub oracle_symmetric: Option<f64>,
    /// Oracle objective of the two-block formulation, when any two-block
    /// solver runs.
    pub oracle_joint: Option<f64>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentSummary {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

struct PlotRow {
    solver: Variant,
    init_scale: f64,
    eta: f64,
    rep: usize,
    iter: usize,
    rel_gap: f64,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    sym: Option<SymmetricBmf>,
    bi: Option<NonsymmetricBmf>,
    oracle_sym: Option<f64>,
    oracle_joint: Option<f64>,
    traces_dir: PathBuf,
    points_dir: PathBuf,
}

fn single_kernel(choice: KernelChoice, dim: usize) -> Result<Kernel> {
    Ok(match choice {
        KernelChoice::Euclidean => Kernel::euclidean(dim),
        KernelChoice::Power { alpha, sigma, degree } => {
            Kernel::power(PowerParams::new(alpha, sigma, degree)?, dim)
        }
    })
}

fn bi_kernel(choice: BiKernelChoice, dim_x: usize, dim_y: usize) -> Result<BiKernel> {
    Ok(match choice {
        BiKernelChoice::Euclidean => BiKernel::euclidean(dim_x, dim_y),
        BiKernelChoice::BiQuadratic => BiKernel::quadratic(dim_x, dim_y),
        BiKernelChoice::BiPower { alpha, sigma, degree1, degree2 } => BiKernel::product(
            PowerParams::new(alpha, sigma, degree1)?,
            PowerParams::new(alpha, sigma, degree2)?,
            dim_x,
            dim_y,
        ),
    })
}

fn kernel_for(ctx: &Ctx, solver: Variant) -> Result<Kernel> {
    let dim = ctx.cfg.n * ctx.cfg.r;
    match solver {
        Variant::Gd => Ok(Kernel::euclidean(dim)),
        _ => single_kernel(ctx.cfg.kernel, dim),
    }
}

fn bi_kernel_for(ctx: &Ctx, solver: Variant) -> Result<BiKernel> {
    let (dx, dy) = (ctx.cfg.n * ctx.cfg.r, ctx.cfg.m * ctx.cfg.r);
    match solver {
        Variant::Palm => Ok(BiKernel::euclidean(dx, dy)),
        _ => bi_kernel(ctx.cfg.bi_kernel, dx, dy),
    }
}

/// Sampling radius covering the Gaussian init at the given scale: twice the
/// expected init norm plus one.
fn sample_radius(scale: f64, dim: usize) -> f64 {
    2.0 * scale * (dim as f64).sqrt() + 1.0
}

fn estimate_l(ctx: &Ctx, solver: Variant, solver_idx: usize, scale_idx: usize) -> Result<f64> {
    let scale = ctx.cfg.init_scales[scale_idx];
    let seed = mix(ctx.cfg.seed, 0xE57, solver_idx as u64, scale_idx as u64);
    if solver.is_bi() {
        let f = ctx.bi.as_ref().expect("bi objective built for bi solvers");
        let k = bi_kernel_for(ctx, solver)?;
        let radius = sample_radius(scale, f.dim_x().max(f.dim_y()));
        let (l1, l2) =
            estimate_relative_bi_smoothness(f, &k, SMOOTHNESS_SAMPLES, radius, seed, SMOOTHNESS_SAFETY)?;
        Ok(l1.max(l2))
    } else {
        let f = ctx.sym.as_ref().expect("symmetric objective built for single-block solvers");
        let k = kernel_for(ctx, solver)?;
        let radius = sample_radius(scale, f.dim());
        Ok(estimate_relative_smoothness(
            f,
            &k,
            SMOOTHNESS_SAMPLES,
            radius,
            seed,
            SMOOTHNESS_SAFETY,
        )?)
    }
}

fn build_specs(ctx: &Ctx) -> Result<Vec<RunSpec>> {
    let cfg = ctx.cfg;
    let mut specs = Vec::new();
    for (solver_idx, &solver) in cfg.solvers.iter().enumerate() {
        let choice = cfg.override_for(solver);
        for scale_idx in 0..cfg.init_scales.len() {
            let l_est = estimate_l(ctx, solver, solver_idx, scale_idx)?;
            let etas: Vec<(f64, &'static str)> = match (choice.eta, choice.eta_grid) {
                (Some(e), _) => vec![(e, "fixed")],
                (None, true) => eta_grid(l_est).into_iter().map(|e| (e, "grid")).collect(),
                (None, false) => vec![(0.9 / l_est, "auto")],
            };
            for (eta_index, (eta, eta_source)) in etas.into_iter().enumerate() {
                for rep in 0..cfg.reps {
                    specs.push(RunSpec {
                        solver,
                        init_scale: cfg.init_scales[scale_idx],
                        scale_idx,
                        eta,
                        eta_index,
                        eta_source,
                        rep,
                        smoothness_estimate: l_est,
                        run_id: format!("{solver}_s{scale_idx}_e{eta_index}_r{rep}"),
                    });
                }
            }
        }
    }
    Ok(specs)
}

fn failed_record(spec: &RunSpec, message: String) -> RunRecord {
    RunRecord {
        solver: spec.solver,
        init_scale: spec.init_scale,
        eta: spec.eta,
        eta_source: spec.eta_source,
        eta_index: spec.eta_index,
        rep: spec.rep,
        smoothness_estimate: spec.smoothness_estimate,
        status: None,
        iters: 0,
        final_value: f64::NAN,
        final_grad_norm: f64::NAN,
        rel_gap: f64::NAN,
        min_decrease_slack: f64::NAN,
        iters_to_gap_1e2: None,
        iters_to_gap_1e4: None,
        iters_to_gap_1e6: None,
        oracle_dominated: false,
        stationarity: None,
        error: Some(message),
        trace_file: None,
        point_file: None,
    }
}

fn solver_config(cfg: &ExperimentConfig, spec: &RunSpec) -> SolverConfig {
    let mut sc = SolverConfig::new(spec.eta, spec.smoothness_estimate);
    sc.max_iters = cfg.max_iters;
    sc.grad_tol = cfg.grad_tol;
    sc.step_tol = cfg.step_tol;
    sc
}

fn execute(ctx: &Ctx, spec: &RunSpec) -> bregopt::Result<RunOutcome> {
    let cfg = ctx.cfg;
    let sc = solver_config(cfg, spec);
    if spec.solver.is_bi() {
        let f = ctx.bi.as_ref().expect("bi objective present");
        let k = bi_kernel_for(ctx, spec.solver).map_err(|e| bregopt::Error::InvalidParameter {
            name: "bi_kernel",
            value: format!("{e}"),
            reason: "kernel construction failed",
        })?;
        let x0 = random_init(f.dim_x(), spec.init_scale, mix(cfg.seed, 2, spec.scale_idx as u64, spec.rep as u64));
        let y0 = random_init(f.dim_y(), spec.init_scale, mix(cfg.seed, 3, spec.scale_idx as u64, spec.rep as u64));
        run_bi(f, &k, spec.solver, &x0, &y0, &sc)
    } else {
        let f = ctx.sym.as_ref().expect("symmetric objective present");
        let k = kernel_for(ctx, spec.solver).map_err(|e| bregopt::Error::InvalidParameter {
            name: "kernel",
            value: format!("{e}"),
            reason: "kernel construction failed",
        })?;
        let x0 = random_init(f.dim(), spec.init_scale, mix(cfg.seed, 1, spec.scale_idx as u64, spec.rep as u64));
        run_single(f, &k, spec.solver, &x0, &sc)
    }
}

fn run_one(ctx: &Ctx, spec: &RunSpec) -> (RunRecord, Vec<PlotRow>) {
    let oracle = if spec.solver.is_bi() { ctx.oracle_joint } else { ctx.oracle_sym }
        .expect("oracle computed for every solver family");
    let out = match execute(ctx, spec) {
        Ok(out) => out,
        Err(e) => return (failed_record(spec, e.to_string()), Vec::new()),
    };

    let gap = |f: f64| (f - oracle) / (1.0 + oracle.abs());
    let mark = |thr: f64| {
        out.trace.rows.iter().find(|row| gap(row.f) <= thr).map(|row| row.iter)
    };
    let rel_gap = gap(out.final_value);
    let oracle_dominated = !(rel_gap < -ORACLE_SLACK);

    let mut record = RunRecord {
        solver: spec.solver,
        init_scale: spec.init_scale,
        eta: spec.eta,
        eta_source: spec.eta_source,
        eta_index: spec.eta_index,
        rep: spec.rep,
        smoothness_estimate: spec.smoothness_estimate,
        status: Some(out.status),
        iters: out.iters,
        final_value: out.final_value,
        final_grad_norm: out.final_grad_norm,
        rel_gap,
        min_decrease_slack: out.min_decrease_slack,
        iters_to_gap_1e2: mark(1e-2),
        iters_to_gap_1e4: mark(1e-4),
        iters_to_gap_1e6: mark(1e-6),
        oracle_dominated,
        stationarity: None,
        error: None,
        trace_file: None,
        point_file: None,
    };
    if !oracle_dominated {
        record.error = Some(format!(
            "final objective beats the oracle: rel gap {rel_gap:.3e} < -{ORACLE_SLACK:.0e}"
        ));
    }

    let trace_path = ctx.traces_dir.join(format!("{}.csv", spec.run_id));
    match out.trace.write_csv(&trace_path) {
        Ok(()) => record.trace_file = Some(format!("traces/{}.csv", spec.run_id)),
        Err(e) => record.error = Some(format!("trace write failed: {e}")),
    }
    let point_path = ctx.points_dir.join(format!("{}.csv", spec.run_id));
    let point_text: String =
        out.final_point.iter().map(|v| format!("{v}\n")).collect();
    match std::fs::write(&point_path, point_text) {
        Ok(()) => record.point_file = Some(format!("points/{}.csv", spec.run_id)),
        Err(e) => record.error = Some(format!("point write failed: {e}")),
    }

    let converged =
        matches!(out.status, RunStatus::ConvergedGrad | RunStatus::ConvergedStep);
    if converged {
        let eig_tol = 1e-4 * (1.0 + out.final_value.abs());
        let report = if spec.solver.is_bi() {
            let f = ctx.bi.as_ref().expect("bi objective present");
            let joint = JointObjective::new(f);
            certify_second_order(&joint, &out.final_point, 1e-6, eig_tol)
        } else {
            let f = ctx.sym.as_ref().expect("symmetric objective present");
            certify_second_order(f, &out.final_point, 1e-6, eig_tol)
        };
        match report {
            Ok(rep) => record.stationarity = Some(rep),
            Err(e) => record.error = Some(format!("certification failed: {e}")),
        }
    }

    let last_idx = out.trace.rows.len().saturating_sub(1);
    let plot = out
        .trace
        .rows
        .iter()
        .enumerate()
        .filter(|(idx, row)| row.iter <= 1_000 || row.iter % 10 == 0 || *idx == last_idx)
        .map(|(_, row)| PlotRow {
            solver: spec.solver,
            init_scale: spec.init_scale,
            eta: spec.eta,
            rep: spec.rep,
            iter: row.iter,
            rel_gap: gap(row.f),
        })
        .collect();
    (record, plot)
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let threads = std::env::var("BREGOPT_THREADS").ok()?.parse::<usize>().ok()?;
    if threads == 0 {
        return None;
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()
}

/// Run the whole sweep described by `cfg`. Individual run failures are
/// recorded in the summary (see [`ExperimentSummary::failed_runs`]); only
/// setup problems (bad instance, unwritable output directory) abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let needs_single = cfg.solvers.iter().any(|v| !v.is_bi());
    let needs_bi = cfg.solvers.iter().any(|v| v.is_bi());

    let instance = if cfg.symmetric {
        MatrixPcaInstance::random_symmetric(cfg.n, cfg.r, cfg.lambda, cfg.scaling, cfg.seed)?
    } else {
        MatrixPcaInstance::random_nonsymmetric(cfg.n, cfg.m, cfg.r, cfg.lambda, cfg.scaling, cfg.seed)?
    };
    let joint_instance = instance.as_nonsymmetric();

    let sym = if needs_single { Some(bmf_symmetric(&instance)?) } else { None };
    let bi = if needs_bi { Some(bmf_nonsymmetric(&joint_instance)?) } else { None };
    let oracle_sym = if needs_single {
        let sol = oracle_solution(&instance)?;
        Some(bmf_objective_of_oracle(&instance, &sol)?)
    } else {
        None
    };
    let oracle_joint = if needs_bi {
        let sol = oracle_solution(&joint_instance)?;
        Some(bmf_objective_of_oracle(&joint_instance, &sol)?)
    } else {
        None
    };

    let traces_dir = cfg.output_dir.join("traces");
    let points_dir = cfg.output_dir.join("points");
    std::fs::create_dir_all(&traces_dir)
        .with_context(|| format!("creating {}", traces_dir.display()))?;
    std::fs::create_dir_all(&points_dir)
        .with_context(|| format!("creating {}", points_dir.display()))?;
    instance.save(&cfg.output_dir.join("instance"))?;

    let ctx = Ctx {
        cfg,
        sym,
        bi,
        oracle_sym,
        oracle_joint,
        traces_dir,
        points_dir,
    };
    let specs = build_specs(&ctx)?;

    let sweep = || {
        specs
            .par_iter()
            .map(|spec| run_one(&ctx, spec))
            .collect::<Vec<_>>()
    };
    let results = match thread_pool() {
        Some(pool) => pool.install(sweep),
        None => sweep(),
    };

    let mut runs = Vec::with_capacity(results.len());
    let mut plot = String::from("solver,init_scale,eta,rep,iter,rel_gap\n");
    for (record, rows) in results {
        for row in rows {
            plot.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.solver, row.init_scale, row.eta, row.rep, row.iter, row.rel_gap
            ));
        }
        runs.push(record);
    }
    let plot_path = cfg.output_dir.join("plot_data.csv");
    std::fs::write(&plot_path, plot)
        .with_context(|| format!("writing {}", plot_path.display()))?;

    let summary = ExperimentSummary {
        config: cfg.clone(),
        oracle_symmetric: oracle_sym,
        oracle_joint,
        runs,
    };
    let summary_path = cfg.output_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    std::fs::write(&summary_path, body + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;
    Ok(summary)
}

/// Pick the grid winner for one `(solver, init scale)` slice: fewest
/// iterations to oracle gap `1e-4`, ties broken by smaller final gap, then by
/// smaller step size. Diverged and failed runs are never selected; `None`
/// when nothing survives.
pub fn best_of_grid<'a>(runs: &[&'a RunRecord]) -> Option<&'a RunRecord> {
    runs.iter()
        .filter(|r| r.error.is_none())
        .filter(|r| {
            !matches!(r.status, None | Some(RunStatus::Diverged) | Some(RunStatus::SubproblemFailed))
        })
        .min_by(|a, b| {
            let ka = (a.iters_to_gap_1e4.unwrap_or(usize::MAX), a.rel_gap, a.eta);
            let kb = (b.iters_to_gap_1e4.unwrap_or(usize::MAX), b.rel_gap, b.eta);
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
        })
        .copied()
}
