//! Flat `key = value` experiment configuration.
//!
//! Lines may carry `#` comments; lists are comma-separated. Solver-specific
//! step sizes use a dotted prefix, e.g. `bgd.eta = 0.05` or
//! `gd.eta_grid = true`. Unknown and duplicate keys are rejected so a typo
//! cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use bregopt::solvers::Variant;
use serde::Serialize;

/// Parse or validation failure, with the offending line when known.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

/// Reference function for the single-block Bregman solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelChoice {
    Euclidean,
    Power { alpha: f64, sigma: f64, degree: u32 },
}

/// Reference function for the two-block Bregman solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BiKernelChoice {
    Euclidean,
    /// `(½‖x‖² + 1)(½‖y‖² + 1)`.
    BiQuadratic,
    /// Product of two power factors sharing `alpha`/`sigma`.
    BiPower { alpha: f64, sigma: f64, degree1: u32, degree2: u32 },
}

/// Step-size policy for one solver. Absent both fields, the harness uses
/// `0.9 / L_est` from the sampled smoothness estimate.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EtaOverride {
    pub eta: Option<f64>,
    pub eta_grid: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub lambda: f64,
    pub symmetric: bool,
    pub seed: u64,
    pub scaling: f64,
    pub solvers: Vec<Variant>,
    pub init_scales: Vec<f64>,
    pub reps: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub output_dir: PathBuf,
    pub kernel: KernelChoice,
    pub bi_kernel: BiKernelChoice,
    pub overrides: Vec<(Variant, EtaOverride)>,
}

impl ExperimentConfig {
    pub fn override_for(&self, solver: Variant) -> EtaOverride {
        self.overrides
            .iter()
            .find(|(v, _)| *v == solver)
            .map(|(_, o)| *o)
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.solvers.is_empty() {
            return Err(err(None, "at least one solver is required"));
        }
        if self.r == 0 || self.r > self.n.min(self.m) {
            return Err(err(None, format!("r = {} must satisfy 1 <= r <= min(n, m)", self.r)));
        }
        if self.symmetric && self.n != self.m {
            return Err(err(None, "a symmetric instance requires n = m"));
        }
        if !self.symmetric {
            for v in &self.solvers {
                if !v.is_bi() {
                    return Err(err(
                        None,
                        format!("solver {v} factors a symmetric matrix; set symmetric = true"),
                    ));
                }
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(err(None, "lambda must be finite and nonnegative"));
        }
        if !(self.scaling.is_finite() && self.scaling > 0.0) {
            return Err(err(None, "scaling must be finite and positive"));
        }
        if self.init_scales.is_empty() {
            return Err(err(None, "init_scales must be non-empty"));
        }
        for s in &self.init_scales {
            if !(s.is_finite() && *s > 0.0) {
                return Err(err(None, format!("init scale {s} must be finite and positive")));
            }
        }
        if self.reps == 0 {
            return Err(err(None, "reps must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(err(None, "max_iters must be at least 1"));
        }
        for (v, o) in &self.overrides {
            if !self.solvers.contains(v) {
                return Err(err(None, format!("{v}.eta set but {v} is not in solvers")));
            }
            if o.eta.is_some() && o.eta_grid {
                return Err(err(None, format!("{v}: eta and eta_grid are mutually exclusive")));
            }
            if let Some(e) = o.eta {
                if !(e.is_finite() && e > 0.0) {
                    return Err(err(None, format!("{v}.eta = {e} must be finite and positive")));
                }
            }
        }
        Ok(())
    }
}

/// Raw `key -> (value, line)` map with duplicate detection.
fn tokenize(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(Some(line_no), format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(err(Some(line_no), "empty key"));
        }
        if let Some((_, prev)) = map.insert(key.clone(), (value, line_no)) {
            return Err(err(
                Some(line_no),
                format!("duplicate key `{key}` (first set on line {prev})"),
            ));
        }
    }
    Ok(map)
}

struct Raw {
    map: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse::<T>()
                .map_err(|_| err(Some(line), format!("cannot parse `{key} = {v}`"))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Err(err(None, format!("missing required key `{key}`"))),
            Some((v, line)) => v
                .parse::<T>()
                .map_err(|_| err(Some(line), format!("cannot parse `{key} = {v}`"))),
        }
    }

    fn list<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|_| err(Some(line), format!("cannot parse `{s}` in `{key}`")))
                })
                .collect(),
        }
    }
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw { map: tokenize(text)? };

    let n: usize = raw.required("n")?;
    let m: usize = raw.parse("m", n)?;
    let r: usize = raw.required("r")?;
    let lambda: f64 = raw.parse("lambda", 1.0)?;
    let symmetric: bool = raw.parse("symmetric", true)?;
    let seed: u64 = raw.parse("seed", 0)?;
    let scaling: f64 = raw.parse("scaling", 1.0)?;

    let solver_names: Vec<String> = raw.list("solvers", Vec::new())?;
    if solver_names.is_empty() {
        return Err(err(None, "missing required key `solvers`"));
    }
    let mut solvers = Vec::with_capacity(solver_names.len());
    for name in &solver_names {
        let v = Variant::parse(name)
            .map_err(|_| err(None, format!("unknown solver `{name}` in `solvers`")))?;
        if solvers.contains(&v) {
            return Err(err(None, format!("solver `{name}` listed twice")));
        }
        solvers.push(v);
    }

    let init_scales: Vec<f64> = raw.list("init_scales", vec![1.0])?;
    let reps: usize = raw.parse("reps", 1)?;
    let max_iters: usize = raw.parse("max_iters", 50_000)?;
    let grad_tol: f64 = raw.parse("grad_tol", 1e-8)?;
    let step_tol: f64 = raw.parse("step_tol", 1e-10)?;
    let output_dir: PathBuf =
        PathBuf::from(raw.take("output_dir").map(|(v, _)| v).unwrap_or_else(|| "bregopt-out".into()));

    let alpha: f64 = raw.parse("alpha", 1.0)?;
    let sigma: f64 = raw.parse("sigma", 1.0)?;
    let degree: u32 = raw.parse("degree", 4)?;
    let kernel = match raw.take("kernel") {
        None => KernelChoice::Power { alpha, sigma, degree },
        Some((v, line)) => match v.as_str() {
            "euclidean" => KernelChoice::Euclidean,
            "power" => KernelChoice::Power { alpha, sigma, degree },
            other => return Err(err(Some(line), format!("unknown kernel `{other}`"))),
        },
    };

    let degree1: u32 = raw.parse("degree1", 4)?;
    let degree2: u32 = raw.parse("degree2", 4)?;
    let bi_kernel = match raw.take("bi_kernel") {
        None => BiKernelChoice::BiQuadratic,
        Some((v, line)) => match v.as_str() {
            "euclidean" => BiKernelChoice::Euclidean,
            "bi_quadratic" => BiKernelChoice::BiQuadratic,
            "bi_power" => BiKernelChoice::BiPower { alpha, sigma, degree1, degree2 },
            other => return Err(err(Some(line), format!("unknown bi_kernel `{other}`"))),
        },
    };

    // Remaining keys must be `<solver>.eta` or `<solver>.eta_grid`.
    let mut overrides: Vec<(Variant, EtaOverride)> = Vec::new();
    let leftover: Vec<(String, (String, usize))> = std::mem::take(&mut raw.map).into_iter().collect();
    for (key, (value, line)) in leftover {
        let Some((prefix, field)) = key.split_once('.') else {
            return Err(err(Some(line), format!("unknown key `{key}`")));
        };
        let solver = Variant::parse(prefix)
            .map_err(|_| err(Some(line), format!("unknown key `{key}`")))?;
        let entry = match overrides.iter_mut().find(|(v, _)| *v == solver) {
            Some((_, o)) => o,
            None => {
                overrides.push((solver, EtaOverride::default()));
                &mut overrides.last_mut().expect("just pushed").1
            }
        };
        match field {
            "eta" => {
                entry.eta = Some(value.parse::<f64>().map_err(|_| {
                    err(Some(line), format!("cannot parse `{key} = {value}`"))
                })?);
            }
            "eta_grid" => {
                entry.eta_grid = value.parse::<bool>().map_err(|_| {
                    err(Some(line), format!("cannot parse `{key} = {value}`"))
                })?;
            }
            other => {
                return Err(err(
                    Some(line),
                    format!("unknown per-solver key `{other}` (expected eta or eta_grid)"),
                ));
            }
        }
    }

    let cfg = ExperimentConfig {
        n,
        m,
        r,
        lambda,
        symmetric,
        seed,
        scaling,
        solvers,
        init_scales,
        reps,
        max_iters,
        grad_tol,
        step_tol,
        output_dir,
        kernel,
        bi_kernel,
        overrides,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text)
}
