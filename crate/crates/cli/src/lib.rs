//! Command implementations behind the `vortex` binary.
//!
//! Each `cmd_*` function takes a [`RunConfig`] and returns an [`Outcome`]:
//! the text to write (JSON or CSV), an optional diagnostic for stderr, and the
//! process exit code. Nothing here touches stdout or exits the process, so the
//! commands can be driven directly from tests.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use graph_vortex::constraint::{admissibility, moments};
use graph_vortex::problem::graph_from_json;
use graph_vortex::{
    critical_lambda, monotone_solve, AbelianError, AbelianOptions, AbelianProblem, CartanError, MinimizeOptions,
    ProblemError, ProblemFile, SeedStrategy, SolveError, SolveReport, VortexProblem, WeightedGraph,
};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_BELOW_THRESHOLD: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "VORTEX_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: ProblemError,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Single(f64),
    Range {
        min: f64,
        max: f64,
        steps: usize,
        log: bool,
    },
}

impl LambdaSpec {
    /// Couplings in ascending order. Log spacing is geometric and hits both
    /// ends exactly.
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        match *self {
            Self::Single(l) => {
                check_lambda(l)?;
                Ok(vec![l])
            }
            Self::Range { min, max, steps, log } => {
                check_lambda(min)?;
                check_lambda(max)?;
                if steps == 0 {
                    return Err(CliError::Usage("--steps must be at least 1".into()));
                }
                if max < min {
                    return Err(CliError::Usage(format!(
                        "--lambda-max {max} is below --lambda-min {min}"
                    )));
                }
                if steps == 1 {
                    return Ok(vec![min]);
                }
                let last = (steps - 1) as f64;
                Ok((0..steps)
                    .map(|k| {
                        let s = k as f64 / last;
                        if k == steps - 1 {
                            max
                        } else if log {
                            min * (max / min).powf(s)
                        } else {
                            min + (max - min) * s
                        }
                    })
                    .collect())
            }
        }
    }
}

fn check_lambda(l: f64) -> Result<(), CliError> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "coupling must be positive and finite, got {l}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub problem: PathBuf,
    pub lambda: Option<LambdaSpec>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: SeedStrategy,
    pub find_critical: bool,
    pub bracket_tol: f64,
    /// Sweep workers; `None` reads [`THREADS_ENV`], then the available parallelism.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(graph: impl Into<PathBuf>, problem: impl Into<PathBuf>) -> Self {
        Self {
            graph: Some(graph.into()),
            problem: problem.into(),
            lambda: None,
            tol: None,
            max_iter: None,
            seed: SeedStrategy::NegU0,
            find_critical: false,
            bracket_tol: 1e-4,
            threads: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(LambdaSpec::Single(lambda));
        self
    }

    fn minimize_options(&self) -> MinimizeOptions {
        let mut o = MinimizeOptions {
            seed: self.seed,
            ..MinimizeOptions::default()
        };
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        o
    }

    fn abelian_options(&self) -> AbelianOptions {
        let mut o = AbelianOptions::default();
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        o
    }

    fn single_lambda(&self) -> Result<f64, CliError> {
        match self.lambda {
            Some(LambdaSpec::Single(l)) => {
                check_lambda(l)?;
                Ok(l)
            }
            Some(LambdaSpec::Range { .. }) => Err(CliError::Usage("this command takes --lambda, not a range".into())),
            None => Err(CliError::Usage("--lambda is required".into())),
        }
    }

    fn graph_path(&self) -> Result<&Path, CliError> {
        self.graph
            .as_deref()
            .ok_or_else(|| CliError::Usage("--graph is required".into()))
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    /// JSON or CSV body; empty when the command failed before producing one.
    pub output: String,
    pub message: Option<String>,
}

impl Outcome {
    fn ok(output: String) -> Self {
        Self {
            code: EXIT_CONVERGED,
            output,
            message: None,
        }
    }

    fn input_error(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            output: String::new(),
            message: Some(format!("input error: {e}")),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_graph(path: &Path) -> Result<WeightedGraph, CliError> {
    graph_from_json(&read(path)?).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_problem(path: &Path) -> Result<ProblemFile, CliError> {
    ProblemFile::from_json(&read(path)?).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn load_vortex_problem(cfg: &RunConfig) -> Result<VortexProblem, CliError> {
    let graph = load_graph(cfg.graph_path()?)?;
    let problem = load_problem(&cfg.problem)?;
    let (sys, vort) = problem.resolve(&graph)?;
    VortexProblem::new(graph, sys, vort).map_err(|e| CliError::Usage(e.to_string()))
}

/// JSON with shortest round-trip float formatting.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

/// Exit code for a failed solve: 2 below the threshold, 1 for bad input,
/// 3 for everything that is a failure to converge.
pub fn solve_error_code(e: &SolveError) -> i32 {
    match e {
        SolveError::LambdaBelowThreshold { .. } => EXIT_BELOW_THRESHOLD,
        SolveError::BadLambda(_) | SolveError::Cartan(_) | SolveError::Graph(_) => EXIT_INPUT,
        _ => EXIT_NOT_CONVERGED,
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Outcome {
    let run = || -> Result<(VortexProblem, f64), CliError> { Ok((load_vortex_problem(cfg)?, cfg.single_lambda()?)) };
    let (problem, lambda) = match run() {
        Ok(x) => x,
        Err(e) => return Outcome::input_error(e),
    };
    let result = problem
        .at(lambda)
        .and_then(|inst| inst.minimize(&cfg.minimize_options()));
    match result {
        Ok(report) => Outcome::ok(to_json(&report)),
        Err(e) => Outcome {
            code: solve_error_code(&e),
            output: e.report().map(to_json).unwrap_or_default(),
            message: Some(e.to_string()),
        },
    }
}

/// One line of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub converged: bool,
    pub j: f64,
    pub residual_inf: f64,
    pub min_t: f64,
    pub max_u_orig: f64,
    pub iterations: usize,
    /// Why the row did not converge.
    pub error: Option<String>,
    pub below_threshold: bool,
}

pub const SWEEP_HEADER: &str = "lambda,converged,J,residual_inf,min_t,max_u_orig,iterations";

impl SweepRow {
    fn from_report(r: &SolveReport) -> Self {
        Self {
            lambda: r.lambda,
            converged: r.converged,
            j: r.j_value,
            residual_inf: r.residual_inf,
            min_t: r.t.iter().copied().fold(f64::INFINITY, f64::min),
            max_u_orig: r
                .u_orig
                .components()
                .iter()
                .flat_map(|c| c.values().iter().copied())
                .fold(f64::NEG_INFINITY, f64::max),
            iterations: r.iterations,
            error: None,
            below_threshold: false,
        }
    }

    fn failed(lambda: f64, e: &SolveError) -> Self {
        let mut row = match e.report() {
            Some(r) => Self::from_report(r),
            None => Self {
                lambda,
                converged: false,
                j: f64::NAN,
                residual_inf: f64::NAN,
                min_t: f64::NAN,
                max_u_orig: f64::NAN,
                iterations: 0,
                error: None,
                below_threshold: false,
            },
        };
        row.converged = false;
        row.error = Some(e.to_string());
        row.below_threshold = matches!(e, SolveError::LambdaBelowThreshold { .. });
        row
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            float(self.lambda),
            self.converged,
            float(self.j),
            float(self.residual_inf),
            float(self.min_t),
            float(self.max_u_orig),
            self.iterations
        )
    }
}

/// Shortest round-trip form, the same one the JSON reports use.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite floats serialise")
    } else {
        x.to_string()
    }
}

pub fn sweep_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Solves every coupling in `grid` with up to `threads` workers. Rows come
/// back in grid order whatever order they finish in.
pub fn run_sweep(problem: &VortexProblem, grid: &[f64], opts: &MinimizeOptions, threads: usize) -> Vec<SweepRow> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; grid.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, grid.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= grid.len() {
                    break;
                }
                let lambda = grid[k];
                let row = match problem.at(lambda).and_then(|inst| inst.minimize(opts)) {
                    Ok(r) => SweepRow::from_report(&r),
                    Err(e) => SweepRow::failed(lambda, &e),
                };
                slots.lock().expect("no worker panics while holding the lock")[k] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every grid point is solved"))
        .collect()
}

pub fn cmd_sweep(cfg: &RunConfig) -> Outcome {
    let run = || -> Result<(VortexProblem, Vec<f64>), CliError> {
        let grid = cfg
            .lambda
            .ok_or_else(|| CliError::Usage("sweep needs --lambda-min, --lambda-max and --steps".into()))?
            .grid()?;
        Ok((load_vortex_problem(cfg)?, grid))
    };
    let (problem, grid) = match run() {
        Ok(x) => x,
        Err(e) => return Outcome::input_error(e),
    };
    let rows = run_sweep(&problem, &grid, &cfg.minimize_options(), sweep_threads(cfg.threads));
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    let converged = rows.iter().filter(|r| r.converged).count();
    let code = if converged > 0 {
        EXIT_CONVERGED
    } else if rows.iter().all(|r| r.below_threshold) {
        EXIT_BELOW_THRESHOLD
    } else {
        EXIT_NOT_CONVERGED
    };
    let message = (converged < rows.len()).then(|| {
        format!(
            "{converged} of {} couplings converged (λ₀ = {})",
            rows.len(),
            problem.lambda0()
        )
    });
    Outcome {
        code,
        output: out,
        message,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BracketReport {
    lo: f64,
    hi: f64,
    #[serde(rename = "lower_bound_16piM_over_V")]
    lower_bound: f64,
    vortex_count: usize,
}

pub fn cmd_abelian(cfg: &RunConfig) -> Outcome {
    let load = || -> Result<(WeightedGraph, Vec<usize>), CliError> {
        let graph = load_graph(cfg.graph_path()?)?;
        let problem = load_problem(&cfg.problem)?;
        let points = problem
            .flat_points()
            .iter()
            .map(|id| graph.index_of(id).map_err(ProblemError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((graph, points))
    };
    let (graph, points) = match load() {
        Ok(x) => x,
        Err(e) => return Outcome::input_error(e),
    };
    let opts = cfg.abelian_options();
    if cfg.find_critical {
        if points.is_empty() {
            return Outcome::input_error(AbelianError::NoVortices);
        }
        return match critical_lambda(&graph, &points, cfg.bracket_tol, &opts) {
            Ok(b) => Outcome::ok(to_json(&BracketReport {
                lo: b.lo,
                hi: b.hi,
                lower_bound: b.lower_bound,
                vortex_count: points.len(),
            })),
            Err(AbelianError::BadTolerance(t)) => Outcome::input_error(AbelianError::BadTolerance(t)),
            Err(e) => Outcome {
                code: EXIT_NOT_CONVERGED,
                output: String::new(),
                message: Some(e.to_string()),
            },
        };
    }
    let lambda = match cfg.single_lambda() {
        Ok(l) => l,
        Err(e) => return Outcome::input_error(e),
    };
    let result = AbelianProblem::new(&graph, &points, lambda).and_then(|p| monotone_solve(&p, &opts));
    match result {
        Ok(sol) => Outcome::ok(to_json(&sol)),
        Err(e @ (AbelianError::BadLambda(_) | AbelianError::BadTolerance(_) | AbelianError::Graph(_))) => {
            Outcome::input_error(e)
        }
        Err(e) => Outcome {
            code: EXIT_NOT_CONVERGED,
            output: String::new(),
            message: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ValidationReport {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    system: Option<SystemReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SystemReport {
    rank: usize,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    factorization_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    vortex_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    admissibility_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Admissibility margins of the `-u⁰` seed at `lambda`; all ≥ 0 means admissible.
    #[serde(skip_serializing_if = "Option::is_none")]
    seed_margins: Option<Vec<f64>>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Short name of the violated structure condition.
pub fn cartan_error_name(e: &CartanError) -> &'static str {
    match e {
        CartanError::Shape(..) => "Shape",
        CartanError::NonFinite => "NonFinite",
        CartanError::BadP { .. } => "BadP",
        CartanError::InconsistentPattern(..) | CartanError::InconsistentCycle(_) => "NotSymmetrizable",
        CartanError::Reducible(_) => "Reducible",
        CartanError::NotSymmetric(..) => "NotSymmetric",
        CartanError::SignPattern(..) => "SignPattern",
        CartanError::NotPositiveDefinite(..) => "NotPositiveDefinite",
        CartanError::InverseNotPositive { .. } => "InverseNotPositive",
        CartanError::NonpositiveR(..) => "NonpositiveR",
        CartanError::UnknownPreset(_) => "UnknownPreset",
        CartanError::RankMismatch { .. } => "RankMismatch",
        CartanError::CountMismatch { .. } => "CountMismatch",
        CartanError::Graph(_) => "Graph",
    }
}

/// Validates the Cartan data; with `--graph` also reports λ₀ and the
/// admissibility threshold, and with `--lambda` the seed margins.
pub fn cmd_validate(cfg: &RunConfig) -> Outcome {
    let problem = match load_problem(&cfg.problem) {
        Ok(p) => p,
        Err(e) => return Outcome::input_error(e),
    };
    let fail = |error: &'static str, message: String| Outcome {
        code: EXIT_INPUT,
        output: to_json(&ValidationReport {
            status: "FAIL",
            error: Some(error),
            message: Some(message.clone()),
            system: None,
        }),
        message: Some(message),
    };
    let sys = match problem.cartan.system() {
        Ok(s) => s,
        Err(ProblemError::Cartan(e)) => return fail(cartan_error_name(&e), e.to_string()),
        Err(e) => return fail("Shape", e.to_string()),
    };
    let mut report = SystemReport {
        rank: sys.rank(),
        k: rows(sys.k()),
        p: sys.p().iter().copied().collect(),
        r: sys.r().iter().copied().collect(),
        a: rows(sys.a()),
        q: rows(sys.q()),
        factorization_gap: sys.factorization_gap(),
        vortex_counts: None,
        lambda0: None,
        admissibility_threshold: None,
        lambda: None,
        seed_margins: None,
    };
    if let Some(path) = &cfg.graph {
        let graph = match load_graph(path) {
            Ok(g) => g,
            Err(e) => return Outcome::input_error(e),
        };
        let vort = match problem.resolve(&graph) {
            Ok((_, v)) => v,
            Err(ProblemError::Cartan(e)) => return fail(cartan_error_name(&e), e.to_string()),
            Err(e) => return Outcome::input_error(e),
        };
        let vp = match VortexProblem::new(graph, sys.clone(), vort) {
            Ok(p) => p,
            Err(e) => return Outcome::input_error(e),
        };
        report.vortex_counts = Some(vp.vortices().counts().to_vec());
        report.lambda0 = Some(vp.lambda0());
        report.admissibility_threshold = Some(vp.admissibility_threshold());
        if let Some(LambdaSpec::Single(lambda)) = cfg.lambda {
            if let Err(e) = check_lambda(lambda) {
                return Outcome::input_error(e);
            }
            let seed = vp.background().u0().scale(-1.0);
            match moments(vp.graph(), vp.background(), &seed) {
                Ok(m) => {
                    report.lambda = Some(lambda);
                    report.seed_margins = Some(admissibility(vp.system(), vp.vortices(), &m, lambda).margins);
                }
                Err(e) => return Outcome::input_error(e),
            }
        }
    }
    Outcome::ok(to_json(&ValidationReport {
        status: "PASS",
        error: None,
        message: None,
        system: Some(report),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Lambda0Report {
    lambda0: f64,
    volume: f64,
    vortex_counts: Vec<usize>,
    admissibility_threshold: f64,
}

pub fn cmd_lambda0(cfg: &RunConfig) -> Outcome {
    match load_vortex_problem(cfg) {
        Ok(p) => Outcome::ok(to_json(&Lambda0Report {
            lambda0: p.lambda0(),
            volume: p.graph().volume(),
            vortex_counts: p.vortices().counts().to_vec(),
            admissibility_threshold: p.admissibility_threshold(),
        })),
        Err(e) => Outcome::input_error(e),
    }
}
