use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graph_vortex::SeedStrategy;
use graph_vortex_cli::{
    cmd_abelian, cmd_lambda0, cmd_solve, cmd_sweep, cmd_validate, LambdaSpec, Outcome, RunConfig, EXIT_INPUT,
};

/// Chern-Simons-Higgs vortex solver on weighted graphs.
#[derive(Debug, Parser)]
#[command(name = "vortex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the non-Abelian system at one coupling and print a JSON report.
    Solve(Common),
    /// Solve over a range of couplings and print CSV.
    Sweep(Common),
    /// Solve the scalar equation, or bracket its critical coupling.
    Abelian {
        #[command(flatten)]
        common: Common,
        /// Bracket the critical coupling instead of solving at --lambda.
        #[arg(long)]
        find_critical: bool,
        /// Width of the critical bracket.
        #[arg(long, default_value_t = 1e-4)]
        bracket_tol: f64,
    },
    /// Check the Cartan data; with --graph also report thresholds.
    Validate(Common),
    /// Print the necessary coupling threshold.
    Lambda0(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Seed {
    NegU0,
    Abelian,
    Zero,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, conflicts_with_all = ["lambda_min", "lambda_max"])]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda_max")]
    lambda_min: Option<f64>,
    #[arg(long, requires = "lambda_min")]
    lambda_max: Option<f64>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Space the sweep geometrically.
    #[arg(long)]
    log: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum, default_value = "neg-u0")]
    seed_strategy: Seed,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> RunConfig {
        let lambda = match (self.lambda, self.lambda_min, self.lambda_max) {
            (Some(l), _, _) => Some(LambdaSpec::Single(l)),
            (None, Some(min), Some(max)) => Some(LambdaSpec::Range {
                min,
                max,
                steps: self.steps,
                log: self.log,
            }),
            _ => None,
        };
        RunConfig {
            graph: self.graph.clone(),
            problem: self.problem.clone(),
            lambda,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: match self.seed_strategy {
                Seed::NegU0 => SeedStrategy::NegU0,
                Seed::Abelian => SeedStrategy::Abelian { r: None },
                Seed::Zero => SeedStrategy::Zero,
            },
            find_critical: false,
            bracket_tol: 1e-4,
            threads: None,
        }
    }
}

fn emit(outcome: &Outcome, out: Option<&PathBuf>) -> i32 {
    if let Some(msg) = &outcome.message {
        eprintln!("{msg}");
    }
    if outcome.output.is_empty() {
        return outcome.code;
    }
    let written = match out {
        Some(path) => std::fs::write(path, &outcome.output),
        None => std::io::stdout().write_all(outcome.output.as_bytes()),
    };
    match written {
        Ok(()) => outcome.code,
        Err(e) => {
            eprintln!("cannot write output: {e}");
            EXIT_INPUT
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let code = match &cli.command {
        Command::Solve(c) => emit(&cmd_solve(&c.config()), c.out.as_ref()),
        Command::Sweep(c) => emit(&cmd_sweep(&c.config()), c.out.as_ref()),
        Command::Abelian {
            common,
            find_critical,
            bracket_tol,
        } => {
            let cfg = RunConfig {
                find_critical: *find_critical,
                bracket_tol: *bracket_tol,
                ..common.config()
            };
            emit(&cmd_abelian(&cfg), common.out.as_ref())
        }
        Command::Validate(c) => emit(&cmd_validate(&c.config()), c.out.as_ref()),
        Command::Lambda0(c) => emit(&cmd_lambda0(&c.config()), c.out.as_ref()),
    };
    ExitCode::from(code as u8)
}
