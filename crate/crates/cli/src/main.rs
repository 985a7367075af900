use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lq_solvability::export::{canonical_json, load_problem, problem_digest, to_json_pretty, write_sweep_csv};
use lq_solvability::report::{classify, oracle_report, solve, sweep_report, ClassifyOptions};
use lq_solvability::{DVector, EpsilonSchedule, LqError, LqProblem};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "lqsolve", version, about = "Solvability analysis for indefinite finite-horizon LQ problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Riccati test, stacked oracle and ε-sweep with a cross-check report
    Classify(Common),
    /// Optimal control, trajectory and value for each initial state
    Solve(Common),
    /// ε-sweep table as CSV plus a JSON summary
    Sweep(Common),
    /// Stacked-quadratic verdicts only
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON)
    problem: PathBuf,
    /// Initial state as comma-separated values; repeat for several. Defaults to all ones.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    x0: Vec<Vec<f64>>,
    /// Output file. For `sweep` this receives the CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the canonicalized problem JSON and exit
    #[arg(long)]
    echo: bool,
    /// Run metadata on stderr
    #[arg(long)]
    verbose: bool,
    /// Worker threads for the ε-sweep
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1.0)]
    eps_start: f64,
    #[arg(long, default_value_t = 0.5)]
    eps_ratio: f64,
    #[arg(long, default_value_t = 40)]
    eps_steps: usize,
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{part}` is not a finite number"))
        })
        .collect()
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<LqError> for Failure {
    fn from(e: LqError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_failure(path)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Input(format!("stdout: {e}"))),
    }
}

fn initial_states(problem: &LqProblem, given: &[Vec<f64>]) -> Vec<DVector<f64>> {
    if given.is_empty() {
        return vec![DVector::from_element(problem.state_dim(), 1.0)];
    }
    given.iter().map(|v| DVector::from_column_slice(v)).collect()
}

fn run(name: &str, common: &Common) -> Result<(), Failure> {
    let started = Instant::now();
    let problem = load_problem(&common.problem)?;
    if common.verbose {
        eprintln!("command: {name}");
        eprintln!("problem: {}", common.problem.display());
        eprintln!("digest: {}", problem_digest(&problem));
        eprintln!("threads: {}", common.threads);
    }
    if common.echo {
        return emit(common.out.as_deref(), &canonical_json(&problem));
    }
    let opts = ClassifyOptions {
        schedule: EpsilonSchedule::geometric(common.eps_start, common.eps_ratio, common.eps_steps)?,
        threads: common.threads,
    };
    let x0s = initial_states(&problem, &common.x0);
    match name {
        "classify" => emit(common.out.as_deref(), &to_json_pretty(&classify(&problem, &x0s, &opts)?))?,
        "solve" => emit(common.out.as_deref(), &to_json_pretty(&solve(&problem, &x0s, &opts)?))?,
        "oracle" => emit(common.out.as_deref(), &to_json_pretty(&oracle_report(&problem, &x0s)?))?,
        "sweep" => {
            if x0s.len() != 1 {
                return Err(Failure::Input("sweep takes exactly one --x0".into()));
            }
            let (sweep, summary) = sweep_report(&problem, &x0s[0], &opts)?;
            let summary = to_json_pretty(&summary);
            match &common.out {
                Some(path) => {
                    let file = File::create(path).map_err(io_failure(path))?;
                    write_sweep_csv(&sweep, BufWriter::new(file))?;
                    emit(None, &summary)?;
                }
                None => {
                    write_sweep_csv(&sweep, io::stdout().lock())?;
                    eprint!("{summary}");
                }
            }
        }
        _ => unreachable!("subcommands are fixed"),
    }
    if common.verbose {
        eprintln!("elapsed_ms: {:.3}", started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Classify(c) => ("classify", c),
        Command::Solve(c) => ("solve", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Oracle(c) => ("oracle", c),
    };
    match run(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
