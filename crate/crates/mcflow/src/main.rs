//! Command-line front end: validate, solve and sweep case documents.
//!
//! Exit codes: 0 success, 1 the case is not well-posed, 2 the iteration did
//! not converge, 3 the input could not be read or parsed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcflow::fixtures;
use mcflow::io::{self, IoError, OutputFormat, Quantity};
use mcflow::model::SlotKey;
use mcflow::solver::{solve_network, InitialGuess, SolverConfig};

#[derive(Parser)]
#[command(
    name = "mcflow",
    version,
    about = "Steady-state load flow for coupled electricity, gas and heat networks",
    after_help = "CASE is a JSON case file, or one of the built-in cases:\n  \
                  power_to_gas, electric_boiler, electrolyser, electrolyser_free_split,\n  \
                  linked, linked_free_split, linked_dense_gas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check counts, squareness and the starting-point rank of a case
    Validate(ValidateArgs),
    /// Run the Newton iteration and print the resulting state
    Solve(SolveArgs),
    /// Solve the case repeatedly while varying one parameter
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Case file or built-in case name
    case: String,
    /// Output format
    #[arg(long, default_value = "table", value_parser = ["table", "csv", "json"])]
    format: String,
    /// Write the output to a file instead of stdout
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Case file or built-in case name
    case: String,
    /// Convergence threshold on the residual norm
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration limit
    #[arg(long)]
    max_iter: Option<usize>,
    /// Fraction of each Newton step to apply
    #[arg(long)]
    damping: Option<f64>,
    /// JSON file mapping slot paths to starting-point overrides
    #[arg(long, value_name = "FILE")]
    guess: Option<PathBuf>,
    /// Output format
    #[arg(long, default_value = "table", value_parser = ["table", "csv", "json"])]
    format: String,
    /// Write the output to a file instead of stdout
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SweepArgs {
    /// Case file or built-in case name
    case: String,
    /// Swept quantity: a slot path whose boundary value to vary (e.g.
    /// "P@1e"), or eta_h@<node> for a unit's fixed residual-heat fraction
    #[arg(long)]
    param: String,
    /// Comma-separated sample values (SI units), e.g. "-1e6,-2e6"
    #[arg(
        long,
        value_name = "V1,V2,...",
        allow_hyphen_values = true,
        conflicts_with_all = ["from", "to", "steps"]
    )]
    values: Option<String>,
    /// First sample value (with --to and --steps)
    #[arg(long, requires = "to", requires = "steps")]
    from: Option<f64>,
    /// Last sample value
    #[arg(long, requires = "from")]
    to: Option<f64>,
    /// Number of evenly spaced samples
    #[arg(long, requires = "from")]
    steps: Option<usize>,
    /// Convergence threshold on the residual norm
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration limit
    #[arg(long)]
    max_iter: Option<usize>,
    /// Fraction of each Newton step to apply
    #[arg(long)]
    damping: Option<f64>,
    /// Run the samples one after another instead of on the thread pool
    #[arg(long)]
    sequential: bool,
    /// Output format
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    /// Write the output to a file instead of stdout
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, IoError> {
    match cli.command {
        Command::Validate(args) => {
            let case = load(&args.case)?;
            let report = io::validate_case(&case)?;
            let format = parse_format(&args.format);
            emit(
                &io::render_validation(&report, format)?,
                args.output.as_deref(),
            )?;
            Ok(if report.well_posed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Solve(args) => {
            let case = load(&args.case)?;
            let cfg = override_config(case.solver, args.tol, args.max_iter, args.damping);
            let guess = match &args.guess {
                Some(path) => Some(load_guess(&case, path)?),
                None => None,
            };
            let outcome = solve_network(&case.network, &case.boundary, &cfg, guess.as_ref())?;
            let report = io::build_report(
                &case.network,
                &case.boundary,
                &outcome,
                case.description.as_deref(),
            );
            let format = parse_format(&args.format);
            emit(&io::render_report(&report, format)?, args.output.as_deref())?;
            Ok(match &outcome.result {
                None => ExitCode::from(1),
                Some(result) if result.status.is_converged() => ExitCode::SUCCESS,
                Some(_) => ExitCode::from(2),
            })
        }
        Command::Sweep(args) => {
            let case = load(&args.case)?;
            let cfg = override_config(case.solver, args.tol, args.max_iter, args.damping);
            let values = match (&args.values, args.from, args.to, args.steps) {
                (Some(list), ..) => parse_value_list(list)?,
                (None, Some(from), Some(to), Some(steps)) => io::linspace(from, to, steps),
                _ => {
                    return Err(IoError::Document {
                        context: "sweep".into(),
                        message: "give --values or all of --from/--to/--steps".into(),
                    })
                }
            };
            let sweep = if args.sequential {
                io::run_sweep_seq(&case.network, &case.boundary, &cfg, &args.param, &values)?
            } else {
                io::run_sweep(&case.network, &case.boundary, &cfg, &args.param, &values)?
            };
            let text = match parse_format(&args.format) {
                OutputFormat::Json => io::sweep_to_json(&sweep)?,
                _ => io::sweep_to_csv(&sweep)?,
            };
            emit(&text, args.output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Resolves the case argument: an existing file wins, then a built-in name.
fn parse_value_list(list: &str) -> Result<Vec<f64>, IoError> {
    list.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| IoError::Document {
                context: "sweep".into(),
                message: format!("--values entry {tok:?} is not a number"),
            })
        })
        .collect()
}

fn load(case: &str) -> Result<io::LoadedCase, IoError> {
    let path = Path::new(case);
    if path.exists() {
        return io::load_case_from_path(path);
    }
    match fixtures::by_name(case) {
        Some(fixture) => io::load_case(fixture.json),
        None => {
            let names: Vec<&str> = fixtures::ALL.iter().map(|f| f.name).collect();
            Err(IoError::Document {
                context: format!("case {case:?}"),
                message: format!(
                    "no such file, and no built-in case of that name (have: {})",
                    names.join(", ")
                ),
            })
        }
    }
}

fn parse_format(name: &str) -> OutputFormat {
    OutputFormat::parse(name).expect("clap validated the format name")
}

fn override_config(
    base: SolverConfig,
    tol: Option<f64>,
    max_iter: Option<usize>,
    damping: Option<f64>,
) -> SolverConfig {
    SolverConfig {
        tol: tol.unwrap_or(base.tol),
        max_iter: max_iter.unwrap_or(base.max_iter),
        damping: damping.unwrap_or(base.damping),
        min_pivot: base.min_pivot,
    }
}

/// Reads a guess-override file: a JSON object mapping slot paths to values
/// (bare SI numbers or "value unit" strings).
fn load_guess(case: &io::LoadedCase, path: &Path) -> Result<InitialGuess, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    let raw: BTreeMap<String, Quantity> =
        serde_json::from_str(&text).map_err(|e| IoError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut overrides = BTreeMap::new();
    for (slot_path, quantity) in raw {
        let kind = SlotKey::parse(&slot_path)?.kind;
        let ctx = format!("guess value {slot_path}");
        overrides.insert(slot_path.clone(), quantity.resolve(kind, &ctx)?);
    }
    io::guess_with_overrides(&case.network, &case.boundary, &overrides)
}

/// Prints to stdout or writes the file, making sure output ends in a newline.
fn emit(text: &str, output: Option<&Path>) -> Result<(), IoError> {
    match output {
        Some(path) => fs::write(path, text).map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        }),
        None => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}
