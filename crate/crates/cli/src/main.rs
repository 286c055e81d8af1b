use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use poco_core::config::parse_config;
use poco_core::domains::{ConstraintSet, SimplexProjection};
use poco_core::experiments::{run_experiment, ExperimentId, ExperimentSpec};
use poco_core::output::{emit_results, render_summary};
use poco_core::predictors::fit_var_yule_walker;
use poco_core::scenarios::read_numeric_csv;
use poco_core::Error;

const EXIT_BOUND_VIOLATED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "poco",
    version,
    about = "Predictive online convex optimization experiments"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Switching targets: VAR-predictive OGD against OGD.
    RunExp1(RunArgs),
    /// Switching targets with uneven dwell: expert learning over AR models.
    RunExp2(RunArgs),
    /// Markowitz portfolios against a hidden client risk process.
    RunExp3(RunArgs),
    /// The tracking pipeline configured entirely from the config file.
    RunCustom(RunArgs),
    /// Run an experiment with bound checking on and report each bound.
    CheckBounds(CheckArgs),
    /// Project a point onto a ball or the unit simplex.
    Project(ProjectArgs),
    /// Fit a VAR model by Yule-Walker to the columns of a CSV file.
    FitAr(FitArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; missing keys take the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "POCO_OUT", default_value = "poco-out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetition count override.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment to use when no config file names one.
    #[arg(long, value_enum, default_value_t = TrackingExperiment::Exp1)]
    experiment: TrackingExperiment,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Also write result files here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackingExperiment {
    Exp1,
    Exp2,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetKind {
    Ball,
    Simplex,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Renormalize,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long, value_enum)]
    set: SetKind,
    /// Ball radius.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Ball center, comma separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    center: Option<Vec<f64>>,
    /// Simplex projection mode.
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Point to project, comma separated.
    #[arg(value_delimiter = ',', allow_hyphen_values = true, required = true)]
    point: Vec<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Numeric CSV, one row per observation.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    order: usize,
    /// 0-based columns to model (default: all).
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<usize>>,
}

enum Failure {
    Core(Error),
    BoundViolated,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Data(_) | Error::Io(_) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn load_spec(
    config: Option<&PathBuf>,
    id: Option<ExperimentId>,
    seed: Option<u64>,
    reps: Option<usize>,
) -> Result<ExperimentSpec, Error> {
    let mut spec = match config {
        Some(path) => parse_config(path, id)?,
        None => ExperimentSpec::defaults(id.unwrap_or(ExperimentId::Exp1)),
    };
    if let Some(s) = seed {
        spec.experiment.seed = s;
    }
    if let Some(r) = reps {
        spec.experiment.reps = r;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let quiet = cli.quiet;
    match cli.command {
        Command::RunExp1(a) => run_and_emit(ExperimentId::Exp1, a, quiet),
        Command::RunExp2(a) => run_and_emit(ExperimentId::Exp2, a, quiet),
        Command::RunExp3(a) => run_and_emit(ExperimentId::Exp3, a, quiet),
        Command::RunCustom(a) => run_and_emit(ExperimentId::Custom, a, quiet),
        Command::CheckBounds(a) => check_bounds(a, quiet),
        Command::Project(a) => project(a),
        Command::FitAr(a) => fit_ar(a),
    }
}

fn run_and_emit(id: ExperimentId, args: RunArgs, quiet: bool) -> Result<(), Failure> {
    let spec = load_spec(args.config.as_ref(), Some(id), args.seed, args.reps)?;
    log::info!(
        "running {} with {} repetitions, seed {}",
        id.as_str(),
        spec.experiment.reps,
        spec.experiment.seed
    );
    let outcome = run_experiment(&spec)?;
    let written = emit_results(&spec, &outcome, &args.out)?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    if !quiet {
        print!("{}", render_summary(&spec, &outcome));
    }
    Ok(())
}

fn check_bounds(args: CheckArgs, quiet: bool) -> Result<(), Failure> {
    let id = match args.experiment {
        TrackingExperiment::Exp1 => ExperimentId::Exp1,
        TrackingExperiment::Exp2 => ExperimentId::Exp2,
        TrackingExperiment::Custom => ExperimentId::Custom,
    };
    let default_id = if args.config.is_some() {
        None
    } else {
        Some(id)
    };
    let mut spec = load_spec(args.config.as_ref(), default_id, args.seed, args.reps)?;
    if spec.experiment.id == ExperimentId::Exp3 {
        return Err(Error::config(
            "experiment.id",
            "bounds need the Euclidean projection; the portfolio experiment uses renormalization",
        )
        .into());
    }
    spec.regret.check_bounds = true;
    spec.validate()?;
    let outcome = run_experiment(&spec)?;
    if let Some(out) = &args.out {
        emit_results(&spec, &outcome, out)?;
    }
    if !quiet {
        print!("{}", render_summary(&spec, &outcome));
    }
    if outcome.bounds.iter().all(|b| b.all_hold()) {
        Ok(())
    } else {
        Err(Failure::BoundViolated)
    }
}

fn project(args: ProjectArgs) -> Result<(), Failure> {
    let v = DVector::from_vec(args.point);
    let set = match args.set {
        SetKind::Ball => {
            let center = args.center.unwrap_or_else(|| vec![0.0; v.len()]);
            ConstraintSet::ball(DVector::from_vec(center), args.radius)?
        }
        SetKind::Simplex => {
            let mode = match args.mode {
                Mode::Exact => SimplexProjection::Exact,
                Mode::Renormalize => SimplexProjection::RenormalizeHeuristic,
            };
            ConstraintSet::simplex(v.len(), mode)?
        }
    };
    let p = set.project(&v)?;
    let cells: Vec<String> = p.iter().map(|x| x.to_string()).collect();
    println!("{}", cells.join(","));
    Ok(())
}

fn fit_ar(args: FitArgs) -> Result<(), Failure> {
    let table = read_numeric_csv(&args.csv)?;
    let width = table.rows[0].len();
    let columns = args.columns.unwrap_or_else(|| (0..width).collect());
    if let Some(&c) = columns.iter().find(|&&c| c >= width) {
        return Err(Error::config(
            "--columns",
            format!("column {c} does not exist ({width} columns)"),
        )
        .into());
    }
    let series: Vec<DVector<f64>> = table
        .rows
        .iter()
        .map(|r| DVector::from_iterator(columns.len(), columns.iter().map(|&c| r[c])))
        .collect();
    let model = fit_var_yule_walker(&series, args.order)?;
    let fmt = |v: &mut dyn Iterator<Item = &f64>| {
        v.map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
    };
    println!("observations: {}", series.len());
    println!("mean: [{}]", fmt(&mut model.mean.iter()));
    for (h, phi) in model.coefficients.iter().enumerate() {
        println!("lag {}:", h + 1);
        for r in 0..phi.nrows() {
            println!("  [{}]", fmt(&mut phi.row(r).iter()));
        }
    }
    let next = model.predict_next(&series)?;
    println!("next: [{}]", fmt(&mut next.iter()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::BoundViolated) => {
            eprintln!("error: at least one bound check failed");
            ExitCode::from(EXIT_BOUND_VIOLATED)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
