use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use miph::data::{
    self, couple_design, load_csv, load_records, read_model, save_records, simulate_couples,
    write_model, Bandwidth, BeranEstimator, DataError, TIME_SCALE,
};
use miph::estimation::{
    fit, EstimationError, FitConfig, IStepMode, StoppingRule,
};
use miph::model::{ModelError, MiphModel};
use miph::phase_type::{InitialVector, Structure};

#[derive(Parser)]
#[command(name = "miph", version, about = "Multivariate inhomogeneous phase-type models for joint lifetimes")]
struct Cli {
    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a couple CSV
    Fit(FitArgs),
    /// Evaluate joint density, survival and distribution function
    Eval(EvalArgs),
    /// Dependence measures and curves
    Measures(MeasuresArgs),
    /// Simulate a data set in the CSV schema
    Simulate(SimulateArgs),
    /// Conditional Kaplan–Meier curves
    Beran(BeranArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Coxian,
    General,
}

#[derive(Clone, Copy, ValueEnum)]
enum IStepArg {
    Joint,
    Coordinate,
}

#[derive(Args)]
struct FitArgs {
    /// Couple CSV (time1,time2,delta1,delta2,age1,age2; years)
    #[arg(long)]
    data: PathBuf,
    /// Number of phases
    #[arg(long = "p", visible_alias = "states")]
    states: usize,
    #[arg(long, value_enum, default_value = "coxian")]
    structure: StructureArg,
    /// Maximum number of iterations
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Stop when the log-likelihood changes by less than this times n
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    /// Run exactly --iterations iterations
    #[arg(long)]
    fixed_iterations: bool,
    /// Starting Gompertz parameters, comma separated
    #[arg(long, value_delimiter = ',')]
    beta_init: Option<Vec<f64>>,
    /// Keep the Gompertz parameters at their starting values
    #[arg(long)]
    freeze_betas: bool,
    /// Run the inhomogeneity step every k iterations
    #[arg(long, default_value_t = 1)]
    i_step_every: usize,
    #[arg(long, value_enum, default_value = "joint")]
    i_step_mode: IStepArg,
    /// Model JSON to write
    #[arg(long)]
    output: PathBuf,
    /// Per-iteration log-likelihood CSV (default: <output>.trace.csv)
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct Profile {
    /// Ages at issue in years, e.g. 63,68
    #[arg(long, value_parser = parse_pair)]
    ages: Option<(f64, f64)>,
    /// Full design row instead of ages (models with a non-couple design)
    #[arg(long, value_delimiter = ',', conflicts_with = "ages")]
    covariates: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    profile: Profile,
    /// Evaluation point, comma separated (repeatable)
    #[arg(long = "point", value_parser = parse_point)]
    points: Vec<Vec<f64>>,
    /// Square grid MAX,N: N points per axis from 0 to MAX (bivariate models)
    #[arg(long, value_parser = parse_pair)]
    grid: Option<(f64, f64)>,
    /// Points are in model units instead of years
    #[arg(long)]
    scaled: bool,
    /// CSV output (default: stdout)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MeasuresArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    profile: Profile,
    /// Largest coordinate of the Ψ curves, in years
    #[arg(long, default_value_t = 30.0)]
    grid_max: f64,
    /// Points per axis of the Ψ curves
    #[arg(long, default_value_t = 31)]
    grid_points: usize,
    /// Largest u of the cross-ratio curve, in years
    #[arg(long, default_value_t = 29.0)]
    cr_max: f64,
    #[arg(long, default_value_t = 30)]
    cr_points: usize,
    /// Long-format curve CSV (default: stdout after the scalar measures)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Ages at issue for every row, e.g. 63,63
    #[arg(long, value_parser = parse_pair)]
    ages: Option<(f64, f64)>,
    /// CSV with age1,age2 columns to cycle through
    #[arg(long, conflicts_with = "ages")]
    ages_csv: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    /// Expected fraction of censored lifetimes
    #[arg(long, default_value_t = 0.0)]
    censoring: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BeranArgs {
    #[arg(long)]
    data: PathBuf,
    /// Query ages in years
    #[arg(long, value_parser = parse_pair)]
    ages: (f64, f64),
    /// Kernel bandwidth
    #[arg(long, default_value_t = 0.001)]
    bandwidth: f64,
    /// Apply the kernel to ages in years instead of ages / 100
    #[arg(long)]
    unscaled_ages: bool,
    /// Largest time of the curve in years (default: largest observed time)
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match parse_point(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        v => Err(format!("expected two comma-separated numbers, got {}", v.len())),
    }
}

/// Exit code 2 for bad input, 3 for numerical failures.
enum Failure {
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::KernelUnderflow { .. } => Failure::Numerical(e.to_string()),
            DataError::Estimation(inner) => inner.into(),
            DataError::Distribution(inner) => inner.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<EstimationError> for Failure {
    fn from(e: EstimationError) -> Self {
        let input = match &e {
            EstimationError::AtIteration { source, .. } => {
                matches!(**source, EstimationError::InvalidObservations(_) | EstimationError::DimensionMismatch(_))
            }
            EstimationError::InvalidObservations(_) | EstimationError::DimensionMismatch(_) => true,
            _ => false,
        };
        if input {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DimensionMismatch(_)
            | ModelError::MarginOutOfRange { .. }
            | ModelError::NotBivariate(_)
            | ModelError::NothingLeft
            | ModelError::MissingInitial(_) => Failure::Input(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("could not configure {k} threads: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cli),
        Command::Eval(a) => cmd_eval(a),
        Command::Measures(a) => cmd_measures(a),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Beran(a) => cmd_beran(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?))),
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn write_err(e: io::Error) -> Failure {
    Failure::Input(format!("write failed: {e}"))
}

fn cmd_fit(args: &FitArgs, cli: &Cli) -> Result<(), Failure> {
    let obs = load_csv(&args.data)?;
    let mut config = FitConfig::new(args.states);
    config.structure = match args.structure {
        StructureArg::Coxian => Structure::Coxian,
        StructureArg::General => Structure::General,
    };
    config.max_iterations = args.iterations;
    config.stopping = if args.fixed_iterations {
        StoppingRule::FixedIterations
    } else {
        StoppingRule::LogLikChange { per_observation: args.tolerance }
    };
    config.seed = cli.seed;
    config.beta_init = args.beta_init.clone();
    config.freeze_betas = args.freeze_betas;
    config.i_step_every = args.i_step_every;
    config.i_step.mode = match args.i_step_mode {
        IStepArg::Joint => IStepMode::Joint,
        IStepArg::Coordinate => IStepMode::Coordinate,
    };
    let report = fit(&obs, &config)?;
    write_model(&args.output, &report.model)?;

    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    let mut out = open_output(Some(&trace_path))?;
    writeln!(out, "iteration,log_lik").map_err(write_err)?;
    for (i, ll) in report.log_lik_trace.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, ll).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;

    println!("p = {}", report.model.states());
    println!("betas = {:?}", report.model.betas());
    println!("iterations = {}", report.iterations);
    println!("converged = {}", report.converged);
    println!("log_lik = {}", report.final_log_lik());
    if report.excluded_rows > 0 {
        println!("excluded_rows = {}", report.excluded_rows);
    }
    Ok(())
}

fn initial_vector(model: &MiphModel, profile: &Profile) -> Result<InitialVector, Failure> {
    if let Some(pi) = model.fixed_initial() {
        return Ok(pi.clone());
    }
    let design = match (&profile.ages, &profile.covariates) {
        (Some((a1, a2)), _) => {
            for a in [*a1, *a2] {
                if !(0.0..=150.0).contains(&a) {
                    log::warn!("age {a} is outside [0, 150] years; the regression is extrapolating");
                }
            }
            couple_design(*a1, *a2).to_vec()
        }
        (None, Some(cov)) => cov.clone(),
        (None, None) => {
            return Err(Failure::Input("this model needs --ages or --covariates".into()));
        }
    };
    Ok(model.initial_for(&design)?)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let model = read_model(&args.model)?;
    let pi = initial_vector(&model, &args.profile)?;
    let d = model.dim();
    let unit = if args.scaled { 1.0 } else { TIME_SCALE };

    let mut points = args.points.clone();
    if let Some(grid) = &args.grid {
        if d != 2 {
            return Err(Failure::Input("--grid needs a bivariate model".into()));
        }
        let (max, n) = *grid;
        if !(max > 0.0) || n < 1.0 || n.fract() != 0.0 {
            return Err(Failure::Input("--grid expects MAX,N with MAX > 0 and integer N ≥ 1".into()));
        }
        let n = n as usize;
        let step = if n > 1 { max / (n - 1) as f64 } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                points.push(vec![i as f64 * step, j as f64 * step]);
            }
        }
    }
    if points.is_empty() {
        return Err(Failure::Input("give at least one --point or a --grid".into()));
    }

    let mut out = open_output(args.output.as_deref())?;
    let names: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
    writeln!(out, "{},density,survival,cdf", names.join(",")).map_err(write_err)?;
    for p in &points {
        if p.len() != d {
            return Err(Failure::Input(format!("point {p:?} has {} coordinates, model has {d}", p.len())));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Failure::Input(format!("point {p:?} has a negative or non-finite coordinate")));
        }
        let y: Vec<f64> = p.iter().map(|v| v / unit).collect();
        // density per unit of the input coordinates
        let density = model.joint_density(&pi, &y)? / unit.powi(d as i32);
        let survival = model.joint_survival(&pi, &y)?;
        let cdf = model.joint_cdf(&pi, &y)?;
        let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{density},{survival},{cdf}", coords.join(",")).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn grid(max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect()
}

fn value_or_nan(r: Result<f64, ModelError>, what: &str) -> Result<f64, Failure> {
    match r {
        Ok(v) => Ok(v),
        Err(e @ (ModelError::Underflow { .. } | ModelError::Quadrature(_))) => {
            log::warn!("{what}: {e}");
            Ok(f64::NAN)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_measures(args: &MeasuresArgs) -> Result<(), Failure> {
    let model = read_model(&args.model)?;
    if model.dim() != 2 {
        return Err(Failure::Input(format!("measures need a bivariate model, got {} margins", model.dim())));
    }
    let pi = initial_vector(&model, &args.profile)?;
    let tau = model.kendall_tau(&pi, 0, 1)?;
    let rho = model.spearman_rho(&pi, 0, 1)?;

    let mut out = open_output(args.output.as_deref())?;
    if args.output.is_some() {
        println!("kendall_tau = {tau}");
        println!("spearman_rho = {rho}");
    } else {
        writeln!(out, "# kendall_tau = {tau}").map_err(write_err)?;
        writeln!(out, "# spearman_rho = {rho}").map_err(write_err)?;
    }
    writeln!(out, "curve,y1,y2,value").map_err(write_err)?;
    writeln!(out, "kendall_tau,,,{tau}").map_err(write_err)?;
    writeln!(out, "spearman_rho,,,{rho}").map_err(write_err)?;
    let s = TIME_SCALE;
    let axis = grid(args.grid_max, args.grid_points);
    for &a in &axis {
        for &b in &axis {
            let v = value_or_nan(model.psi1(&pi, a / s, b / s), "psi1")?;
            writeln!(out, "psi1,{a},{b},{v}").map_err(write_err)?;
        }
    }
    for &y in &axis {
        let v = value_or_nan(model.psi2(&pi, 0, y / s), "psi2_1")?;
        writeln!(out, "psi2_1,0,{y},{v}").map_err(write_err)?;
    }
    for &y in &axis {
        let v = value_or_nan(model.psi2(&pi, 1, y / s), "psi2_2")?;
        writeln!(out, "psi2_2,{y},0,{v}").map_err(write_err)?;
    }
    for &u in &grid(args.cr_max, args.cr_points) {
        let v = value_or_nan(model.cross_ratio(&pi, u / s), "cross ratio")?;
        writeln!(out, "cross_ratio,{u},{u},{v}").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn cmd_simulate(args: &SimulateArgs, seed: u64) -> Result<(), Failure> {
    let model = read_model(&args.model)?;
    let ages: Vec<(f64, f64)> = match (&args.ages, &args.ages_csv) {
        (Some(a), _) => vec![*a],
        (None, Some(path)) => load_ages(path)?,
        (None, None) => return Err(Failure::Input("give --ages or --ages-csv".into())),
    };
    let records = simulate_couples(&model, &ages, args.n, args.censoring, seed)?;
    save_records(&args.output, &records)?;
    Ok(())
}

fn load_ages(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| Failure::Input(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Input(format!("{}: missing column `{name}`", path.display())))
    };
    let (i1, i2) = (col("age1")?, col("age2")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Input(format!("row {}: {e}", row + 1)))?;
        let parse = |i: usize| -> Result<f64, Failure> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Failure::Input(format!("row {}: invalid age", row + 1)))
        };
        out.push((parse(i1)?, parse(i2)?));
    }
    if out.is_empty() {
        return Err(Failure::Input(format!("{}: no ages", path.display())));
    }
    Ok(out)
}

fn cmd_beran(args: &BeranArgs) -> Result<(), Failure> {
    let records = load_records(&args.data)?;
    if records.is_empty() {
        return Err(Failure::Input("data file has no rows".into()));
    }
    let band = Bandwidth::new(args.bandwidth)?;
    let scale = if args.unscaled_ages { 1.0 } else { TIME_SCALE };
    let covariates = Array2::from_shape_fn((records.len(), 2), |(m, j)| {
        let r = &records[m];
        (if j == 0 { r.age1 } else { r.age2 }) / scale
    });
    let query = [args.ages.0 / scale, args.ages.1 / scale];
    let margins: [(Vec<f64>, Vec<bool>); 2] = [
        (records.iter().map(|r| r.time1).collect(), records.iter().map(|r| r.delta1 == 1).collect()),
        (records.iter().map(|r| r.time2).collect(), records.iter().map(|r| r.delta2 == 1).collect()),
    ];
    let max = args.grid_max.unwrap_or_else(|| {
        records.iter().map(|r| r.time1.max(r.time2)).fold(0.0, f64::max)
    });
    let ts = grid(max, args.grid_points);
    let curves = margins
        .iter()
        .map(|(t, d)| Ok(BeranEstimator::new(t, d, &covariates, &query, band)?.survival_curve(&ts)))
        .collect::<Result<Vec<_>, data::DataError>>()?;
    let mut out = open_output(args.output.as_deref())?;
    writeln!(out, "t,survival1,survival2").map_err(write_err)?;
    for (k, t) in ts.iter().enumerate() {
        writeln!(out, "{t},{},{}", curves[0][k], curves[1][k]).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}
