//! `dissdim`: exponents, dimension estimates and weak-balance sweeps from the
//! command line.
//!
//! Reports go to standard output as JSON, tables to the file named by
//! `--csv`. Failures print a JSON error object on standard error and exit
//! with 2 (bad input) or 3 (numerical failure).

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dissdim_core::exponents::ExtReal;
use dissdim_core::Error;
use serde_json::json;

use commands::SCHEMA;

#[derive(Parser, Debug)]
#[command(name = "dissdim", version, about = "Dimension bounds for dissipation measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dimension exponent s and time scaling alpha for a regularity class.
    Exponents(ExponentsArgs),
    /// Box-counting dimension and density ladder of a measure file.
    Dimension(DimensionArgs),
    /// Sweep cylinder balances of a field file against their Hölder bounds.
    Verify(VerifyArgs),
    /// Burgers Riemann problem: field, dissipation measure and manifest.
    Burgers(BurgersArgs),
    /// Power-law field x|x|^(eps-d) and its ball masses.
    Vfield(VfieldArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Euler,
    #[value(alias = "navier-stokes", alias = "navier_stokes")]
    Ns,
    #[value(alias = "conservation-law", alias = "conservation_law")]
    Claw,
}

#[derive(Args, Debug)]
struct ExponentsArgs {
    #[arg(long, value_enum)]
    regime: RegimeArg,
    #[arg(long)]
    d: u32,
    /// Time integrability, a number, a fraction or `inf`.
    #[arg(long, default_value = "inf")]
    q: ExtReal,
    /// Space integrability, a number, a fraction or `inf`.
    #[arg(long, default_value = "inf")]
    r: ExtReal,
    /// Defaults to the optimal value for Euler and to 2 for Navier–Stokes.
    #[arg(long)]
    alpha: Option<f64>,
    /// Named class: uniform_in_time_lr, besov_13 or sobolev_beta (Euler only).
    #[arg(long)]
    case: Option<String>,
    /// Parameter of `--case` (r or beta).
    #[arg(long)]
    param: Option<f64>,
    /// Drop the pressure assumption (Euler only).
    #[arg(long)]
    unbounded_pressure: bool,
}

/// Geometric ladder of scales.
#[derive(Args, Debug)]
struct LadderArgs {
    /// Largest scale; defaults to 1/8 of the domain width.
    #[arg(long)]
    delta_max: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 6)]
    count: usize,
}

#[derive(Args, Debug)]
struct DimensionArgs {
    /// Measure file (text or binary).
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Density exponent; defaults to the box-counting estimate.
    #[arg(long)]
    s: Option<f64>,
    #[command(flatten)]
    ladder: LadderArgs,
    /// Ladder centers: `support`, `top:K` or `sample:K`.
    #[arg(long, default_value = "support")]
    centers: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PairArg {
    Burgers,
    Euler,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Field file (binary or CSV).
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value = "inf")]
    q: ExtReal,
    #[arg(long, default_value = "inf")]
    r: ExtReal,
    /// Defaults to the field's hint, else 1.
    #[arg(long)]
    alpha: Option<f64>,
    /// Viscosity; adds the viscous term and the Morrey column.
    #[arg(long)]
    nu: Option<f64>,
    /// Defaults to `burgers` for scalar fields without pressure, else `euler`.
    #[arg(long, value_enum)]
    pair: Option<PairArg>,
    /// Cylinder center `x1,...,xd,t`; repeatable. Defaults to the middle of
    /// the domain.
    #[arg(long = "center", allow_hyphen_values = true)]
    centers: Vec<String>,
    #[command(flatten)]
    ladder: LadderArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplingArg {
    Point,
    Cell,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeasureFormat {
    Text,
    Binary,
}

#[derive(Args, Debug)]
struct BurgersArgs {
    #[arg(long, allow_negative_numbers = true)]
    ul: f64,
    #[arg(long, allow_negative_numbers = true)]
    ur: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    x0: f64,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    b: f64,
    /// Grid nodes (cells for a viscous run).
    #[arg(long, default_value_t = 401)]
    nx: usize,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    /// Output times.
    #[arg(long, default_value_t = 201)]
    nt: usize,
    /// Viscosity; without it the exact entropy solution is sampled.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_enum, default_value = "cell")]
    sampling: SamplingArg,
    /// Field output; `.csv` selects the CSV variant.
    #[arg(long)]
    field_out: Option<PathBuf>,
    #[arg(long)]
    measure_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    measure_format: MeasureFormat,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VfieldArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
    #[arg(long, default_value_t = 64)]
    nx: usize,
    /// Radii for the ball masses.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4")]
    delta: Vec<f64>,
    /// Field output, constant in time on [0, 1].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("DISSDIM_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidParameter(format!("DISSDIM_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::EmptySupport => "empty_support",
        Error::Shape(_) => "shape",
        Error::MissingComponent(_) => "missing_component",
        Error::DomainMargin(_) => "domain_margin",
        Error::CoveringIncomplete { .. } => "covering_incomplete",
        Error::Stability(_) => "stability",
        Error::NonFinite(_) => "non_finite",
        Error::Consistency(_) => "consistency",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let report = match cli.command {
        Command::Exponents(a) => commands::exponents(a)?,
        Command::Dimension(a) => commands::dimension(a)?,
        Command::Verify(a) => commands::verify(a)?,
        Command::Burgers(a) => commands::burgers(a)?,
        Command::Vfield(a) => commands::vfield(a)?,
    };
    let text = serde_json::to_string_pretty(&report).expect("reports serialize");
    // a closed pipe (`dissdim ... | head`) is not an error
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e)),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut obj = json!({ "kind": error_kind(&e), "message": e.to_string() });
            if let Error::Parse { line, .. } = e {
                obj["line"] = json!(line);
            }
            eprintln!("{}", json!({ "schema": SCHEMA, "error": obj }));
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
