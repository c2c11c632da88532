//! `sln-lss`: fit SLN location/scale/skewness regressions from CSV, run the
//! Monte Carlo harness, and draw synthetic datasets.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sln_lss::em::{fit, FitOptions};
use sln_lss::inference::{bootstrap_se_from, info_criteria};
use sln_lss::io::{build_dataset, read_table_path, write_dataset_csv, FitReport, ModelSpec};
use sln_lss::sim::{gen_dataset, run_mc, SimCase, SimConfig};
use sln_lss::SlnError;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sln-lss",
    version,
    about = "Skew Laplace normal joint location, scale and skewness regression"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model to a CSV file and report estimates and criteria.
    Fit(FitArgs),
    /// Monte Carlo study for a coefficient case: mean and MSE per coefficient.
    Simulate(SimArgs),
    /// Draw a synthetic dataset from known coefficients.
    Sample(SampleArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Location covariates (comma-separated column names).
    #[arg(long, value_delimiter = ',')]
    loc: Vec<String>,
    /// Scale covariates.
    #[arg(long, value_delimiter = ',')]
    scale: Vec<String>,
    /// Skewness covariates.
    #[arg(long, value_delimiter = ',')]
    skew: Vec<String>,
    #[arg(long)]
    intercept_loc: bool,
    #[arg(long)]
    intercept_scale: bool,
    #[arg(long)]
    intercept_skew: bool,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Bootstrap resamples for standard errors; 0 skips them.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A built-in case label or an explicit coefficient spec.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct CaseArg {
    /// Built-in case: I, II or III.
    #[arg(long)]
    case: Option<String>,
    /// Coefficients as `beta=b0,b1;gamma=g0,g1;alpha=a0,a1`.
    #[arg(long)]
    coef: Option<String>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200])]
    n: Vec<usize>,
    /// Replications per sample size.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Designs have no constant column (only with --coef).
    #[arg(long)]
    no_intercept: bool,
    /// TSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Designs have no constant column (only with --coef).
    #[arg(long)]
    no_intercept: bool,
    /// CSV output path; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(SlnError),
}

impl From<SlnError> for Failure {
    fn from(e: SlnError) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn parse_vec(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad coefficient \"{}\"", v.trim()))
        })
        .collect()
}

fn parse_coef(spec: &str, intercept: bool) -> Result<SimCase, String> {
    let (mut beta, mut gamma, mut alpha) = (None, None, None);
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, vals) = part
            .split_once('=')
            .ok_or_else(|| format!("expected name=values, got \"{part}\""))?;
        let slot = match key.trim() {
            "beta" => &mut beta,
            "gamma" => &mut gamma,
            "alpha" => &mut alpha,
            k => return Err(format!("unknown coefficient block \"{k}\"")),
        };
        *slot = Some(parse_vec(vals)?);
    }
    let (Some(b), Some(g), Some(a)) = (beta, gamma, alpha) else {
        return Err("coefficient spec needs beta, gamma and alpha".into());
    };
    let mut case = SimCase::new("custom", b, g, a).map_err(|e| e.to_string())?;
    case.intercept = intercept;
    Ok(case)
}

fn resolve_case(c: &CaseArg, no_intercept: bool) -> Result<SimCase, Failure> {
    match (&c.case, &c.coef) {
        (Some(label), _) => {
            if no_intercept {
                return Err(Failure::Usage("--no-intercept applies only to --coef".into()));
            }
            SimCase::builtin(label)
                .ok_or_else(|| Failure::Usage(format!("unknown case \"{label}\" (expected I, II or III)")))
        }
        (None, Some(spec)) => parse_coef(spec, !no_intercept).map_err(Failure::Usage),
        (None, None) => Err(Failure::Usage("give --case or --coef".into())),
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| SlnError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_fit(a: FitArgs) -> Result<u8, Failure> {
    if a.bootstrap == 1 {
        return Err(Failure::Usage(
            "--bootstrap needs at least 2 resamples (or 0 for none)".into(),
        ));
    }
    let table = read_table_path(&a.data)?;
    let spec = ModelSpec {
        response: a.response,
        loc: a.loc,
        scale: a.scale,
        skew: a.skew,
        intercept: [a.intercept_loc, a.intercept_scale, a.intercept_skew],
    };
    let (d, labels) = build_dataset(&table, &spec)?;
    let opts = FitOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..FitOptions::default()
    };
    let res = fit(&d, None, &opts)?;
    let boot = if a.bootstrap > 0 && res.converged {
        Some(bootstrap_se_from(&d, &res.theta_hat, &opts, a.bootstrap, a.seed)?)
    } else {
        None
    };
    let crit = info_criteria(res.loglik, res.theta_hat.len(), d.n());
    let report = FitReport::new(&d, labels, &res, &crit, boot.as_ref());
    if let Some(p) = &a.out {
        std::fs::write(p, report.to_json()? + "\n")
            .map_err(|e| SlnError::Io(format!("{}: {e}", p.display())))?;
    }
    print!("{}", report.to_text());
    if !res.converged {
        eprintln!("sln-lss: fit did not converge");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_simulate(a: SimArgs) -> Result<u8, Failure> {
    let case = resolve_case(&a.case, a.no_intercept)?;
    let table = run_mc(&SimConfig::new(case, a.n, a.reps, a.seed))?;
    if let Some(p) = &a.out {
        let mut w = open_out(&a.out)?;
        w.write_all(table.to_tsv().as_bytes())?;
        w.flush()
            .map_err(|e| SlnError::Io(format!("{}: {e}", p.display())))?;
    }
    print!("{}", table.to_text());
    Ok(0)
}

fn cmd_sample(a: SampleArgs) -> Result<u8, Failure> {
    let case = resolve_case(&a.case, a.no_intercept)?;
    let d = gen_dataset(&case, a.n, a.seed);
    let mut w = open_out(&a.out)?;
    write_dataset_csv(&mut w, &d, case.intercept)?;
    w.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Sample(a) => cmd_sample(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("sln-lss: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("sln-lss: {e}");
            ExitCode::from(match e {
                SlnError::Numeric { .. } | SlnError::Singular { .. } | SlnError::Inference(_) => EXIT_NUMERIC,
                SlnError::Domain(_) | SlnError::Structural(_) | SlnError::Io(_) => EXIT_USAGE,
            })
        }
    }
}
