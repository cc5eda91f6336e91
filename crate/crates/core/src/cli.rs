//! Command-line driver: `mcq`, `solve`, `rate` and `validate-measure`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::study::{self, StudyTemplate};
use crate::bench::{run_convergence_study, BenchmarkProblem, ProblemKey};
use crate::config::{load_config, RunConfig, SchemeSection};
use crate::error::{Error, Result};
use crate::hjb::RateConstants;
use crate::jumpdiff::{substream, LocalDynamics};
use crate::levy::{LevyMeasure, TruncationLevel};
use crate::mcq::{nu_hat, nu_hat_quadrature};
use crate::quad::QuadOptions;
use crate::scheme::KappaRule;

pub const THREADS_ENV: &str = "LEVY_SCHEME_THREADS";

#[derive(Debug, Parser)]
#[command(name = "levy-scheme", version, about = "Monte Carlo scheme for nonlocal HJB equations with Lévy jumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the Monte Carlo quadrature of the jump integral with its exact expectation.
    Mcq(McqArgs),
    /// Solve backward in time and write the value surface.
    Solve(SolveArgs),
    /// Run a convergence study against the problem's oracle.
    Rate(RateArgs),
    /// Check closed-form measure functionals against numerical quadrature.
    ValidateMeasure(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Benchmark problem (linear-symbol, merton-linear, concave-hjb-toy, portfolio-nu0).
    #[arg(long)]
    pub problem: Option<ProblemKey>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McqArgs {
    #[command(flatten)]
    pub source: ProblemArgs,
    /// Truncation levels.
    #[arg(long, value_delimiter = ',', default_value = "0", allow_negative_numbers = true)]
    pub kappa: Vec<f64>,
    /// Time steps.
    #[arg(long, value_delimiter = ',', default_value = "0.01", allow_negative_numbers = true)]
    pub h: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluation point.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub x: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// kappa selection: `convergence`, `rate`, `rate:<c_theta>:<c_moment>` or `fixed:<kappa>`.
    #[arg(long)]
    pub kappa_rule: Option<String>,
    #[arg(long)]
    pub padding: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solve the rescaled scheme with c + theta_kappa.
    #[arg(long)]
    pub monotonized: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: ProblemArgs,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Number of time steps.
    #[arg(long)]
    pub n: Option<usize>,
    /// Samples per node.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Grid spacing.
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub source: ProblemArgs,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Strictly decreasing time steps.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub ladder: Vec<f64>,
    /// Samples per node at the first rung.
    #[arg(long, default_value_t = 1000)]
    pub base_samples: usize,
    /// M(h) = base_samples·(h_0/h)^exponent.
    #[arg(long, default_value_t = 2.0)]
    pub sample_exponent: f64,
    /// Grid spacing at the first rung.
    #[arg(long, default_value_t = 0.08)]
    pub base_dx: f64,
    /// dx(h) = base_dx·(h/h_0)^exponent.
    #[arg(long, default_value_t = 0.75)]
    pub dx_exponent: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub source: ProblemArgs,
    /// Inline measure, e.g. '{"kind":"power-tail","amplitude":1,"alpha":1}'.
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.5,1", allow_negative_numbers = true)]
    pub kappa: Vec<f64>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

const DEFAULT_N: usize = 50;
const DEFAULT_SAMPLES: usize = 20_000;
const DEFAULT_DX: f64 = 0.025;
const DEFAULT_PADDING: f64 = 3.5;

/// 2 for configuration and contract errors, 3 for numerical failures, 1 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidMeasure(_) | Error::Contract(_) | Error::NoOracle(_) => 2,
        Error::Io(_) => 1,
        Error::InfiniteMass { .. }
        | Error::CannotSample { .. }
        | Error::SingularDiffusion { .. }
        | Error::QuadratureNonConvergence { .. }
        | Error::EmptyBatch
        | Error::MissingControl { .. }
        | Error::KappaSearch(_)
        | Error::NonFinite { .. }
        | Error::OracleNonConvergence(_) => 3,
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Mcq(a) => run_mcq(&a),
        Command::Solve(a) => run_solve(&a),
        Command::Rate(a) => run_rate(&a),
        Command::ValidateMeasure(a) => run_validate(&a),
    }
}

fn resolve(source: &ProblemArgs) -> Result<RunConfig> {
    match (&source.config, source.problem) {
        (Some(path), key) => {
            let cfg = load_config(path)?;
            if let Some(k) = key {
                if k != cfg.problem.key() {
                    return Err(Error::Config(format!(
                        "--problem {k} conflicts with problem `{}` in {}",
                        cfg.problem.key(),
                        path.display()
                    )));
                }
            }
            Ok(cfg)
        }
        (None, Some(key)) => Ok(RunConfig { problem: BenchmarkProblem::from_key(key)?, scheme: SchemeSection::default(), kappa_rule: None }),
        (None, None) => Err(Error::Config("either --problem or --config is required".into())),
    }
}

pub fn parse_kappa_rule(s: &str) -> Result<KappaRule> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{v}` in kappa rule `{s}`")));
    match parts.as_slice() {
        ["convergence"] => Ok(KappaRule::Convergence),
        ["rate"] => Ok(KappaRule::Rate(RateConstants::default())),
        ["rate", a, b] => Ok(KappaRule::Rate(RateConstants { theta: num(a)?, second_moment: num(b)? })),
        ["fixed", k] => Ok(KappaRule::Fixed(num(k)?)),
        _ => Err(Error::Config(format!("unknown kappa rule `{s}` (expected convergence, rate, rate:<c1>:<c2> or fixed:<kappa>)"))),
    }
}

fn kappa_rule(args: &SchemeArgs, cfg: &RunConfig) -> Result<KappaRule> {
    match &args.kappa_rule {
        Some(s) => parse_kappa_rule(s),
        None => Ok(cfg.kappa_rule.unwrap_or(KappaRule::Convergence)),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_solve(a: &SolveArgs) -> Result<()> {
    let cfg = resolve(&a.source)?;
    let s = &cfg.scheme;
    let prob = &cfg.problem;
    let n = a.n.or(s.n).unwrap_or(DEFAULT_N);
    if n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let h = prob.horizon / n as f64;
    let samples = a.samples.or(s.samples).unwrap_or(DEFAULT_SAMPLES);
    let dx = a.dx.or(s.dx).unwrap_or(DEFAULT_DX);
    let padding = a.scheme.padding.or(s.padding).unwrap_or(DEFAULT_PADDING);
    let mut sc = study::config_for(prob, h, samples, dx, padding)?;
    sc.kappa_rule = kappa_rule(&a.scheme, &cfg)?;
    sc.monotonized = a.scheme.monotonized || s.monotonized.unwrap_or(false);
    sc.seed = a.scheme.seed.or(s.seed).unwrap_or(0);
    if let Some(t) = s.poisson_threshold {
        sc.poisson_threshold = t;
    }
    let sol = study::solve(prob, &sc)?;
    let mut out = open_output(a.output.as_deref())?;
    sol.surface.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn run_rate(a: &RateArgs) -> Result<()> {
    let cfg = resolve(&a.source)?;
    let Some(&base_h) = a.ladder.first() else { return Err(Error::Config("--ladder is empty".into())) };
    let template = StudyTemplate {
        base_h,
        base_samples: a.base_samples,
        sample_exponent: a.sample_exponent,
        base_dx: a.base_dx,
        dx_exponent: a.dx_exponent,
        padding: a.scheme.padding.or(cfg.scheme.padding).unwrap_or(StudyTemplate::default().padding),
        kappa_rule: kappa_rule(&a.scheme, &cfg)?,
        monotonized: a.scheme.monotonized || cfg.scheme.monotonized.unwrap_or(false),
        seed: a.scheme.seed.or(cfg.scheme.seed).unwrap_or(StudyTemplate::default().seed),
        ..StudyTemplate::default()
    };
    let report = run_convergence_study(&cfg.problem, &a.ladder, &template)?;
    let mut out = open_output(a.output.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    if let Some(slope) = report.slope {
        eprintln!("log-log slope {slope:.4}");
    }
    Ok(())
}

/// φ(y) = exp(−y²) with ζ ≡ 1, so the target is ∫_{|z|>κ} E[φ(X̂ + s z)] ν(dz).
fn run_mcq(a: &McqArgs) -> Result<()> {
    let cfg = resolve(&a.source)?;
    let prob = &cfg.problem;
    if prob.problem.dim() != 1 {
        return Err(Error::Config("mcq needs a one-dimensional problem".into()));
    }
    if a.samples == 0 {
        return Err(Error::Config("--samples must be >= 1".into()));
    }
    let phi = |y: f64| (-y * y).exp();
    let cf = &prob.problem.dominating;
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "kappa,h,n_samples,mcq_value,std_error,quadrature_value,abs_error")?;
    for (ki, &k) in a.kappa.iter().enumerate() {
        let kappa = TruncationLevel::new(k)?;
        prob.measure.check_admissible(kappa)?;
        for (hi, &h) in a.h.iter().enumerate() {
            let exact = nu_hat_quadrature(phi, |_| 1.0, cf, &prob.measure, kappa, 0.0, a.x, h)?;
            let dynamics = LocalDynamics::new(cf, &prob.measure, kappa, 0.0, &[a.x], h)?;
            let batch = dynamics.batch(a.samples, &mut substream(a.seed, ki as u64, hi as u64));
            let est = nu_hat(|y| phi(y[0]), |_| 1.0, &batch, h)?;
            writeln!(
                out,
                "{k},{h},{},{},{},{exact},{}",
                est.n_samples,
                est.value,
                est.std_error,
                (est.value - exact).abs()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_validate(a: &ValidateArgs) -> Result<()> {
    let measure: LevyMeasure = match &a.measure {
        Some(json) => {
            let m: LevyMeasure =
                serde_json::from_str(json).map_err(|e| Error::Config(format!("--measure: {e}")))?;
            m.validate()?;
            m
        }
        None => resolve(&a.source)?.problem.measure,
    };
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "kappa,functional,closed_form,quadrature,rel_error")?;
    let mut worst = 0.0f64;
    for &k in &a.kappa {
        let kappa = TruncationLevel::new(k)?;
        let closed = measure.functionals(kappa)?;
        let quad = measure.functionals_by_quadrature(kappa, QuadOptions { abs_tol: 0.0, rel_tol: 1e-3 * a.tolerance, ..QuadOptions::default() })?;
        for (name, c, q) in [
            ("tail_mass", closed.tail_mass, quad.tail_mass),
            ("truncated_first_moment", closed.truncated_first_moment, quad.truncated_first_moment),
            ("small_jump_second_moment", closed.small_jump_second_moment, quad.small_jump_second_moment),
        ] {
            let rel = relative_error(c, q);
            worst = worst.max(rel);
            writeln!(out, "{k},{name},{c},{q},{rel:e}")?;
        }
    }
    out.flush()?;
    if worst > a.tolerance {
        return Err(Error::QuadratureNonConvergence { achieved: worst, requested: a.tolerance });
    }
    Ok(())
}

/// |closed − quad| / max(|closed|, 1e-6), so functionals that vanish by
/// symmetry are judged on absolute error.
pub fn relative_error(closed: f64, quad: f64) -> f64 {
    (closed - quad).abs() / closed.abs().max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_rules_parse() {
        assert_eq!(parse_kappa_rule("convergence").unwrap(), KappaRule::Convergence);
        assert_eq!(parse_kappa_rule("fixed:0.25").unwrap(), KappaRule::Fixed(0.25));
        assert_eq!(
            parse_kappa_rule("rate:16:4").unwrap(),
            KappaRule::Rate(RateConstants { theta: 16.0, second_moment: 4.0 })
        );
        assert!(parse_kappa_rule("fixed").is_err());
        assert!(parse_kappa_rule("greedy").is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite { layer: 1, node: 0, x: vec![0.0] }), 3);
        assert_eq!(exit_code(&Error::KappaSearch("x".into())), 3);
    }

    #[test]
    fn missing_source_is_a_config_error() {
        let err = resolve(&ProblemArgs { problem: None, config: None }).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }
}
