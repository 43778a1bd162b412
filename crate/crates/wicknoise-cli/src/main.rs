//! Command-line front end for the chaos-expansion library.
//!
//! Six subcommands cover the library surface.  `simulate` samples
//! truncated process paths on a time grid and writes CSV,
//! `covariance` prints the quadrature covariance next to the closed
//! form where one exists, `wick` multiplies two chaos vectors stored
//! as JSON, `integrate` evaluates a Wick-Ito integral on a fixed
//! partition or by adaptive reference quadrature, `ito-check` runs
//! the Ito-formula verifier in one of its three regimes, and
//! `convergence` sweeps partition sizes and reports the refinement
//! slope.
//!
//! Every artifact embeds the full run configuration together with
//! its SHA-256 hash and the library version, so a rerun with the
//! same configuration and seed is byte-identical and any output file
//! can be traced back to the invocation that produced it.
//!
//! Exit codes: 0 on success, 2 for usage and parameter errors, 3
//! when a computation finishes but misses a requested accuracy
//! target.  The process is single-threaded throughout.
//!
//! The environment variable `WICKNOISE_CACHE` names a directory for
//! persistent coefficient tables; without it every run rebuilds its
//! model from scratch.  No command touches the network.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use wicknoise::chaos::ChaosVector;
use wicknoise::integrator::{
    convergence_study, reference_integral, riemann_sum, uniform_partition, IntegrandFn,
    REFERENCE_TOL,
};
use wicknoise::ito::{
    ito_exponential, ito_pathwise, ito_polynomial, PathwiseFn, DEFAULT_WICK_ORDER,
};
use wicknoise::process::ProcessModel;
use wicknoise::spectral_op::{fbm_variance_constant, r_of_t, SpectralDensity};
use wicknoise::{Error, Result};

/// Padding added on both sides of the requested time range when
/// building a model, so interpolation never runs against the edge of
/// the coefficient tables.
const WINDOW_MARGIN: f64 = 0.25;

/// Starting time substituted for `--t0` on rough presets, whose
/// variance derivative is singular at the origin.
const ROUGH_START: f64 = 0.01;

#[derive(Parser)]
#[command(
    name = "wicknoise",
    version = wicknoise::version(),
    about = "Chaos-expansion calculus: simulation, Wick algebra, Wick-Ito integration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample truncated process paths on a time grid and write CSV.
    Simulate(SimulateArgs),
    /// Compare the quadrature covariance with the closed form.
    Covariance(CovarianceArgs),
    /// Wick-multiply two chaos vectors stored as JSON files.
    Wick(WickArgs),
    /// Evaluate a Wick-Ito integral and write the chaos vector.
    Integrate(IntegrateArgs),
    /// Verify the Ito formula and report the residual.
    #[command(name = "ito-check")]
    ItoCheck(ItoCheckArgs),
    /// Sweep partition sizes and report the refinement slope.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Spectral preset: "white", "fbm:H=<x>", or "quartic".
    #[arg(long)]
    preset: String,
    /// Number of independent paths.
    #[arg(long, default_value_t = 1)]
    paths: usize,
    /// Seed for the per-path random streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time grid "start:stop:step", endpoints inclusive.
    #[arg(long)]
    times: String,
    /// Number of spectral modes kept in the truncation.
    #[arg(long, default_value_t = 64)]
    modes: u32,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CovarianceArgs {
    /// Spectral preset: "white", "fbm:H=<x>", or "quartic".
    #[arg(long)]
    preset: String,
    /// First time argument.
    #[arg(long)]
    t: f64,
    /// Second time argument.
    #[arg(long)]
    s: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WickArgs {
    /// Left factor, a chaos vector as JSON.
    #[arg(long)]
    lhs: PathBuf,
    /// Right factor, a chaos vector as JSON.
    #[arg(long)]
    rhs: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IntegrateArgs {
    /// Spectral preset: "white", "fbm:H=<x>", or "quartic".
    #[arg(long)]
    preset: String,
    /// Integrand fed to the Wick-Ito integral.
    #[arg(long, value_enum, default_value_t = IntegrandKind::X)]
    integrand: IntegrandKind,
    /// Lower integration endpoint.
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    /// Upper integration endpoint.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Riemann-sum partition size; defaults to 1024.
    #[arg(long, conflicts_with = "reference")]
    n: Option<usize>,
    /// Use adaptive reference quadrature instead of a Riemann sum.
    #[arg(long)]
    reference: bool,
    /// Coefficientwise tolerance for the reference quadrature.
    #[arg(long, default_value_t = REFERENCE_TOL)]
    tol: f64,
    /// Number of spectral modes kept in the truncation.
    #[arg(long, default_value_t = 64)]
    modes: u32,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ItoCheckArgs {
    /// Spectral preset: "white", "fbm:H=<x>", or "quartic".
    #[arg(long)]
    preset: String,
    /// Test function for the identity.
    #[arg(long, value_enum)]
    f: TestFunction,
    /// Right endpoint of the time interval.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Left endpoint; defaults to 0, or 0.01 on rough presets.
    #[arg(long)]
    t0: Option<f64>,
    /// Number of quadrature or time steps on the interval.
    #[arg(long, default_value_t = 1024)]
    steps: usize,
    /// Number of spectral modes kept in the truncation.
    #[arg(long, default_value_t = 64)]
    modes: u32,
    /// Frequency of the exponential test function.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Wick order kept by the exponential regime.
    #[arg(long, default_value_t = DEFAULT_WICK_ORDER)]
    wick_order: u32,
    /// Residual tolerance for the exponential regime.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Number of Monte Carlo paths for the pathwise regime.
    #[arg(long, default_value_t = 10_000)]
    paths: u64,
    /// Seed for the pathwise regime.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Spectral preset: "white", "fbm:H=<x>", or "quartic".
    #[arg(long)]
    preset: String,
    /// Integrand fed to the Wick-Ito integral.
    #[arg(long, value_enum, default_value_t = IntegrandKind::X)]
    integrand: IntegrandKind,
    /// Lower integration endpoint.
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    /// Upper integration endpoint.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Comma-separated partition sizes, strictly increasing.
    #[arg(long, default_value = "8,16,32,64,128,256,512,1024")]
    sizes: String,
    /// Dual-norm index; defaults to the model minimum.
    #[arg(long)]
    dual_index: Option<u32>,
    /// Number of spectral modes kept in the truncation.
    #[arg(long, default_value_t = 64)]
    modes: u32,
    /// Report format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IntegrandKind {
    /// The process itself, `Y(t) = X(t)`.
    X,
    /// The constant integrand `Y = 1`.
    One,
}

impl IntegrandKind {
    fn tag(self) -> &'static str {
        match self {
            IntegrandKind::X => "x",
            IntegrandKind::One => "one",
        }
    }

    fn build(self, model: &ProcessModel) -> IntegrandFn {
        match self {
            IntegrandKind::X => IntegrandFn::process(model),
            IntegrandKind::One => IntegrandFn::constant(1.0),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestFunction {
    /// f(x) = x, exact regime.
    X,
    /// f(x) = x^2, exact regime.
    X2,
    /// f(x) = x^3, exact regime.
    X3,
    /// f(x) = x^4, exact regime.
    X4,
    /// f(x) = exp(i*alpha*x) as a (cos, sin) pair, Wick-exponential regime.
    Exp,
    /// f(x) = cos(x), pathwise Monte Carlo regime.
    Cos,
}

impl TestFunction {
    fn tag(self) -> &'static str {
        match self {
            TestFunction::X => "x",
            TestFunction::X2 => "x2",
            TestFunction::X3 => "x3",
            TestFunction::X4 => "x4",
            TestFunction::Exp => "exp",
            TestFunction::Cos => "cos",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    fn tag(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

/// Snapshot of one invocation: every parameter that influences the
/// output, serialized into each artifact the run produces.
#[derive(Serialize)]
struct RunConfig {
    command: &'static str,
    preset: String,
    modes: u32,
    grid: String,
    seed: u64,
    output: String,
    format: &'static str,
    params: Vec<(String, String)>,
}

impl RunConfig {
    fn digest(&self) -> Result<String> {
        let body = serde_json::to_string(self)?;
        let hash = Sha256::digest(body.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// JSON envelope shared by all report-producing commands.
#[derive(Serialize)]
struct Artifact<T: Serialize> {
    config: RunConfig,
    config_hash: String,
    version: &'static str,
    #[serde(flatten)]
    payload: T,
}

#[derive(Serialize)]
struct CovariancePayload {
    t: f64,
    s: f64,
    quadrature: f64,
    closed_form: Option<f64>,
    difference: Option<f64>,
}

#[derive(Serialize)]
struct WickPayload {
    product: ChaosVector,
    product_dual_norm: f64,
}

#[derive(Serialize)]
struct IntegratePayload {
    method: &'static str,
    dual_index: u32,
    dual_norm: f64,
    integral: ChaosVector,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("run `wicknoise <subcommand> --help` for usage");
            if err.is_accuracy() {
                3
            } else {
                2
            }
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Covariance(args) => covariance(args),
        Command::Wick(args) => wick(args),
        Command::Integrate(args) => integrate(args),
        Command::ItoCheck(args) => ito_check(args),
        Command::Convergence(args) => convergence(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let times = parse_times(&args.times)?;
    let density = SpectralDensity::preset(&args.preset)?;
    let (lo, hi) = window(&times);
    let model = build_model(&density, args.modes, lo, hi)?;
    let paths = model.sample_paths(&times, args.paths, args.seed)?;

    let config = RunConfig {
        command: "simulate",
        preset: args.preset.clone(),
        modes: args.modes,
        grid: args.times.clone(),
        seed: args.seed,
        output: output_name(args.out.as_deref()),
        format: "csv",
        params: vec![kv("paths", args.paths)],
    };

    let mut text = csv_preamble(&config)?;
    text.push('t');
    for j in 0..args.paths {
        text.push_str(&format!(",path_{j}"));
    }
    text.push('\n');
    for (i, &t) in times.iter().enumerate() {
        text.push_str(&format!("{t}"));
        for path in &paths {
            text.push_str(&format!(",{}", path[i]));
        }
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)
}

fn covariance(args: CovarianceArgs) -> Result<()> {
    let density = SpectralDensity::preset(&args.preset)?;
    check_finite("t", args.t)?;
    check_finite("s", args.s)?;
    let quadrature = r_of_t(args.t, &density)? + r_of_t(args.s, &density)?
        - r_of_t(args.t - args.s, &density)?;
    let closed_form = closed_form_covariance(&args.preset, args.t, args.s);

    let config = RunConfig {
        command: "covariance",
        preset: args.preset.clone(),
        modes: 0,
        grid: format!("t={},s={}", args.t, args.s),
        seed: 0,
        output: output_name(args.out.as_deref()),
        format: "json",
        params: vec![],
    };
    let payload = CovariancePayload {
        t: args.t,
        s: args.s,
        quadrature,
        closed_form,
        difference: closed_form.map(|c| quadrature - c),
    };
    emit_json(args.out.as_deref(), config, payload)
}

fn wick(args: WickArgs) -> Result<()> {
    let lhs: ChaosVector = serde_json::from_str(&fs::read_to_string(&args.lhs)?)?;
    let rhs: ChaosVector = serde_json::from_str(&fs::read_to_string(&args.rhs)?)?;
    let product = lhs.wick(&rhs)?;
    let product_dual_norm = product.dual_norm(0);

    let config = RunConfig {
        command: "wick",
        preset: "-".into(),
        modes: 0,
        grid: "-".into(),
        seed: 0,
        output: output_name(args.out.as_deref()),
        format: "json",
        params: vec![
            kv("lhs", args.lhs.display()),
            kv("rhs", args.rhs.display()),
        ],
    };
    let payload = WickPayload {
        product,
        product_dual_norm,
    };
    emit_json(args.out.as_deref(), config, payload)
}

fn integrate(args: IntegrateArgs) -> Result<()> {
    let density = SpectralDensity::preset(&args.preset)?;
    let (lo, hi) = window(&[args.a, args.b]);
    let model = build_model(&density, args.modes, lo, hi)?;
    let integrand = args.integrand.build(&model);

    let (method, detail, integral) = if args.reference {
        let value = reference_integral(&integrand, &model, args.a, args.b, args.tol)?;
        ("reference", kv("tol", args.tol), value)
    } else {
        let n = args.n.unwrap_or(1024);
        let partition = uniform_partition(args.a, args.b, n);
        let value = riemann_sum(&integrand, &model, args.a, args.b, &partition)?;
        ("riemann", kv("n", n), value)
    };
    let dual_index = model.dual_exponent() + 1;
    let dual_norm = integral.dual_norm(dual_index);

    let config = RunConfig {
        command: "integrate",
        preset: args.preset.clone(),
        modes: args.modes,
        grid: format!("{}:{}", args.a, args.b),
        seed: 0,
        output: output_name(args.out.as_deref()),
        format: "json",
        params: vec![
            kv("integrand", args.integrand.tag()),
            kv("method", method),
            detail,
        ],
    };
    let payload = IntegratePayload {
        method,
        dual_index,
        dual_norm,
        integral,
    };
    emit_json(args.out.as_deref(), config, payload)
}

fn ito_check(args: ItoCheckArgs) -> Result<()> {
    let density = SpectralDensity::preset(&args.preset)?;
    let rough = density.bound().singular_exp < 0.0;
    let t0 = args.t0.unwrap_or(if rough { ROUGH_START } else { 0.0 });
    let (lo, hi) = window(&[t0, args.t]);
    let model = build_model(&density, args.modes, lo, hi)?;

    let mut params = vec![kv("f", args.f.tag()), kv("steps", args.steps)];
    let report = match args.f {
        TestFunction::X => ito_polynomial(&model, 1, t0, args.t, args.steps)?,
        TestFunction::X2 => ito_polynomial(&model, 2, t0, args.t, args.steps)?,
        TestFunction::X3 => ito_polynomial(&model, 3, t0, args.t, args.steps)?,
        TestFunction::X4 => ito_polynomial(&model, 4, t0, args.t, args.steps)?,
        TestFunction::Exp => {
            params.push(kv("alpha", args.alpha));
            params.push(kv("wick_order", args.wick_order));
            params.push(kv("tol", args.tol));
            ito_exponential(
                &model,
                args.alpha,
                t0,
                args.t,
                args.steps,
                args.wick_order,
                args.tol,
            )?
        }
        TestFunction::Cos => {
            params.push(kv("paths", args.paths));
            ito_pathwise(
                &model,
                &PathwiseFn::cosine(),
                t0,
                args.t,
                args.steps,
                args.paths,
                args.seed,
            )?
        }
    };

    let config = RunConfig {
        command: "ito-check",
        preset: args.preset.clone(),
        modes: args.modes,
        grid: format!("{}:{}", t0, args.t),
        seed: args.seed,
        output: output_name(args.out.as_deref()),
        format: "json",
        params,
    };
    emit_json(args.out.as_deref(), config, report)
}

fn convergence(args: ConvergenceArgs) -> Result<()> {
    let sizes = parse_sizes(&args.sizes)?;
    let density = SpectralDensity::preset(&args.preset)?;
    let (lo, hi) = window(&[args.a, args.b]);
    let model = build_model(&density, args.modes, lo, hi)?;
    let integrand = args.integrand.build(&model);
    let dual_index = args.dual_index.unwrap_or(model.dual_exponent() + 1);
    let report = convergence_study(&integrand, &model, args.a, args.b, &sizes, dual_index)?;

    let config = RunConfig {
        command: "convergence",
        preset: args.preset.clone(),
        modes: args.modes,
        grid: format!("{}:{}", args.a, args.b),
        seed: 0,
        output: output_name(args.out.as_deref()),
        format: args.format.tag(),
        params: vec![
            kv("integrand", args.integrand.tag()),
            kv("sizes", &args.sizes),
            kv("dual_index", dual_index),
        ],
    };
    match args.format {
        OutputFormat::Json => emit_json(args.out.as_deref(), config, report),
        OutputFormat::Csv => {
            let mut text = csv_preamble(&config)?;
            let mut body = Vec::new();
            report.write_csv(&mut body)?;
            text.push_str(&String::from_utf8_lossy(&body));
            emit(args.out.as_deref(), &text)
        }
    }
}

/// Builds a model, routing coefficient tables through the directory
/// named by `WICKNOISE_CACHE` when that variable is set.
fn build_model(density: &SpectralDensity, modes: u32, lo: f64, hi: f64) -> Result<ProcessModel> {
    let cache = std::env::var_os("WICKNOISE_CACHE").map(PathBuf::from);
    if let Some(dir) = &cache {
        fs::create_dir_all(dir)?;
    }
    ProcessModel::build_cached(density, modes, lo, hi, cache.as_deref())
}

/// Table window covering the given points, the origin, and a margin
/// on both sides.
fn window(points: &[f64]) -> (f64, f64) {
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for &p in points {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo - WINDOW_MARGIN, hi + WINDOW_MARGIN)
}

/// Parses "start:stop:step" into an inclusive uniform grid.
fn parse_times(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!(
            "time grid must be start:stop:step, got {spec:?}"
        )));
    }
    let mut nums = [0.0f64; 3];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::Parameter(format!("cannot parse {part:?} in time grid {spec:?}"))
        })?;
    }
    let [start, stop, step] = nums;
    if !start.is_finite() || !stop.is_finite() || !step.is_finite() {
        return Err(Error::Parameter(format!(
            "time grid endpoints must be finite, got {spec:?}"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Parameter(format!(
            "time grid step must be positive, got {step}"
        )));
    }
    if stop < start {
        return Err(Error::Parameter(format!(
            "time grid must not run backwards, got {spec:?}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

/// Parses a comma-separated list of partition sizes.
fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|_| {
                Error::Parameter(format!("cannot parse partition size {part:?} in {spec:?}"))
            })
        })
        .collect()
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be finite, got {value}")))
    }
}

/// Closed-form covariance `r(t) + r(s) - r(t-s)` for the presets
/// whose variance function is elementary; the quartic preset has
/// none.
fn closed_form_covariance(preset: &str, t: f64, s: f64) -> Option<f64> {
    let tag = preset.trim();
    if tag == "white" {
        return Some(t.abs() + s.abs() - (t - s).abs());
    }
    if let Some(rest) = tag.strip_prefix("fbm:H=") {
        if let Ok(h) = rest.parse::<f64>() {
            let v = fbm_variance_constant(h);
            let p = 2.0 * h;
            return Some(v * (t.abs().powf(p) + s.abs().powf(p) - (t - s).abs().powf(p)));
        }
    }
    None
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn output_name(out: Option<&Path>) -> String {
    match out {
        Some(path) => path.display().to_string(),
        None => "-".into(),
    }
}

/// Comment lines carried at the top of every CSV artifact.
fn csv_preamble(config: &RunConfig) -> Result<String> {
    Ok(format!(
        "# wicknoise {}\n# config {}\n# config_hash {}\n",
        wicknoise::version(),
        serde_json::to_string(config)?,
        config.digest()?,
    ))
}

fn emit_json<T: Serialize>(out: Option<&Path>, config: RunConfig, payload: T) -> Result<()> {
    let config_hash = config.digest()?;
    let artifact = Artifact {
        config,
        config_hash,
        version: wicknoise::version(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    emit(out, &text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
