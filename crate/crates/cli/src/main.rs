//! `dvnc` command-line runner.
//!
//! Exit status is 0 on success, 2 for an invalid configuration or usage,
//! and 1 for any failure while running. Log verbosity comes from `DVNC_LOG`.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dvnc::harness::{self, emit, format_f64, ExperimentConfig, ExperimentKind, Format, RunRecord};
use dvnc::quantizer::{codebook_from_json, Codebook};
use dvnc::theory::{self, BoundInputs};
use dvnc::Error;

#[derive(Parser)]
#[command(name = "dvnc", version, about = "Discrete-valued neural communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run(RunArgs),
    /// Run a config over an L × G × seed grid.
    Sweep(SweepArgs),
    /// Evaluate the closed-form generalization bounds.
    Bounds(BoundsArgs),
    /// Monte Carlo check of the concentration inequality.
    Hoeffding(HoeffdingArgs),
    /// Total variance of quantized Gaussian vectors over an L × G grid.
    Gaussian(GaussianArgs),
    /// Displacement field of a 2-D codebook on a regular grid.
    VectorField(VectorFieldArgs),
    /// Snap vectors read from stdin (one per line) to a codebook.
    Quantize(QuantizeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (key = value lines or JSON). Defaults apply when absent.
    config: Option<PathBuf>,
    /// Experiment kind, overriding the config.
    #[arg(long)]
    kind: Option<String>,
    /// Extra `key=value` overrides using the config's dotted names.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; metrics go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Codebook sizes.
    #[arg(long = "l", value_delimiter = ',', required = true)]
    l_values: Vec<usize>,
    /// Head counts.
    #[arg(long = "g", value_delimiter = ',', required = true)]
    g_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 2.0)]
    g: f64,
    #[arg(long, default_value_t = 4.0)]
    l: f64,
    #[arg(long, default_value_t = 2000.0)]
    n: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 8.0)]
    m: f64,
    #[arg(long, default_value_t = 0.0)]
    r_h: f64,
    #[arg(long, default_value_t = 0.0)]
    varsigma_bar: f64,
    #[arg(long, default_value_t = 0.0)]
    zeta: f64,
    #[arg(long, default_value_t = 1.0)]
    c_j: f64,
    #[arg(long, default_value_t = 1.0)]
    l_d: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HoeffdingArgs {
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 2)]
    g: usize,
    /// Segment dimension of the random codebook.
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GaussianArgs {
    #[arg(long, default_value_t = 8)]
    m: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,8")]
    l_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    g_values: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VectorFieldArgs {
    /// Codebook JSON file with 2-D codes.
    #[arg(long, conflicts_with = "codes")]
    codebook: Option<PathBuf>,
    /// Inline codes as `x,y;x,y;…`.
    #[arg(long, allow_hyphen_values = true)]
    codes: Option<String>,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    hi: f64,
    #[arg(long, default_value_t = 21)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Codebook JSON file (as written by the library).
    #[arg(long)]
    codebook: PathBuf,
}

/// Errors tagged with the exit status they map to.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DVNC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Hoeffding(a) => cmd_hoeffding(a),
        Command::Gaussian(a) => cmd_gaussian(a),
        Command::VectorField(a) => cmd_vector_field(a),
        Command::Quantize(a) => cmd_quantize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("dvnc: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("dvnc: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(a: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let base = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(k) = &a.kind {
        overrides.push(("kind".to_string(), format!("\"{k}\"")));
    }
    if let Some(s) = a.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(o) = &a.out {
        overrides.push(("out".to_string(), format!("\"{}\"", o.display())));
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(base.with_overrides(&overrides)?)
}

fn write_records(records: &[RunRecord], kind: ExperimentKind, out: Option<&Path>) -> CliResult {
    match out {
        Some(dir) => {
            let mut files = emit(records, kind, dir, Format::Csv)?;
            files.extend(emit(records, kind, dir, Format::Json)?);
            for f in files {
                info!("wrote {}", f.display());
            }
        }
        None => print!("{}", harness::metrics_csv(records, kind)?),
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> CliResult {
    let cfg = load_config(&a.config)?;
    let record = harness::run(&cfg)?;
    for w in &record.warnings {
        log::warn!("{w}");
    }
    write_records(std::slice::from_ref(&record), cfg.kind, cfg.out.as_deref())
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    let cfg = load_config(&a.config)?;
    let result = harness::sweep(&cfg, &a.l_values, &a.g_values, &a.seeds)?;
    write_records(&result.records, cfg.kind, cfg.out.as_deref())?;
    if let Some(dir) = cfg.out.as_deref() {
        let text: String = result.skipped.iter().map(|s| format!("{s}\n")).collect();
        harness::write_atomic(&dir.join("skipped.txt"), &text)?;
    }
    Ok(())
}

/// Writes `text` to `out` atomically, or to stdout.
fn output(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            harness::write_atomic(p, text)?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",") + "\n";
    for r in rows {
        s += &(r.join(",") + "\n");
    }
    s
}

fn cmd_bounds(a: BoundsArgs) -> CliResult {
    let p = BoundInputs {
        g: a.g,
        l: a.l,
        n: a.n,
        delta: a.delta,
        alpha: a.alpha,
        m: a.m,
        r_h: a.r_h,
        varsigma_bar: a.varsigma_bar,
        zeta: a.zeta,
        c_j: a.c_j,
        l_d: a.l_d,
        rho: a.rho,
    };
    let values = [
        ("with_discretization", theory::bound_with_discretization(&p)?),
        ("without_discretization", theory::bound_without_discretization(&p)?),
        ("ln_appendix_with", theory::ln_appendix_bound_with(&p)?),
        ("ln_appendix_without", theory::ln_appendix_bound_without(&p)?),
    ];
    let text = csv(&["bound", "value"], values.iter().map(|(k, v)| vec![k.to_string(), format_f64(*v)]));
    output(&text, a.out.as_deref())
}

fn cmd_hoeffding(a: HoeffdingArgs) -> CliResult {
    let rec = theory::verify_hoeffding(a.l, a.g, a.d, a.n, a.delta, a.trials, a.seed)?;
    let text = csv(
        &["trial", "gap", "bound", "violated"],
        rec.trials
            .iter()
            .map(|t| vec![t.trial.to_string(), format_f64(t.gap), format_f64(t.bound), (t.violated as u8).to_string()]),
    );
    output(&text, a.out.as_deref())?;
    eprintln!("violation rate {}", rec.violation_rate);
    Ok(())
}

fn cmd_gaussian(a: GaussianArgs) -> CliResult {
    let sweep = theory::gaussian_variance_sweep(a.m, &a.l_values, &a.g_values, a.samples, a.trials, a.seed)?;
    let text = csv(
        &["l", "g", "trial", "variance"],
        sweep
            .rows
            .iter()
            .map(|r| vec![r.l.to_string(), r.g.to_string(), r.trial.to_string(), format_f64(r.variance)]),
    );
    output(&text, a.out.as_deref())
}

fn parse_codes(spec: &str) -> CliResult<Codebook> {
    let rows = spec
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::Config(format!("bad code value `{v}`: {e}"))))
                .collect::<CliResult<Vec<f64>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    Codebook::from_rows(&rows).map_err(|e| Failure::Config(e.to_string()))
}

fn read_codebook(path: &Path) -> CliResult<(dvnc::quantizer::QuantizerConfig, Codebook)> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    codebook_from_json(&text).map_err(|e| Failure::Config(e.to_string()))
}

fn cmd_vector_field(a: VectorFieldArgs) -> CliResult {
    let codebook = match (&a.codebook, &a.codes) {
        (Some(p), _) => read_codebook(p)?.1,
        (None, Some(c)) => parse_codes(c)?,
        (None, None) => return Err(Failure::Config("vector-field needs --codebook or --codes".into())),
    };
    let field = theory::vector_field(a.lo, a.hi, a.steps, &codebook).map_err(|e| Failure::Config(e.to_string()))?;
    let text = csv(
        &["x", "y", "dx", "dy", "code"],
        field
            .iter()
            .map(|p| vec![format_f64(p.x), format_f64(p.y), format_f64(p.dx), format_f64(p.dy), p.code.to_string()]),
    );
    output(&text, a.out.as_deref())
}

fn cmd_quantize(a: QuantizeArgs) -> CliResult {
    let (config, codebook) = read_codebook(&a.codebook)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "indices,z")?;
    for (n, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let h = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| Failure::Runtime(format!("line {}: {e}", n + 1)))?;
        let snapped = codebook
            .quantize(&h, &config)
            .map_err(|e| Failure::Runtime(format!("line {}: {e}", n + 1)))?;
        let idx: Vec<String> = snapped.indices.iter().map(usize::to_string).collect();
        let z: Vec<String> = snapped.z.iter().map(|&v| format_f64(v)).collect();
        writeln!(out, "{},{}", idx.join(" "), z.join(" "))?;
    }
    Ok(())
}
