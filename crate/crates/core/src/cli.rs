//! Command-line front end.
//!
//! Exit codes: 0 success, 1 unreadable input or bad flags, 2 invalid problem,
//! 3 solver anomaly, 4 failed self-check.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::affinity::{build_matrix2, build_tensor, AffinityParams, PointSet, SamplingConfig};
use crate::bcagm::{AlphaSchedule, SolverTrace, Termination};
use crate::error::Error;
use crate::harness::{audit_run, run_grid, run_method, ExperimentSpec, Method, ResultRecord};
use crate::selfcheck;

pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID_PROBLEM: i32 = 2;
pub const EXIT_ANOMALY: i32 = 3;
pub const EXIT_SELFCHECK: i32 = 4;

pub const CSV_HEADER: &str = "method,trial,n_in,n_out,sigma,scale,accuracy,score3,iterations,wall_time_ms,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    ZeroThenBound,
    Bound,
    Zero,
}

impl From<AlphaMode> for AlphaSchedule {
    fn from(m: AlphaMode) -> Self {
        match m {
            AlphaMode::ZeroThenBound => AlphaSchedule::ZeroThenBound,
            AlphaMode::Bound => AlphaSchedule::BoundAlways,
            AlphaMode::Zero => AlphaSchedule::ZeroOnly,
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hypermatch", version, about = "Third-order point set matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match the two point sets of a problem file.
    Match(MatchArgs),
    /// Run a synthetic benchmark grid and write CSV.
    Synth(SynthArgs),
    /// Run the built-in invariant checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    alpha_mode: Option<AlphaMode>,
    #[arg(long)]
    triples_per_point: Option<usize>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, env = "HYPERMATCH_THREADS", default_value_t = 0)]
    threads: usize,
    /// Byte-stable output: wall times are omitted or zeroed.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Problem document (JSON).
    input: PathBuf,
    /// Result document; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Inlier count: value, list `a,b` or range `start:end:step`.
    #[arg(long, default_value = "10")]
    n_in: String,
    #[arg(long, default_value = "0")]
    n_out: String,
    #[arg(long, default_value = "0")]
    sigma: String,
    #[arg(long, default_value = "1")]
    scale: String,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Comma-separated method names.
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "bcagm")]
    methods: Vec<Method>,
    /// CSV destination; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    force_fail: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: u32,
    pub p: Vec<[f64; 2]>,
    pub q: Vec<[f64; 2]>,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub alpha_mode: Option<AlphaMode>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub affinity: Option<AffinityParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub format_version: u32,
    pub method: Method,
    /// `assignment[i - 1]` is the 1-based scene point matched to template
    /// point `i`.
    pub assignment: Vec<usize>,
    pub score3: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// Ascent trace of the block coordinate methods.
    pub trace: Option<SolverTrace>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

/// Parses a problem document, naming the offending field on failure.
pub fn parse_problem(text: &str) -> Result<ProblemFile, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        format!("field `{path}`: {}", e.into_inner())
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(format!(
            "field `format_version`: expected {FORMAT_VERSION}, got {}",
            doc.format_version
        ));
    }
    Ok(doc)
}

/// Rounds to 9 significant digits and prints the shortest text that parses
/// back to the rounded value.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let s = rounded.to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn csv_row(r: &ResultRecord) -> String {
    let opt = |v: Option<f64>| v.map(fmt_sig9).unwrap_or_default();
    let mut s = String::new();
    write!(
        s,
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.method,
        r.trial,
        r.n_in,
        r.n_out,
        fmt_sig9(r.sigma),
        fmt_sig9(r.scale),
        opt(r.accuracy),
        opt(r.score3),
        r.iterations.map(|i| i.to_string()).unwrap_or_default(),
        fmt_sig9(r.wall_time_ms),
        r.status
    )
    .expect("writing to a string");
    s
}

pub fn to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

fn split_range(s: &str) -> Result<Option<[&str; 3]>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => Ok(None),
        3 => Ok(Some([parts[0], parts[1], parts[2]])),
        _ => Err(format!("`{s}` is neither a value nor start:end:step")),
    }
}

/// Expands `a,b,c`, `start:end:step` (end inclusive) or mixtures thereof.
pub fn parse_usize_grid(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let mut out = Vec::new();
    for item in s.split(',') {
        match split_range(item)? {
            None => out.push(num(item)?),
            Some([a, b, step]) => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if step == 0 || b < a {
                    return Err(format!("`{item}` needs step > 0 and end >= start"));
                }
                out.extend((a..=b).step_by(step));
            }
        }
    }
    Ok(out)
}

pub fn parse_f64_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| match t.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("`{t}`: {v} is not finite")),
        Err(e) => Err(format!("`{t}`: {e}")),
    };
    let mut out = Vec::new();
    for item in s.split(',') {
        match split_range(item)? {
            None => out.push(num(item)?),
            Some([a, b, step]) => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if !(step > 0.0) || b < a {
                    return Err(format!("`{item}` needs step > 0 and end >= start"));
                }
                let count = ((b - a) / step + 1e-9).floor() as usize + 1;
                // snap accumulated error so that 0:0.1:0.03 yields 0.09
                out.extend((0..count).map(|k| format!("{:.12e}", a + k as f64 * step).parse::<f64>().unwrap()));
            }
        }
    }
    Ok(out)
}

fn write_output(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    Ok(pool.install(f))
}

fn sampling_with(base: SamplingConfig, c: &Common) -> SamplingConfig {
    SamplingConfig {
        triples_per_point: c.triples_per_point.unwrap_or(base.triples_per_point),
        knn: c.knn.unwrap_or(base.knn),
        seed: c.seed.unwrap_or(base.seed),
        ..base
    }
}

fn cmd_match(args: MatchArgs) -> i32 {
    let text = match std::fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("hypermatch: cannot read {}: {e}", args.input.display());
            return EXIT_USAGE;
        }
    };
    let doc = match parse_problem(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("hypermatch: {}: {e}", args.input.display());
            return EXIT_USAGE;
        }
    };
    let method = args.method.or(doc.method).unwrap_or(Method::Bcagm);
    let alpha: AlphaSchedule = args.common.alpha_mode.or(doc.alpha_mode).unwrap_or(AlphaMode::ZeroThenBound).into();
    let sampling = sampling_with(doc.sampling.unwrap_or_default(), &args.common);
    let affinity = doc.affinity.unwrap_or_default();
    if doc.p.len() > doc.q.len() {
        eprintln!(
            "hypermatch: invalid problem: |P| = {} exceeds |Q| = {}",
            doc.p.len(),
            doc.q.len()
        );
        return EXIT_INVALID_PROBLEM;
    }

    let deterministic = args.common.deterministic;
    let outcome = with_threads(args.common.threads, || -> Result<(ResultFile, bool), (i32, String)> {
        let invalid = |e: Error| (EXIT_INVALID_PROBLEM, format!("invalid problem: {e}"));
        let p = PointSet::new(doc.p.clone()).map_err(invalid)?;
        let q = PointSet::new(doc.q.clone()).map_err(invalid)?;
        let started = Instant::now();
        let tensor = build_tensor(&p, &q, &sampling, &affinity).map_err(invalid)?;
        let matrix2 = match method {
            Method::Ipfp2 | Method::Mpm2 => Some(build_matrix2(&p, &q, &affinity).map_err(invalid)?),
            _ => None,
        };
        let run = run_method(method, &tensor, matrix2.as_ref(), alpha).map_err(invalid)?;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let audit = audit_run(&tensor, &run);
        let trace = run.solution.as_ref().map(|s| s.trace.clone());
        let termination = trace.as_ref().map(|t| t.terminated);
        let anomalous = audit.is_err() || termination == Some(Termination::MaxIterations);
        if let Err(e) = audit {
            eprintln!("hypermatch: solver anomaly: {e}");
        } else if anomalous {
            eprintln!("hypermatch: solver anomaly: outer iteration cap reached");
        }
        Ok((
            ResultFile {
                format_version: FORMAT_VERSION,
                method,
                assignment: run.assignment.row_map().iter().map(|c| c + 1).collect(),
                score3: run.score3,
                iterations: run.iterations,
                termination,
                trace,
                wall_time_ms: (!deterministic).then_some(elapsed),
            },
            anomalous,
        ))
    });
    let (result, anomalous) = match outcome {
        Ok(Ok(r)) => r,
        Ok(Err((code, msg))) => {
            eprintln!("hypermatch: {msg}");
            return code;
        }
        Err(e) => {
            eprintln!("hypermatch: {e}");
            return EXIT_USAGE;
        }
    };
    let mut text = serde_json::to_string_pretty(&result).expect("result serializes");
    text.push('\n');
    if let Err(e) = write_output(args.output.as_deref(), &text) {
        eprintln!("hypermatch: cannot write result: {e}");
        return EXIT_USAGE;
    }
    if anomalous {
        EXIT_ANOMALY
    } else {
        EXIT_OK
    }
}

fn synth_spec(args: &SynthArgs) -> Result<ExperimentSpec, String> {
    let spec = ExperimentSpec {
        n_in: parse_usize_grid(&args.n_in).map_err(|e| format!("--n-in {e}"))?,
        n_out: parse_usize_grid(&args.n_out).map_err(|e| format!("--n-out {e}"))?,
        sigma: parse_f64_grid(&args.sigma).map_err(|e| format!("--sigma {e}"))?,
        scale: parse_f64_grid(&args.scale).map_err(|e| format!("--scale {e}"))?,
        trials: args.trials,
        seed_base: args.common.seed.unwrap_or(0),
        methods: args.methods.clone(),
        sampling: sampling_with(SamplingConfig::default(), &args.common),
        affinity: AffinityParams::default(),
        alpha_schedule: args.common.alpha_mode.unwrap_or(AlphaMode::ZeroThenBound).into(),
        deterministic: args.common.deterministic,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn cmd_synth(args: SynthArgs) -> i32 {
    let spec = match synth_spec(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("hypermatch: {e}");
            return EXIT_USAGE;
        }
    };
    let records = match with_threads(args.common.threads, || run_grid(&spec)) {
        Ok(Ok(r)) => r,
        Ok(Err(e @ Error::TraceViolation(_))) => {
            eprintln!("hypermatch: solver anomaly: {e}");
            return EXIT_ANOMALY;
        }
        Ok(Err(e)) => {
            eprintln!("hypermatch: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("hypermatch: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = write_output(args.output.as_deref(), &to_csv(&records)) {
        eprintln!("hypermatch: cannot write CSV: {e}");
        return EXIT_USAGE;
    }
    EXIT_OK
}

fn cmd_selfcheck(args: SelfcheckArgs) -> i32 {
    let reports = selfcheck::run(args.seed, args.force_fail);
    let mut ok = true;
    for r in &reports {
        match &r.detail {
            None => println!("PASS {}", r.name),
            Some(d) => {
                ok = false;
                println!("FAIL {}: {d}", r.name);
            }
        }
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_SELFCHECK
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    }
}
