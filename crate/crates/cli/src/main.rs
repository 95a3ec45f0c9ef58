//! `nlto` command-line driver.
//!
//! Exit codes: 0 success, 1 failed check or engine error, 2 usage error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nlto::dataset::{self, binarize, dsc, read_pgm, read_shard, write_pgm, Field, Record, CANVAS};
use nlto::fdcheck::{fd_sweep, FdOptions};
use nlto::problem::{ProblemSpec, Scenario, STRESS_R_MAX};
use nlto::topopt::{write_history_csv, ProblemContext};
use nlto::{Error, ENGINE_VERSION};

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "nlto", version, about = "SIMP topology optimization and training-data generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a single problem and write the design, densities and history.
    Optimize(OptimizeArgs),
    /// Generate a shard of optimized training pairs.
    GenData(GenDataArgs),
    /// Compare adjoint sensitivities with central finite differences.
    VerifySens(VerifyArgs),
    /// Dice similarity of two density files after thresholding.
    Dsc(DscArgs),
    /// Render a density file or shard record as a PGM image.
    ExportImage(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Linear,
    Neohookean,
    Stress,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Linear => Scenario::Linear,
            ScenarioArg::Neohookean => Scenario::NeoHookean,
            ScenarioArg::Stress => Scenario::Stress,
        }
    }
}

fn unit_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    /// Elements along x (scenario default when omitted).
    #[arg(long)]
    nx: Option<usize>,
    /// Elements along y (scenario default when omitted).
    #[arg(long)]
    ny: Option<usize>,
    /// Right-edge node row carrying the load, 0 at the top.
    #[arg(long)]
    load_row: usize,
    /// Load direction in radians, counter-clockwise from +x.
    #[arg(long, allow_negative_numbers = true)]
    angle: f64,
    /// Load magnitude in N (1 for linear, P_max otherwise).
    #[arg(long, value_parser = non_negative)]
    magnitude: Option<f64>,
    /// Filter radius in m (scenario default when omitted).
    #[arg(long, value_parser = positive)]
    rmin: Option<f64>,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    tol: f64,
}

impl ProblemArgs {
    fn spec(&self, v_f: f64) -> nlto::Result<ProblemSpec> {
        let scenario = Scenario::from(self.scenario);
        let magnitude = self.magnitude.unwrap_or(scenario.p_max());
        let mut spec = match scenario {
            Scenario::Linear => {
                let mut s = ProblemSpec::linear(self.load_row, self.angle, v_f);
                s.magnitude = magnitude;
                s
            }
            Scenario::NeoHookean => ProblemSpec::neo_hookean(self.load_row, self.angle, magnitude, v_f),
            Scenario::Stress => ProblemSpec::stress(self.load_row, self.angle, magnitude, v_f, STRESS_R_MAX),
        };
        let (nx, ny) = (self.nx.unwrap_or(spec.nx), self.ny.unwrap_or(spec.ny));
        spec = spec.with_mesh(nx, ny);
        spec.width = nx as f64 / nx.max(ny) as f64;
        spec.height = ny as f64 / nx.max(ny) as f64;
        if let Some(r) = self.rmin {
            spec.r_min = r;
        }
        spec.max_iterations = self.max_iter;
        spec.tolerance = self.tol;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Volume fraction bound.
    #[arg(long, value_parser = unit_fraction)]
    vf: f64,
    /// Design image (PGM). Densities, history and metadata are written next
    /// to it as `<stem>.csv`, `<stem>_history.csv` and `<stem>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Render solid black on white (default is solid white on black).
    #[arg(long)]
    invert: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (capped by NLTO_THREADS).
    #[arg(long)]
    workers: Option<usize>,
    /// Optimization iteration budget per sample.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "stress")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 20)]
    nx: usize,
    #[arg(long, default_value_t = 20)]
    ny: usize,
    /// Uniform design density to linearize around.
    #[arg(long, default_value_t = 0.35, value_parser = unit_fraction)]
    rho: f64,
    #[arg(long)]
    load_row: Option<usize>,
    #[arg(long, default_value_t = 1.5 * std::f64::consts::PI, allow_negative_numbers = true)]
    angle: f64,
    #[arg(long, default_value_t = 1.0e6, value_parser = non_negative)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    rmin: f64,
    /// Finite-difference step; repeat for a sweep.
    #[arg(long = "h", value_parser = positive)]
    h: Vec<f64>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-3, value_parser = positive)]
    threshold: f64,
    /// Per-element report (`quantity,element,adjoint,fd,rel_err`).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct DscArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = dataset::THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct ExportArgs {
    /// Density file (.csv or .pgm) or shard (.nlto).
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Shard record to export.
    #[arg(long, default_value_t = 0)]
    record: usize,
    /// Shard channel to export instead of the target.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    invert: bool,
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::UnsupportedSize { .. } => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Check(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn metadata(command: &str, extra: Value) -> Value {
    let mut m = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "engine_version": ENGINE_VERSION,
        "fingerprint": nlto::fingerprint(),
    });
    if let (Some(m), Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    m
}

fn write_json(path: &Path, value: &Value) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

fn thread_cap() -> Option<usize> {
    std::env::var("NLTO_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

fn cmd_optimize(args: OptimizeArgs) -> CmdResult {
    let spec = args.problem.spec(args.vf)?;
    let res = nlto::optimize(&spec)?;
    let field = Field::from_densities(spec.nx, spec.ny, &res.physical)?;
    write_pgm(&field, &args.out, args.invert)?;
    let density_path = sibling(&args.out, ".csv");
    field.write_csv(BufWriter::new(File::create(&density_path)?))?;
    let history_path = sibling(&args.out, "_history.csv");
    write_history_csv(BufWriter::new(File::create(&history_path)?), &res.history)?;
    let meta = metadata(
        "optimize",
        json!({
            "spec": spec,
            "iterations": res.iterations,
            "converged": res.converged,
            "compliance": res.compliance,
            "initial_compliance": res.initial_compliance,
            "g1": res.g1,
            "g2": res.g2,
            "binary_fraction": res.binary_fraction(),
            "wall_time_s": res.wall_time,
            "outputs": [&args.out, &density_path, &history_path],
        }),
    );
    write_json(&sibling(&args.out, ".json"), &meta)?;
    println!(
        "iterations {} converged {} G {:.6e} g1 {:.3e}{}",
        res.iterations,
        res.converged,
        res.compliance,
        res.g1,
        res.g2.map(|g| format!(" g2 {g:.3e}")).unwrap_or_default()
    );
    Ok(())
}

fn cmd_gendata(args: GenDataArgs) -> CmdResult {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut workers = args.workers.unwrap_or(available).max(1);
    if let Some(cap) = thread_cap() {
        workers = workers.min(cap);
    }
    let scenario = Scenario::from(args.scenario);
    let out = BufWriter::new(File::create(&args.out)?);
    let max_iter = args.max_iter;
    let (summary, out) = dataset::generate(scenario, args.count, args.seed, workers, out, |s| {
        s.max_iterations = max_iter
    })?;
    drop(out);
    let mean = if summary.outcomes.is_empty() {
        0.0
    } else {
        summary.outcomes.iter().map(|o| o.seconds).sum::<f64>() / summary.outcomes.len() as f64
    };
    let meta = metadata(
        "gen-data",
        json!({
            "scenario": scenario.name(),
            "count": args.count,
            "seed": args.seed,
            "max_iterations": max_iter,
            "written": summary.written,
            "failed": summary.failed,
            "failures": summary.outcomes.iter().filter_map(|o| o.error.as_ref().map(|e| json!({"index": o.index, "error": e}))).collect::<Vec<_>>(),
            "output": &args.out,
        }),
    );
    write_json(&sibling(&args.out, ".json"), &meta)?;
    println!(
        "wrote {} samples ({} failed) with {workers} workers, {mean:.2} s per sample",
        summary.written, summary.failed
    );
    if summary.failed > 0 {
        log::warn!("{} samples failed and were written as tombstones", summary.failed);
    }
    if args.count > 0 && summary.written == 0 {
        return Err(Failure::Check("every sample failed".into()));
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let scenario = Scenario::from(args.scenario);
    let load_row = args.load_row.unwrap_or(args.ny / 2);
    let mut spec = match scenario {
        Scenario::Linear => ProblemSpec::linear(load_row, args.angle, args.rho),
        Scenario::NeoHookean => ProblemSpec::neo_hookean(load_row, args.angle, args.magnitude, args.rho),
        Scenario::Stress => ProblemSpec::stress(load_row, args.angle, args.magnitude, args.rho, args.rmin),
    }
    .with_mesh(args.nx, args.ny);
    spec.magnitude = args.magnitude;
    spec.r_min = args.rmin;
    spec.width = args.nx as f64 / args.nx.max(args.ny) as f64;
    spec.height = args.ny as f64 / args.nx.max(args.ny) as f64;
    let ctx = ProblemContext::new(&spec)?;
    let design = vec![args.rho; ctx.n_elements()];
    let steps = if args.h.is_empty() { vec![FdOptions::default().h] } else { args.h };
    let opts = FdOptions {
        corrupt_gradient: args.corrupt_gradient.then_some(1.01),
        ..FdOptions::default()
    };
    let reports = fd_sweep(&ctx, &design, &steps, &opts)?;
    let mut worst = 0.0f64;
    for r in &reports {
        for q in &r.quantities {
            println!(
                "h {:e} {} max_rel_err {:.3e} mean_rel_err {:.3e}",
                r.h,
                q.quantity.name(),
                q.max_rel_err,
                q.mean_rel_err
            );
        }
        worst = worst.max(r.max_rel_err());
    }
    if let Some(path) = &args.csv {
        let mut out = BufWriter::new(File::create(path)?);
        for (k, r) in reports.iter().enumerate() {
            if k == 0 {
                r.write_csv(&mut out)?;
            } else {
                let mut buf = Vec::new();
                r.write_csv(&mut buf)?;
                let text = String::from_utf8_lossy(&buf);
                out.write_all(text.split_once('\n').map_or("", |(_, rest)| rest).as_bytes())?;
            }
        }
        out.flush()?;
        let meta = metadata("verify-sens", json!({ "spec": spec, "rho": args.rho, "steps": steps }));
        write_json(&sibling(path, ".json"), &meta)?;
    }
    if worst < args.threshold {
        println!("PASS max_rel_err {worst:.3e} < {:e}", args.threshold);
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max_rel_err {worst:.3e} >= threshold {:e}",
            args.threshold
        )))
    }
}

fn read_field(path: &Path) -> Result<Field, Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let read = match ext {
        "pgm" => read_pgm(path),
        _ => File::open(path)
            .map_err(Error::from)
            .and_then(|f| Field::read_csv(BufReader::new(f))),
    };
    read.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_dsc(args: DscArgs) -> CmdResult {
    let a = binarize(&read_field(&args.a)?, args.threshold);
    let b = binarize(&read_field(&args.b)?, args.threshold);
    println!("{}", dsc(&a, &b)?);
    Ok(())
}

fn cmd_export(args: ExportArgs) -> CmdResult {
    let field = if args.input.extension().is_some_and(|e| e == "nlto") {
        let shard = read_shard(&args.input)?;
        let record = shard
            .records
            .get(args.record)
            .ok_or_else(|| Failure::Usage(format!("shard has {} records", shard.records.len())))?;
        let Record::Sample { tensor, .. } = record else {
            return Err(Failure::Usage(format!("record {} is a tombstone", args.record)));
        };
        let plane: Vec<f64> = match &args.channel {
            None => tensor.target.iter().map(|&v| v as f64).collect(),
            Some(name) => tensor
                .channel(name)
                .ok_or_else(|| Failure::Usage(format!("no channel {name:?}; have {:?}", tensor.names)))?
                .iter()
                .map(|&v| v as f64)
                .collect(),
        };
        Field::new(CANVAS, CANVAS, plane)?
    } else {
        read_field(&args.input)?
    };
    write_pgm(&field, &args.out, args.invert)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(cap) = thread_cap() {
        if let Err(e) = nlto::init_thread_pool(cap) {
            log::warn!("{e}");
        }
    }
    let result = match cli.command {
        Command::Optimize(a) => cmd_optimize(a),
        Command::GenData(a) => cmd_gendata(a),
        Command::VerifySens(a) => cmd_verify(a),
        Command::Dsc(a) => cmd_dsc(a),
        Command::ExportImage(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
