//! Command-line front end: configuration loading, run manifests, and the
//! files written for each run.
//!
//! Every run directory holds
//!
//! * `manifest.json`: experiment, fully resolved configuration, seed,
//!   artifact names, engine version, start/finish timestamps. Written before
//!   training and rewritten when the run ends. Passing it back through
//!   `--config` repeats the run.
//! * `fields.csv`: one row per evaluation point with columns `x` or `x1,x2`
//!   (reference coordinates), `y1..yn` (physical coordinates), one column
//!   per solution component and, where an exact solution is known, `oracle`.
//! * `loss.csv`: `step,total,interior,boundary,penalty`, one row per
//!   accepted step starting at step 0.
//! * `summary.json`: always the keys `experiment`, `seed`, `steps`,
//!   `l2_error` (null when there is no reference solution), `final_loss`,
//!   `wall_time_s`, `status`, `iterations`, `evaluations`,
//!   `parameter_count` and `details` (experiment specific).
//! * `model.bin` (and `geometry.bin` for shape optimization): network dumps.
//! * `shapes.csv` (shape optimization): `step,index,y1,y2` boundary images.
//! * `plot_*.svg` unless `--plot off`.

pub mod selftest;
pub mod svg;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::experiments::{self, ConfigError, Details, ExperimentConfig, ExperimentError, ExperimentId, ExperimentReport};
use crate::pinn::Geometry;

/// Base directory for runs when `--out` is not given.
pub const OUT_ENV: &str = "DIFFEO_PINN_OUT";

#[derive(Debug, Parser)]
#[command(name = "diffeo-pinn", version, about = "PINN solver on mapped domains and embedded manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Arc length along an Archimedean spiral.
    Eikonal(RunArgs),
    /// Poisson problem on a patch of the unit sphere.
    PoissonSphere(RunArgs),
    /// Stokes flow through a channel of varying width.
    StokesTube(RunArgs),
    /// Joint optimisation of solution and domain map.
    ShapeOpt(RunArgs),
    /// Identity-transform and analytic oracle checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Plot {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML overrides, or a manifest.json from an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer iteration budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory. Defaults to `$DIFFEO_PINN_OUT/<experiment>`, or
    /// `runs/<experiment>` when the variable is unset.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run this many consecutive seeds into `seed-<n>` subdirectories.
    #[arg(long, value_name = "K")]
    pub seeds: Option<usize>,
    #[arg(long, value_enum, default_value = "on")]
    pub plot: Plot,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Run(#[from] ExperimentError),
    #[error("{0}")]
    Selftest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Run(ExperimentError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (id, args) = match cmd {
        Command::Selftest => return run_selftest(),
        Command::Eikonal(a) => (ExperimentId::Eikonal, a),
        Command::PoissonSphere(a) => (ExperimentId::PoissonSphere, a),
        Command::StokesTube(a) => (ExperimentId::StokesTube, a),
        Command::ShapeOpt(a) => (ExperimentId::ShapeOpt, a),
    };
    let mut cfg = match &args.config {
        Some(p) => load_config(id, p)?,
        None => ExperimentConfig::defaults(id),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        cfg.optimizer.steps = n;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(id.name())
    });
    let plot = args.plot == Plot::On;
    match args.seeds {
        None => run_one(&cfg, &out, plot).map(|_| ()),
        Some(0) => Err(ConfigError("--seeds must be at least 1".into()).into()),
        Some(k) => sweep(&cfg, k, &out, plot),
    }
}

fn run_selftest() -> Result<(), CliError> {
    let checks = selftest::checks();
    for c in &checks {
        println!(
            "{} {:<32} error {:.2e} (tol {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.tol
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Selftest(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

/// Read a TOML override file, or the `config` member of a run manifest.
pub fn load_config(id: ExperimentId, path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let located = |e: ConfigError| ConfigError(format!("{}: {}", path.display(), e.0));
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| located(ConfigError(e.to_string())))?;
        let v = match v {
            Value::Object(mut m) if m.contains_key("config") => m.remove("config").expect("checked"),
            other => other,
        };
        return Ok(ExperimentConfig::from_value(id, v).map_err(located)?);
    }
    Ok(ExperimentConfig::from_toml(id, &text).map_err(located)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub manifest: String,
    pub fields: String,
    pub loss: String,
    pub summary: String,
    pub model: String,
    pub geometry: Option<String>,
    pub shapes: Option<String>,
    pub plots: Vec<String>,
}

impl Artifacts {
    pub fn new(id: ExperimentId, plot: bool) -> Self {
        let shape = id == ExperimentId::ShapeOpt;
        let mut plots = vec!["plot_loss.svg".to_string()];
        plots.extend(id.components().iter().map(|c| format!("plot_{c}.svg")));
        if shape {
            plots.push("plot_shapes.svg".into());
        }
        Artifacts {
            manifest: "manifest.json".into(),
            fields: "fields.csv".into(),
            loss: "loss.csv".into(),
            summary: "summary.json".into(),
            model: "model.bin".into(),
            geometry: shape.then(|| "geometry.bin".into()),
            shapes: shape.then(|| "shapes.csv".into()),
            plots: if plot { plots } else { Vec::new() },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: ExperimentId,
    pub version: String,
    pub seed: u64,
    pub parameter_count: usize,
    pub config: ExperimentConfig,
    pub artifacts: Artifacts,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// `running`, `finished` or `failed`.
    pub state: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| io_err(path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Train one configuration into `out` and write every artifact.
pub fn run_one(cfg: &ExperimentConfig, out: &Path, plot: bool) -> Result<ExperimentReport, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = RunManifest {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        parameter_count: cfg.parameter_count(),
        config: cfg.clone(),
        artifacts: Artifacts::new(cfg.experiment, plot),
        started_at: now(),
        finished_at: None,
        state: "running".into(),
    };
    let manifest_path = out.join(&manifest.artifacts.manifest);
    write_json(&manifest_path, &manifest)?;
    log::info!("{} seed {} -> {}", cfg.experiment, cfg.seed, out.display());

    let result = experiments::run(cfg);
    manifest.finished_at = Some(now());
    manifest.state = if result.is_ok() { "finished" } else { "failed" }.into();
    write_json(&manifest_path, &manifest)?;
    let report = result?;
    export(&report, out, &manifest.artifacts)?;
    println!(
        "{}: seed {} steps {} final loss {:.3e} l2 error {} ({:.1}s) -> {}",
        cfg.experiment,
        cfg.seed,
        report.history.len() - 1,
        report.final_loss(),
        report.l2_error.map_or("n/a".into(), |e| format!("{e:.3e}")),
        report.wall_time_s,
        out.display()
    );
    Ok(report)
}

/// Seeds `seed, seed + 1, ..` run one after another into `seed-<n>`.
fn sweep(base: &ExperimentConfig, k: usize, out: &Path, plot: bool) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in 0..k as u64 {
        let mut cfg = base.clone();
        cfg.seed = base.seed + s;
        let r = run_one(&cfg, &out.join(format!("seed-{}", cfg.seed)), plot)?;
        rows.push((cfg.seed, r.l2_error, r.final_loss()));
    }
    let mut l2: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    l2.sort_by(f64::total_cmp);
    let median = (!l2.is_empty()).then(|| {
        let m = l2.len() / 2;
        if l2.len() % 2 == 1 {
            l2[m]
        } else {
            0.5 * (l2[m - 1] + l2[m])
        }
    });
    let summary = json!({
        "experiment": base.experiment,
        "seeds": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        "l2_errors": rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        "final_losses": rows.iter().map(|r| r.2).collect::<Vec<_>>(),
        "median_l2_error": median,
    });
    write_json(&out.join("sweep.json"), &summary)?;
    if let Some(m) = median {
        println!("median l2 error over {k} seeds: {m:.3e}");
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    total: f64,
    interior: f64,
    boundary: f64,
    penalty: f64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Write the per-run files listed in `artifacts` (manifest excluded).
pub fn export(report: &ExperimentReport, dir: &Path, artifacts: &Artifacts) -> Result<(), CliError> {
    write_fields(report, &dir.join(&artifacts.fields))?;
    write_loss(report, &dir.join(&artifacts.loss))?;
    write_json(&dir.join(&artifacts.summary), &summary(report))?;

    let path = dir.join(&artifacts.model);
    let f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    report.model.solution.write_to(f).map_err(|e| ExperimentError::from(e))?;
    if let (Some(name), Geometry::Learned(phi)) = (&artifacts.geometry, &report.model.geometry) {
        let path = dir.join(name);
        let f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        phi.write_to(f).map_err(|e| ExperimentError::from(e))?;
    }
    if let (Some(name), Details::ShapeOpt { snapshots, .. }) = (&artifacts.shapes, &report.details) {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["step", "index", "y1", "y2"]).map_err(csv_err(&path))?;
        for s in snapshots {
            for (i, p) in s.boundary.iter().enumerate() {
                w.serialize((s.step, i, p[0], p[1])).map_err(csv_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }
    for name in &artifacts.plots {
        let path = dir.join(name);
        fs::write(&path, plot(report, name)).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_fields(report: &ExperimentReport, path: &Path) -> Result<(), CliError> {
    let f = &report.fields;
    let local_dim = f.local.first().map_or(0, |p| p.len());
    let global_dim = f.global.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = if local_dim == 1 {
        vec!["x".into()]
    } else {
        (1..=local_dim).map(|i| format!("x{i}")).collect()
    };
    header.extend((1..=global_dim).map(|i| format!("y{i}")));
    header.extend(f.components.iter().cloned());
    if f.oracle.is_some() {
        header.push("oracle".into());
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..f.local.len() {
        let mut row: Vec<f64> = f.local[i].clone();
        row.extend(&f.global[i]);
        row.extend(&f.values[i]);
        if let Some(o) = &f.oracle {
            row.push(o[i]);
        }
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_loss(report: &ExperimentReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in &report.history {
        w.serialize(LossRow {
            step: r.step,
            total: r.total,
            interior: r.interior,
            boundary: r.boundary,
            penalty: r.penalty,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// The `summary.json` document of a report.
pub fn summary(report: &ExperimentReport) -> Value {
    let mut details = serde_json::to_value(&report.details).expect("details serialize");
    if let Some(Value::Array(snaps)) = details.get_mut("snapshots") {
        for s in snaps {
            if let Value::Object(m) = s {
                m.remove("boundary");
            }
        }
    }
    json!({
        "experiment": report.config.experiment,
        "seed": report.seed(),
        "steps": report.history.len().saturating_sub(1),
        "l2_error": report.l2_error,
        "final_loss": report.final_loss(),
        "wall_time_s": report.wall_time_s,
        "status": report.status,
        "iterations": report.iterations,
        "evaluations": report.evaluations,
        "parameter_count": report.config.parameter_count(),
        "details": details,
    })
}

/// Planar view of a physical point; 3-D points get an isometric projection.
fn project(p: &[f64]) -> [f64; 2] {
    match p.len() {
        1 => [p[0], 0.0],
        2 => [p[0], p[1]],
        _ => {
            let c = 30f64.to_radians().cos();
            [(p[0] - p[1]) * c, p[2] - 0.5 * (p[0] + p[1])]
        }
    }
}

fn plot(report: &ExperimentReport, name: &str) -> String {
    let id = report.config.experiment;
    if name == "plot_loss.svg" {
        let series: Vec<(f64, f64)> = report.history.iter().map(|r| (r.step as f64, r.total)).collect();
        return svg::curve(&series, &format!("{id}: total loss"), true);
    }
    if name == "plot_shapes.svg" {
        let loops = match &report.details {
            Details::ShapeOpt { snapshots, .. } => snapshots
                .iter()
                .map(|s| (format!("step {}", s.step), s.boundary.iter().map(|p| project(p)).collect()))
                .collect(),
            _ => Vec::new(),
        };
        return svg::outlines(&loops, &format!("{id}: boundary image"));
    }
    let component = name.trim_start_matches("plot_").trim_end_matches(".svg");
    let k = report.fields.components.iter().position(|c| c == component).unwrap_or(0);
    let points: Vec<[f64; 2]> = report.fields.global.iter().map(|p| project(p)).collect();
    let values: Vec<f64> = report.fields.values.iter().map(|v| v[k]).collect();
    svg::scatter(&points, &values, &format!("{id}: {component}"))
}
