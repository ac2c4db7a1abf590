use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffeo_pinn::cli::load_config;
use diffeo_pinn::experiments::{self, ExperimentConfig, ExperimentId};
use serde_json::Value;

const SMALL: &str = "[network]\nwidths = [2, 16, 1]\n[collocation]\ninterior = 64\nboundary = 2\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffeo-pinn"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let o = run(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = run(&["eikonal", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["eikonal", "--plot", "maybe"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["eikonal", "poisson-sphere", "stokes-tube", "shape-opt", "selftest"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn config_errors_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.toml", "[network]\nbogus = 1\n", vec!["network.bogus", "widths"]),
        ("syntax.toml", "[network\n", vec!["line 1"]),
        ("type.toml", "[optimizer]\nsteps = \"many\"\n", vec!["optimizer.steps"]),
        ("section.toml", "[solver]\nx = 1\n", vec!["solver"]),
        ("geometry.toml", "[geometry]\nradius = 2.0\n", vec!["geometry.radius"]),
    ];
    for (name, text, needles) in cases {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        let o = run(&["eikonal", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        for n in needles {
            assert!(stderr(&o).contains(n), "{name}: {n:?} not in {}", stderr(&o));
        }
    }
    let o = run(&["eikonal", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 5);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn run_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = run(&[
        "eikonal",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "8",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let summary = json(&out.join("summary.json"));
    for key in [
        "experiment",
        "seed",
        "steps",
        "l2_error",
        "final_loss",
        "wall_time_s",
        "status",
        "iterations",
        "evaluations",
        "parameter_count",
        "details",
    ] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["seed"], 3);

    let (header, fields) = csv_rows(&out.join("fields.csv"));
    assert_eq!(header, ["x", "y1", "y2", "u", "oracle"]);
    assert_eq!(fields.len(), 200);
    let (header, loss) = csv_rows(&out.join("loss.csv"));
    assert_eq!(header, ["step", "total", "interior", "boundary", "penalty"]);
    assert_eq!(loss.len() as u64, summary["steps"].as_u64().unwrap() + 1);
    assert_eq!(loss[0][0], 0.0);

    // The library run with the resolved config reports the same numbers.
    let mut resolved = load_config(ExperimentId::Eikonal, &cfg).unwrap();
    resolved.seed = 3;
    resolved.optimizer.steps = 8;
    let report = experiments::run(&resolved).unwrap();
    assert_eq!(summary["l2_error"].as_f64(), report.l2_error);
    assert_eq!(summary["final_loss"].as_f64(), Some(report.final_loss()));
    for (row, r) in loss.iter().zip(&report.history) {
        assert_eq!(row[1], r.total);
    }

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["state"], "finished");
    assert_eq!(manifest["config"]["network"]["widths"], serde_json::json!([2, 16, 1]));
    assert_eq!(manifest["parameter_count"], 2 * 16 + 16 + 16 + 1);
    assert_eq!(manifest["config"]["optimizer"]["memory"], 50);
    for f in ["plot_loss.svg", "plot_u.svg", "model.bin"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn manifest_reproduces_the_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    fs::write(&cfg, "[network]\nwidths = [3, 16, 1]\n[collocation]\ninterior = 64\neval_points = 256\n").unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let first = ["poisson-sphere", "--config", cfg.to_str().unwrap(), "--steps", "6", "--plot", "off"];
    let mut args = first.to_vec();
    args.extend(["--out", a.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(0));
    let mut args = first.to_vec();
    args.extend(["--out", b.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(0));
    let manifest = a.join("manifest.json");
    let o = run(&["poisson-sphere", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let loss = fs::read(a.join("loss.csv")).unwrap();
    assert_eq!(loss, fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(loss, fs::read(c.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("fields.csv")).unwrap(), fs::read(c.join("fields.csv")).unwrap());
    assert!(!a.join("plot_loss.svg").exists());
}

#[test]
fn seed_sweep_and_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = bin()
        .args(["eikonal", "--config", cfg.to_str().unwrap(), "--steps", "2", "--seeds", "2", "--seed", "5"])
        .env("DIFFEO_PINN_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let root = dir.path().join("eikonal");
    for s in [5, 6] {
        let summary = json(&root.join(format!("seed-{s}")).join("summary.json"));
        assert_eq!(summary["seed"], s);
    }
    let sweep = json(&root.join("sweep.json"));
    assert_eq!(sweep["seeds"], serde_json::json!([5, 6]));
    assert!(sweep["median_l2_error"].is_f64());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = run(&["eikonal", "--config", cfg.to_str().unwrap(), "--steps", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn stokes_and_shape_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(&cfg, "[network]\nwidths = [2, 8, 3]\n[collocation]\ninterior = 16\neval_points = 100\n").unwrap();
    let out = dir.path().join("stokes");
    let o = run(&["stokes-tube", "--config", cfg.to_str().unwrap(), "--steps", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = csv_rows(&out.join("fields.csv"));
    assert_eq!(header, ["x1", "x2", "y1", "y2", "u", "v", "p"]);
    assert_eq!(rows.len(), 100);
    assert!(json(&out.join("summary.json"))["l2_error"].is_null());
    for f in ["plot_u.svg", "plot_v.svg", "plot_p.svg"] {
        assert!(out.join(f).exists());
    }

    fs::write(
        &cfg,
        "[network]\nwidths = [2, 8, 1]\ngeometry_widths = [2, 8, 2]\n[collocation]\ninterior = 16\nboundary = 16\neval_points = 100\n",
    )
    .unwrap();
    let out = dir.path().join("shape");
    let o = run(&["shape-opt", "--config", cfg.to_str().unwrap(), "--steps", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["geometry.bin", "shapes.csv", "plot_shapes.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (header, _) = csv_rows(&out.join("shapes.csv"));
    assert_eq!(header, ["step", "index", "y1", "y2"]);
}

#[test]
fn config_file_semantics() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    for id in ExperimentId::ALL {
        assert_eq!(load_config(id, &empty).unwrap(), ExperimentConfig::defaults(id));
    }
    let p = dir.path().join("steps.toml");
    fs::write(&p, "[optimizer]\nsteps = 5000\n").unwrap();
    assert_eq!(load_config(ExperimentId::Eikonal, &p).unwrap().optimizer.steps, 5000);
    assert_eq!(ExperimentConfig::defaults(ExperimentId::StokesTube).optimizer.steps, 5000);
    let p = dir.path().join("w.toml");
    fs::write(&p, "[network]\nwidths = [2, 64, 1]\n").unwrap();
    assert_eq!(load_config(ExperimentId::Eikonal, &p).unwrap().parameter_count(), 2 * 64 + 64 + 64 + 1);
}
