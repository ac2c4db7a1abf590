//! The four reference experiments with their default configurations.

pub mod eikonal;
pub mod oracle;
pub mod poisson;
pub mod shape;
pub mod stokes;

use std::fmt;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{CollocationSet, GeometryError, Point, ReferenceDomain, Strategy};
use crate::network::{parameter_count, Activation, NetworkError};
use crate::optimize::{AdamConfig, Control, LbfgsConfig, Status};
use crate::pinn::{
    self, LossReport, Model, OptimizerKind, PdeProblem, PinnError, Progress, Route, TrainConfig, TrainOutcome,
};

pub use oracle::{arc_length_closed_form, arc_length_oracle, l2_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Eikonal,
    PoissonSphere,
    StokesTube,
    ShapeOpt,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::Eikonal,
        ExperimentId::PoissonSphere,
        ExperimentId::StokesTube,
        ExperimentId::ShapeOpt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Eikonal => "eikonal",
            ExperimentId::PoissonSphere => "poisson-sphere",
            ExperimentId::StokesTube => "stokes-tube",
            ExperimentId::ShapeOpt => "shape-opt",
        }
    }

    pub fn domain(&self) -> ReferenceDomain {
        match self {
            ExperimentId::Eikonal => ReferenceDomain::UnitInterval,
            _ => ReferenceDomain::UnitSquare,
        }
    }

    /// Solution component names, in network output order.
    pub fn components(&self) -> &'static [&'static str] {
        match self {
            ExperimentId::StokesTube => &["u", "v", "p"],
            _ => &["u"],
        }
    }

    fn io(&self) -> (usize, usize) {
        match self {
            ExperimentId::Eikonal => (2, 1),
            ExperimentId::PoissonSphere => (3, 1),
            ExperimentId::StokesTube => (2, 3),
            ExperimentId::ShapeOpt => (2, 1),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training failed: {0}")]
    Pinn(#[from] PinnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Widths of the learned geometry (shape optimization only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiralConfig {
    pub l: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub psi0: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedConfig {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GeometryConfig {
    Spiral(SpiralConfig),
    Sphere(SphereConfig),
    Tube(TubeConfig),
    Learned(LearnedConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationConfig {
    pub interior: usize,
    pub boundary: usize,
    pub strategy: Strategy,
    /// Size of the evaluation grid (a perfect square in 2-D).
    pub eval_points: usize,
    /// Boundary samples used to check exact conditions.
    pub boundary_check: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub steps: usize,
    pub route: Route,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once the relative loss change stays below `rel_tol` for
    /// `patience` consecutive steps (0 disables).
    pub rel_tol: f64,
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let l = LbfgsConfig::default();
        let a = AdamConfig::default();
        Self {
            kind: OptimizerKind::Lbfgs,
            steps: 1000,
            route: Route::Jet,
            memory: l.memory,
            c1: l.c1,
            c2: l.c2,
            max_line_search: l.max_line_search,
            grad_tol: l.grad_tol,
            step_tol: l.step_tol,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            rel_tol: 0.0,
            patience: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            steps: self.steps,
            route: self.route,
            lbfgs: LbfgsConfig {
                memory: self.memory,
                max_iterations: self.steps,
                c1: self.c1,
                c2: self.c2,
                max_line_search: self.max_line_search,
                grad_tol: self.grad_tol,
                step_tol: self.step_tol,
            },
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcStyle {
    Exact,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub style: BcStyle,
    /// Weak boundary penalty weight.
    pub weight: f64,
    /// Corner anchor weight (shape optimization only).
    pub corner_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Boundary snapshots every this many steps (shape optimization).
    pub snapshot_every: usize,
    /// Samples across a section for flux quadrature (Stokes).
    pub flux_samples: usize,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub network: NetworkConfig,
    pub geometry: GeometryConfig,
    pub collocation: CollocationConfig,
    pub optimizer: OptimizerConfig,
    pub bc: BcConfig,
    pub report: ReportConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentId,
    seed: u64,
    network: NetworkConfig,
    geometry: Value,
    collocation: CollocationConfig,
    optimizer: OptimizerConfig,
    bc: BcConfig,
    report: ReportConfig,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let path = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        ConfigError(format!("{path}: {}", e.into_inner()))
    })
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let square = id.domain() == ReferenceDomain::UnitSquare;
        let hidden = vec![128, 128, 128];
        let (i, o) = id.io();
        let widths = |h: &[usize]| {
            let mut w = vec![i];
            w.extend_from_slice(h);
            w.push(o);
            w
        };
        let mut optimizer = OptimizerConfig::default();
        let mut bc = BcConfig {
            style: BcStyle::Exact,
            weight: 1.0,
            corner_weight: 100.0,
        };
        let mut network = NetworkConfig {
            widths: widths(&hidden),
            activation: Activation::Tanh,
            geometry_widths: None,
        };
        let geometry = match id {
            ExperimentId::Eikonal => GeometryConfig::Spiral(SpiralConfig {
                l: 3.5 * std::f64::consts::PI,
                a: 0.1,
            }),
            ExperimentId::PoissonSphere => GeometryConfig::Sphere(SphereConfig { psi0: 0.5, theta0: 1.0 }),
            ExperimentId::StokesTube => GeometryConfig::Tube(TubeConfig {
                base: 0.2,
                amp: 0.1,
                freq: 3.0 * std::f64::consts::PI,
            }),
            ExperimentId::ShapeOpt => GeometryConfig::Learned(LearnedConfig {}),
        };
        match id {
            ExperimentId::StokesTube => optimizer.steps = 5000,
            ExperimentId::ShapeOpt => {
                optimizer.steps = 200;
                optimizer.rel_tol = 1e-8;
                optimizer.patience = 3;
                bc.style = BcStyle::Weak;
                network.widths = widths(&[1024]);
                network.geometry_widths = Some(vec![2, 1024, 2]);
            }
            _ => {}
        }
        Self {
            experiment: id,
            seed: 0,
            network,
            geometry,
            collocation: CollocationConfig {
                interior: 1024,
                boundary: 256,
                strategy: Strategy::Grid,
                eval_points: if square { 64 * 64 } else { 200 },
                boundary_check: 400,
            },
            optimizer,
            bc,
            report: ReportConfig {
                snapshot_every: 5,
                flux_samples: 201,
            },
        }
    }

    /// Overlay `overrides` (a partial configuration) on the defaults of `id`.
    pub fn from_value(id: ExperimentId, overrides: Value) -> Result<Self, ConfigError> {
        if !overrides.is_object() {
            return Err(ConfigError("configuration must be a table".into()));
        }
        if let Some(e) = overrides.get("experiment") {
            if e.as_str() != Some(id.name()) {
                return Err(ConfigError(format!("experiment: file is for {e}, running {id}")));
            }
        }
        let mut merged = serde_json::to_value(Self::defaults(id)).expect("config serializes");
        merge(&mut merged, overrides);
        let raw: RawConfig = from_value(merged, "")?;
        let geometry = match id {
            ExperimentId::Eikonal => GeometryConfig::Spiral(from_value(raw.geometry, "geometry")?),
            ExperimentId::PoissonSphere => GeometryConfig::Sphere(from_value(raw.geometry, "geometry")?),
            ExperimentId::StokesTube => GeometryConfig::Tube(from_value(raw.geometry, "geometry")?),
            ExperimentId::ShapeOpt => GeometryConfig::Learned(from_value(raw.geometry, "geometry")?),
        };
        let cfg = Self {
            experiment: raw.experiment,
            seed: raw.seed,
            network: raw.network,
            geometry,
            collocation: raw.collocation,
            optimizer: raw.optimizer,
            bc: raw.bc,
            report: raw.report,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a TOML document of overrides.
    pub fn from_toml(id: ExperimentId, text: &str) -> Result<Self, ConfigError> {
        let value: Value = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        Self::from_value(id, value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let id = self.experiment;
        let bad = |m: String| Err(ConfigError(m));
        let (i, o) = id.io();
        let w = &self.network.widths;
        if w.len() < 2 || w.contains(&0) {
            return bad(format!("network.widths: need at least two positive widths, got {w:?}"));
        }
        if w[0] != i || w[w.len() - 1] != o {
            return bad(format!("network.widths: {id} needs {i} inputs and {o} outputs, got {w:?}"));
        }
        match (&self.network.geometry_widths, id) {
            (Some(g), ExperimentId::ShapeOpt) => {
                if g.len() < 2 || g.contains(&0) || g[0] != 2 || g[g.len() - 1] != 2 {
                    return bad(format!("network.geometry_widths: need a 2→2 network, got {g:?}"));
                }
            }
            (None, ExperimentId::ShapeOpt) => return bad("network.geometry_widths: required for shape-opt".into()),
            (Some(_), _) => return bad(format!("network.geometry_widths: only applies to shape-opt, not {id}")),
            (None, _) => {}
        }
        let c = &self.collocation;
        if c.interior == 0 {
            return bad("collocation.interior: must be positive".into());
        }
        let square = id.domain() == ReferenceDomain::UnitSquare;
        let is_square = |n: usize| {
            let k = (n as f64).sqrt().round() as usize;
            k * k == n
        };
        if square && c.strategy == Strategy::Grid && !is_square(c.interior) {
            return bad(format!("collocation.interior: grid sampling needs a perfect square, got {}", c.interior));
        }
        if c.eval_points < 2 || (square && !is_square(c.eval_points)) {
            return bad(format!(
                "collocation.eval_points: need at least 2{}, got {}",
                if square { " and a perfect square" } else { "" },
                c.eval_points
            ));
        }
        self.optimizer
            .train_config()
            .lbfgs
            .validate()
            .map_err(|e| ConfigError(format!("optimizer: {e}")))?;
        self.optimizer
            .train_config()
            .adam
            .validate()
            .map_err(|e| ConfigError(format!("optimizer: {e}")))?;
        if !(self.optimizer.rel_tol >= 0.0) {
            return bad("optimizer.rel_tol: must be non-negative".into());
        }
        match (self.bc.style, id) {
            (BcStyle::Weak, ExperimentId::Eikonal | ExperimentId::StokesTube) => {
                return bad(format!("bc.style: {id} only supports exact boundary conditions"));
            }
            (BcStyle::Weak, _) if !(self.bc.weight > 0.0) => {
                return bad(format!("bc.weight: must be positive, got {}", self.bc.weight));
            }
            (BcStyle::Weak, _) if c.boundary == 0 => {
                return bad("collocation.boundary: weak boundary conditions need samples".into());
            }
            _ => {}
        }
        if !(self.bc.corner_weight >= 0.0) {
            return bad("bc.corner_weight: must be non-negative".into());
        }
        if self.report.snapshot_every == 0 || self.report.flux_samples < 2 {
            return bad("report: snapshot_every ≥ 1 and flux_samples ≥ 2 required".into());
        }
        Ok(())
    }

    /// Independent sub-seed for stream `k` (network init, sampling, ...).
    pub fn subseed(&self, k: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k + 1);
        rng.next_u64()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.network.widths) + self.network.geometry_widths.as_deref().map_or(0, parameter_count)
    }

    pub fn collocation_set(&self) -> Result<CollocationSet, GeometryError> {
        let boundary = match self.bc.style {
            BcStyle::Exact => 0,
            BcStyle::Weak => self.collocation.boundary,
        };
        CollocationSet::new(
            self.experiment.domain(),
            self.collocation.interior,
            boundary,
            self.collocation.strategy,
            self.subseed(SAMPLING_STREAM),
        )
    }
}

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const GEOMETRY_INIT_STREAM: u64 = 1;
pub(crate) const SAMPLING_STREAM: u64 = 2;

/// Solution samples on the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSamples {
    pub local: Vec<Point>,
    pub global: Vec<Point>,
    pub components: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Reference values of the first component, where known.
    pub oracle: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    /// Image of the reference boundary, as a closed loop.
    pub boundary: Vec<Point>,
    pub roundness: f64,
    pub min_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Details {
    Eikonal {
        predicted_max: f64,
        oracle_length: f64,
    },
    PoissonSphere {
        /// Largest exact-boundary violation over all accepted steps.
        max_boundary_deviation: f64,
    },
    StokesTube {
        max_boundary_deviation: f64,
        residual_initial: f64,
        residual_final: f64,
        residual_reduction: f64,
        flux_sections: Vec<f64>,
        fluxes: Vec<f64>,
        flux_spread: f64,
        max_speed: f64,
        max_speed_local: Point,
        max_speed_global: Point,
    },
    ShapeOpt {
        corner_errors: Vec<f64>,
        roundness_initial: f64,
        roundness_final: f64,
        min_det_final: f64,
        snapshots: Vec<Snapshot>,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub history: Vec<LossReport>,
    pub model: Model,
    pub fields: FieldSamples,
    pub l2_error: Option<f64>,
    pub wall_time_s: f64,
    pub status: Status,
    pub iterations: usize,
    pub evaluations: usize,
    pub details: Details,
}

impl ExperimentReport {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.total)
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentId::Eikonal => eikonal::run(cfg),
        ExperimentId::PoissonSphere => poisson::run(cfg),
        ExperimentId::StokesTube => stokes::run(cfg),
        ExperimentId::ShapeOpt => shape::run(cfg),
    }
}

/// Problem and initial model of a configuration.
pub fn setup(cfg: &ExperimentConfig) -> Result<(PdeProblem, Model), ExperimentError> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentId::Eikonal => eikonal::setup(cfg),
        ExperimentId::PoissonSphere => poisson::setup(cfg),
        ExperimentId::StokesTube => stokes::setup(cfg),
        ExperimentId::ShapeOpt => shape::setup(cfg),
    }
}

/// `n` evenly spaced points covering `[0, 1]` including both ends.
pub fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Evaluation grid on the reference domain.
pub fn eval_grid(domain: ReferenceDomain, n: usize) -> Vec<Point> {
    match domain {
        ReferenceDomain::UnitInterval => linspace(n).into_iter().map(|x| vec![x]).collect(),
        ReferenceDomain::UnitSquare => {
            let k = (n as f64).sqrt().round() as usize;
            let t = linspace(k);
            t.iter().flat_map(|&a| t.iter().map(move |&b| vec![a, b])).collect()
        }
    }
}

/// Closed counter-clockwise loop of `n` points around the unit square.
pub fn square_loop(n: usize) -> Vec<Point> {
    let per = (n / 4).max(1);
    let mut pts = Vec::with_capacity(4 * per);
    for i in 0..per {
        pts.push(vec![i as f64 / per as f64, 0.0]);
    }
    for i in 0..per {
        pts.push(vec![1.0, i as f64 / per as f64]);
    }
    for i in 0..per {
        pts.push(vec![1.0 - i as f64 / per as f64, 1.0]);
    }
    for i in 0..per {
        pts.push(vec![0.0, 1.0 - i as f64 / per as f64]);
    }
    pts
}

/// Ratio of the largest to the smallest distance from the centroid.
pub fn roundness(points: &[Point]) -> f64 {
    let n = points.len() as f64;
    let dim = points[0].len();
    let centroid: Vec<f64> = (0..dim).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in points {
        let d = p.iter().zip(&centroid).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    hi / lo
}

/// Train with the configured optimizer, timing the run.
pub(crate) fn fit(
    cfg: &ExperimentConfig,
    problem: &PdeProblem,
    model: &Model,
    collocation: &CollocationSet,
    mut observer: impl FnMut(&Progress<'_>) -> Control,
) -> Result<(TrainOutcome, f64), ExperimentError> {
    let start = Instant::now();
    let opt = &cfg.optimizer;
    let mut recent: Vec<f64> = Vec::new();
    let outcome = pinn::train(problem, model, collocation, &opt.train_config(), |p| {
        let ctl = observer(p);
        if opt.patience > 0 && opt.rel_tol > 0.0 {
            recent.push(p.report.total);
            let k = recent.len();
            if k > opt.patience {
                let stalled = recent[k - 1 - opt.patience..]
                    .windows(2)
                    .all(|w| ((w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).abs() < opt.rel_tol);
                if stalled {
                    log::info!("relative loss change below {:e} for {} steps", opt.rel_tol, opt.patience);
                    return Control::Stop;
                }
            }
        }
        ctl
    })?;
    Ok((outcome, start.elapsed().as_secs_f64()))
}

/// Track the largest exact-boundary violation over accepted steps.
pub(crate) fn deviation_tracker<'a>(
    problem: &'a PdeProblem,
    model: &Model,
    points: Vec<Point>,
) -> (impl FnMut(&Progress<'_>) -> Control + 'a, std::rc::Rc<std::cell::Cell<f64>>) {
    let worst = std::rc::Rc::new(std::cell::Cell::new(0.0f64));
    let seen = worst.clone();
    let mut scratch = model.clone();
    let obs = move |p: &Progress<'_>| {
        if scratch.set_params(p.params).is_ok() {
            match pinn::boundary_deviation(problem, &scratch, &points) {
                Ok(d) => seen.set(seen.get().max(d)),
                Err(e) => log::warn!("boundary check failed: {e}"),
            }
        }
        Control::Continue
    };
    (obs, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for id in ExperimentId::ALL {
            let cfg = ExperimentConfig::defaults(id);
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_toml(id, "").unwrap(), cfg);
        }
        assert_eq!(ExperimentConfig::defaults(ExperimentId::StokesTube).optimizer.steps, 5000);
        assert_eq!(ExperimentConfig::defaults(ExperimentId::Eikonal).parameter_count(), 33_537);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = ExperimentConfig::from_toml(ExperimentId::PoissonSphere, "[optimizer]\nsteps = 5000\n").unwrap();
        assert_eq!(cfg.optimizer.steps, 5000);
        assert_eq!(cfg.optimizer.memory, 50);
        let cfg = ExperimentConfig::from_toml(ExperimentId::Eikonal, "[network]\nwidths = [2, 64, 1]\n").unwrap();
        assert_eq!(cfg.parameter_count(), 2 * 64 + 64 + 64 + 1);

        let e = ExperimentConfig::from_toml(ExperimentId::Eikonal, "[optimizer]\nstepz = 3\n").unwrap_err();
        assert!(e.0.contains("stepz") && e.0.contains("steps"), "{e}");
        let e = ExperimentConfig::from_toml(ExperimentId::Eikonal, "[optimizer]\nsteps = \"many\"\n").unwrap_err();
        assert!(e.0.starts_with("optimizer.steps"), "{e}");
        let e = ExperimentConfig::from_toml(ExperimentId::Eikonal, "[geometry]\npsi0 = 0.3\n").unwrap_err();
        assert!(e.0.contains("geometry") && e.0.contains("psi0"), "{e}");
        let e = ExperimentConfig::from_toml(ExperimentId::Eikonal, "[optimizer\nsteps = 1").unwrap_err();
        assert!(e.0.contains("line 1"), "{e}");
        assert!(ExperimentConfig::from_toml(ExperimentId::StokesTube, "[bc]\nstyle = \"weak\"\n").is_err());
        assert!(ExperimentConfig::from_toml(ExperimentId::Eikonal, "experiment = \"stokes-tube\"\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        for id in ExperimentId::ALL {
            let mut cfg = ExperimentConfig::defaults(id);
            cfg.seed = 17;
            let v = serde_json::to_value(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_value(id, v).unwrap(), cfg);
        }
    }

    #[test]
    fn subseeds_differ_and_repeat() {
        let cfg = ExperimentConfig::defaults(ExperimentId::Eikonal);
        assert_ne!(cfg.subseed(0), cfg.subseed(1));
        assert_eq!(cfg.subseed(0), cfg.subseed(0));
    }

    #[test]
    fn grids_and_loops() {
        let g = eval_grid(ReferenceDomain::UnitSquare, 16);
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[15], vec![1.0, 1.0]);
        let l = square_loop(40);
        assert_eq!(l.len(), 40);
        assert!((roundness(&l) - 2f64.sqrt()).abs() < 1e-12);
        let circle: Vec<Point> = (0..64)
            .map(|k| {
                let t = k as f64 / 64.0 * std::f64::consts::TAU;
                vec![3.0 + t.cos(), t.sin()]
            })
            .collect();
        assert!((roundness(&circle) - 1.0).abs() < 1e-12);
    }
}
