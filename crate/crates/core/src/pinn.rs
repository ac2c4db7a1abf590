//! Residual and boundary losses, exact boundary transforms and training.
//!
//! Losses are evaluated on two routes. The jet route pushes batched
//! second-order jets through the network ([`crate::network::jet`]) and, per
//! collocation point, replaces the network in the scalar graph by its Taylor
//! polynomial; the gradient of the point loss with respect to the Taylor
//! coefficients is then back-propagated through the jets. The graph route
//! binds every network parameter as a graph variable and differentiates the
//! whole pipeline directly. Both share the residual rules, and the graph
//! route serves as the reference implementation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{derive, gradient, AutodiffError, DiffContext, DiffScalar};
use crate::geometry::{CollocationSet, Diffeo, DistanceFn, Point, ReferenceDomain};
use crate::network::jet::{self, JetLayout, Jets};
use crate::network::{Mlp, NetworkError};
use crate::optimize::{
    adam_minimize, minimize, AdamConfig, Control, Evaluation, Iterate, LbfgsConfig, OptimizeError, Status,
};
use crate::pullback::{
    field_arclength_derivative, ComposedField, GraphMap, Mode, Pullback, PullbackError, TaylorField,
};

/// Scalar function of local coordinates, evaluated in the graph.
pub type ScalarFn = Arc<dyn for<'c> Fn(&[DiffScalar<'c>]) -> DiffScalar<'c> + Send + Sync>;
/// Plain scalar function of local coordinates.
pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Plain vector function of local coordinates.
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum PinnError {
    #[error("collocation point {index}: {source}")]
    Point {
        index: usize,
        #[source]
        source: PullbackError,
    },
    #[error(transparent)]
    Pullback(#[from] PullbackError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
}

pub type Result<T> = std::result::Result<T, PinnError>;

/// Borrowed [`Diffeo`] trait object usable as a [`GraphMap`].
pub struct AsGraph<'d>(pub &'d dyn Diffeo);

impl<'c> GraphMap<'c> for AsGraph<'_> {
    fn dim_in(&self) -> usize {
        self.0.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.0.dim_out()
    }
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        self.0.map(x)
    }
}

/// `out = net · b(x) + g̃(x)` for one output component. Without a distance
/// the raw output is only shifted by the extension.
#[derive(Clone, Default)]
pub struct ComponentTransform {
    pub distance: Option<DistanceFn>,
    pub extension: Option<ScalarFn>,
}

impl fmt::Debug for ComponentTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComponentTransform")
            .field("distance", &self.distance)
            .field("extension", &self.extension.as_ref().map(|_| "fn"))
            .finish()
    }
}

impl ComponentTransform {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn pinned(distance: DistanceFn) -> Self {
        Self {
            distance: Some(distance),
            extension: None,
        }
    }

    pub fn with_extension(mut self, g: ScalarFn) -> Self {
        self.extension = Some(g);
        self
    }
}

/// Exact Dirichlet conditions built into the network output.
#[derive(Clone, Debug, Default)]
pub struct OutputTransform {
    pub components: Vec<ComponentTransform>,
}

impl OutputTransform {
    pub fn new(components: Vec<ComponentTransform>) -> Self {
        Self { components }
    }

    /// Same homogeneous condition on every one of `n` outputs.
    pub fn homogeneous(n: usize, distance: DistanceFn) -> Self {
        Self::new(vec![ComponentTransform::pinned(distance); n])
    }

    /// Components beyond the configured ones pass through unchanged.
    pub fn apply<'c>(&self, raw: &[DiffScalar<'c>], x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        raw.iter()
            .enumerate()
            .map(|(k, &n)| match self.components.get(k) {
                None => n,
                Some(c) => {
                    let scaled = match c.distance {
                        Some(b) => n * b.eval(x),
                        None => n,
                    };
                    match &c.extension {
                        Some(g) => scaled + g(x),
                        None => scaled,
                    }
                }
            })
            .collect()
    }

    pub fn apply_f64(&self, raw: &[f64], x: &[f64]) -> Vec<f64> {
        let ctx = DiffContext::new();
        let r = ctx.variables(raw);
        let xs = ctx.variables(x);
        self.apply(&r, &xs).iter().map(|v| v.value()).collect()
    }

    /// The extension `g̃ₖ(x)` (zero when absent).
    pub fn extension_value(&self, k: usize, x: &[f64]) -> f64 {
        match self.components.get(k).and_then(|c| c.extension.as_ref()) {
            Some(g) => {
                let ctx = DiffContext::new();
                g(&ctx.variables(x)).value()
            }
            None => 0.0,
        }
    }

    /// Whether output `k` is prescribed at `x`, i.e. its distance vanishes.
    pub fn is_pinned(&self, k: usize, x: &[f64]) -> bool {
        matches!(self.components.get(k), Some(ComponentTransform { distance: Some(b), .. }) if b.eval_f64(x) == 0.0)
    }
}

/// Pointwise PDE residuals in terms of a composed field.
pub trait ResidualRule: Send + Sync {
    fn name(&self) -> &'static str;
    /// One label per residual component.
    fn labels(&self) -> Vec<&'static str>;
    /// Highest derivative order in local coordinates.
    fn order(&self) -> usize;
    /// Whether the residuals are affine in the field for a fixed geometry.
    fn affine(&self) -> bool {
        false
    }
    fn residuals<'c>(
        &self,
        field: &ComposedField<'_, 'c>,
        x: &[DiffScalar<'c>],
        source: f64,
    ) -> std::result::Result<Vec<DiffScalar<'c>>, PullbackError>;
}

/// Unit arc-length derivative along a curve, `du/ds − 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eikonal;

impl ResidualRule for Eikonal {
    fn name(&self) -> &'static str {
        "eikonal"
    }
    fn labels(&self) -> Vec<&'static str> {
        vec!["eikonal"]
    }
    fn order(&self) -> usize {
        1
    }
    fn affine(&self) -> bool {
        true
    }
    fn residuals<'c>(
        &self,
        field: &ComposedField<'_, 'c>,
        x: &[DiffScalar<'c>],
        _source: f64,
    ) -> std::result::Result<Vec<DiffScalar<'c>>, PullbackError> {
        Ok(vec![field_arclength_derivative(field, x, 0)? - 1.0])
    }
}

/// `−Δu − f`: the local Laplacian on a manifold, the global one under a
/// transformation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegLaplacian;

fn local_laplacian<'c>(u: DiffScalar<'c>, x: &[DiffScalar<'c>]) -> std::result::Result<DiffScalar<'c>, AutodiffError> {
    let mut acc = u.ctx().lift(0.0);
    for &xi in x {
        acc = acc + derive(derive(u, xi)?, xi)?;
    }
    Ok(acc)
}

impl ResidualRule for NegLaplacian {
    fn name(&self) -> &'static str {
        "poisson"
    }
    fn labels(&self) -> Vec<&'static str> {
        vec!["poisson"]
    }
    fn order(&self) -> usize {
        2
    }
    fn affine(&self) -> bool {
        true
    }
    fn residuals<'c>(
        &self,
        field: &ComposedField<'_, 'c>,
        x: &[DiffScalar<'c>],
        source: f64,
    ) -> std::result::Result<Vec<DiffScalar<'c>>, PullbackError> {
        let u = field.eval(x)[0];
        let lap = match field.mode {
            Mode::Manifold => local_laplacian(u, x)?,
            Mode::Transformation => Pullback::new(field.diffeo, x)?.laplacian(u)?,
        };
        Ok(vec![-lap - source])
    }
}

/// Stationary Stokes flow with outputs `(u, v, p)` in global coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stokes;

impl ResidualRule for Stokes {
    fn name(&self) -> &'static str {
        "stokes"
    }
    fn labels(&self) -> Vec<&'static str> {
        vec!["momentum-x", "momentum-y", "continuity"]
    }
    fn order(&self) -> usize {
        2
    }
    fn affine(&self) -> bool {
        true
    }
    fn residuals<'c>(
        &self,
        field: &ComposedField<'_, 'c>,
        x: &[DiffScalar<'c>],
        _source: f64,
    ) -> std::result::Result<Vec<DiffScalar<'c>>, PullbackError> {
        let out = field.eval(x);
        if out.len() != 3 || x.len() != 2 {
            return Err(PullbackError::Dimension(format!(
                "Stokes needs 3 outputs in 2-D, got {} in {}-D",
                out.len(),
                x.len()
            )));
        }
        let pb = Pullback::new(field.diffeo, x)?;
        let gu = pb.gradient(out[0])?;
        let gv = pb.gradient(out[1])?;
        let gp = pb.gradient(out[2])?;
        let lap_u = pb.divergence(&gu)?;
        let lap_v = pb.divergence(&gv)?;
        Ok(vec![-lap_u + gp[0], -lap_v + gp[1], gu[0] + gv[1]])
    }
}

#[derive(Clone)]
pub enum BoundaryCondition {
    Exact(OutputTransform),
    /// Penalty `weight · mean ‖out − g‖²` on boundary samples, with `g` a
    /// function of local coordinates.
    Weak { weight: f64, data: VectorFn },
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exact(t) => f.debug_tuple("Exact").field(t).finish(),
            Self::Weak { weight, .. } => f.debug_struct("Weak").field("weight", weight).finish(),
        }
    }
}

/// Penalty `weight · Σ ‖φ̂(c) − target‖²` pinning a learned geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub weight: f64,
    pub points: Vec<Point>,
    pub targets: Vec<Point>,
}

impl Anchors {
    /// Each point is mapped to itself.
    pub fn fixed(weight: f64, points: Vec<Point>) -> Self {
        Self {
            weight,
            targets: points.clone(),
            points,
        }
    }
}

#[derive(Clone)]
pub struct PdeProblem {
    pub mode: Mode,
    pub domain: ReferenceDomain,
    pub rule: Arc<dyn ResidualRule>,
    /// Source term as a function of local coordinates.
    pub source: Option<PointFn>,
    pub bc: BoundaryCondition,
    pub anchors: Option<Anchors>,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("mode", &self.mode)
            .field("domain", &self.domain)
            .field("rule", &self.rule.name())
            .field("bc", &self.bc)
            .field("anchors", &self.anchors)
            .finish()
    }
}

impl PdeProblem {
    pub fn transform(&self) -> Option<&OutputTransform> {
        match &self.bc {
            BoundaryCondition::Exact(t) => Some(t),
            BoundaryCondition::Weak { .. } => None,
        }
    }

    pub fn boundary_weight(&self) -> f64 {
        match &self.bc {
            BoundaryCondition::Exact(_) => 0.0,
            BoundaryCondition::Weak { weight, .. } => *weight,
        }
    }

    fn source_at(&self, x: &[f64]) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f(x))
    }

    /// Check dimensions and boundary settings against a model and samples.
    pub fn validate(&self, model: &Model, collocation: &CollocationSet) -> Result<()> {
        let m = self.domain.dim();
        let bad = |msg: String| Err(PinnError::Invalid(msg));
        match (&self.mode, &model.geometry) {
            (Mode::Manifold, Geometry::Fixed(d)) => {
                if d.dim_in() != m || d.dim_out() < m {
                    return bad(format!("manifold map {}→{} on a {m}-D domain", d.dim_in(), d.dim_out()));
                }
                if model.solution.input_dim() != d.dim_out() {
                    return bad(format!(
                        "network input {} does not match embedding dimension {}",
                        model.solution.input_dim(),
                        d.dim_out()
                    ));
                }
            }
            (Mode::Manifold, Geometry::Learned(_)) => {
                return bad("a learned geometry requires transformation mode".into());
            }
            (Mode::Transformation, g) => {
                let (i, o) = g.dims();
                if i != m || o != m {
                    return bad(format!("transformation {i}→{o} on a {m}-D domain"));
                }
                if model.solution.input_dim() != m {
                    return bad(format!("network input {} on a {m}-D domain", model.solution.input_dim()));
                }
            }
        }
        match &self.bc {
            BoundaryCondition::Exact(t) => {
                if t.components.iter().all(|c| c.distance.is_none()) {
                    return bad("exact boundary conditions need a distance function".into());
                }
            }
            BoundaryCondition::Weak { weight, .. } => {
                if !(*weight > 0.0) {
                    return bad(format!("weak boundary weight must be positive, got {weight}"));
                }
                if collocation.boundary.is_empty() {
                    return bad("weak boundary conditions need boundary samples".into());
                }
            }
        }
        if let Some(a) = &self.anchors {
            if !matches!(model.geometry, Geometry::Learned(_)) {
                return bad("anchors only apply to a learned geometry".into());
            }
            if a.points.len() != a.targets.len() || !(a.weight >= 0.0) {
                return bad("anchor points and targets must pair up with a non-negative weight".into());
            }
        }
        if collocation.interior.is_empty() {
            return bad("no interior collocation points".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Geometry {
    Fixed(Arc<dyn Diffeo>),
    Learned(Mlp),
}

impl Geometry {
    fn dims(&self) -> (usize, usize) {
        match self {
            Geometry::Fixed(d) => (d.dim_in(), d.dim_out()),
            Geometry::Learned(n) => (n.input_dim(), n.output_dim()),
        }
    }
}

/// Solution network plus geometry. Trainable parameters are the solution
/// parameters followed by those of a learned geometry.
#[derive(Clone, Debug)]
pub struct Model {
    pub solution: Mlp,
    pub geometry: Geometry,
}

impl Model {
    pub fn new(solution: Mlp, geometry: Geometry) -> Self {
        Self { solution, geometry }
    }

    pub fn param_count(&self) -> usize {
        self.solution.param_count()
            + match &self.geometry {
                Geometry::Learned(n) => n.param_count(),
                Geometry::Fixed(_) => 0,
            }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.solution.params().to_vec();
        if let Geometry::Learned(n) = &self.geometry {
            p.extend_from_slice(n.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(NetworkError::Dimension {
                expected: self.param_count(),
                got: p.len(),
            }
            .into());
        }
        let ns = self.solution.param_count();
        self.solution.set_params(&p[..ns])?;
        if let Geometry::Learned(n) = &mut self.geometry {
            n.set_params(&p[ns..])?;
        }
        Ok(())
    }

    /// Global coordinates `φ(x)` of local points.
    pub fn map_points(&self, points: &[Point]) -> Result<Vec<Point>> {
        match &self.geometry {
            Geometry::Fixed(d) => Ok(points.iter().map(|x| d.apply(x)).collect()),
            Geometry::Learned(n) => values_at(n, &Jets::identity(JetLayout::new(n.input_dim(), 0), points)),
        }
    }

    /// Solution outputs (after the exact-boundary transform, if any) at
    /// local points.
    pub fn predict(&self, problem: &PdeProblem, points: &[Point]) -> Result<Vec<Vec<f64>>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let inputs = match problem.mode {
            Mode::Manifold => self.map_points(points)?,
            Mode::Transformation => points.to_vec(),
        };
        let raw = values_at(&self.solution, &Jets::identity(JetLayout::new(inputs[0].len(), 0), &inputs))?;
        Ok(match problem.transform() {
            Some(t) => raw.iter().zip(points).map(|(r, x)| t.apply_f64(r, x)).collect(),
            None => raw,
        })
    }
}

fn values_at(net: &Mlp, input: &Jets) -> Result<Vec<Vec<f64>>> {
    let (out, _) = jet::forward(net, input)?;
    Ok((0..out.points())
        .map(|p| (0..out.width()).map(|r| out.get(r, 0, p)).collect())
        .collect())
}

/// Largest violation `|out − g̃|` over outputs pinned at the given points.
pub fn boundary_deviation(problem: &PdeProblem, model: &Model, points: &[Point]) -> Result<f64> {
    let Some(t) = problem.transform() else {
        return Ok(0.0);
    };
    let out = model.predict(problem, points)?;
    let mut worst: f64 = 0.0;
    for (x, o) in points.iter().zip(&out) {
        for (k, &v) in o.iter().enumerate() {
            if t.is_pinned(k, x) {
                worst = worst.max((v - t.extension_value(k, x)).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub total: f64,
    pub interior: f64,
    /// Unweighted boundary term; `total` adds it times the boundary weight.
    pub boundary: f64,
    pub penalty: f64,
    /// Mean squared value of each residual component.
    pub residuals: Vec<f64>,
}

/// Jets of a fixed map at points: value, first and second derivatives.
pub fn diffeo_jets(d: &dyn Diffeo, points: &[Point], layout: JetLayout) -> Result<Jets> {
    let mut jets = Jets::zeros(layout, d.dim_out(), points.len());
    let ctx = DiffContext::new();
    for (p, x0) in points.iter().enumerate() {
        let cp = ctx.checkpoint();
        let x = ctx.variables(x0);
        let y = d.map(&x);
        for (i, &yi) in y.iter().enumerate() {
            jets.set(i, 0, p, yi.value());
            if layout.order() >= 1 {
                let g = crate::autodiff::derive_many(yi, &x)?;
                for k in 0..layout.dim() {
                    jets.set(i, layout.first(k), p, g[k].value());
                }
                for (k, l, s) in layout.pairs() {
                    jets.set(i, s, p, derive(g[k], x[l])?.value());
                }
            }
        }
        ctx.status()?;
        ctx.rollback(cp);
    }
    Ok(jets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Jet,
    Graph,
}

/// Affine residual model `r = c₀ + coef · jets` per point.
struct Linearization {
    nres: usize,
    nleaf: usize,
    c0: Vec<f64>,
    coef: Vec<f64>,
}

/// Loss and gradient of a problem on fixed collocation samples.
pub struct Objective<'p> {
    problem: &'p PdeProblem,
    interior: Vec<Point>,
    boundary: Vec<Point>,
    sources: Vec<f64>,
    boundary_data: Vec<Vec<f64>>,
    layout: JetLayout,
    sol_input: Jets,
    sol_boundary_input: Option<Jets>,
    geo_input: Option<Jets>,
    anchor_input: Option<Jets>,
    linear: Option<Linearization>,
    route: Route,
    nres: usize,
}

impl<'p> Objective<'p> {
    pub fn new(problem: &'p PdeProblem, model: &Model, collocation: &CollocationSet, route: Route) -> Result<Self> {
        Self::with_options(problem, model, collocation, route, true)
    }

    /// `linearize` allows caching affine residuals (jet route, fixed
    /// geometry, affine rule).
    pub fn with_options(
        problem: &'p PdeProblem,
        model: &Model,
        collocation: &CollocationSet,
        route: Route,
        linearize: bool,
    ) -> Result<Self> {
        problem.validate(model, collocation)?;
        let m = problem.domain.dim();
        let layout = JetLayout::new(m, problem.rule.order());
        let interior = collocation.interior.clone();
        let weak = matches!(problem.bc, BoundaryCondition::Weak { .. });
        let boundary = if weak { collocation.boundary.clone() } else { Vec::new() };
        let sol_input = match (&problem.mode, &model.geometry) {
            (Mode::Manifold, Geometry::Fixed(d)) => diffeo_jets(d.as_ref(), &interior, layout)?,
            _ => Jets::identity(layout, &interior),
        };
        let sol_boundary_input = if weak {
            let b0 = JetLayout::new(m, 0);
            Some(match (&problem.mode, &model.geometry) {
                (Mode::Manifold, Geometry::Fixed(d)) => diffeo_jets(d.as_ref(), &boundary, b0)?,
                _ => Jets::identity(b0, &boundary),
            })
        } else {
            None
        };
        let learned = matches!(model.geometry, Geometry::Learned(_));
        let geo_input = learned.then(|| Jets::identity(layout, &interior));
        let anchor_input = match (&problem.anchors, learned) {
            (Some(a), true) if !a.points.is_empty() => Some(Jets::identity(JetLayout::new(m, 0), &a.points)),
            _ => None,
        };
        let boundary_data = match &problem.bc {
            BoundaryCondition::Weak { data, .. } => boundary.iter().map(|z| data(z)).collect(),
            BoundaryCondition::Exact(_) => Vec::new(),
        };
        let sources = interior.iter().map(|x| problem.source_at(x)).collect();
        let nres = problem.rule.labels().len();
        let mut obj = Self {
            problem,
            interior,
            boundary,
            sources,
            boundary_data,
            layout,
            sol_input,
            sol_boundary_input,
            geo_input,
            anchor_input,
            linear: None,
            route,
            nres,
        };
        if linearize && route == Route::Jet && !learned && problem.rule.affine() {
            obj.linear = Some(obj.linearize(model)?);
        }
        Ok(obj)
    }

    pub fn is_linearized(&self) -> bool {
        self.linear.is_some()
    }

    pub fn route(&self) -> Route {
        self.route
    }

    pub fn interior_points(&self) -> &[Point] {
        &self.interior
    }

    fn fixed_graph<'a>(model: &'a Model) -> Option<AsGraph<'a>> {
        match &model.geometry {
            Geometry::Fixed(d) => Some(AsGraph(d.as_ref())),
            Geometry::Learned(_) => None,
        }
    }

    fn linearize(&self, model: &Model) -> Result<Linearization> {
        let outputs = model.solution.output_dim();
        let ns = self.layout.streams();
        let nleaf = outputs * ns;
        let np = self.interior.len();
        let mut lin = Linearization {
            nres: self.nres,
            nleaf,
            c0: Vec::with_capacity(np * self.nres),
            coef: Vec::with_capacity(np * self.nres * nleaf),
        };
        let diffeo = Self::fixed_graph(model).expect("linearization needs a fixed geometry");
        let ctx = DiffContext::new();
        let zeros = vec![0.0; nleaf];
        for (p, x0) in self.interior.iter().enumerate() {
            let cp = ctx.checkpoint();
            let taylor = TaylorField::new(&ctx, x0, self.layout, &zeros);
            let x = ctx.variables(x0);
            let field = self.field(&taylor, &diffeo);
            let res = self
                .problem
                .rule
                .residuals(&field, &x, self.sources[p])
                .map_err(|source| PinnError::Point { index: p, source })?;
            for r in res {
                lin.c0.push(r.value());
                lin.coef.extend(gradient(r, taylor.leaves())?);
            }
            ctx.status().map_err(|e| PinnError::Point { index: p, source: e.into() })?;
            ctx.rollback(cp);
        }
        Ok(lin)
    }

    fn field<'a, 'c>(&'a self, net: &'a dyn GraphMap<'c>, diffeo: &'a dyn GraphMap<'c>) -> ComposedField<'a, 'c> {
        let mut f = ComposedField::new(net, diffeo, self.problem.mode);
        if self.problem.mode == Mode::Manifold && self.route == Route::Jet {
            f = f.precomposed();
        }
        if let Some(t) = self.problem.transform() {
            f = f.with_transform(t);
        }
        f
    }

    /// Loss report (with `step = 0`) and gradient with respect to
    /// [`Model::params`].
    pub fn evaluate(&self, model: &Model) -> Result<(LossReport, Vec<f64>)> {
        match self.route {
            Route::Jet => self.evaluate_jets(model),
            Route::Graph => self.evaluate_graph(model),
        }
    }

    fn evaluate_jets(&self, model: &Model) -> Result<(LossReport, Vec<f64>)> {
        let sol = &model.solution;
        let ns_params = sol.param_count();
        let mut grad = vec![0.0; model.param_count()];
        let (sol_grad, geo_grad) = grad.split_at_mut(ns_params);
        let np = self.interior.len();
        let inv_n = 1.0 / np as f64;
        let streams = self.layout.streams();
        let outputs = sol.output_dim();

        let (sol_jets, sol_tape) = jet::forward(sol, &self.sol_input)?;
        let mut sol_adj = Jets::zeros(self.layout, outputs, np);
        let mut residuals = vec![0.0; self.nres];

        if let Some(lin) = &self.linear {
            let mut leaves = vec![0.0; lin.nleaf];
            for p in 0..np {
                for r in 0..outputs {
                    for s in 0..streams {
                        leaves[r * streams + s] = sol_jets.get(r, s, p);
                    }
                }
                let mut adj = vec![0.0; lin.nleaf];
                for j in 0..lin.nres {
                    let row = (p * lin.nres + j) * lin.nleaf;
                    let coef = &lin.coef[row..row + lin.nleaf];
                    let rv = lin.c0[p * lin.nres + j] + coef.iter().zip(&leaves).map(|(a, b)| a * b).sum::<f64>();
                    residuals[j] += rv * rv * inv_n;
                    for (a, c) in adj.iter_mut().zip(coef) {
                        *a += 2.0 * rv * inv_n * c;
                    }
                }
                for r in 0..outputs {
                    for s in 0..streams {
                        sol_adj.set(r, s, p, adj[r * streams + s]);
                    }
                }
            }
        } else {
            let geo = match &model.geometry {
                Geometry::Learned(g) => {
                    let input = self.geo_input.as_ref().expect("geometry jets prepared");
                    Some((g, jet::forward(g, input)?))
                }
                Geometry::Fixed(_) => None,
            };
            let mut geo_adj = geo.as_ref().map(|(g, _)| Jets::zeros(self.layout, g.output_dim(), np));
            let fixed = Self::fixed_graph(model);
            let ctx = DiffContext::new();
            let mut sol_leaf = vec![0.0; outputs * streams];
            let mut geo_leaf = vec![0.0; geo.as_ref().map_or(0, |(g, _)| g.output_dim() * streams)];
            for (p, x0) in self.interior.iter().enumerate() {
                let cp = ctx.checkpoint();
                for r in 0..outputs {
                    for s in 0..streams {
                        sol_leaf[r * streams + s] = sol_jets.get(r, s, p);
                    }
                }
                let taylor = TaylorField::new(&ctx, x0, self.layout, &sol_leaf);
                let geo_taylor = geo.as_ref().map(|(g, (gj, _))| {
                    for r in 0..g.output_dim() {
                        for s in 0..streams {
                            geo_leaf[r * streams + s] = gj.get(r, s, p);
                        }
                    }
                    TaylorField::new(&ctx, x0, self.layout, &geo_leaf)
                });
                let diffeo: &dyn GraphMap<'_> = match (&geo_taylor, &fixed) {
                    (Some(t), _) => t,
                    (None, Some(f)) => f,
                    (None, None) => unreachable!("geometry is fixed or learned"),
                };
                let x = ctx.variables(x0);
                let field = self.field(&taylor, diffeo);
                let res = self
                    .problem
                    .rule
                    .residuals(&field, &x, self.sources[p])
                    .map_err(|source| PinnError::Point { index: p, source })?;
                for (j, r) in res.iter().enumerate() {
                    residuals[j] += r.value() * r.value() * inv_n;
                }
                let loss = ctx.sum(res.iter().map(|r| r.square())) * inv_n;
                let mut wrt = taylor.leaves().to_vec();
                if let Some(t) = &geo_taylor {
                    wrt.extend_from_slice(t.leaves());
                }
                let g = gradient(loss, &wrt).map_err(|e| PinnError::Point { index: p, source: e.into() })?;
                for r in 0..outputs {
                    for s in 0..streams {
                        sol_adj.set(r, s, p, g[r * streams + s]);
                    }
                }
                if let Some(ga) = geo_adj.as_mut() {
                    let off = outputs * streams;
                    for r in 0..ga.width() {
                        for s in 0..streams {
                            ga.set(r, s, p, g[off + r * streams + s]);
                        }
                    }
                }
                ctx.rollback(cp);
            }
            if let (Some((g, (_, tape))), Some(adj)) = (&geo, &geo_adj) {
                jet::backward(g, tape, adj, geo_grad, false)?;
            }
        }
        jet::backward(sol, &sol_tape, &sol_adj, sol_grad, false)?;

        let interior: f64 = residuals.iter().sum();
        let boundary = self.boundary_jets(sol, sol_grad)?;
        let penalty = match &model.geometry {
            Geometry::Learned(g) => self.anchor_jets(g, geo_grad)?,
            Geometry::Fixed(_) => 0.0,
        };
        Ok((self.report(interior, boundary, penalty, residuals), grad))
    }

    /// Unweighted weak boundary loss; adds the weighted gradient.
    fn boundary_jets(&self, sol: &Mlp, grad: &mut [f64]) -> Result<f64> {
        let Some(input) = &self.sol_boundary_input else {
            return Ok(0.0);
        };
        let w = self.problem.boundary_weight();
        let nb = self.boundary.len();
        let (out, tape) = jet::forward(sol, input)?;
        let mut adj = Jets::zeros(input.layout(), out.width(), nb);
        let mut loss = 0.0;
        for p in 0..nb {
            for r in 0..out.width() {
                let d = out.get(r, 0, p) - self.boundary_data[p][r];
                loss += d * d / nb as f64;
                adj.set(r, 0, p, 2.0 * w * d / nb as f64);
            }
        }
        jet::backward(sol, &tape, &adj, grad, false)?;
        Ok(loss)
    }

    fn anchor_jets(&self, geo: &Mlp, grad: &mut [f64]) -> Result<f64> {
        let (Some(input), Some(a)) = (&self.anchor_input, &self.problem.anchors) else {
            return Ok(0.0);
        };
        let (out, tape) = jet::forward(geo, input)?;
        let mut adj = Jets::zeros(input.layout(), out.width(), a.points.len());
        let mut pen = 0.0;
        for (p, t) in a.targets.iter().enumerate() {
            for r in 0..out.width() {
                let d = out.get(r, 0, p) - t[r];
                pen += a.weight * d * d;
                adj.set(r, 0, p, 2.0 * a.weight * d);
            }
        }
        jet::backward(geo, &tape, &adj, grad, false)?;
        Ok(pen)
    }

    fn report(&self, interior: f64, boundary: f64, penalty: f64, residuals: Vec<f64>) -> LossReport {
        LossReport {
            step: 0,
            total: interior + self.problem.boundary_weight() * boundary + penalty,
            interior,
            boundary,
            penalty,
            residuals,
        }
    }

    fn evaluate_graph(&self, model: &Model) -> Result<(LossReport, Vec<f64>)> {
        let ctx = DiffContext::new();
        let np = self.interior.len() as f64;
        let mut grad = vec![0.0; model.param_count()];
        let mut residuals = vec![0.0; self.nres];
        let fixed = Self::fixed_graph(model);
        let learned = match &model.geometry {
            Geometry::Learned(g) => Some(g),
            Geometry::Fixed(_) => None,
        };
        let accumulate = |grad: &mut [f64], loss: DiffScalar<'_>, wrt: &[DiffScalar<'_>]| -> Result<()> {
            for (g, v) in grad.iter_mut().zip(gradient(loss, wrt)?) {
                *g += v;
            }
            Ok(())
        };

        for (p, x0) in self.interior.iter().enumerate() {
            let cp = ctx.checkpoint();
            let sol = model.solution.bind_variables(&ctx);
            let geo = learned.map(|g| g.bind_variables(&ctx));
            let diffeo: &dyn GraphMap<'_> = match (&geo, &fixed) {
                (Some(g), _) => g,
                (None, Some(f)) => f,
                (None, None) => unreachable!(),
            };
            let x = ctx.variables(x0);
            let field = self.field(&sol, diffeo);
            let res = self
                .problem
                .rule
                .residuals(&field, &x, self.sources[p])
                .map_err(|source| PinnError::Point { index: p, source })?;
            for (j, r) in res.iter().enumerate() {
                residuals[j] += r.value() * r.value() / np;
            }
            let loss = ctx.sum(res.iter().map(|r| r.square())) / np;
            let mut wrt = sol.params().to_vec();
            if let Some(g) = &geo {
                wrt.extend_from_slice(g.params());
            }
            accumulate(&mut grad, loss, &wrt).map_err(|e| match e {
                PinnError::Autodiff(a) => PinnError::Point { index: p, source: a.into() },
                other => other,
            })?;
            ctx.rollback(cp);
        }
        let interior: f64 = residuals.iter().sum();

        let mut boundary = 0.0;
        if !self.boundary.is_empty() {
            let w = self.problem.boundary_weight();
            let nb = self.boundary.len() as f64;
            for (z0, g0) in self.boundary.iter().zip(&self.boundary_data) {
                let cp = ctx.checkpoint();
                let sol = model.solution.bind_variables(&ctx);
                let z = ctx.variables(z0);
                let input = match (&self.problem.mode, &fixed) {
                    (Mode::Manifold, Some(f)) => f.eval(&z),
                    _ => z,
                };
                let out = sol.forward(&input)?;
                let dev = ctx.sum(out.iter().zip(g0).map(|(o, g)| (*o - *g).square())) / nb;
                boundary += dev.value();
                accumulate(&mut grad[..model.solution.param_count()], dev * w, sol.params())?;
                ctx.rollback(cp);
            }
        }

        let mut penalty = 0.0;
        if let (Some(a), Some(g)) = (&self.problem.anchors, learned) {
            let off = model.solution.param_count();
            for (c, t) in a.points.iter().zip(&a.targets) {
                let cp = ctx.checkpoint();
                let geo = g.bind_variables(&ctx);
                let out = geo.forward(&ctx.variables(c))?;
                let pen = ctx.sum(out.iter().zip(t).map(|(o, t)| (*o - *t).square())) * a.weight;
                penalty += pen.value();
                accumulate(&mut grad[off..], pen, geo.params())?;
                ctx.rollback(cp);
            }
        }
        Ok((self.report(interior, boundary, penalty, residuals), grad))
    }

    /// Loss report only.
    pub fn loss(&self, model: &Model) -> Result<LossReport> {
        Ok(self.evaluate(model)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Lbfgs,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: OptimizerKind,
    /// Outer iterations (L-BFGS) or updates (Adam).
    pub steps: usize,
    pub lbfgs: LbfgsConfig,
    pub adam: AdamConfig,
    pub route: Route,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Lbfgs,
            steps: 1000,
            lbfgs: LbfgsConfig::default(),
            adam: AdamConfig::default(),
            route: Route::Jet,
        }
    }
}

/// Snapshot passed to a training observer after each accepted step.
pub struct Progress<'a> {
    pub report: &'a LossReport,
    pub params: &'a [f64],
    pub evaluations: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Initial state followed by every accepted step.
    pub history: Vec<LossReport>,
    pub status: Status,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Full-batch training. The returned model is the last accepted iterate.
pub fn train(
    problem: &PdeProblem,
    model: &Model,
    collocation: &CollocationSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Progress<'_>) -> Control,
) -> Result<TrainOutcome> {
    let objective = Objective::new(problem, model, collocation, cfg.route)?;
    let mut scratch = model.clone();
    let f = |p: &[f64]| -> Result<Evaluation<LossReport>> {
        scratch.set_params(p)?;
        let (report, grad) = objective.evaluate(&scratch)?;
        Ok(Evaluation {
            value: report.total,
            grad,
            aux: report,
        })
    };
    let mut history = Vec::new();
    let obs = |it: &Iterate<'_, LossReport>| {
        let mut report = it.eval.aux.clone();
        report.step = it.iteration;
        let ctl = observer(&Progress {
            report: &report,
            params: it.x,
            evaluations: it.evaluations,
            fallback: it.fallback,
        });
        log::debug!(
            "step {} loss {:.6e} (interior {:.3e}, boundary {:.3e}, penalty {:.3e}), {} evaluations",
            report.step,
            report.total,
            report.interior,
            report.boundary,
            report.penalty,
            it.evaluations
        );
        history.push(report);
        ctl
    };
    let x0 = model.params();
    let outcome = match cfg.kind {
        OptimizerKind::Lbfgs => {
            let lb = LbfgsConfig {
                max_iterations: cfg.steps,
                ..cfg.lbfgs
            };
            minimize(f, &x0, &lb, obs)
        }
        OptimizerKind::Adam => adam_minimize(f, &x0, &cfg.adam, cfg.steps, obs),
    }
    .map_err(|e| match e {
        OptimizeError::Initial(inner) => inner,
        other => PinnError::Optimizer(other.to_string()),
    })?;
    let mut trained = model.clone();
    trained.set_params(&outcome.x)?;
    log::info!(
        "{}: {:?} after {} iterations ({} evaluations), loss {:.6e}",
        problem.rule.name(),
        outcome.status,
        outcome.iterations,
        outcome.evaluations,
        outcome.eval.value
    );
    Ok(TrainOutcome {
        model: trained,
        history,
        status: outcome.status,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
    })
}

/// Parameter gradient by central differences at selected coordinates.
pub fn finite_difference(objective: &Objective<'_>, model: &Model, coords: &[usize], h: f64) -> Result<Vec<f64>> {
    let base = model.params();
    let mut probe = model.clone();
    coords
        .iter()
        .map(|&i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p)?;
            let fp = objective.loss(&probe)?.total;
            p[i] = base[i] - h;
            probe.set_params(&p)?;
            let fm = objective.loss(&probe)?.total;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{identity, sample_boundary, sample_interior, sphere_patch, spiral, Strategy, Tube};
    use crate::network::Activation;
    use std::f64::consts::PI;

    fn colloc(domain: ReferenceDomain, n: usize, m: usize) -> CollocationSet {
        CollocationSet::new(domain, n, m, Strategy::Random, 5).unwrap()
    }

    fn eikonal() -> (PdeProblem, Model) {
        let p = PdeProblem {
            mode: Mode::Manifold,
            domain: ReferenceDomain::UnitInterval,
            rule: Arc::new(Eikonal),
            source: None,
            bc: BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Left)),
            anchors: None,
        };
        let net = Mlp::init(&[2, 6, 5, 1], Activation::Tanh, 3).unwrap();
        (p, Model::new(net, Geometry::Fixed(Arc::new(spiral(3.5 * PI, 0.1).unwrap()))))
    }

    fn sphere() -> (PdeProblem, Model) {
        let p = PdeProblem {
            mode: Mode::Manifold,
            domain: ReferenceDomain::UnitSquare,
            rule: Arc::new(NegLaplacian),
            source: Some(Arc::new(|x: &[f64]| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin())),
            bc: BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Bubble(ReferenceDomain::UnitSquare))),
            anchors: None,
        };
        let net = Mlp::init(&[3, 5, 4, 1], Activation::Tanh, 4).unwrap();
        (p, Model::new(net, Geometry::Fixed(Arc::new(sphere_patch(0.5, 1.0).unwrap()))))
    }

    fn stokes_transform() -> OutputTransform {
        let bubble = DistanceFn::Bubble(ReferenceDomain::UnitSquare);
        let inflow: ScalarFn = Arc::new(|x| x[1] * 4.0 * (1.0 - x[1]));
        OutputTransform::new(vec![
            ComponentTransform::pinned(bubble).with_extension(inflow),
            ComponentTransform::pinned(bubble),
            ComponentTransform::pinned(DistanceFn::Right),
        ])
    }

    fn stokes() -> (PdeProblem, Model) {
        let p = PdeProblem {
            mode: Mode::Transformation,
            domain: ReferenceDomain::UnitSquare,
            rule: Arc::new(Stokes),
            source: None,
            bc: BoundaryCondition::Exact(stokes_transform()),
            anchors: None,
        };
        let net = Mlp::init(&[2, 6, 5, 3], Activation::Tanh, 5).unwrap();
        (p, Model::new(net, Geometry::Fixed(Arc::new(Tube::default()))))
    }

    fn shape() -> (PdeProblem, Model) {
        let corners = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let p = PdeProblem {
            mode: Mode::Transformation,
            domain: ReferenceDomain::UnitSquare,
            rule: Arc::new(NegLaplacian),
            source: Some(Arc::new(|_: &[f64]| 1.0)),
            bc: BoundaryCondition::Weak {
                weight: 1.0,
                data: Arc::new(|_: &[f64]| vec![0.0]),
            },
            anchors: Some(Anchors::fixed(100.0, corners)),
        };
        let u = Mlp::init(&[2, 7, 1], Activation::Tanh, 6).unwrap();
        let mut phi = Mlp::init(&[2, 7, 2], Activation::Tanh, 7).unwrap();
        // start near the identity so the Jacobian is well conditioned
        let n = phi.param_count();
        let mut identity_like = phi.params().to_vec();
        for v in identity_like.iter_mut() {
            *v *= 0.3;
        }
        identity_like[n - 2] = 0.5;
        identity_like[n - 1] = 0.5;
        phi.set_params(&identity_like).unwrap();
        (p, Model::new(u, Geometry::Learned(phi)))
    }

    fn all() -> Vec<(&'static str, PdeProblem, Model, CollocationSet)> {
        let (a, b) = eikonal();
        let (c, d) = sphere();
        let (e, f) = stokes();
        let (g, h) = shape();
        vec![
            ("eikonal", a, b, colloc(ReferenceDomain::UnitInterval, 9, 2)),
            ("sphere", c, d, colloc(ReferenceDomain::UnitSquare, 9, 8)),
            ("stokes", e, f, colloc(ReferenceDomain::UnitSquare, 9, 8)),
            ("shape", g, h, colloc(ReferenceDomain::UnitSquare, 9, 8)),
        ]
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn jet_and_graph_routes_agree() {
        for (name, p, m, c) in all() {
            let jet = Objective::new(&p, &m, &c, Route::Jet).unwrap();
            let graph = Objective::new(&p, &m, &c, Route::Graph).unwrap();
            let (rj, gj) = jet.evaluate(&m).unwrap();
            let (rg, gg) = graph.evaluate(&m).unwrap();
            assert!(close(rj.total, rg.total, 1e-12), "{name}: {} vs {}", rj.total, rg.total);
            assert!(close(rj.boundary, rg.boundary, 1e-12), "{name}");
            assert!(close(rj.penalty, rg.penalty, 1e-12), "{name}");
            for (i, (a, b)) in gj.iter().zip(&gg).enumerate() {
                assert!(close(*a, *b, 1e-10), "{name} grad[{i}]: {a} vs {b}");
            }
        }
    }

    #[test]
    fn linearization_matches_full_graph() {
        for (name, p, mut m, c) in all().into_iter().take(3) {
            let lin = Objective::with_options(&p, &m, &c, Route::Jet, true).unwrap();
            let full = Objective::with_options(&p, &m, &c, Route::Jet, false).unwrap();
            assert!(lin.is_linearized() && !full.is_linearized());
            for seed in 0..3u64 {
                let fresh = Mlp::init(m.solution.widths(), Activation::Tanh, 100 + seed).unwrap();
                m.solution = fresh;
                let (ra, ga) = lin.evaluate(&m).unwrap();
                let (rb, gb) = full.evaluate(&m).unwrap();
                assert!(close(ra.total, rb.total, 1e-12), "{name}");
                for (a, b) in ra.residuals.iter().zip(&rb.residuals) {
                    assert!(close(*a, *b, 1e-12), "{name}");
                }
                for (a, b) in ga.iter().zip(&gb) {
                    assert!(close(*a, *b, 1e-10), "{name}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn graph_gradient_matches_finite_differences() {
        for (name, p, m, c) in all() {
            let obj = Objective::new(&p, &m, &c, Route::Graph).unwrap();
            let (_, g) = obj.evaluate(&m).unwrap();
            let n = m.param_count();
            let coords: Vec<usize> = (0..20).map(|k| (k * 7919 + 13) % n).collect();
            let fd = finite_difference(&obj, &m, &coords, 1e-6).unwrap();
            for (&i, d) in coords.iter().zip(&fd) {
                let err = (g[i] - d).abs() / g[i].abs().max(d.abs()).max(1e-6);
                assert!(err < 1e-4, "{name} coordinate {i}: {} vs {d}", g[i]);
            }
        }
    }

    #[test]
    fn loss_decomposition() {
        for (name, p, m, c) in all() {
            let obj = Objective::new(&p, &m, &c, Route::Jet).unwrap();
            let r = obj.loss(&m).unwrap();
            let w = p.boundary_weight();
            assert_eq!(r.total, r.interior + w * r.boundary + r.penalty, "{name}");
            assert!((r.interior - r.residuals.iter().sum::<f64>()).abs() <= 1e-15 * r.interior.max(1.0));
        }
    }

    #[test]
    fn exact_boundary_holds_for_any_parameters() {
        let boundary = sample_boundary(ReferenceDomain::UnitSquare, 400, Strategy::Grid, 0).unwrap();
        for (p, mut m) in [sphere(), stokes()] {
            for seed in 0..10 {
                m.solution = Mlp::init(m.solution.widths(), Activation::Tanh, seed).unwrap();
                let dev = boundary_deviation(&p, &m, &boundary).unwrap();
                assert!(dev <= 1e-12, "deviation {dev}");
            }
        }
        let (p, m) = eikonal();
        let u0 = m.predict(&p, &[vec![0.0]]).unwrap();
        assert_eq!(u0[0][0], 0.0);
    }

    #[test]
    fn pressure_pinned_only_at_outlet() {
        let t = stokes_transform();
        assert!(t.is_pinned(2, &[1.0, 0.4]));
        assert!(!t.is_pinned(2, &[0.0, 0.4]));
        assert!(t.is_pinned(0, &[0.0, 0.4]));
        assert_eq!(t.extension_value(0, &[0.0, 0.5]), 1.0);
    }

    #[test]
    fn zero_network_on_unit_source() {
        let p = PdeProblem {
            mode: Mode::Transformation,
            domain: ReferenceDomain::UnitSquare,
            rule: Arc::new(NegLaplacian),
            source: Some(Arc::new(|_: &[f64]| 1.0)),
            bc: BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Bubble(ReferenceDomain::UnitSquare))),
            anchors: None,
        };
        let m = Model::new(
            Mlp::zeros(&[2, 4, 1], Activation::Tanh).unwrap(),
            Geometry::Fixed(Arc::new(identity(2))),
        );
        let c = colloc(ReferenceDomain::UnitSquare, 16, 0);
        for route in [Route::Jet, Route::Graph] {
            let r = Objective::new(&p, &m, &c, route).unwrap().loss(&m).unwrap();
            assert_eq!(r.total, 1.0);
            assert_eq!(r.boundary, 0.0);
        }
    }

    #[test]
    fn weak_boundary_values() {
        let (mut p, mut m) = shape();
        m.solution = Mlp::zeros(&[2, 7, 1], Activation::Tanh).unwrap();
        p.anchors = None;
        let c = colloc(ReferenceDomain::UnitSquare, 4, 8);
        let r = Objective::new(&p, &m, &c, Route::Jet).unwrap().loss(&m).unwrap();
        assert_eq!(r.boundary, 0.0);
        p.bc = BoundaryCondition::Weak {
            weight: 1.0,
            data: Arc::new(|_: &[f64]| vec![1.0]),
        };
        let r = Objective::new(&p, &m, &c, Route::Jet).unwrap().loss(&m).unwrap();
        assert_eq!(r.boundary, 1.0);
    }

    #[test]
    fn manufactured_sphere_residual_vanishes() {
        let ctx = DiffContext::new();
        let phi = sphere_patch(0.5, 1.0).unwrap();
        let exact = crate::pullback::FnMap::new(2, 1, |x: &[DiffScalar]| vec![(x[0] * PI).sin() * (x[1] * PI).sin()]);
        let field = ComposedField::new(&exact, &phi, Mode::Manifold).precomposed();
        let mut loss = 0.0;
        for x0 in sample_interior(ReferenceDomain::UnitSquare, 64, Strategy::Grid, 0).unwrap() {
            let f = 2.0 * PI * PI * (PI * x0[0]).sin() * (PI * x0[1]).sin();
            let x = ctx.variables(&x0);
            let r = NegLaplacian.residuals(&field, &x, f).unwrap();
            loss += r[0].value().powi(2) / 64.0;
        }
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn validation_rejects_inconsistent_setups() {
        let (p, m) = eikonal();
        let c = colloc(ReferenceDomain::UnitInterval, 4, 2);
        let mut bad = m.clone();
        bad.solution = Mlp::init(&[3, 4, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(p.validate(&bad, &c), Err(PinnError::Invalid(_))));
        let (mut q, m2) = shape();
        q.bc = BoundaryCondition::Weak {
            weight: 0.0,
            data: Arc::new(|_: &[f64]| vec![0.0]),
        };
        let c2 = colloc(ReferenceDomain::UnitSquare, 4, 8);
        assert!(q.validate(&m2, &c2).is_err());
        let (mut s, m3) = stokes();
        s.anchors = Some(Anchors::fixed(1.0, vec![vec![0.0, 0.0]]));
        assert!(s.validate(&m3, &c2).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_state() {
        let (p, m) = sphere();
        let c = colloc(ReferenceDomain::UnitSquare, 9, 0);
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let out = train(&p, &m, &c, &cfg, |_| Control::Continue).unwrap();
        assert_eq!(out.model.params(), m.params());
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn short_training_is_monotone_and_reproducible() {
        let (p, m) = stokes();
        let c = colloc(ReferenceDomain::UnitSquare, 16, 0);
        let cfg = TrainConfig { steps: 15, ..Default::default() };
        let a = train(&p, &m, &c, &cfg, |_| Control::Continue).unwrap();
        let b = train(&p, &m, &c, &cfg, |_| Control::Continue).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history.windows(2).all(|w| w[1].total <= w[0].total));
        assert!(a.history.last().unwrap().total < a.history[0].total);
        assert_eq!(a.history.iter().map(|r| r.step).collect::<Vec<_>>(), (0..a.history.len()).collect::<Vec<_>>());
    }

    #[test]
    fn singular_geometry_reports_point() {
        let (p, mut m) = shape();
        if let Geometry::Learned(phi) = &mut m.geometry {
            let z = vec![0.0; phi.param_count()];
            phi.set_params(&z).unwrap();
        }
        let c = colloc(ReferenceDomain::UnitSquare, 4, 8);
        let err = Objective::new(&p, &m, &c, Route::Jet).unwrap().evaluate(&m).unwrap_err();
        assert!(matches!(
            err,
            PinnError::Point { index: 0, source: PullbackError::SingularJacobian { .. } }
        ));
    }
}
