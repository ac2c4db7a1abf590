//! Reference domains, collocation sampling, maps φ from the reference domain
//! to the computational domain, and reference-domain distance functions.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{derive_many, AutodiffError, DiffContext, DiffScalar};
use crate::network::Mlp;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid strategy on the unit square needs a square point count, got {0}")]
    NotASquare(usize),
    #[error("point count must be positive")]
    Empty,
    #[error("map is not orientation preserving at sample {index} ({point:?}): det J = {det:e}")]
    NotDiffeomorphic {
        index: usize,
        point: Vec<f64>,
        det: f64,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceDomain {
    /// `[0, 1]`
    UnitInterval,
    /// `[0, 1]²`
    UnitSquare,
}

impl ReferenceDomain {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceDomain::UnitInterval => 1,
            ReferenceDomain::UnitSquare => 2,
        }
    }

    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|&c| c > 0.0 && c < 1.0)
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().all(|&c| (0.0..=1.0).contains(&c))
            && x.iter().any(|&c| c == 0.0 || c == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Grid,
    Random,
}

pub type Point = Vec<f64>;

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `n` points strictly inside the reference domain.
pub fn sample_interior(
    dom: ReferenceDomain,
    n: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<Point>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::Empty);
    }
    match (strategy, dom) {
        (Strategy::Grid, ReferenceDomain::UnitInterval) => Ok((0..n)
            .map(|i| vec![(i as f64 + 0.5) / n as f64])
            .collect()),
        (Strategy::Grid, ReferenceDomain::UnitSquare) => {
            let k = (n as f64).sqrt().round() as usize;
            if k * k != n {
                return Err(GeometryError::NotASquare(n));
            }
            let mut pts = Vec::with_capacity(n);
            for i in 0..k {
                for j in 0..k {
                    pts.push(vec![(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64]);
                }
            }
            Ok(pts)
        }
        (Strategy::Random, dom) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n)
                .map(|_| (0..dom.dim()).map(|_| open_unit(&mut rng)).collect())
                .collect())
        }
    }
}

/// `m` points on the boundary of the reference domain (possibly none, since
/// exact boundary conditions need no samples).
///
/// On the unit interval the points alternate between 0 and 1. On the unit
/// square the grid strategy places `m/4` midpoint-spaced points on each edge
/// (the first `m % 4` edges get one more).
pub fn sample_boundary(
    dom: ReferenceDomain,
    m: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<Point>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dom {
        ReferenceDomain::UnitInterval => Ok((0..m)
            .map(|i| match strategy {
                Strategy::Grid => vec![(i % 2) as f64],
                Strategy::Random => vec![if rng.random::<bool>() { 1.0 } else { 0.0 }],
            })
            .collect()),
        ReferenceDomain::UnitSquare => {
            let edge_point = |edge: usize, t: f64| match edge {
                0 => vec![t, 0.0],
                1 => vec![1.0, t],
                2 => vec![t, 1.0],
                _ => vec![0.0, t],
            };
            match strategy {
                Strategy::Grid => {
                    let mut pts = Vec::with_capacity(m);
                    for edge in 0..4 {
                        let count = m / 4 + usize::from(edge < m % 4);
                        for i in 0..count {
                            pts.push(edge_point(edge, (i as f64 + 0.5) / count as f64));
                        }
                    }
                    Ok(pts)
                }
                Strategy::Random => Ok((0..m)
                    .map(|_| {
                        let edge = rng.random_range(0..4);
                        let t: f64 = rng.random();
                        edge_point(edge, t)
                    })
                    .collect()),
            }
        }
    }
}

/// Interior and boundary collocation points on the reference domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub domain: ReferenceDomain,
    pub interior: Vec<Point>,
    pub boundary: Vec<Point>,
    pub seed: u64,
    pub strategy: Strategy,
}

impl CollocationSet {
    pub fn new(
        domain: ReferenceDomain,
        interior: usize,
        boundary: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        Ok(Self {
            domain,
            interior: sample_interior(domain, interior, strategy, seed)?,
            boundary: sample_boundary(domain, boundary, strategy, seed.wrapping_add(1))?,
            seed,
            strategy,
        })
    }
}

/// A twice differentiable map φ from the reference domain (dimension m) into
/// ℝⁿ, evaluated on graph nodes.
pub trait Diffeo: Send + Sync + fmt::Debug {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn name(&self) -> &str;
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>>;

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ctx = DiffContext::new();
        let xs: Vec<_> = x.iter().map(|&v| ctx.lift(v)).collect();
        self.map(&xs).iter().map(|y| y.value()).collect()
    }
}

/// Archimedean spiral `φ(x) = (r(lx) sin(lx), r(lx) cos(lx))`, `r(t) = a t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spiral {
    pub l: f64,
    pub a: f64,
}

pub fn spiral(l: f64, a: f64) -> Result<Spiral, GeometryError> {
    if !(l > 0.0 && a > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "spiral needs l > 0 and a > 0, got l={l}, a={a}"
        )));
    }
    Ok(Spiral { l, a })
}

impl Spiral {
    /// Speed ‖φ′(x)‖ = a l √(1 + (lx)²).
    pub fn speed(&self, x: f64) -> f64 {
        let t = self.l * x;
        self.a * self.l * (1.0 + t * t).sqrt()
    }
}

impl Diffeo for Spiral {
    fn dim_in(&self) -> usize {
        1
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn name(&self) -> &str {
        "spiral"
    }
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let t = x[0] * self.l;
        let r = t * self.a;
        vec![r * t.sin(), r * t.cos()]
    }
}

/// Sphere patch `(sin ψ cos θ, sin ψ sin θ, cos ψ)` with `ψ = x₁ + ψ₀`,
/// `θ = x₂ + θ₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePatch {
    pub psi0: f64,
    pub theta0: f64,
}

pub fn sphere_patch(psi0: f64, theta0: f64) -> Result<SpherePatch, GeometryError> {
    if !(psi0 > 0.0 && psi0 + 1.0 < PI) {
        return Err(GeometryError::InvalidParameter(format!(
            "sphere patch must avoid the poles: need 0 < psi0 < pi - 1, got {psi0}"
        )));
    }
    Ok(SpherePatch { psi0, theta0 })
}

impl Diffeo for SpherePatch {
    fn dim_in(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        3
    }
    fn name(&self) -> &str {
        "sphere-patch"
    }
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let psi = x[0] + self.psi0;
        let theta = x[1] + self.theta0;
        let sp = psi.sin();
        vec![sp * theta.cos(), sp * theta.sin(), psi.cos()]
    }
}

/// Tube `φ(x₁, x₂) = (x₁, (2x₂ − 1) s(x₁))`, `s(t) = base + amp cos(freq t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tube {
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
}

pub fn tube(amp: f64, freq: f64) -> Result<Tube, GeometryError> {
    tube_with_base(0.2, amp, freq)
}

pub fn tube_with_base(base: f64, amp: f64, freq: f64) -> Result<Tube, GeometryError> {
    // s(t) ≥ base - |amp| on [0, 1]
    if !(base - amp.abs() > 0.0) || !freq.is_finite() {
        return Err(GeometryError::InvalidParameter(format!(
            "tube half-width must stay positive: base={base}, amp={amp}"
        )));
    }
    Ok(Tube { base, amp, freq })
}

impl Default for Tube {
    fn default() -> Self {
        Tube {
            base: 0.2,
            amp: 0.1,
            freq: 3.0 * PI,
        }
    }
}

impl Tube {
    pub fn half_width(&self, x1: f64) -> f64 {
        self.base + self.amp * (self.freq * x1).cos()
    }

    pub fn half_width_slope(&self, x1: f64) -> f64 {
        -self.amp * self.freq * (self.freq * x1).sin()
    }
}

impl Diffeo for Tube {
    fn dim_in(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn name(&self) -> &str {
        "tube"
    }
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let s = (x[0] * self.freq).cos() * self.amp + self.base;
        vec![x[0], (x[1] * 2.0 - 1.0) * s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identity {
    pub dim: usize,
}

pub fn identity(m: usize) -> Identity {
    Identity { dim: m }
}

impl Diffeo for Identity {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn name(&self) -> &str {
        "identity"
    }
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        x.to_vec()
    }
}

/// A network used as the map. Smooth, but not guaranteed to be invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMap {
    pub net: Mlp,
}

pub fn neural(net: Mlp) -> NeuralMap {
    NeuralMap { net }
}

impl Diffeo for NeuralMap {
    fn dim_in(&self) -> usize {
        self.net.input_dim()
    }
    fn dim_out(&self) -> usize {
        self.net.output_dim()
    }
    fn name(&self) -> &str {
        "neural"
    }
    fn map<'c>(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let ctx = x[0].ctx();
        self.net
            .bind_constants(ctx)
            .forward(x)
            .expect("input dimension checked by caller")
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.net.eval(x).expect("input dimension")
    }
}

/// `J[i][j] = ∂φᵢ/∂xⱼ` as differentiable nodes. `x` must be leaf variables.
pub fn jacobian<'c, D: Diffeo + ?Sized>(
    d: &D,
    x: &[DiffScalar<'c>],
) -> Result<Vec<Vec<DiffScalar<'c>>>, GeometryError> {
    let y = d.map(x);
    y.iter()
        .map(|&yi| derive_many(yi, x).map_err(GeometryError::from))
        .collect()
}

/// Numeric Jacobian at a point.
pub fn jacobian_at<D: Diffeo + ?Sized>(d: &D, x: &[f64]) -> Result<Vec<Vec<f64>>, GeometryError> {
    let ctx = DiffContext::new();
    let xs = ctx.variables(x);
    let j = jacobian(d, &xs)?;
    Ok(j.iter()
        .map(|row| row.iter().map(|v| v.value()).collect())
        .collect())
}

/// Determinant of a square matrix of size ≤ 3.
pub fn det(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        n => panic!("determinant of {n}x{n} not supported"),
    }
}

/// Check `det J > 0` at every sample for equidimensional maps.
pub fn check_orientation<D: Diffeo + ?Sized>(d: &D, points: &[Point]) -> Result<(), GeometryError> {
    if d.dim_in() != d.dim_out() {
        return Ok(());
    }
    for (index, x) in points.iter().enumerate() {
        let j = jacobian_at(d, x)?;
        let dj = det(&j);
        if !(dj > 0.0) {
            return Err(GeometryError::NotDiffeomorphic {
                index,
                point: x.clone(),
                det: dj,
            });
        }
    }
    Ok(())
}

/// Smooth function vanishing on (part of) the reference boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceFn {
    /// `q(x)` on the interval, `q(x₁)q(x₂)` on the square, `q(z) = 4z(1 − z)`.
    Bubble(ReferenceDomain),
    /// `x₁`: vanishes only at the left end `x₁ = 0`.
    Left,
    /// `1 − x₁`: vanishes only on the face `x₁ = 1`.
    Right,
}

fn q<'c>(z: DiffScalar<'c>) -> DiffScalar<'c> {
    z * 4.0 * (1.0 - z)
}

fn q_f64(z: f64) -> f64 {
    4.0 * z * (1.0 - z)
}

pub fn distance(dom: ReferenceDomain) -> DistanceFn {
    DistanceFn::Bubble(dom)
}

impl DistanceFn {
    pub fn eval<'c>(&self, x: &[DiffScalar<'c>]) -> DiffScalar<'c> {
        match self {
            DistanceFn::Bubble(ReferenceDomain::UnitInterval) => q(x[0]),
            DistanceFn::Bubble(ReferenceDomain::UnitSquare) => q(x[0]) * q(x[1]),
            DistanceFn::Left => x[0],
            DistanceFn::Right => 1.0 - x[0],
        }
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        match self {
            DistanceFn::Bubble(ReferenceDomain::UnitInterval) => q_f64(x[0]),
            DistanceFn::Bubble(ReferenceDomain::UnitSquare) => q_f64(x[0]) * q_f64(x[1]),
            DistanceFn::Left => x[0],
            DistanceFn::Right => 1.0 - x[0],
        }
    }
}
