//! Derivatives of a field composed with a map of the reference domain.
//!
//! Two regimes are supported. On an embedded manifold (m < n) the field is
//! `û ∘ φ` and derivatives are taken in local coordinates x. For an
//! equidimensional transformation the field û lives on the reference domain
//! and derivatives with respect to the global coordinates y = φ(x) are
//! obtained from the chain rule `∇_y u = J⁻ᵀ ∇_x û`, applied once more to
//! each component of the gradient for second derivatives. φ⁻¹ is never
//! evaluated; J⁻¹ is built from the adjugate inside the graph, so every
//! result stays differentiable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{derive_many, AutodiffError, DiffContext, DiffScalar};
use crate::geometry::Diffeo;
use crate::network::jet::JetLayout;
use crate::network::BoundMlp;
use crate::pinn::OutputTransform;

/// Below this |det J| the pullback refuses to invert the Jacobian.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PullbackError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("singular Jacobian: |det J| = {det:e}")]
    SingularJacobian { det: f64 },
    #[error("degenerate geometry: |dφ/dx| = {speed:e}")]
    DegenerateGeometry { speed: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, PullbackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Manifold,
    Transformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Local,
    Global,
}

/// A vector-valued map evaluated on graph nodes.
pub trait GraphMap<'c> {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>>;
}

impl<'c, D: Diffeo + ?Sized> GraphMap<'c> for D {
    fn dim_in(&self) -> usize {
        Diffeo::dim_in(self)
    }
    fn dim_out(&self) -> usize {
        Diffeo::dim_out(self)
    }
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        self.map(x)
    }
}

impl<'n, 'c> GraphMap<'c> for BoundMlp<'n, 'c> {
    fn dim_in(&self) -> usize {
        self.net().input_dim()
    }
    fn dim_out(&self) -> usize {
        self.net().output_dim()
    }
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        self.forward(x).expect("input dimension matches network")
    }
}

/// Closure-backed [`GraphMap`], mostly for analytic fields.
pub struct FnMap<F> {
    dim_in: usize,
    dim_out: usize,
    f: F,
}

impl<F> FnMap<F> {
    pub fn new<'c>(dim_in: usize, dim_out: usize, f: F) -> Self
    where
        F: Fn(&[DiffScalar<'c>]) -> Vec<DiffScalar<'c>>,
    {
        Self { dim_in, dim_out, f }
    }
}

impl<'c, F> GraphMap<'c> for FnMap<F>
where
    F: Fn(&[DiffScalar<'c>]) -> Vec<DiffScalar<'c>>,
{
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        (self.f)(x)
    }
}

/// Second-order Taylor polynomial of a vector field around `center`, with
/// the coefficients recorded as leaf variables.
///
/// Derivatives of order ≤ 2 at the center are exact, so the polynomial can
/// stand in for a network whose jets were computed elsewhere; the gradient
/// of a loss with respect to the leaves is then the adjoint of those jets.
pub struct TaylorField<'c> {
    center: Vec<f64>,
    layout: JetLayout,
    outputs: usize,
    coeffs: Vec<DiffScalar<'c>>,
}

impl<'c> TaylorField<'c> {
    /// `jets[r * streams + s]` is stream `s` of output `r`.
    pub fn new(ctx: &'c DiffContext, center: &[f64], layout: JetLayout, jets: &[f64]) -> Self {
        assert_eq!(center.len(), layout.dim(), "center dimension");
        assert_eq!(jets.len() % layout.streams(), 0, "whole jets expected");
        Self {
            center: center.to_vec(),
            layout,
            outputs: jets.len() / layout.streams(),
            coeffs: ctx.variables(jets),
        }
    }

    pub fn leaves(&self) -> &[DiffScalar<'c>] {
        &self.coeffs
    }

    pub fn layout(&self) -> JetLayout {
        self.layout
    }
}

impl<'c> GraphMap<'c> for TaylorField<'c> {
    fn dim_in(&self) -> usize {
        self.center.len()
    }
    fn dim_out(&self) -> usize {
        self.outputs
    }
    fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let ns = self.layout.streams();
        let delta: Vec<_> = x.iter().zip(&self.center).map(|(&xi, &c)| xi - c).collect();
        let pairs = self.layout.pairs();
        (0..self.outputs)
            .map(|r| {
                let c = &self.coeffs[r * ns..(r + 1) * ns];
                let mut acc = c[0];
                if self.layout.order() >= 1 {
                    for (k, &d) in delta.iter().enumerate() {
                        acc = acc + c[self.layout.first(k)] * d;
                    }
                }
                for &(k, l, s) in &pairs {
                    let term = c[s] * delta[k] * delta[l];
                    acc = acc + if k == l { term * 0.5 } else { term };
                }
                acc
            })
            .collect()
    }
}

/// The field whose derivatives enter a PDE residual.
///
/// In manifold mode the field is `(û ∘ φ)(x)`; with `precomposed` set the
/// network map already represents `û ∘ φ` in local coordinates. In
/// transformation mode the field is `û(x)` and derivatives are pulled back
/// to y = φ(x). An output transform, when present, is applied on top.
#[derive(Clone, Copy)]
pub struct ComposedField<'a, 'c> {
    pub net: &'a dyn GraphMap<'c>,
    pub diffeo: &'a dyn GraphMap<'c>,
    pub mode: Mode,
    pub precomposed: bool,
    pub transform: Option<&'a OutputTransform>,
}

impl<'a, 'c> ComposedField<'a, 'c> {
    pub fn new(net: &'a dyn GraphMap<'c>, diffeo: &'a dyn GraphMap<'c>, mode: Mode) -> Self {
        Self {
            net,
            diffeo,
            mode,
            precomposed: false,
            transform: None,
        }
    }

    pub fn with_transform(mut self, t: &'a OutputTransform) -> Self {
        self.transform = Some(t);
        self
    }

    pub fn precomposed(mut self) -> Self {
        self.precomposed = true;
        self
    }

    pub fn outputs(&self) -> usize {
        self.net.dim_out()
    }

    /// Every output component as a function of the local coordinates.
    pub fn eval(&self, x: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let raw = match self.mode {
            Mode::Manifold if !self.precomposed => self.net.eval(&self.diffeo.eval(x)),
            _ => self.net.eval(x),
        };
        match self.transform {
            Some(t) => t.apply(&raw, x),
            None => raw,
        }
    }
}

/// Value, gradient and Hessian of one field component at one point.
#[derive(Debug, Clone)]
pub struct DerivBundle<'c> {
    pub value: DiffScalar<'c>,
    pub grad: Vec<DiffScalar<'c>>,
    pub hess: Vec<Vec<DiffScalar<'c>>>,
    pub frame: Frame,
}

impl<'c> DerivBundle<'c> {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn laplacian(&self) -> DiffScalar<'c> {
        let ctx = self.value.ctx();
        ctx.sum((0..self.dim()).map(|i| self.hess[i][i]))
    }
}

fn hessian_of<'c>(grad: &[DiffScalar<'c>], x: &[DiffScalar<'c>]) -> Result<Vec<Vec<DiffScalar<'c>>>> {
    grad.iter()
        .map(|&g| derive_many(g, x).map_err(PullbackError::from))
        .collect()
}

/// Local-coordinate derivatives of `u` with respect to the leaves `x`.
pub fn bundle_of<'c>(u: DiffScalar<'c>, x: &[DiffScalar<'c>], frame: Frame) -> Result<DerivBundle<'c>> {
    let grad = derive_many(u, x)?;
    let hess = hessian_of(&grad, x)?;
    Ok(DerivBundle {
        value: u,
        grad,
        hess,
        frame,
    })
}

/// `∂(field)/∂xᵢ` and `∂²(field)/∂xᵢ∂xⱼ` of output `output` at the leaves `x`.
pub fn local_bundle<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    output: usize,
) -> Result<DerivBundle<'c>> {
    let u = component(field, x, output)?;
    bundle_of(u, x, Frame::Local)
}

fn component<'c>(field: &ComposedField<'_, 'c>, x: &[DiffScalar<'c>], output: usize) -> Result<DiffScalar<'c>> {
    let values = field.eval(x);
    values.get(output).copied().ok_or_else(|| {
        PullbackError::Dimension(format!("output {output} of {}", values.len()))
    })
}

/// Derivative of a scalar field along a curve with respect to arc length:
/// `(d u/dx) / ‖dφ/dx‖`.
pub fn arclength_derivative<'c>(
    u: DiffScalar<'c>,
    diffeo: &dyn GraphMap<'c>,
    x: &[DiffScalar<'c>],
) -> Result<DiffScalar<'c>> {
    if x.len() != 1 {
        return Err(PullbackError::Dimension(format!(
            "arc length needs a curve, got {} local coordinates",
            x.len()
        )));
    }
    let du = derive_many(u, x)?[0];
    let y = diffeo.eval(x);
    let ctx = u.ctx();
    let mut speed2 = ctx.lift(0.0);
    for yi in y {
        let d = derive_many(yi, x)?[0];
        speed2 = speed2 + d * d;
    }
    if speed2.value() <= 0.0 {
        return Err(PullbackError::DegenerateGeometry {
            speed: speed2.value().max(0.0).sqrt(),
        });
    }
    Ok(du / speed2.sqrt())
}

/// Arc-length derivative of output `output` of a curve field.
pub fn field_arclength_derivative<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    output: usize,
) -> Result<DiffScalar<'c>> {
    let u = component(field, x, output)?;
    arclength_derivative(u, field.diffeo, x)
}

/// Jacobian data of an equidimensional map at one point.
pub struct Pullback<'c> {
    x: Vec<DiffScalar<'c>>,
    jac: Vec<Vec<DiffScalar<'c>>>,
    jinv: Vec<Vec<DiffScalar<'c>>>,
    det: DiffScalar<'c>,
}

impl<'c> Pullback<'c> {
    /// `x` must be leaf variables; `diffeo` must map ℝⁿ → ℝⁿ with n ≤ 3.
    pub fn new(diffeo: &dyn GraphMap<'c>, x: &[DiffScalar<'c>]) -> Result<Self> {
        let n = x.len();
        if diffeo.dim_in() != n || diffeo.dim_out() != n || n == 0 || n > 3 {
            return Err(PullbackError::Dimension(format!(
                "pullback needs an n→n map with n ≤ 3, got {}→{} at {n} coordinates",
                diffeo.dim_in(),
                diffeo.dim_out()
            )));
        }
        let y = diffeo.eval(x);
        let jac: Vec<Vec<_>> = y
            .iter()
            .map(|&yi| derive_many(yi, x))
            .collect::<std::result::Result<_, _>>()?;
        let (det, adj) = adjugate(&jac);
        if det.value().abs() < SINGULAR_DET || !det.value().is_finite() {
            return Err(PullbackError::SingularJacobian { det: det.value() });
        }
        let jinv = adj
            .into_iter()
            .map(|row| row.into_iter().map(|a| a / det).collect())
            .collect();
        Ok(Self {
            x: x.to_vec(),
            jac,
            jinv,
            det,
        })
    }

    pub fn x(&self) -> &[DiffScalar<'c>] {
        &self.x
    }

    pub fn jacobian(&self) -> &[Vec<DiffScalar<'c>>] {
        &self.jac
    }

    pub fn inverse_jacobian(&self) -> &[Vec<DiffScalar<'c>>] {
        &self.jinv
    }

    pub fn det(&self) -> DiffScalar<'c> {
        self.det
    }

    /// `J⁻ᵀ v` for a local covector `v`.
    fn pull(&self, v: &[DiffScalar<'c>]) -> Vec<DiffScalar<'c>> {
        let n = self.x.len();
        let ctx = v[0].ctx();
        (0..n)
            .map(|i| ctx.sum((0..n).map(|k| self.jinv[k][i] * v[k])))
            .collect()
    }

    /// `∇_y u`, where `u` is a function of the local leaves.
    pub fn gradient(&self, u: DiffScalar<'c>) -> Result<Vec<DiffScalar<'c>>> {
        let gx = derive_many(u, &self.x)?;
        Ok(self.pull(&gx))
    }

    /// Full global Hessian `∂²u/∂yᵢ∂yⱼ`.
    pub fn hessian(&self, u: DiffScalar<'c>) -> Result<Vec<Vec<DiffScalar<'c>>>> {
        let g = self.gradient(u)?;
        g.iter()
            .map(|&gi| {
                let gx = derive_many(gi, &self.x)?;
                Ok(self.pull(&gx))
            })
            .collect()
    }

    /// Diagonal `∂²u/∂yᵢ²` only.
    pub fn hessian_diag(&self, u: DiffScalar<'c>) -> Result<Vec<DiffScalar<'c>>> {
        let n = self.x.len();
        let g = self.gradient(u)?;
        let ctx = u.ctx();
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                let gx = derive_many(gi, &self.x)?;
                Ok(ctx.sum((0..n).map(|k| self.jinv[k][i] * gx[k])))
            })
            .collect()
    }

    pub fn laplacian(&self, u: DiffScalar<'c>) -> Result<DiffScalar<'c>> {
        let ctx = u.ctx();
        Ok(ctx.sum(self.hessian_diag(u)?))
    }

    /// `Σᵢ ∂uᵢ/∂yᵢ`.
    pub fn divergence(&self, components: &[DiffScalar<'c>]) -> Result<DiffScalar<'c>> {
        let n = self.x.len();
        if components.len() != n {
            return Err(PullbackError::Dimension(format!(
                "divergence of {} components in {n} dimensions",
                components.len()
            )));
        }
        let ctx = self.x[0].ctx();
        let mut acc = ctx.lift(0.0);
        for (i, &c) in components.iter().enumerate() {
            let gx = derive_many(c, &self.x)?;
            acc = acc + ctx.sum((0..n).map(|k| self.jinv[k][i] * gx[k]));
        }
        Ok(acc)
    }

    /// Global bundle of `u`.
    pub fn bundle(&self, u: DiffScalar<'c>) -> Result<DerivBundle<'c>> {
        let grad = self.gradient(u)?;
        let hess = grad
            .iter()
            .map(|&gi| {
                let gx = derive_many(gi, &self.x)?;
                Ok(self.pull(&gx))
            })
            .collect::<Result<_>>()?;
        Ok(DerivBundle {
            value: u,
            grad,
            hess,
            frame: Frame::Global,
        })
    }
}

/// Determinant and adjugate (transpose of the cofactor matrix) for n ≤ 3.
fn adjugate<'c>(m: &[Vec<DiffScalar<'c>>]) -> (DiffScalar<'c>, Vec<Vec<DiffScalar<'c>>>) {
    let ctx = m[0][0].ctx();
    match m.len() {
        1 => (m[0][0], vec![vec![ctx.lift(1.0)]]),
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let adj = vec![vec![m[1][1], -m[0][1]], vec![-m[1][0], m[0][0]]];
            (det, adj)
        }
        3 => {
            let c = |i: usize, j: usize| {
                let (r0, r1) = match i {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (c0, c1) = match j {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
                if (i + j) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            };
            let cof: Vec<Vec<_>> = (0..3).map(|i| (0..3).map(|j| c(i, j)).collect()).collect();
            let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
            let adj = (0..3).map(|i| (0..3).map(|j| cof[j][i]).collect()).collect();
            (det, adj)
        }
        n => unreachable!("adjugate of {n}x{n}"),
    }
}

/// `∇_y` of output `output` in transformation mode.
pub fn global_gradient<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    output: usize,
) -> Result<Vec<DiffScalar<'c>>> {
    let pb = Pullback::new(field.diffeo, x)?;
    pb.gradient(component(field, x, output)?)
}

pub fn global_hessian<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    output: usize,
) -> Result<Vec<Vec<DiffScalar<'c>>>> {
    let pb = Pullback::new(field.diffeo, x)?;
    pb.hessian(component(field, x, output)?)
}

pub fn global_hessian_diag<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    output: usize,
) -> Result<Vec<DiffScalar<'c>>> {
    let pb = Pullback::new(field.diffeo, x)?;
    pb.hessian_diag(component(field, x, output)?)
}

/// `div_y` of the vector field formed by the listed outputs.
pub fn global_divergence<'c>(
    field: &ComposedField<'_, 'c>,
    x: &[DiffScalar<'c>],
    outputs: &[usize],
) -> Result<DiffScalar<'c>> {
    let pb = Pullback::new(field.diffeo, x)?;
    let values = field.eval(x);
    let comps: Vec<_> = outputs
        .iter()
        .map(|&o| {
            values
                .get(o)
                .copied()
                .ok_or_else(|| PullbackError::Dimension(format!("output {o}")))
        })
        .collect::<Result<_>>()?;
    pb.divergence(&comps)
}
