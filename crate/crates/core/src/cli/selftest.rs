//! Quick numerical checks run by the `selftest` subcommand.

use std::f64::consts::PI;

use crate::autodiff::{derive, DiffContext, DiffScalar};
use crate::experiments::{arc_length_closed_form, arc_length_oracle};
use crate::geometry::{identity, jacobian_at, neural, spiral, Diffeo, Tube};
use crate::network::{Activation, Mlp};
use crate::pullback::{global_gradient, global_hessian, local_bundle, ComposedField, FnMap, Mode, Pullback};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    /// Worst error over all probe points.
    pub error: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tol
    }
}

fn grid(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / (n + 1) as f64;
    (1..=n)
        .flat_map(|i| (1..=n).map(move |j| [i as f64 * h, j as f64 * h]))
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn nested_second_derivative() -> Check {
    let mut error: f64 = 0.0;
    for k in 0..10 {
        let x0 = 0.1 + 0.2 * k as f64;
        let ctx = DiffContext::new();
        let x = ctx.variable(x0);
        let f = x.sin() * x.exp();
        let d2 = derive(derive(f, x).unwrap(), x).unwrap().value();
        error = error.max(rel(d2, 2.0 * x0.cos() * x0.exp()));
    }
    Check {
        name: "nested second derivative",
        error,
        tol: 1e-12,
    }
}

/// A random network seen through the identity map, in both modes.
fn identity_transform() -> Check {
    let net = neural(Mlp::init(&[2, 16, 16, 1], Activation::Tanh, 11).unwrap());
    let id = identity(2);
    let mut error: f64 = 0.0;
    for p in grid(10) {
        let ctx = DiffContext::new();
        let x = ctx.variables(&p);
        let local = local_bundle(&ComposedField::new(&net, &id, Mode::Manifold), &x, 0).unwrap();
        let field = ComposedField::new(&net, &id, Mode::Transformation);
        let g = global_gradient(&field, &x, 0).unwrap();
        let h = global_hessian(&field, &x, 0).unwrap();
        for i in 0..2 {
            error = error.max((g[i].value() - local.grad[i].value()).abs());
            for j in 0..2 {
                error = error.max((h[i][j].value() - local.hess[i][j].value()).abs());
            }
        }
    }
    Check {
        name: "identity transform",
        error,
        tol: 1e-12,
    }
}

/// `φ(x) = 2x`, `û(x) = sin(2x₁)cos(2x₂)` so `Δ_y u = −2u`.
fn scaling_map() -> Check {
    let mut error: f64 = 0.0;
    for p in grid(10) {
        let ctx = DiffContext::new();
        let phi = FnMap::new(2, 2, |x: &[DiffScalar]| vec![x[0] * 2.0, x[1] * 2.0]);
        let x = ctx.variables(&p);
        let pb = Pullback::new(&phi, &x).unwrap();
        let v = (x[0] * 2.0).sin() * (x[1] * 2.0).cos();
        let lap = pb.laplacian(v).unwrap().value();
        error = error.max(rel(lap, -2.0 * v.value()));
    }
    Check {
        name: "scaling map laplacian",
        error,
        tol: 1e-8,
    }
}

/// `û = |φ(x)|²` through the tube map: global gradient `2y`, Laplacian 4.
fn tube_map() -> Check {
    let t = Tube::default();
    let mut error: f64 = 0.0;
    for p in grid(10) {
        let ctx = DiffContext::new();
        let x = ctx.variables(&p);
        let y = t.map(&x);
        let v = y[0] * y[0] + y[1] * y[1];
        let pb = Pullback::new(&t, &x).unwrap();
        let g = pb.gradient(v).unwrap();
        for i in 0..2 {
            error = error.max(rel(g[i].value(), 2.0 * y[i].value()));
        }
        error = error.max(rel(pb.laplacian(v).unwrap().value(), 4.0));
    }
    Check {
        name: "tube map oracle",
        error,
        tol: 1e-8,
    }
}

/// `φ(x) = x²`, `û = x⁴` so `u(y) = y²`.
fn nonlinear_1d() -> Check {
    let mut error: f64 = 0.0;
    for k in 1..=100 {
        let x0 = 0.2 + 0.008 * k as f64;
        let ctx = DiffContext::new();
        let phi = FnMap::new(1, 1, |x: &[DiffScalar]| vec![x[0] * x[0]]);
        let x = ctx.variables(&[x0]);
        let pb = Pullback::new(&phi, &x).unwrap();
        let v = x[0].powi(4);
        error = error.max(rel(pb.gradient(v).unwrap()[0].value(), 2.0 * x0 * x0));
        error = error.max(rel(pb.laplacian(v).unwrap().value(), 2.0));
    }
    Check {
        name: "one-dimensional nonlinear map",
        error,
        tol: 1e-8,
    }
}

/// `∇ₓû = Jᵀ ∇_y u` for a network field through the tube.
fn chain_rule() -> Check {
    let t = Tube::default();
    let net = neural(Mlp::init(&[2, 16, 1], Activation::Tanh, 5).unwrap());
    let mut error: f64 = 0.0;
    for p in grid(10) {
        let ctx = DiffContext::new();
        let x = ctx.variables(&p);
        let v = net.map(&x)[0];
        let gx = crate::autodiff::gradient(v, &x).unwrap();
        let gy = Pullback::new(&t, &x).unwrap().gradient(v).unwrap();
        let j = jacobian_at(&t, &p).unwrap();
        for k in 0..2 {
            let back: f64 = (0..2).map(|i| j[i][k] * gy[i].value()).sum();
            error = error.max((back - gx[k]).abs());
        }
    }
    Check {
        name: "chain rule",
        error,
        tol: 1e-10,
    }
}

fn arc_length() -> Check {
    let s = spiral(3.5 * PI, 0.1).unwrap();
    let error = [0.25, 0.5, 1.0]
        .iter()
        .map(|&x| rel(arc_length_closed_form(&s, x), arc_length_oracle(&s, x)))
        .fold(0.0, f64::max);
    Check {
        name: "arc length quadrature",
        error,
        tol: 1e-9,
    }
}

pub fn checks() -> Vec<Check> {
    vec![
        nested_second_derivative(),
        identity_transform(),
        scaling_map(),
        tube_map(),
        nonlinear_1d(),
        chain_rule(),
        arc_length(),
    ]
}
