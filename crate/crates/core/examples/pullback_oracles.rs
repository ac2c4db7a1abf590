//! Derivatives with respect to physical coordinates through a map
//! `φ: reference → physical`, checked against closed forms.

use diffeo_pinn::autodiff::{DiffContext, DiffScalar};
use diffeo_pinn::geometry::{spiral, Diffeo, Tube};
use diffeo_pinn::pullback::{arclength_derivative, FnMap, Pullback};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Tube: û = |φ(x)|² so ∇_y u = 2y and Δ_y u = 4.
    let tube = Tube::default();
    for p in [[0.1, 0.2], [0.33, 0.5], [0.9, 0.95]] {
        let ctx = DiffContext::new();
        let x = ctx.variables(&p);
        let y = tube.map(&x);
        let u = y[0] * y[0] + y[1] * y[1];
        let pb = Pullback::new(&tube, &x)?;
        let g = pb.gradient(u)?;
        println!(
            "tube x = {p:?}: det J = {:.4}, grad = ({:.6}, {:.6}) vs 2y = ({:.6}, {:.6}), lap = {:.12}",
            pb.det().value(),
            g[0].value(),
            g[1].value(),
            2.0 * y[0].value(),
            2.0 * y[1].value(),
            pb.laplacian(u)?.value()
        );
    }

    // Polar map: û = r² expressed in (r, θ) has Laplacian 4 in the plane.
    for p in [[0.5, 0.3], [1.2, 2.0]] {
        let ctx = DiffContext::new();
        let polar = FnMap::new(2, 2, |x: &[DiffScalar]| vec![x[0] * x[1].cos(), x[0] * x[1].sin()]);
        let x = ctx.variables(&p);
        let pb = Pullback::new(&polar, &x)?;
        println!("polar (r, θ) = {p:?}: Δ(r²) = {:.12}", pb.laplacian(x[0] * x[0])?.value());
    }

    // Spiral: d/ds of the curve parameter is 1/|φ'|.
    let s = spiral(3.5 * std::f64::consts::PI, 0.1)?;
    for t in [0.1, 0.5, 1.0] {
        let ctx = DiffContext::new();
        let x = ctx.variables(&[t]);
        let du = arclength_derivative(x[0], &s, &x)?;
        println!("spiral x = {t}: du/ds = {:.10} vs 1/speed = {:.10}", du.value(), 1.0 / s.speed(t));
    }
    Ok(())
}
