//! Reverse-mode graphs that differentiate their own derivatives: second
//! and mixed partials, a Hessian, and the Laplacian of a small network.

use diffeo_pinn::autodiff::{derive, derive_many, DiffContext};
use diffeo_pinn::network::{Activation, Mlp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ctx = DiffContext::new();
    let x = ctx.variable(0.7);
    let y = ctx.variable(-0.3);

    let f = (x * y).sin() + x.powi(3) * y.exp();
    let fx = derive(f, x)?;
    let fxx = derive(fx, x)?;
    let fxy = derive(fx, y)?;
    let fxxx = derive(fxx, x)?;
    println!("f      = {:.12}", f.value());
    println!("f_x    = {:.12}", fx.value());
    println!("f_xx   = {:.12}", fxx.value());
    println!("f_xy   = {:.12}", fxy.value());
    println!("f_xxx  = {:.12}", fxxx.value());

    let (xv, yv) = (0.7f64, -0.3f64);
    let exact_xy = (xv * yv).cos() - xv * yv * (xv * yv).sin() + 3.0 * xv * xv * yv.exp();
    println!("f_xy closed form = {exact_xy:.12}");

    let g = derive_many(f, &[x, y])?;
    println!("Hessian:");
    for gi in &g {
        let row = derive_many(*gi, &[x, y])?;
        println!("  [{:+.10}, {:+.10}]", row[0].value(), row[1].value());
    }

    let net = Mlp::init(&[2, 32, 32, 1], Activation::Tanh, 3)?;
    let ctx = DiffContext::new();
    let z = ctx.variables(&[0.25, 0.6]);
    let u = net.bind_variables(&ctx).forward(&z)?[0];
    let du = derive_many(u, &z)?;
    let lap = derive(du[0], z[0])? + derive(du[1], z[1])?;
    println!("network u = {:.8}, Laplacian = {:.8}, graph size {}", u.value(), lap.value(), ctx.len());
    Ok(())
}
