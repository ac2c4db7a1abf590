//! Arc length of an Archimedean spiral as the solution of `|du/ds| = 1`
//! with `u(0) = 0`, compared against adaptive quadrature.
//!
//! `cargo run --example eikonal_spiral -- [steps] [seed]`

use diffeo_pinn::experiments::{run, ExperimentConfig, ExperimentId};
use diffeo_pinn::experiments::Details;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::defaults(ExperimentId::Eikonal);
    if let Some(steps) = args.next() {
        cfg.optimizer.steps = steps.parse()?;
    }
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    let report = run(&cfg)?;
    println!(
        "{} iterations, {} evaluations, status {:?}, {:.1}s",
        report.iterations, report.evaluations, report.status, report.wall_time_s
    );
    println!("final loss {:.3e}", report.final_loss());
    println!("L2 error vs quadrature {:.3e}", report.l2_error.unwrap_or(f64::NAN));
    if let Details::Eikonal { predicted_max, oracle_length } = report.details {
        println!("u(1) = {predicted_max:.6}, L(1) = {oracle_length:.6}");
    }
    Ok(())
}
