//! `−Δ_S u = f` on a latitude/longitude patch of the unit sphere with a
//! manufactured solution, boundary values enforced exactly.
//!
//! `cargo run --example poisson_sphere -- [steps] [seed]`

use diffeo_pinn::experiments::{run, Details, ExperimentConfig, ExperimentId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::defaults(ExperimentId::PoissonSphere);
    if let Some(steps) = args.next() {
        cfg.optimizer.steps = steps.parse()?;
    }
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    let report = run(&cfg)?;
    println!(
        "{} iterations, status {:?}, {:.1}s, final loss {:.3e}",
        report.iterations,
        report.status,
        report.wall_time_s,
        report.final_loss()
    );
    println!("L2 error vs manufactured solution {:.3e}", report.l2_error.unwrap_or(f64::NAN));
    if let Details::PoissonSphere { max_boundary_deviation } = report.details {
        println!("worst boundary deviation over training {max_boundary_deviation:.1e}");
    }
    Ok(())
}
