//! Stokes flow through a channel whose width varies along its length,
//! solved on the unit square through the Jacobian pullback. Velocity and
//! outlet pressure are built into the network output.
//!
//! `cargo run --example stokes_tube -- [steps] [seed]`

use diffeo_pinn::experiments::{run, Details, ExperimentConfig, ExperimentId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::defaults(ExperimentId::StokesTube);
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
    if let Details::StokesTube {
        max_boundary_deviation,
        residual_reduction,
        flux_sections,
        fluxes,
        max_speed,
        max_speed_local,
        max_speed_global,
        ..
    } = report.details
    {
        println!("worst boundary deviation {max_boundary_deviation:.1e}");
        println!("interior residual reduced {residual_reduction:.2e}x");
        println!(
            "max speed {max_speed:.4} at reference {:?}, physical {:?}",
            max_speed_local, max_speed_global
        );
        for (x, q) in flux_sections.iter().zip(&fluxes) {
            println!("flux at x1 = {x}: {q:.5}");
        }
    }
    Ok(())
}
