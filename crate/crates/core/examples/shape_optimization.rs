//! Trains a solution and a neural domain map together on `−Δu = 1` with
//! the four corners held in place, and prints how the boundary image
//! changes.
//!
//! `cargo run --example shape_optimization -- [steps] [seed] [width]`

use diffeo_pinn::experiments::{run, Details, ExperimentConfig, ExperimentId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::defaults(ExperimentId::ShapeOpt);
    if let Some(steps) = args.next() {
        cfg.optimizer.steps = steps.parse()?;
    }
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    if let Some(width) = args.next() {
        let w: usize = width.parse()?;
        cfg.network.widths = vec![2, w, 1];
        cfg.network.geometry_widths = Some(vec![2, w, 2]);
    }
    let report = run(&cfg)?;
    println!(
        "{} iterations, status {:?}, {:.1}s",
        report.iterations, report.status, report.wall_time_s
    );
    for r in report.history.iter().step_by(5).chain(report.history.last()) {
        println!(
            "step {:3}  total {:.4e}  interior {:.3e}  boundary {:.3e}  corners {:.3e}",
            r.step, r.total, r.interior, r.boundary, r.penalty
        );
    }
    if let Details::ShapeOpt {
        corner_errors,
        roundness_initial,
        roundness_final,
        min_det_final,
        snapshots,
    } = report.details
    {
        for s in &snapshots {
            println!("snapshot step {:3}: roundness {:.4}, min det J {:.3e}", s.step, s.roundness, s.min_det);
        }
        println!("roundness {roundness_initial:.4} -> {roundness_final:.4}, min det J {min_det_final:.3e}");
        let errs: Vec<String> = corner_errors.iter().map(|e| format!("{e:.2e}")).collect();
        println!("corner errors [{}]", errs.join(", "));
    }
    Ok(())
}
