//! Stokes flow through a tube of varying width.

use std::sync::Arc;

use super::oracle::trapezoid;
use super::{
    deviation_tracker, eval_grid, fit, linspace, Details, ExperimentConfig, ExperimentError, ExperimentReport,
    FieldSamples, GeometryConfig, INIT_STREAM,
};
use crate::geometry::{sample_boundary, tube_with_base, DistanceFn, ReferenceDomain, Strategy, Tube};
use crate::network::Mlp;
use crate::pinn::{
    BoundaryCondition, ComponentTransform, Geometry, Model, OutputTransform, PdeProblem, ScalarFn, Stokes,
};
use crate::pullback::Mode;

/// Sections at which the flux is reported.
pub const FLUX_SECTIONS: [f64; 3] = [0.0, 0.5, 1.0];

pub fn channel(cfg: &ExperimentConfig) -> Result<Tube, ExperimentError> {
    match cfg.geometry {
        GeometryConfig::Tube(t) => Ok(tube_with_base(t.base, t.amp, t.freq)?),
        _ => unreachable!("validated stokes config"),
    }
}

/// Parabolic profile `4x₂(1 − x₂)` on the whole boundary for `u`, `v = 0`
/// on the whole boundary, and `p = 0` on the outlet `x₁ = 1`.
pub fn transform() -> OutputTransform {
    let bubble = DistanceFn::Bubble(ReferenceDomain::UnitSquare);
    let inflow: ScalarFn = Arc::new(|x| x[1] * 4.0 * (1.0 - x[1]));
    OutputTransform::new(vec![
        ComponentTransform::pinned(bubble).with_extension(inflow),
        ComponentTransform::pinned(bubble),
        ComponentTransform::pinned(DistanceFn::Right),
    ])
}

pub fn problem() -> PdeProblem {
    PdeProblem {
        mode: Mode::Transformation,
        domain: ReferenceDomain::UnitSquare,
        rule: Arc::new(Stokes),
        source: None,
        bc: BoundaryCondition::Exact(transform()),
        anchors: None,
    }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<(PdeProblem, Model), ExperimentError> {
    let net = Mlp::init(&cfg.network.widths, cfg.network.activation, cfg.subseed(INIT_STREAM))?;
    Ok((problem(), Model::new(net, Geometry::Fixed(Arc::new(channel(cfg)?)))))
}

/// `∫ u dy₂` across the section at `x₁`, i.e. `2 s(x₁) ∫₀¹ u dx₂`.
pub fn flux(problem: &PdeProblem, model: &Model, tube: &Tube, x1: f64, samples: usize) -> Result<f64, ExperimentError> {
    let pts: Vec<Vec<f64>> = linspace(samples).into_iter().map(|t| vec![x1, t]).collect();
    let u: Vec<f64> = model.predict(problem, &pts)?.iter().map(|o| o[0]).collect();
    Ok(2.0 * tube.half_width(x1) * trapezoid(&u, 1.0))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let tube = channel(cfg)?;
    let (problem, model) = setup(cfg)?;
    let colloc = cfg.collocation_set()?;
    let check = sample_boundary(ReferenceDomain::UnitSquare, cfg.collocation.boundary_check, Strategy::Grid, 0)?;
    let (observer, worst) = deviation_tracker(&problem, &model, check);
    let (out, wall) = fit(cfg, &problem, &model, &colloc, observer)?;

    let local = eval_grid(ReferenceDomain::UnitSquare, cfg.collocation.eval_points);
    let global = out.model.map_points(&local)?;
    let values = out.model.predict(&problem, &local)?;
    let (mut best, mut at) = (f64::NEG_INFINITY, 0);
    for (i, v) in values.iter().enumerate() {
        let speed = v[0].hypot(v[1]);
        if speed > best {
            best = speed;
            at = i;
        }
    }
    let fluxes = FLUX_SECTIONS
        .iter()
        .map(|&x1| flux(&problem, &out.model, &tube, x1, cfg.report.flux_samples))
        .collect::<Result<Vec<_>, _>>()?;
    let fmax = fluxes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fmin = fluxes.iter().cloned().fold(f64::INFINITY, f64::min);
    let residual_initial = out.history[0].interior;
    let residual_final = out.history.last().map_or(f64::NAN, |r| r.interior);
    Ok(ExperimentReport {
        config: cfg.clone(),
        history: out.history,
        fields: FieldSamples {
            local: local.clone(),
            global: global.clone(),
            components: vec!["u".into(), "v".into(), "p".into()],
            values,
            oracle: None,
        },
        model: out.model,
        l2_error: None,
        wall_time_s: wall,
        status: out.status,
        iterations: out.iterations,
        evaluations: out.evaluations,
        details: Details::StokesTube {
            max_boundary_deviation: worst.get(),
            residual_initial,
            residual_final,
            residual_reduction: residual_initial / residual_final,
            flux_sections: FLUX_SECTIONS.to_vec(),
            flux_spread: (fmax - fmin) / fmax.abs(),
            fluxes,
            max_speed: best,
            max_speed_local: local[at].clone(),
            max_speed_global: global[at].clone(),
        },
    })
}
