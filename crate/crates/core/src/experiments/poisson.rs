//! Poisson problem on a patch of the unit sphere with a manufactured
//! solution `sin(πx₁) sin(πx₂)` in local coordinates.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{
    deviation_tracker, eval_grid, fit, l2_error, Details, ExperimentConfig, ExperimentError, ExperimentReport,
    FieldSamples, GeometryConfig, INIT_STREAM,
};
use crate::geometry::{sample_boundary, sphere_patch, DistanceFn, ReferenceDomain, SpherePatch, Strategy};
use crate::network::Mlp;
use crate::pinn::{Anchors, BoundaryCondition, Geometry, Model, NegLaplacian, OutputTransform, PdeProblem};
use crate::pullback::Mode;

use super::BcStyle;

pub fn exact(x: &[f64]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

pub fn source(x: &[f64]) -> f64 {
    2.0 * PI * PI * exact(x)
}

pub fn patch(cfg: &ExperimentConfig) -> Result<SpherePatch, ExperimentError> {
    match cfg.geometry {
        GeometryConfig::Sphere(s) => Ok(sphere_patch(s.psi0, s.theta0)?),
        _ => unreachable!("validated poisson config"),
    }
}

pub fn problem(style: BcStyle, weight: f64) -> PdeProblem {
    let bc = match style {
        BcStyle::Exact => {
            BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Bubble(ReferenceDomain::UnitSquare)))
        }
        BcStyle::Weak => BoundaryCondition::Weak {
            weight,
            data: Arc::new(|_: &[f64]| vec![0.0]),
        },
    };
    PdeProblem {
        mode: Mode::Manifold,
        domain: ReferenceDomain::UnitSquare,
        rule: Arc::new(NegLaplacian),
        source: Some(Arc::new(source)),
        bc,
        anchors: None::<Anchors>,
    }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<(PdeProblem, Model), ExperimentError> {
    let net = Mlp::init(&cfg.network.widths, cfg.network.activation, cfg.subseed(INIT_STREAM))?;
    Ok((
        problem(cfg.bc.style, cfg.bc.weight),
        Model::new(net, Geometry::Fixed(Arc::new(patch(cfg)?))),
    ))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let (problem, model) = setup(cfg)?;
    let colloc = cfg.collocation_set()?;
    let check = sample_boundary(ReferenceDomain::UnitSquare, cfg.collocation.boundary_check, Strategy::Grid, 0)?;
    let (observer, worst) = deviation_tracker(&problem, &model, check);
    let (out, wall) = fit(cfg, &problem, &model, &colloc, observer)?;

    let local = eval_grid(ReferenceDomain::UnitSquare, cfg.collocation.eval_points);
    let global = out.model.map_points(&local)?;
    let values = out.model.predict(&problem, &local)?;
    let pred: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let oracle: Vec<f64> = local.iter().map(|x| exact(x)).collect();
    let l2 = l2_error(&pred, &oracle);
    Ok(ExperimentReport {
        config: cfg.clone(),
        history: out.history,
        model: out.model,
        fields: FieldSamples {
            local,
            global,
            components: vec!["u".into()],
            values,
            oracle: Some(oracle),
        },
        l2_error: Some(l2),
        wall_time_s: wall,
        status: out.status,
        iterations: out.iterations,
        evaluations: out.evaluations,
        details: Details::PoissonSphere {
            max_boundary_deviation: worst.get(),
        },
    })
}
