//! Distance along a planar spiral from its starting point.

use std::sync::Arc;

use super::{
    arc_length_oracle, eval_grid, fit, l2_error, Details, ExperimentConfig, ExperimentError, ExperimentReport,
    FieldSamples, GeometryConfig, INIT_STREAM,
};
use crate::geometry::{spiral, DistanceFn, ReferenceDomain, Spiral};
use crate::network::Mlp;
use crate::optimize::Control;
use crate::pinn::{BoundaryCondition, Eikonal, Geometry, Model, OutputTransform, PdeProblem};
use crate::pullback::Mode;

pub fn curve(cfg: &ExperimentConfig) -> Result<Spiral, ExperimentError> {
    match cfg.geometry {
        GeometryConfig::Spiral(s) => Ok(spiral(s.l, s.a)?),
        _ => unreachable!("validated eikonal config"),
    }
}

/// `u = N(φ(x)) · x`, so `u = 0` at the start of the curve.
pub fn problem() -> PdeProblem {
    PdeProblem {
        mode: Mode::Manifold,
        domain: ReferenceDomain::UnitInterval,
        rule: Arc::new(Eikonal),
        source: None,
        bc: BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Left)),
        anchors: None,
    }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<(PdeProblem, Model), ExperimentError> {
    let net = Mlp::init(&cfg.network.widths, cfg.network.activation, cfg.subseed(INIT_STREAM))?;
    Ok((problem(), Model::new(net, Geometry::Fixed(Arc::new(curve(cfg)?)))))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let s = curve(cfg)?;
    let (problem, model) = setup(cfg)?;
    let colloc = cfg.collocation_set()?;
    let (out, wall) = fit(cfg, &problem, &model, &colloc, |_| Control::Continue)?;

    let local = eval_grid(ReferenceDomain::UnitInterval, cfg.collocation.eval_points);
    let global = out.model.map_points(&local)?;
    let values = out.model.predict(&problem, &local)?;
    let pred: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let oracle: Vec<f64> = local.iter().map(|x| arc_length_oracle(&s, x[0])).collect();
    let l2 = l2_error(&pred, &oracle);
    let predicted_max = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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
        details: Details::Eikonal {
            predicted_max,
            oracle_length: arc_length_oracle(&s, 1.0),
        },
    })
}
