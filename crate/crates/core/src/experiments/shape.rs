//! Joint training of a solution and a learned domain map for `−Δu = 1`
//! with weak homogeneous boundary conditions and four pinned corners.

use std::sync::Arc;

use super::{
    eval_grid, fit, roundness, square_loop, BcStyle, Details, ExperimentConfig, ExperimentError, ExperimentReport,
    FieldSamples, Snapshot, GEOMETRY_INIT_STREAM, INIT_STREAM,
};
use crate::geometry::{DistanceFn, Point, ReferenceDomain};
use crate::network::jet::{self, JetLayout, Jets};
use crate::network::Mlp;
use crate::optimize::Control;
use crate::pinn::{Anchors, BoundaryCondition, Geometry, Model, NegLaplacian, OutputTransform, PdeProblem};
use crate::pullback::Mode;

pub fn corners() -> Vec<Point> {
    vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
}

pub fn problem(style: BcStyle, weight: f64, corner_weight: f64) -> PdeProblem {
    let bc = match style {
        BcStyle::Weak => BoundaryCondition::Weak {
            weight,
            data: Arc::new(|_: &[f64]| vec![0.0]),
        },
        BcStyle::Exact => {
            BoundaryCondition::Exact(OutputTransform::homogeneous(1, DistanceFn::Bubble(ReferenceDomain::UnitSquare)))
        }
    };
    PdeProblem {
        mode: Mode::Transformation,
        domain: ReferenceDomain::UnitSquare,
        rule: Arc::new(NegLaplacian),
        source: Some(Arc::new(|_: &[f64]| 1.0)),
        bc,
        anchors: Some(Anchors::fixed(corner_weight, corners())),
    }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<(PdeProblem, Model), ExperimentError> {
    let u = Mlp::init(&cfg.network.widths, cfg.network.activation, cfg.subseed(INIT_STREAM))?;
    let gw = cfg.network.geometry_widths.as_deref().expect("validated shape-opt config");
    let phi = Mlp::init(gw, cfg.network.activation, cfg.subseed(GEOMETRY_INIT_STREAM))?;
    Ok((
        problem(cfg.bc.style, cfg.bc.weight, cfg.bc.corner_weight),
        Model::new(u, Geometry::Learned(phi)),
    ))
}

/// Smallest Jacobian determinant of a learned 2-D map over `points`.
pub fn min_det(phi: &Mlp, points: &[Point]) -> Result<f64, ExperimentError> {
    let layout = JetLayout::new(2, 1);
    let (out, _) = jet::forward(phi, &Jets::identity(layout, points))?;
    Ok((0..points.len())
        .map(|p| {
            let j = |r: usize, k: usize| out.get(r, layout.first(k), p);
            j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0)
        })
        .fold(f64::INFINITY, f64::min))
}

fn learned(model: &Model) -> &Mlp {
    match &model.geometry {
        Geometry::Learned(phi) => phi,
        Geometry::Fixed(_) => unreachable!("shape optimization learns its geometry"),
    }
}

fn snapshot(model: &Model, step: usize, ring: &[Point], interior: &[Point]) -> Result<Snapshot, ExperimentError> {
    let boundary = model.map_points(ring)?;
    Ok(Snapshot {
        step,
        roundness: roundness(&boundary),
        boundary,
        min_det: min_det(learned(model), interior)?,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let (problem, model) = setup(cfg)?;
    let colloc = cfg.collocation_set()?;
    let ring = square_loop(cfg.collocation.boundary_check);
    let every = cfg.report.snapshot_every;
    let mut snapshots = Vec::new();
    let mut scratch = model.clone();
    let mut failure = None;
    let (out, wall) = fit(cfg, &problem, &model, &colloc, |p| {
        if p.report.step % every == 0 {
            let taken = scratch
                .set_params(p.params)
                .map_err(ExperimentError::from)
                .and_then(|_| snapshot(&scratch, p.report.step, &ring, &colloc.interior));
            match taken {
                Ok(s) => {
                    if s.min_det <= 0.0 {
                        log::warn!("step {}: learned map folds (min det J = {:.3e})", s.step, s.min_det);
                    }
                    snapshots.push(s);
                }
                Err(e) => failure = Some(e),
            }
        }
        Control::Continue
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let last = out.history.last().map_or(0, |r| r.step);
    if snapshots.last().map(|s| s.step) != Some(last) {
        snapshots.push(snapshot(&out.model, last, &ring, &colloc.interior)?);
    }

    let local = eval_grid(ReferenceDomain::UnitSquare, cfg.collocation.eval_points);
    let global = out.model.map_points(&local)?;
    let values = out.model.predict(&problem, &local)?;
    let mapped = out.model.map_points(&corners())?;
    let corner_errors = mapped
        .iter()
        .zip(corners())
        .map(|(m, c)| m.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let details = Details::ShapeOpt {
        corner_errors,
        roundness_initial: snapshots[0].roundness,
        roundness_final: snapshots.last().expect("final snapshot").roundness,
        min_det_final: snapshots.last().expect("final snapshot").min_det,
        snapshots,
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        history: out.history,
        model: out.model,
        fields: FieldSamples {
            local,
            global,
            components: vec!["u".into()],
            values,
            oracle: None,
        },
        l2_error: None,
        wall_time_s: wall,
        status: out.status,
        iterations: out.iterations,
        evaluations: out.evaluations,
        details,
    })
}
