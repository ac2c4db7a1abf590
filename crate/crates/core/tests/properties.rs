//! Randomised invariants across the engine.

use std::f64::consts::PI;

use diffeo_pinn::autodiff::{derive, gradient, DiffContext, DiffScalar};
use diffeo_pinn::experiments::{self, poisson, ExperimentConfig, ExperimentId};
use diffeo_pinn::geometry::{
    check_orientation, identity, jacobian_at, neural, sample_boundary, sample_interior, spiral, Diffeo,
    ReferenceDomain, Strategy, Tube,
};
use diffeo_pinn::network::{parameter_count, Activation, Mlp};
use diffeo_pinn::optimize::{minimize, Control, Evaluation, LbfgsConfig, Status};
use diffeo_pinn::pinn::{boundary_deviation, Objective, Route};
use diffeo_pinn::pullback::{
    global_gradient, global_hessian, local_bundle, ComposedField, FnMap, Mode, Pullback,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn small_config(id: ExperimentId, overrides: serde_json::Value) -> ExperimentConfig {
    ExperimentConfig::from_value(id, overrides).unwrap()
}

fn perturbed(params: &[f64], seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.iter().map(|p| p + scale * rng.random_range(-1.0..1.0)).collect()
}

/// Residual with an inner derivative, so each point builds a nested graph.
fn residual<'c>(w: DiffScalar<'c>, b: DiffScalar<'c>, x: f64) -> DiffScalar<'c> {
    let r = (w * x).sin() + b;
    derive(r * r, w).unwrap() + r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nested_second_derivative_of_exp_sin(x0 in -2.0f64..2.0) {
        let ctx = DiffContext::new();
        let x = ctx.variable(x0);
        let f = x.sin().exp();
        let d2 = derive(derive(f, x).unwrap(), x).unwrap().value();
        let exact = x0.sin().exp() * (x0.cos().powi(2) - x0.sin());
        prop_assert!((d2 - exact).abs() <= 1e-10 * exact.abs().max(1e-3));
    }

    #[test]
    fn derivative_is_linear(x0 in -2.0f64..2.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ctx = DiffContext::new();
        let x = ctx.variable(x0);
        let f = x.sin() * x;
        let g = (x * 0.5).exp() + x.tanh();
        let lhs = derive(f * a + g * b, x).unwrap().value();
        let rhs = a * derive(f, x).unwrap().value() + b * derive(g, x).unwrap().value();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn reverse_sweep_matches_per_variable_derive(
        start in prop::collection::vec(-1.0f64..1.0, 3),
        ops in prop::collection::vec((0u8..7, 0usize..1000, 0usize..1000, -2.0f64..2.0), 1..160),
    ) {
        let ctx = DiffContext::new();
        let vars = ctx.variables(&start);
        let mut nodes: Vec<DiffScalar> = vars.clone();
        for (op, i, j, c) in ops {
            let a = nodes[i % nodes.len()];
            let b = nodes[j % nodes.len()];
            let n = match op {
                0 => a + b,
                1 => a * b,
                2 => a - b * c,
                3 => a.sin(),
                4 => a.tanh() * c,
                5 => a.tanh().exp(),
                _ => a * c + 0.5,
            };
            nodes.push(n);
        }
        let out = ctx.sum(nodes.iter().rev().take(4).copied());
        prop_assume!(out.value().is_finite() && ctx.len() <= 500);
        let g = gradient(out, &vars).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let d = derive(out, *v).unwrap().value();
            prop_assert!((g[k] - d).abs() <= 1e-12 * d.abs().max(1.0), "{} vs {}", g[k], d);
        }
    }

    #[test]
    fn per_point_rollback_matches_monolithic_graph(w0 in -2.0f64..2.0, b0 in -1.0f64..1.0, n in 1usize..40) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let whole = DiffContext::new();
        let (w, b) = (whole.variable(w0), whole.variable(b0));
        let loss = whole.sum(xs.iter().map(|&x| residual(w, b, x).square()));
        let g_whole = gradient(loss, &[w, b]).unwrap();

        let ctx = DiffContext::new();
        let (w, b) = (ctx.variable(w0), ctx.variable(b0));
        let (mut total, mut g) = (0.0, [0.0; 2]);
        for &x in &xs {
            let cp = ctx.checkpoint();
            let term = residual(w, b, x).square();
            total += term.value();
            let gp = gradient(term, &[w, b]).unwrap();
            g[0] += gp[0];
            g[1] += gp[1];
            ctx.rollback(cp);
        }
        prop_assert!(close(total, loss.value(), 1e-12));
        prop_assert!(close(g[0], g_whole[0], 1e-12) && close(g[1], g_whole[1], 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn network_input_hessian_matches_finite_differences(seed in 0u64..1000, x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        let net = neural(Mlp::init(&[2, 16, 16, 1], Activation::Tanh, seed).unwrap());
        let grad_at = |p: [f64; 2]| {
            let ctx = DiffContext::new();
            let x = ctx.variables(&p);
            gradient(net.map(&x)[0], &x).unwrap()
        };
        let ctx = DiffContext::new();
        let x = ctx.variables(&[x0, x1]);
        let u = net.map(&x)[0];
        let h = 1e-5;
        let mut hess = [[0.0; 2]; 2];
        let mut fd = [[0.0; 2]; 2];
        for i in 0..2 {
            let gi = derive(u, x[i]).unwrap();
            for j in 0..2 {
                hess[i][j] = derive(gi, x[j]).unwrap().value();
                let mut plus = [x0, x1];
                let mut minus = [x0, x1];
                plus[j] += h;
                minus[j] -= h;
                fd[i][j] = (grad_at(plus)[i] - grad_at(minus)[i]) / (2.0 * h);
            }
        }
        let scale = hess.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((hess[i][j] - fd[i][j]).abs() <= 1e-5 * scale, "{:?} vs {:?}", hess, fd);
            }
        }
    }

    #[test]
    fn builtin_jacobians_match_central_differences(x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        let cfg = ExperimentConfig::defaults(ExperimentId::PoissonSphere);
        let maps: Vec<(Box<dyn Diffeo>, Vec<f64>)> = vec![
            (Box::new(spiral(3.5 * PI, 0.1).unwrap()), vec![x0]),
            (Box::new(poisson::patch(&cfg).unwrap()), vec![x0, x1]),
            (Box::new(Tube::default()), vec![x0, x1]),
        ];
        let h = 1e-6;
        for (d, x) in &maps {
            let j = jacobian_at(d.as_ref(), x).unwrap();
            for k in 0..x.len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[k] += h;
                minus[k] -= h;
                let (fp, fm) = (d.apply(&plus), d.apply(&minus));
                for i in 0..fp.len() {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    prop_assert!(close(j[i][k], fd, 1e-6), "{}: J[{i}][{k}] = {} vs {}", d.name(), j[i][k], fd);
                }
            }
        }
    }

    #[test]
    fn sphere_patch_columns_are_tangent(x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        let patch = poisson::patch(&ExperimentConfig::defaults(ExperimentId::PoissonSphere)).unwrap();
        let y = patch.apply(&[x0, x1]);
        let j = jacobian_at(&patch, &[x0, x1]).unwrap();
        for k in 0..2 {
            let dot: f64 = (0..3).map(|i| y[i] * j[i][k]).sum();
            prop_assert!(dot.abs() <= 1e-12);
        }
    }

    #[test]
    fn chain_rule_through_tube(seed in 0u64..1000, x0 in 0.01f64..0.99, x1 in 0.01f64..0.99) {
        let t = Tube::default();
        let net = neural(Mlp::init(&[2, 16, 16, 1], Activation::Tanh, seed).unwrap());
        let ctx = DiffContext::new();
        let x = ctx.variables(&[x0, x1]);
        let u = net.map(&x)[0];
        let gx = gradient(u, &x).unwrap();
        let gy = Pullback::new(&t, &x).unwrap().gradient(u).unwrap();
        let j = jacobian_at(&t, &[x0, x1]).unwrap();
        for k in 0..2 {
            let back: f64 = (0..2).map(|i| j[i][k] * gy[i].value()).sum();
            prop_assert!((back - gx[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn global_hessian_is_symmetric(seed in 0u64..1000, x0 in 0.01f64..0.99, x1 in 0.01f64..0.99) {
        let t = Tube::default();
        let net = neural(Mlp::init(&[2, 16, 16, 1], Activation::Tanh, seed).unwrap());
        let ctx = DiffContext::new();
        let x = ctx.variables(&[x0, x1]);
        let field = ComposedField::new(&net, &t, Mode::Transformation);
        let h = global_hessian(&field, &x, 0).unwrap();
        prop_assert!((h[0][1].value() - h[1][0].value()).abs() <= 1e-10);
    }

    #[test]
    fn identity_map_changes_nothing(seed in 0u64..1000, x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        let net = neural(Mlp::init(&[2, 16, 16, 1], Activation::Tanh, seed).unwrap());
        let id = identity(2);
        let ctx = DiffContext::new();
        let x = ctx.variables(&[x0, x1]);
        let local = local_bundle(&ComposedField::new(&net, &id, Mode::Manifold), &x, 0).unwrap();
        let field = ComposedField::new(&net, &id, Mode::Transformation);
        let g = global_gradient(&field, &x, 0).unwrap();
        let h = global_hessian(&field, &x, 0).unwrap();
        for i in 0..2 {
            prop_assert!((g[i].value() - local.grad[i].value()).abs() <= 1e-12);
            for j in 0..2 {
                prop_assert!((h[i][j].value() - local.hess[i][j].value()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn polar_coordinates_oracle(r in 0.5f64..2.0, theta in -3.0f64..3.0) {
        // û = r² cos 2θ is y₁² − y₂²: gradient (2y₁, −2y₂), Laplacian 0.
        let ctx = DiffContext::new();
        let polar = FnMap::new(2, 2, |x: &[DiffScalar]| vec![x[0] * x[1].cos(), x[0] * x[1].sin()]);
        let x = ctx.variables(&[r, theta]);
        let pb = Pullback::new(&polar, &x).unwrap();
        let u = x[0] * x[0] * (x[1] * 2.0).cos();
        let g = pb.gradient(u).unwrap();
        let (y1, y2) = (r * theta.cos(), r * theta.sin());
        prop_assert!(close(g[0].value(), 2.0 * y1, 1e-8));
        prop_assert!(close(g[1].value(), -2.0 * y2, 1e-8));
        prop_assert!(pb.laplacian(u).unwrap().value().abs() <= 1e-8 * r * r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn exact_boundary_values_hold_for_any_parameters(seed in any::<u64>(), scale in 0.1f64..3.0) {
        let boundary = sample_boundary(ReferenceDomain::UnitSquare, 400, Strategy::Grid, 0).unwrap();
        for (id, widths) in [
            (ExperimentId::PoissonSphere, json!([3, 12, 12, 1])),
            (ExperimentId::StokesTube, json!([2, 12, 12, 3])),
        ] {
            let cfg = small_config(id, json!({"network": {"widths": widths}}));
            let (problem, mut model) = experiments::setup(&cfg).unwrap();
            let p = perturbed(&model.params(), seed, scale);
            model.set_params(&p).unwrap();
            prop_assert!(boundary_deviation(&problem, &model, &boundary).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn total_loss_decomposes(seed in any::<u64>()) {
        let cfg = small_config(ExperimentId::ShapeOpt, json!({
            "network": {"widths": [2, 8, 1], "geometry_widths": [2, 8, 2]},
            "collocation": {"interior": 16, "boundary": 16},
        }));
        let (problem, mut model) = experiments::setup(&cfg).unwrap();
        model.set_params(&perturbed(&model.params(), seed, 0.5)).unwrap();
        let colloc = cfg.collocation_set().unwrap();
        let obj = Objective::new(&problem, &model, &colloc, Route::Jet).unwrap();
        let r = obj.loss(&model).unwrap();
        prop_assert_eq!(r.total, r.interior + cfg.bc.weight * r.boundary + r.penalty);
        prop_assert_eq!(r.interior, r.residuals.iter().sum::<f64>());
    }

    #[test]
    fn tube_orientation_is_positive(n in 1usize..20) {
        let pts = sample_interior(ReferenceDomain::UnitSquare, n * n, Strategy::Grid, 0).unwrap();
        prop_assert!(check_orientation(&Tube::default(), &pts).is_ok());
    }

    #[test]
    fn parameter_count_follows_widths(widths in prop::collection::vec(1usize..40, 1..4)) {
        let mut w = vec![2];
        w.extend(&widths);
        w.push(1);
        let cfg = small_config(ExperimentId::Eikonal, json!({"network": {"widths": w}}));
        let (_, model) = experiments::setup(&cfg).unwrap();
        prop_assert_eq!(cfg.parameter_count(), parameter_count(&w));
        prop_assert_eq!(model.param_count(), parameter_count(&w));
    }
}

fn rosenbrock(x: &[f64]) -> Result<Evaluation<()>, String> {
    let (a, b) = (x[0], x[1]);
    Ok(Evaluation {
        value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
        grad: vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
        aux: (),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_iterates_never_increase(a in -2.0f64..2.0, b in -1.0f64..3.0, memory in 1usize..20) {
        let cfg = LbfgsConfig { memory, max_iterations: 200, ..Default::default() };
        let mut values = Vec::new();
        let out = minimize(rosenbrock, &[a, b], &cfg, |it| {
            values.push(it.eval.value);
            Control::Continue
        })
        .unwrap();
        prop_assert!(values.windows(2).all(|w| w[1] <= w[0]));
        let again = minimize(rosenbrock, &[a, b], &cfg, |_| Control::Continue).unwrap();
        prop_assert_eq!(out.x, again.x);
        prop_assert_eq!(out.iterations, again.iterations);
    }

    #[test]
    fn quadratics_finish_within_dim_plus_one(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).sum::<f64>();
        let f = |x: &[f64]| -> Result<Evaluation<()>, String> {
            let ax: Vec<f64> = a.iter().map(|r| dot(r, x)).collect();
            Ok(Evaluation {
                value: 0.5 * dot(x, &ax) - dot(&rhs, x),
                grad: ax.iter().zip(&rhs).map(|(p, q)| p - q).collect(),
                aux: (),
            })
        };
        let cfg = LbfgsConfig { memory: 64, c2: 1e-3, grad_tol: 1e-8, ..Default::default() };
        let out = minimize(f, &vec![0.0; n], &cfg, |_| Control::Continue).unwrap();
        prop_assert_eq!(out.status, Status::GradientTolerance);
        prop_assert!(out.iterations <= n + 1, "dim {} took {}", n, out.iterations);
    }
}
