//! L-BFGS with a strong Wolfe line search on the 2-D Rosenbrock function,
//! printing the accepted iterates.

use diffeo_pinn::optimize::{minimize, Control, Evaluation, LbfgsConfig};

fn rosenbrock(x: &[f64]) -> Result<Evaluation<()>, String> {
    let (a, b) = (x[0], x[1]);
    Ok(Evaluation {
        value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
        grad: vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
        aux: (),
    })
}

fn main() {
    let cfg = LbfgsConfig {
        max_iterations: 100,
        ..LbfgsConfig::default()
    };
    let out = minimize(rosenbrock, &[-1.2, 1.0], &cfg, |it| {
        println!(
            "{:3}  f = {:.6e}  x = ({:+.6}, {:+.6})  step {:.2e}",
            it.iteration, it.eval.value, it.x[0], it.x[1], it.step
        );
        Control::Continue
    })
    .expect("rosenbrock is smooth");
    println!(
        "{:?} after {} iterations and {} evaluations: f = {:.3e}",
        out.status, out.iterations, out.evaluations, out.eval.value
    );
}
