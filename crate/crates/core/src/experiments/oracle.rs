//! Reference solutions and error metrics.

use crate::geometry::Spiral;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Arc length `∫₀ˣ ‖φ′(t)‖ dt` of the spiral by quadrature, to 1e-10.
pub fn arc_length_oracle(spiral: &Spiral, x: f64) -> f64 {
    adaptive_simpson(&|t| spiral.speed(t), 0.0, x, 1e-10)
}

/// Closed form of the Archimedean arc length,
/// `(a/2)(t√(1+t²) + asinh t)` with `t = lx`.
pub fn arc_length_closed_form(spiral: &Spiral, x: f64) -> f64 {
    let t = spiral.l * x;
    0.5 * spiral.a * (t * (1.0 + t * t).sqrt() + t.asinh())
}

/// Root mean square of `pred − oracle`.
pub fn l2_error(pred: &[f64], oracle: &[f64]) -> f64 {
    assert_eq!(pred.len(), oracle.len(), "sample vectors must match");
    if pred.is_empty() {
        return 0.0;
    }
    let ss: f64 = pred.iter().zip(oracle).map(|(p, o)| (p - o) * (p - o)).sum();
    (ss / pred.len() as f64).sqrt()
}

/// Trapezoid rule on uniformly spaced samples over an interval of length `h_total`.
pub fn trapezoid(values: &[f64], h_total: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let h = h_total / (n - 1) as f64;
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}
