//! L-BFGS with a strong Wolfe line search, plus Adam.
//!
//! Objectives return an [`Evaluation`] carrying an arbitrary payload, so a
//! caller can attach per-evaluation diagnostics (loss breakdowns) and get
//! them back for every accepted iterate.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<A> {
    pub value: f64,
    pub grad: Vec<f64>,
    pub aux: A,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 50,
            max_iterations: 1000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            grad_tol: 1e-9,
            step_tol: 1e-12,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(ConfigError(format!(
                "line search needs 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(ConfigError("memory must be at least 1".into()));
        }
        if self.max_line_search == 0 {
            return Err(ConfigError("max_line_search must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.step_tol >= 0.0) {
            return Err(ConfigError("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid optimizer config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum OptimizeError<E: fmt::Display> {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("objective failed at the initial point: {0}")]
    Initial(E),
    #[error("objective is not finite at the initial point")]
    NonFiniteInitial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// The observer asked to stop.
    Stopped,
    /// Neither the Wolfe search nor the steepest-descent fallback found a
    /// decrease.
    LineSearchFailed,
}

/// State handed to the observer after every accepted step (and once for the
/// starting point with `iteration == 0`).
pub struct Iterate<'a, A> {
    pub iteration: usize,
    pub evaluations: usize,
    pub x: &'a [f64],
    pub eval: &'a Evaluation<A>,
    pub step: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct Outcome<A> {
    pub x: Vec<f64>,
    pub eval: Evaluation<A>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    /// Objective value at the start and after each accepted step.
    pub history: Vec<f64>,
}

/// Smallest bracket width (in parameter space) the zoom phase resolves.
const BRACKET_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + t * di).collect()
}

/// Minimizer of the cubic through two points with slopes, clamped to
/// `bounds`. Falls back to bisection when the data are not usable.
fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2sq = d1 * d1 - g1 * g2;
    if d2sq.is_finite() && d2sq >= 0.0 {
        let d2 = d2sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

/// A trial point of the line search.
struct Trial<A> {
    t: f64,
    f: f64,
    gtd: f64,
    /// `None` for failed evaluations and for the starting point.
    eval: Option<Evaluation<A>>,
}

struct Probe<'a, A, E, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    evaluations: usize,
    _marker: std::marker::PhantomData<fn() -> (A, E)>,
}

impl<A, E: fmt::Display, F> Probe<'_, A, E, F>
where
    F: FnMut(&[f64]) -> Result<Evaluation<A>, E>,
{
    fn at(&mut self, t: f64) -> Trial<A> {
        self.evaluations += 1;
        let xt = axpy(self.x, t, self.d);
        match (self.f)(&xt) {
            Ok(e) if e.value.is_finite() && e.grad.iter().all(|g| g.is_finite()) => Trial {
                t,
                f: e.value,
                gtd: dot(&e.grad, self.d),
                eval: Some(e),
            },
            Ok(_) => {
                log::debug!("non-finite objective at trial step {t:e}; treated as rejected");
                Trial { t, f: f64::INFINITY, gtd: f64::NAN, eval: None }
            }
            Err(err) => {
                log::debug!("objective failed at trial step {t:e} ({err}); treated as rejected");
                Trial { t, f: f64::INFINITY, gtd: f64::NAN, eval: None }
            }
        }
    }
}

/// Strong Wolfe search along `d` from a point with value `f0` and slope
/// `gtd0 < 0`. Returns the accepted trial, which may fail the sufficient
/// decrease condition when the trial budget runs out.
fn strong_wolfe<A, E: fmt::Display, F>(
    probe: &mut Probe<'_, A, E, F>,
    f0: f64,
    gtd0: f64,
    t_init: f64,
    cfg: &LbfgsConfig,
) -> Trial<A>
where
    F: FnMut(&[f64]) -> Result<Evaluation<A>, E>,
{
    let d_norm = max_abs(probe.d);
    let armijo = |t: f64, f: f64| f > f0 + cfg.c1 * t * gtd0;
    let mut t = t_init;
    let mut new = probe.at(t);
    let mut prev = Trial { t: 0.0, f: f0, gtd: gtd0, eval: None };
    let mut iters = 0;

    let mut bracket: Vec<Trial<A>>;
    let mut done = false;
    loop {
        if armijo(new.t, new.f) || (iters > 1 && new.f >= prev.f) {
            bracket = vec![prev, new];
            break;
        }
        if new.gtd.abs() <= -cfg.c2 * gtd0 {
            bracket = vec![new];
            done = true;
            break;
        }
        if new.gtd >= 0.0 {
            bracket = vec![prev, new];
            break;
        }
        if iters + 1 >= cfg.max_line_search {
            bracket = vec![Trial { t: 0.0, f: f0, gtd: gtd0, eval: None }, new];
            iters += 1;
            break;
        }
        let min_step = t + 0.01 * (t - prev.t);
        let max_step = t * 10.0;
        t = cubic_interpolate(
            (prev.t, prev.f, prev.gtd),
            (new.t, new.f, new.gtd),
            Some((min_step, max_step)),
        );
        prev = new;
        new = probe.at(t);
        iters += 1;
    }

    if done {
        return bracket.pop().expect("one trial");
    }

    let mut insufficient = false;
    let (mut low, mut high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    while !done && iters < cfg.max_line_search {
        if (bracket[1].t - bracket[0].t).abs() * d_norm < BRACKET_TOL {
            break;
        }
        let bmax = bracket[0].t.max(bracket[1].t);
        let bmin = bracket[0].t.min(bracket[1].t);
        let mut t = cubic_interpolate(
            (bracket[0].t, bracket[0].f, bracket[0].gtd),
            (bracket[1].t, bracket[1].f, bracket[1].gtd),
            None,
        );
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let trial = probe.at(t);
        iters += 1;
        if armijo(trial.t, trial.f) || trial.f >= bracket[low].f {
            bracket[high] = trial;
        } else {
            if trial.gtd.abs() <= -cfg.c2 * gtd0 {
                done = true;
            } else if trial.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                bracket.swap(low, high);
            }
            bracket[low] = trial;
        }
        (low, high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    }
    bracket.swap_remove(low)
}

struct Memory {
    cap: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= 1e-10 * norm(&s) * norm(&y) {
            return false;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// Two-loop recursion: `-H g` with `H₀ = γI`, `γ = sᵀy / yᵀy`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alpha[i] = a;
            for (qj, yj) in q.iter_mut().zip(y) {
                *qj -= a * yj;
            }
        }
        if let Some((_, y, rho)) = self.pairs.back() {
            let gamma = 1.0 / (rho * dot(y, y));
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = rho * dot(y, &q);
            for (qj, sj) in q.iter_mut().zip(s) {
                *qj += (alpha[i] - b) * sj;
            }
        }
        q
    }
}

/// Steepest descent with halving until sufficient decrease.
fn backtrack<A, E: fmt::Display, F>(
    probe: &mut Probe<'_, A, E, F>,
    f0: f64,
    gtd0: f64,
    t_init: f64,
    c1: f64,
) -> Option<Trial<A>>
where
    F: FnMut(&[f64]) -> Result<Evaluation<A>, E>,
{
    let mut t = t_init;
    for _ in 0..60 {
        let trial = probe.at(t);
        if trial.eval.is_some() && trial.f <= f0 + c1 * t * gtd0 && trial.f < f0 {
            return Some(trial);
        }
        t *= 0.5;
    }
    None
}

/// Minimize `f` from `x0`. Only the starting evaluation may fail hard;
/// failing trial evaluations are rejected and the search backtracks.
pub fn minimize<A, E, F, O>(
    mut f: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut observer: O,
) -> Result<Outcome<A>, OptimizeError<E>>
where
    E: fmt::Display,
    F: FnMut(&[f64]) -> Result<Evaluation<A>, E>,
    O: FnMut(&Iterate<'_, A>) -> Control,
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut cur = f(&x).map_err(OptimizeError::Initial)?;
    if !cur.value.is_finite() || cur.grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimizeError::NonFiniteInitial);
    }
    let mut evaluations = 1;
    let mut history = vec![cur.value];
    let mut memory = Memory { cap: cfg.memory, pairs: VecDeque::new() };

    let finish = |x, eval, iterations, evaluations, status, history| Outcome {
        x,
        eval,
        iterations,
        evaluations,
        status,
        history,
    };

    let first = Iterate {
        iteration: 0,
        evaluations,
        x: &x,
        eval: &cur,
        step: 0.0,
        fallback: false,
    };
    if observer(&first) == Control::Stop {
        return Ok(finish(x, cur, 0, evaluations, Status::Stopped, history));
    }
    if max_abs(&cur.grad) <= cfg.grad_tol {
        return Ok(finish(x, cur, 0, evaluations, Status::GradientTolerance, history));
    }

    for iteration in 1..=cfg.max_iterations {
        let mut d = memory.direction(&cur.grad);
        let mut gtd = dot(&cur.grad, &d);
        if !(gtd < 0.0) {
            memory.pairs.clear();
            d = cur.grad.iter().map(|v| -v).collect();
            gtd = dot(&cur.grad, &d);
        }
        let t_init = if memory.pairs.is_empty() {
            (1.0 / cur.grad.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let mut probe = Probe {
            f: &mut f,
            x: &x,
            d: &d,
            evaluations: 0,
            _marker: std::marker::PhantomData,
        };
        let trial = strong_wolfe(&mut probe, cur.value, gtd, t_init, cfg);
        evaluations += probe.evaluations;
        let mut fallback = false;
        let accepted = if trial.eval.is_some() && trial.f < cur.value {
            Some((trial, d))
        } else {
            // The quasi-Newton direction failed; retry along -g from scratch.
            fallback = true;
            memory.pairs.clear();
            let sd: Vec<f64> = cur.grad.iter().map(|v| -v).collect();
            let gtd_sd = -dot(&cur.grad, &cur.grad);
            let t0 = (1.0 / cur.grad.iter().map(|v| v.abs()).sum::<f64>()).min(1.0);
            let mut sd_probe = Probe {
                f: &mut f,
                x: &x,
                d: &sd,
                evaluations: 0,
                _marker: std::marker::PhantomData,
            };
            let found = backtrack(&mut sd_probe, cur.value, gtd_sd, t0, cfg.c1);
            evaluations += sd_probe.evaluations;
            found.map(|t| (t, sd))
        };

        let Some((trial, dir)) = accepted else {
            log::warn!("line search failed at iteration {iteration}");
            return Ok(finish(x, cur, iteration - 1, evaluations, Status::LineSearchFailed, history));
        };
        let t = trial.t;
        let next = trial.eval.expect("accepted trials carry an evaluation");
        let s: Vec<f64> = dir.iter().map(|v| t * v).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        memory.push(s.clone(), y);
        x = axpy(&x, t, &dir);
        cur = next;
        history.push(cur.value);

        let it = Iterate {
            iteration,
            evaluations,
            x: &x,
            eval: &cur,
            step: t,
            fallback,
        };
        if observer(&it) == Control::Stop {
            return Ok(finish(x, cur, iteration, evaluations, Status::Stopped, history));
        }
        if max_abs(&cur.grad) <= cfg.grad_tol {
            return Ok(finish(x, cur, iteration, evaluations, Status::GradientTolerance, history));
        }
        if max_abs(&s) <= cfg.step_tol {
            return Ok(finish(x, cur, iteration, evaluations, Status::StepTolerance, history));
        }
    }
    let iterations = cfg.max_iterations;
    Ok(finish(x, cur, iterations, evaluations, Status::MaxIterations, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ConfigError(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam moment state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Run `steps` Adam updates. Every update is accepted, so `history` need not
/// be monotone. Stops early if the objective fails or becomes non-finite,
/// returning the last good point.
pub fn adam_minimize<A, E, F, O>(
    mut f: F,
    x0: &[f64],
    cfg: &AdamConfig,
    steps: usize,
    mut observer: O,
) -> Result<Outcome<A>, OptimizeError<E>>
where
    E: fmt::Display,
    F: FnMut(&[f64]) -> Result<Evaluation<A>, E>,
    O: FnMut(&Iterate<'_, A>) -> Control,
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut cur = f(&x).map_err(OptimizeError::Initial)?;
    if !cur.value.is_finite() {
        return Err(OptimizeError::NonFiniteInitial);
    }
    let mut history = vec![cur.value];
    let mut adam = Adam::new(x.len(), *cfg);
    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let start = Iterate {
        iteration: 0,
        evaluations: 1,
        x: &x,
        eval: &cur,
        step: 0.0,
        fallback: false,
    };
    if observer(&start) == Control::Stop {
        status = Status::Stopped;
    } else {
        for k in 1..=steps {
            let mut trial = x.clone();
            adam.step(&mut trial, &cur.grad);
            let next = match f(&trial) {
                Ok(e) if e.value.is_finite() => e,
                Ok(_) | Err(_) => {
                    log::warn!("Adam step {k} produced an unusable objective; stopping");
                    status = Status::LineSearchFailed;
                    break;
                }
            };
            x = trial;
            cur = next;
            history.push(cur.value);
            iterations = k;
            let it = Iterate {
                iteration: k,
                evaluations: k + 1,
                x: &x,
                eval: &cur,
                step: cfg.lr,
                fallback: false,
            };
            if observer(&it) == Control::Stop {
                status = Status::Stopped;
                break;
            }
        }
    }
    Ok(Outcome {
        x,
        eval: cur,
        iterations,
        evaluations: iterations + 1,
        status,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Eval = Evaluation<()>;

    fn plain(value: f64, grad: Vec<f64>) -> Result<Eval, String> {
        Ok(Evaluation { value, grad, aux: () })
    }

    fn go(_: &Iterate<'_, ()>) -> Control {
        Control::Continue
    }

    fn rosenbrock(x: &[f64]) -> Result<Eval, String> {
        let (a, b) = (x[0], x[1]);
        plain(
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
            vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
        )
    }

    #[test]
    fn shifted_sphere_in_three_iterations() {
        let c = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            plain(r.iter().map(|v| v * v).sum(), r.iter().map(|v| 2.0 * v).collect())
        };
        for x0 in [[0.0, 0.0, 0.0], [10.0, -3.0, 7.0], [-1e3, 2.0, 0.5]] {
            let out = minimize(f, &x0, &LbfgsConfig::default(), go).unwrap();
            assert!(out.iterations <= 3, "{} iterations", out.iterations);
            let err: f64 = out.x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn rosenbrock_converges() {
        let out = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default(), go).unwrap();
        assert!(out.eval.value < 1e-10, "f = {}", out.eval.value);
        assert!(out.iterations <= 100, "{} iterations", out.iterations);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tolerance_met_at_start() {
        let f = |x: &[f64]| plain(x[0] * x[0], vec![2.0 * x[0]]);
        let out = minimize(f, &[1e-12], &LbfgsConfig::default(), go).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.status, Status::GradientTolerance);
        assert_eq!(out.x, vec![1e-12]);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = LbfgsConfig { c1: 0.95, ..Default::default() };
        let f = |x: &[f64]| plain(x[0], vec![1.0]);
        assert!(matches!(minimize(f, &[0.0], &cfg, go), Err(OptimizeError::Config(_))));
        let cfg = LbfgsConfig { memory: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn failing_trials_are_rejected() {
        // objective undefined for x > 0.5; minimum of (x - 1)² on the valid
        // side is the boundary, so the search must keep backing off
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                Err("outside domain".to_string())
            } else {
                plain((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)])
            }
        };
        let cfg = LbfgsConfig { max_iterations: 30, ..Default::default() };
        let out = minimize(f, &[-3.0], &cfg, go).unwrap();
        assert!(out.x[0] <= 0.5);
        assert!(out.x[0] > 0.4);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn initial_failure_is_an_error() {
        let f = |_: &[f64]| -> Result<Eval, String> { Err("boom".into()) };
        assert!(matches!(
            minimize(f, &[0.0], &LbfgsConfig::default(), go),
            Err(OptimizeError::Initial(_))
        ));
    }

    #[test]
    fn observer_stops() {
        let mut seen = Vec::new();
        let out = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default(), |it: &Iterate<'_, ()>| {
            seen.push(it.iteration);
            if it.iteration == 4 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        assert_eq!(out.status, Status::Stopped);
        assert_eq!(out.iterations, 4);
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn spd_quadratics_terminate_in_dim_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = rng.random_range(1..=10);
            let m: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            // A = MᵀM + I
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |x: &[f64]| {
                let ax: Vec<f64> = a.iter().map(|r| dot(r, x)).collect();
                plain(0.5 * dot(x, &ax) - dot(&b, x), ax.iter().zip(&b).map(|(p, q)| p - q).collect())
            };
            let cfg = LbfgsConfig {
                memory: 64,
                c2: 1e-3,
                grad_tol: 1e-8,
                ..Default::default()
            };
            let x0 = vec![0.0; n];
            let out = minimize(f, &x0, &cfg, go).unwrap();
            assert!(
                out.iterations <= n + 1,
                "trial {trial}: dim {n} took {} iterations ({:?})",
                out.iterations,
                out.status
            );
            assert_eq!(out.status, Status::GradientTolerance);
        }
    }

    #[test]
    fn deterministic_iterates() {
        let run = || {
            let mut xs = Vec::new();
            minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default(), |it: &Iterate<'_, ()>| {
                xs.push(it.x.to_vec());
                Control::Continue
            })
            .unwrap();
            xs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cubic_recovers_quadratic_minimum() {
        // f = (t - 0.3)², slopes 2(t - 0.3)
        let t = cubic_interpolate((0.0, 0.09, -0.6), (1.0, 0.49, 1.4), None);
        assert!((t - 0.3).abs() < 1e-14);
        let t = cubic_interpolate((0.0, 0.0, f64::NAN), (1.0, f64::INFINITY, f64::NAN), None);
        assert_eq!(t, 0.5);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut x = vec![0.1, -0.2, 0.3];
        adam.step(&mut x, &[0.0; 3]);
        assert_eq!(x, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut x = vec![0.0, 0.0];
        adam.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] + 1e-3).abs() < 1e-9);
        assert!((x[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_bowl() {
        let c = [0.7, -0.4];
        let f = |x: &[f64]| {
            plain(
                (x[0] - c[0]).powi(2) + 2.0 * (x[1] - c[1]).powi(2),
                vec![2.0 * (x[0] - c[0]), 4.0 * (x[1] - c[1])],
            )
        };
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        let out = adam_minimize(f, &[0.0, 0.0], &cfg, 10_000, go).unwrap();
        assert!((out.x[0] - c[0]).abs() < 1e-3 && (out.x[1] - c[1]).abs() < 1e-3, "{:?}", out.x);
        assert_eq!(out.history.len(), 10_001);
    }
}
