//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the standard two-loop recursion over the
//! last `history` curvature pairs. Step lengths are bracketed and zoomed with
//! safeguarded cubic interpolation (Nocedal & Wright, algorithms 3.5/3.6).
//! When no step with sufficient decrease is found along the quasi-Newton
//! direction, the iteration falls back to steepest descent with halving
//! backtracking and clears the curvature history.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsSettings {
    pub history: usize,
    pub max_iterations: usize,
    /// Stop once the largest absolute gradient entry drops below this.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_evaluations: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evaluations: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// Neither the quasi-Newton step nor steepest descent reduced the objective.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
    pub fallback_steps: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (idx, p) in pairs.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, &q);
        alphas[idx] = a;
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for (idx, p) in pairs.iter().enumerate() {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (alphas[idx] - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Point {
    step: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Cubic minimizer of the interpolant through two points; `None` when ill-defined.
fn cubic_min(a: &Point, b: &Point) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if !disc.is_finite() || disc < 0.0 {
        return None;
    }
    let d2 = (b.step - a.step).signum() * disc.sqrt();
    let t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evaluations: usize,
}

impl<F, E> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    fn eval(&mut self, step: f64) -> Point {
        self.evaluations += 1;
        let xt = axpy(self.x, step, self.d);
        match (self.f)(&xt) {
            Ok((value, grad)) if value.is_finite() => {
                let slope = dot(&grad, self.d);
                Point { step, value, slope, grad }
            }
            // failures count as infinitely bad, forcing a shorter step
            _ => Point { step, value: f64::INFINITY, slope: f64::NAN, grad: Vec::new() },
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.value <= self.f0 + self.c1 * p.step * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.c2 * self.slope0
    }

    /// Returns a strong-Wolfe point, or the best sufficient-decrease point seen
    /// if the budget runs out, or `None`.
    fn search(&mut self, initial: f64) -> Option<Point> {
        let mut prev = Point { step: 0.0, value: self.f0, slope: self.slope0, grad: Vec::new() };
        let mut step = initial;
        let mut first = true;
        while self.evaluations < self.budget {
            let cur = self.eval(step);
            if !self.armijo(&cur) || (!first && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            first = false;
            step = cur.step * 2.0;
            prev = cur;
        }
        (prev.step > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        while self.evaluations < self.budget {
            let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
            let width = b - a;
            if width <= 1e-16 * b.max(1e-300) {
                break;
            }
            let guess = if hi.value.is_finite() && hi.slope.is_finite() { cubic_min(&lo, &hi) } else { None };
            let t = match guess {
                Some(t) if t >= a + 0.1 * width && t <= b - 0.1 * width => t,
                _ => 0.5 * (a + b),
            };
            let cur = self.eval(t);
            if !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        (lo.step > 0.0).then_some(lo)
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient; an error at
/// `x0` aborts, errors at trial points are treated as infinite values.
pub fn minimize<F, E>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<Minimum, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let mut evaluations = 1;
    let mut trace = vec![value];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(settings.history);
    let mut iterations = 0;
    let mut fallback_steps = 0;
    let mut termination = Termination::MaxIterations;

    if inf_norm(&grad) <= settings.gradient_tolerance {
        termination = Termination::GradientTolerance;
    } else {
        while iterations < settings.max_iterations {
            let mut d = two_loop(&grad, &pairs);
            let mut slope = dot(&grad, &d);
            if !(slope < 0.0) {
                pairs.clear();
                d = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &d);
            }
            let initial = if pairs.is_empty() {
                (1.0 / grad.iter().map(|g| g.abs()).sum::<f64>()).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                f: &mut f,
                x: &x,
                d: &d,
                f0: value,
                slope0: slope,
                c1: settings.c1,
                c2: settings.c2,
                budget: settings.max_line_search_evaluations,
                evaluations: 0,
            };
            let mut accepted = ls.search(initial);
            evaluations += ls.evaluations;

            if accepted.is_none() {
                // steepest descent with halving backtracking
                fallback_steps += 1;
                pairs.clear();
                d = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &d);
                let mut step = (1.0 / grad.iter().map(|g| g.abs()).sum::<f64>()).min(1.0);
                for _ in 0..60 {
                    evaluations += 1;
                    let xt = axpy(&x, step, &d);
                    if let Ok((v, g)) = f(&xt) {
                        if v.is_finite() && v <= value + settings.c1 * step * slope {
                            accepted = Some(Point { step, value: v, slope: dot(&g, &d), grad: g });
                            break;
                        }
                    }
                    step *= 0.5;
                }
            }

            let Some(p) = accepted else {
                termination = Termination::Stalled;
                break;
            };
            let x_new = axpy(&x, p.step, &d);
            let s: Vec<f64> = d.iter().map(|di| p.step * di).collect();
            let y: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
                if pairs.len() == settings.history {
                    pairs.pop_front();
                }
                if settings.history > 0 {
                    pairs.push_back(Pair { s, y, rho: 1.0 / sy });
                }
            }
            let decrease = value - p.value;
            x = x_new;
            value = p.value;
            grad = p.grad;
            iterations += 1;
            trace.push(value);
            if inf_norm(&grad) <= settings.gradient_tolerance {
                termination = Termination::GradientTolerance;
                break;
            }
            if decrease <= 0.0 {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    Ok(Minimum {
        gradient_norm: inf_norm(&grad),
        x,
        value,
        iterations,
        evaluations,
        trace,
        termination,
        fallback_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), ()> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((v, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let s = LbfgsSettings { max_iterations: 200, ..Default::default() };
        let m = minimize(rosenbrock, vec![-1.2, 1.0], &s).unwrap();
        assert_eq!(m.termination, Termination::GradientTolerance);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn quadratic_in_few_steps() {
        let diag = [1.0, 10.0, 100.0, 1000.0];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
            let v = x.iter().zip(&diag).map(|(xi, di)| 0.5 * di * xi * xi).sum();
            Ok((v, x.iter().zip(&diag).map(|(xi, di)| di * xi).collect()))
        };
        let m = minimize(f, vec![1.0; 4], &LbfgsSettings::default()).unwrap();
        assert_eq!(m.termination, Termination::GradientTolerance);
        assert!(m.iterations < 30);
    }

    #[test]
    fn iteration_cap_respected() {
        let s = LbfgsSettings { max_iterations: 3, ..Default::default() };
        let m = minimize(rosenbrock, vec![-1.2, 1.0], &s).unwrap();
        assert_eq!(m.iterations, 3);
        assert_eq!(m.trace.len(), 4);
        assert_eq!(m.termination, Termination::MaxIterations);
    }

    #[test]
    fn trial_point_errors_shrink_the_step() {
        // undefined for x > 2; minimum at 1.5
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), &'static str> {
            if x[0] > 2.0 {
                return Err("out of domain");
            }
            Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
        };
        let m = minimize(f, vec![-30.0], &LbfgsSettings::default()).unwrap();
        assert!((m.x[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn initial_error_propagates() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>), &'static str> { Err("bad start") };
        assert_eq!(minimize(f, vec![0.0], &LbfgsSettings::default()).unwrap_err(), "bad start");
    }
}
