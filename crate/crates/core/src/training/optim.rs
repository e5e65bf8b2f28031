//! Adam and L-BFGS.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 1000, memory: 10, grad_tol: 1e-9, c1: 1e-4, c2: 0.9, max_evals: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStop {
    MaxIters,
    GradTol,
    LineSearchFailed,
    NonFinite,
}

/// An objective evaluation; `extra` carries caller data for the point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub value: f64,
    pub grad: Vec<f64>,
    pub extra: T,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult<T> {
    pub x: Vec<f64>,
    pub at: Evaluation<T>,
    pub iters: usize,
    pub stop: LbfgsStop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`,
/// kept inside the middle 80% of the interval.
fn cubic_step(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi - lo);
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    if t.is_finite() && t >= lo + margin && t <= hi - margin {
        t
    } else {
        mid
    }
}

struct Point<T> {
    alpha: f64,
    eval: Evaluation<T>,
}

/// Bracket end: step, value and directional derivative.
#[derive(Clone, Copy)]
struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
}

/// Strong-Wolfe line search. Returns the accepted point, or the best
/// sufficient-decrease point seen when the conditions cannot be met.
fn line_search<T>(
    f: &mut impl FnMut(&[f64]) -> Evaluation<T>,
    x: &[f64],
    dir: &[f64],
    f0: f64,
    slope0: f64,
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Option<Point<T>> {
    let mut evals = 0;
    let mut best: Option<Point<T>> = None;
    let armijo = |p: &Probe| p.value <= f0 + opts.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * slope0;
    // Evaluates a step; returns its probe and, when it satisfies both Wolfe
    // conditions, the full point.
    let mut probe = |alpha: f64, best: &mut Option<Point<T>>| -> (Probe, Option<Point<T>>) {
        let e = f(&axpy(x, alpha, dir));
        let slope = dot(&e.grad, dir);
        let pr = Probe { alpha, value: e.value, slope };
        let ok = pr.value.is_finite() && armijo(&pr);
        if ok && curvature(&pr) {
            return (pr, Some(Point { alpha, eval: e }));
        }
        if ok && pr.value < f0 && best.as_ref().is_none_or(|b| pr.value < b.eval.value) {
            *best = Some(Point { alpha, eval: e });
        }
        (pr, None)
    };

    let mut prev = Probe { alpha: 0.0, value: f0, slope: slope0 };
    let mut alpha = alpha0;
    let mut bracket = None;
    while evals < opts.max_evals {
        evals += 1;
        let (cur, done) = probe(alpha, &mut best);
        if done.is_some() {
            return done;
        }
        if !cur.value.is_finite() {
            alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
            continue;
        }
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.value >= prev.value) {
            bracket = Some((prev, cur));
            break;
        }
        if cur.slope >= 0.0 {
            bracket = Some((cur, prev));
            break;
        }
        prev = cur;
        alpha *= 2.0;
    }
    let (mut lo, mut hi) = bracket?;
    while evals < opts.max_evals {
        evals += 1;
        let a = cubic_step(lo.alpha, lo.value, lo.slope, hi.alpha, hi.value, hi.slope);
        if (a - lo.alpha).abs() <= 1e-16 * a.abs().max(1e-300) {
            break;
        }
        let (cur, done) = probe(a, &mut best);
        if done.is_some() {
            return done;
        }
        if !cur.value.is_finite() || !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    best
}

/// Two-loop-recursion L-BFGS with a strong-Wolfe line search.
///
/// `on_accept(iter, x, eval)` runs after every accepted step. Accepted values
/// strictly decrease.
pub fn lbfgs_minimize<T>(
    x0: Vec<f64>,
    mut f: impl FnMut(&[f64]) -> Evaluation<T>,
    opts: &LbfgsOptions,
    mut on_accept: impl FnMut(usize, &[f64], &Evaluation<T>),
) -> LbfgsResult<T> {
    let mut x = x0;
    let mut cur = f(&x);
    if !cur.value.is_finite() {
        return LbfgsResult { x, at: cur, iters: 0, stop: LbfgsStop::NonFinite };
    }
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut iters = 0;
    let stop = loop {
        if norm(&cur.grad) < opts.grad_tol {
            break LbfgsStop::GradTol;
        }
        if iters >= opts.max_iters {
            break LbfgsStop::MaxIters;
        }
        let mut q = cur.grad.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&cur.grad, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = cur.grad.iter().map(|v| -v).collect();
            slope = dot(&cur.grad, &dir);
        }
        let alpha0 = if hist.is_empty() { (1.0 / norm(&cur.grad)).min(1.0) } else { 1.0 };
        let Some(p) = line_search(&mut f, &x, &dir, cur.value, slope, alpha0, opts) else {
            break LbfgsStop::LineSearchFailed;
        };
        let x_new = axpy(&x, p.alpha, &dir);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.eval.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        cur = p.eval;
        iters += 1;
        on_accept(iters, &x, &cur);
    };
    LbfgsResult { x, at: cur, iters, stop }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut a = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        a.update(&mut p, &[0.0; 3], 1e-3);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn adam_first_step_size_is_lr() {
        // m̂ = g and v̂ = g² after one step, so the move is lr·g/(|g| + ε)
        let mut a = Adam::new(1);
        let mut p = vec![0.0];
        a.update(&mut p, &[0.5], 1e-3);
        let expect = 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] + expect).abs() < 1e-18);
        assert!((p[0].abs() - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_matches_hand_recurrence() {
        let grads = [0.3, -0.1, 0.7, 0.0, -2.0];
        let mut a = Adam::new(1);
        let mut p = vec![0.2];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.2f64);
        for (k, g) in grads.iter().enumerate() {
            a.update(&mut p, &[*g], 0.01);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn adam_is_odd(grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..20), p0 in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let mut a = Adam::new(4);
            let mut b = Adam::new(4);
            let mut p = p0.clone();
            let mut q: Vec<f64> = p0.iter().map(|v| -v).collect();
            for g in &grads {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                a.update(&mut p, g, 1e-3);
                b.update(&mut q, &neg, 1e-3);
            }
            for (x, y) in p.iter().zip(&q) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }

    fn quadratic(x: &[f64]) -> Evaluation<()> {
        // diagonal-dominant SPD matrix with minimum at c
        let a = [
            [4.0, 1.0, 0.0, 0.0, 0.5],
            [1.0, 3.0, 0.5, 0.0, 0.0],
            [0.0, 0.5, 2.0, 0.3, 0.0],
            [0.0, 0.0, 0.3, 5.0, 1.0],
            [0.5, 0.0, 0.0, 1.0, 1.5],
        ];
        let c = [1.0, -2.0, 0.5, 3.0, -1.0];
        let d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
        let ad: Vec<f64> = a.iter().map(|row| dot(row, &d)).collect();
        Evaluation { value: 0.5 * dot(&d, &ad), grad: ad, extra: () }
    }

    #[test]
    fn quadratic_converges_within_thirty_iterations() {
        let opts = LbfgsOptions { max_iters: 30, ..LbfgsOptions::default() };
        let mut values = vec![quadratic(&[0.0; 5]).value];
        let r = lbfgs_minimize(vec![0.0; 5], quadratic, &opts, |_, _, e| values.push(e.value));
        assert_eq!(r.stop, LbfgsStop::GradTol, "{r:?}");
        assert!(norm(&r.at.grad) < 1e-9);
        assert!((r.x[3] - 3.0).abs() < 1e-8);
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn start_at_minimum_does_not_move() {
        let c = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let r = lbfgs_minimize(c.clone(), quadratic, &LbfgsOptions::default(), |_, _, _| panic!("moved"));
        assert_eq!(r.iters, 0);
        assert_eq!(r.x, c);
    }

    #[test]
    fn rosenbrock_descends_monotonically() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            Evaluation {
                value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                grad: vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
                extra: (),
            }
        };
        let mut values = Vec::new();
        let opts = LbfgsOptions { max_iters: 200, ..LbfgsOptions::default() };
        let r = lbfgs_minimize(vec![-1.2, 1.0], rosen, &opts, |_, _, e| values.push(e.value));
        assert!(values.windows(2).all(|w| w[1] < w[0]));
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn cubic_step_finds_quadratic_minimum() {
        // f = (a - 0.3)², exactly representable by the cubic
        let f = |a: f64| (a - 0.3f64).powi(2);
        let g = |a: f64| 2.0 * (a - 0.3);
        let t = cubic_step(0.0, f(0.0), g(0.0), 1.0, f(1.0), g(1.0));
        assert!((t - 0.3).abs() < 1e-12);
    }
}
