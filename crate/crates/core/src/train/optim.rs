//! First-order and quasi-Newton parameter updates on flat vectors.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates; `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let n = params.len();
    for (context, got) in
        [("Adam gradient", grads.len()), ("Adam first moment", state.m.len()), ("Adam second moment", state.v.len())]
    {
        if got != n {
            return Err(Error::DimensionMismatch { context, expected: n, got });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Stored curvature pairs.
    pub history: usize,
    /// Accepted steps per call of [`lbfgs_epoch`].
    pub max_inner: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant; `c1 < c2 < 1`.
    pub c2: f64,
    /// Keep curvature pairs from one epoch to the next instead of starting
    /// each epoch from steepest descent.
    pub carry_history: bool,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { history: 10, max_inner: 200, c1: 1e-4, c2: 0.9, carry_history: false }
    }
}

/// Gradient norm below which an epoch stops early.
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_LINE_EVALS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStop {
    GradientTolerance,
    LineSearchFailed,
    InnerCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub stop: LbfgsStop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `−H·g` by the two-loop recursion, with `H₀ = (sᵀy / yᵀy)·I` from the
/// newest pair.
fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, p) in pairs.iter().enumerate().rev() {
        alpha[k] = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
    }
    if let Some(p) = pairs.back() {
        let gamma = 1.0 / (p.rho * dot(&p.y, &p.y));
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (k, p) in pairs.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`, kept
/// inside `[lo, hi]`; bisection when the cubic has no interior minimum.
fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64), lo: f64, hi: f64) -> f64 {
    let ((xa, fa, da), (xb, fb, db)) = (a, b);
    let d1 = da + db - 3.0 * (fa - fb) / (xa - xb);
    let disc = d1 * d1 - da * db;
    if disc >= 0.0 && xa != xb {
        let d2 = disc.sqrt() * (xb - xa).signum();
        let x = xb - (xb - xa) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if x.is_finite() {
            return x.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

/// One point on the search line: step, value, slope along the direction,
/// and the full gradient.
type LinePoint = (f64, f64, f64, Vec<f64>);

/// Strong-Wolfe line search. `None` when no acceptable step is found within
/// the evaluation budget.
fn strong_wolfe<F>(phi: &mut F, f0: f64, d0: f64, first: f64, c1: f64, c2: f64) -> Result<Option<LinePoint>>
where
    F: FnMut(f64) -> Result<(f64, f64, Vec<f64>)>,
{
    let armijo = |a: f64, f: f64| f <= f0 + c1 * a * d0;
    let curvature = |d: f64| d.abs() <= -c2 * d0;
    let mut prev = (0.0, f0, d0);
    let mut a = first;
    let mut evals = 0;

    // bracketing phase
    let (mut lo, mut hi) = loop {
        if evals == MAX_LINE_EVALS {
            return Ok(None);
        }
        let (f, d, g) = phi(a)?;
        evals += 1;
        if !f.is_finite() || !d.is_finite() {
            // overshoot into an invalid region: shrink toward the last good step
            a = prev.0 + 0.5 * (a - prev.0);
            continue;
        }
        if !armijo(a, f) || (evals > 1 && f >= prev.1) {
            break (prev, (a, f, d));
        }
        if curvature(d) {
            return Ok(Some((a, f, d, g)));
        }
        if d >= 0.0 {
            break ((a, f, d), prev);
        }
        let next = cubic_min(prev, (a, f, d), a + 0.01 * (a - prev.0), 10.0 * a);
        prev = (a, f, d);
        a = next;
    };

    // zoom phase: `lo` satisfies sufficient decrease and has the lowest value
    while evals < MAX_LINE_EVALS {
        let (left, right) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = right - left;
        if width <= f64::EPSILON * right.abs().max(1e-300) {
            return Ok(None);
        }
        let mut a = cubic_min(lo, hi, left, right);
        // keep trial steps away from the bracket ends
        if (a - left).min(right - a) < 0.1 * width {
            a = 0.5 * (left + right);
        }
        let (f, d, g) = phi(a)?;
        evals += 1;
        if !f.is_finite() || !d.is_finite() || !armijo(a, f) || f >= lo.1 {
            hi = (a, f, d);
        } else {
            if curvature(d) {
                return Ok(Some((a, f, d, g)));
            }
            if d * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, f, d);
        }
    }
    Ok(None)
}

/// Run L-BFGS from `params` until the gradient norm drops below
/// [`GRADIENT_TOLERANCE`], a line search fails, or `cfg.max_inner` steps
/// are accepted. History starts empty on every call. `params` ends at the
/// last accepted point.
/// Curvature pairs retained between calls of [`lbfgs_epoch`].
#[derive(Debug, Clone, Default)]
pub struct LbfgsHistory {
    pairs: VecDeque<Pair>,
}

impl LbfgsHistory {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }
}

pub fn lbfgs_epoch<F>(params: &mut [f64], loss_fn: F, cfg: &LbfgsConfig) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_epoch_with(params, loss_fn, cfg, &mut LbfgsHistory::default())
}

/// [`lbfgs_epoch`] starting from, and updating, `history`. Pairs whose
/// dimension does not match `params` are discarded.
pub fn lbfgs_epoch_with<F>(
    params: &mut [f64],
    mut loss_fn: F,
    cfg: &LbfgsConfig,
    history: &mut LbfgsHistory,
) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if cfg.history == 0 || !(0.0 < cfg.c1 && cfg.c1 < cfg.c2 && cfg.c2 < 1.0) {
        return Err(Error::InvalidConfig("L-BFGS needs history >= 1 and 0 < c1 < c2 < 1".into()));
    }
    let n = params.len();
    let (mut f, mut g) = loss_fn(params)?;
    let mut evaluations = 1;
    if g.len() != n {
        return Err(Error::DimensionMismatch { context: "L-BFGS gradient", expected: n, got: g.len() });
    }
    let pairs = &mut history.pairs;
    if pairs.front().is_some_and(|p| p.s.len() != n) {
        pairs.clear();
    }
    while pairs.len() > cfg.history {
        pairs.pop_front();
    }
    let mut inner = 0;
    let mut trial = vec![0.0; n];

    let stop = loop {
        if dot(&g, &g).sqrt() < GRADIENT_TOLERANCE {
            break LbfgsStop::GradientTolerance;
        }
        if inner == cfg.max_inner {
            break LbfgsStop::InnerCap;
        }
        let mut dir = two_loop(&g, pairs);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let first = if pairs.is_empty() { (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0) } else { 1.0 };
        let mut phi = |a: f64| -> Result<(f64, f64, Vec<f64>)> {
            for ((t, x), d) in trial.iter_mut().zip(params.iter()).zip(&dir) {
                *t = x + a * d;
            }
            let (fa, ga) = loss_fn(&trial)?;
            evaluations += 1;
            let da = dot(&ga, &dir);
            Ok((fa, da, ga))
        };
        let Some((alpha, f_new, _, g_new)) = strong_wolfe(&mut phi, f, slope, first, cfg.c1, cfg.c2)? else {
            break LbfgsStop::LineSearchFailed;
        };
        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back(Pair { rho: 1.0 / sy, s: s.clone(), y });
        }
        params.iter_mut().zip(&s).for_each(|(x, si)| *x += si);
        f = f_new;
        g = g_new;
        inner += 1;
    };
    Ok(LbfgsReport { inner_iterations: inner, evaluations, value: f, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.25, 1e3] {
            let mut p = vec![1.0];
            adam_step(&mut p, &[g], &mut AdamState::new(1), &cfg).unwrap();
            // bias-corrected m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε)
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!(((p[0] - 1.0) + cfg.lr * g.signum()).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_quadratic_trajectory_matches_reference() {
        // independent closed-form bookkeeping: powers accumulated by hand
        let (lr, b1, b2, eps) = (0.1, 0.8, 0.95, 1e-6);
        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        let (mut theta, mut m, mut v, mut b1t, mut b2t) = (1.0f64, 0.0f64, 0.0f64, 1.0f64, 1.0f64);
        for _ in 0..10 {
            let g = p[0];
            adam_step(&mut p, &[g], &mut st, &cfg).unwrap();
            let gr = theta;
            m = b1 * m + (1.0 - b1) * gr;
            v = b2 * v + (1.0 - b2) * gr * gr;
            b1t *= b1;
            b2t *= b2;
            let step_size = lr * (1.0 - b2t).sqrt() / (1.0 - b1t);
            theta -= step_size * m / (v.sqrt() + eps * (1.0 - b2t).sqrt());
            assert!((p[0] - theta).abs() < 1e-12, "{} vs {}", p[0], theta);
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = vec![0.0; 3];
        assert!(adam_step(&mut p, &[1.0], &mut AdamState::new(3), &AdamConfig::default()).is_err());
    }

    fn quadratic(diag: Vec<f64>, center: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(&diag).zip(&center).map(|((xi, d), c)| d * (xi - c)).collect();
            let f = 0.5 * x.iter().zip(&diag).zip(&center).map(|((xi, d), c)| d * (xi - c) * (xi - c)).sum::<f64>();
            Ok((f, g))
        }
    }

    #[test]
    fn lbfgs_stationary_start_takes_no_step() {
        let mut x = vec![1.0, 2.0];
        let r = lbfgs_epoch(&mut x, quadratic(vec![1.0, 3.0], vec![1.0, 2.0]), &LbfgsConfig::default()).unwrap();
        assert_eq!(r.inner_iterations, 0);
        assert_eq!(r.stop, LbfgsStop::GradientTolerance);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn lbfgs_convex_quadratic_converges() {
        let diag: Vec<f64> = (0..10).map(|i| 1.0 + 9.0 * i as f64 / 9.0).collect();
        let center: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut x = vec![0.0; 10];
        let cfg = LbfgsConfig { max_inner: 30, ..Default::default() };
        lbfgs_epoch(&mut x, quadratic(diag.clone(), center.clone()), &cfg).unwrap();
        let gnorm = x.iter().zip(&diag).zip(&center).map(|((xi, d), c)| (d * (xi - c)).powi(2)).sum::<f64>().sqrt();
        assert!(gnorm < 1e-8, "{gnorm}");
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let rosen = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let mut x = vec![-1.2, 1.0];
        let cfg = LbfgsConfig { max_inner: 100, ..Default::default() };
        let r = lbfgs_epoch(&mut x, rosen, &cfg).unwrap();
        assert!(r.value < 1e-6, "{r:?}");
        assert!(r.inner_iterations <= 100);
    }

    #[test]
    fn lbfgs_stops_at_the_cap() {
        let mut x = vec![5.0; 4];
        let cfg = LbfgsConfig { max_inner: 2, ..Default::default() };
        let r = lbfgs_epoch(&mut x, quadratic(vec![1.0, 10.0, 100.0, 1000.0], vec![0.0; 4]), &cfg).unwrap();
        assert_eq!(r.stop, LbfgsStop::InnerCap);
        assert_eq!(r.inner_iterations, 2);
    }

    #[test]
    fn lbfgs_rejects_bad_constants() {
        let cfg = LbfgsConfig { c1: 0.95, ..Default::default() };
        assert!(lbfgs_epoch(&mut [0.0], quadratic(vec![1.0], vec![1.0]), &cfg).is_err());
    }

    #[test]
    fn carried_history_resumes_quasi_newton_steps() {
        // ill-conditioned quadratic, split into short calls
        let scales: Vec<f64> = (0..10).map(|i| 10f64.powi(i % 4)).collect();
        let loss = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&scales).map(|(v, s)| 0.5 * s * v * v).sum();
            Ok((f, x.iter().zip(&scales).map(|(v, s)| s * v).collect()))
        };
        let cfg = LbfgsConfig { max_inner: 4, ..Default::default() };
        let run = |carry: bool| {
            let mut x = vec![1.0; 10];
            let mut history = LbfgsHistory::default();
            let mut value = 0.0;
            for _ in 0..4 {
                if !carry {
                    history.clear();
                }
                value = lbfgs_epoch_with(&mut x, loss, &cfg, &mut history).unwrap().value;
            }
            (value, history.len())
        };
        let (fresh, _) = run(false);
        let (carried, pairs) = run(true);
        assert!(pairs > 4);
        assert!(carried < fresh, "carried {carried:e} vs fresh {fresh:e}");
    }

    #[test]
    fn history_of_another_dimension_is_dropped() {
        let quad = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((0.5 * dot(x, x), x.to_vec())) };
        let mut history = LbfgsHistory::default();
        lbfgs_epoch_with(&mut [1.0, 2.0, 3.0], quad, &LbfgsConfig::default(), &mut history).unwrap();
        assert!(!history.is_empty());
        let mut x = [4.0, -1.0];
        lbfgs_epoch_with(&mut x, quad, &LbfgsConfig::default(), &mut history).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-8));
        assert!(history.pairs.iter().all(|p| p.s.len() == 2));
    }
}
