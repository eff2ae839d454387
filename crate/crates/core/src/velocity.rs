//! Maximization of the GLRT statistic over the 3D velocity box.
//!
//! Five strategies share one [`Objective`]: exhaustive lattice search,
//! projected gradient ascent from a random or coarse-grid start, and
//! global-best particle swarm optimization from a random or coarse-grid
//! start. Every strategy also evaluates `v = 0`, so the returned statistic
//! never falls below the zero-velocity statistic.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{Vec3, Velocity3};
use crate::rng::SimRng;

/// Scalar function of a candidate velocity to be maximized.
pub trait Objective: Sync {
    fn evaluate(&self, v: Velocity3) -> f64;
}

impl<F> Objective for F
where
    F: Fn(Velocity3) -> f64 + Sync,
{
    fn evaluate(&self, v: Velocity3) -> f64 {
        self(v)
    }
}

/// Per-axis bounds `[−ν_max, ν_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub nu_max: f64,
}

impl SearchBox {
    pub fn new(nu_max: f64) -> Self {
        assert!(nu_max.is_finite() && nu_max >= 0.0, "search box bound must be finite and non-negative");
        Self { nu_max }
    }

    pub fn width(&self) -> f64 {
        2.0 * self.nu_max
    }

    pub fn clamp(&self, v: Velocity3) -> Velocity3 {
        let c = |x: f64| x.clamp(-self.nu_max, self.nu_max);
        Vec3::new(c(v.x), c(v.y), c(v.z))
    }

    pub fn contains(&self, v: Velocity3) -> bool {
        [v.x, v.y, v.z].iter().all(|c| c.abs() <= self.nu_max)
    }

    fn axis(&self, points: usize) -> Vec<f64> {
        if points == 1 {
            return vec![0.0];
        }
        let step = self.width() / (points - 1) as f64;
        (0..points).map(|i| -self.nu_max + i as f64 * step).collect()
    }

    /// Cartesian lattice with `points` values per axis, x fastest.
    pub fn lattice(&self, points: usize) -> Vec<Velocity3> {
        let ax = self.axis(points);
        let mut out = Vec::with_capacity(points.pow(3));
        for &z in &ax {
            for &y in &ax {
                for &x in &ax {
                    out.push(Vec3::new(x, y, z));
                }
            }
        }
        out
    }

    fn sample(&self, rng: &mut SimRng) -> Velocity3 {
        if self.nu_max == 0.0 {
            return Vec3::ZERO;
        }
        let mut u = || rng.random_range(-self.nu_max..=self.nu_max);
        Vec3::new(u(), u(), u())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Grid,
    GradRi,
    GradCgi,
    PsoRi,
    PsoCgi,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Grid, Method::GradRi, Method::GradCgi, Method::PsoRi, Method::PsoCgi];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grid => "grid",
            Method::GradRi => "grad_ri",
            Method::GradCgi => "grad_cgi",
            Method::PsoRi => "pso_ri",
            Method::PsoCgi => "pso_cgi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub grid_points: usize,
    pub coarse_points: usize,
    pub swarm_size: usize,
    /// Swarm evaluations per particle, the initial one included.
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub grad_max_iters: usize,
    pub fd_step: f64,
    pub init_step: f64,
    pub backtrack: f64,
    /// Relative statistic change below which gradient ascent stops.
    pub tol: f64,
    /// Evaluate grid points and particles on the rayon pool.
    pub parallel: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            grid_points: 21,
            coarse_points: 5,
            swarm_size: 30,
            iterations: 60,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            grad_max_iters: 100,
            fd_step: 0.5,
            init_step: 5.0,
            backtrack: 0.5,
            tol: 1e-3,
            parallel: false,
        }
    }
}

/// Gradient ascent spends at most this many evaluations per iteration on
/// average: six for the central-difference gradient, one for the step.
pub const GRADIENT_EVALS_PER_ITER: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEstimate {
    pub velocity: Velocity3,
    pub statistic: f64,
    pub evaluations: usize,
    pub wall_time: Duration,
    /// Best statistic after each iteration (gradient steps or swarm generations).
    pub history: Vec<f64>,
}

struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    count: AtomicUsize,
}

impl<'a, O: Objective + ?Sized> Counted<'a, O> {
    fn new(inner: &'a O) -> Self {
        Self { inner, count: AtomicUsize::new(0) }
    }

    fn eval(&self, v: Velocity3) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        let f = self.inner.evaluate(v);
        if f.is_nan() {
            f64::NEG_INFINITY
        } else {
            f
        }
    }

    fn eval_all(&self, points: &[Velocity3], parallel: bool) -> Vec<f64> {
        if parallel {
            points.par_iter().map(|&v| self.eval(v)).collect()
        } else {
            points.iter().map(|&v| self.eval(v)).collect()
        }
    }

    fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Index of the first maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn lattice_best<O: Objective + ?Sized>(f: &Counted<'_, O>, bounds: &SearchBox, points: usize, parallel: bool) -> (Velocity3, f64) {
    let mut candidates = Vec::with_capacity(points.pow(3) + 1);
    candidates.push(Vec3::ZERO);
    candidates.extend(bounds.lattice(points));
    let values = f.eval_all(&candidates, parallel);
    let i = argmax(&values);
    (candidates[i], values[i])
}

/// Exhaustive search over the `points³` lattice plus `v = 0`.
pub fn grid_search<O: Objective + ?Sized>(obj: &O, bounds: &SearchBox, points: usize, parallel: bool) -> VelocityEstimate {
    let start = Instant::now();
    let f = Counted::new(obj);
    let (velocity, statistic) = lattice_best(&f, bounds, points.max(1), parallel);
    VelocityEstimate { velocity, statistic, evaluations: f.evaluations(), wall_time: start.elapsed(), history: vec![statistic] }
}

/// Best point of the coarse lattice (plus `v = 0`), its statistic and the
/// number of evaluations spent.
pub fn coarse_grid_init<O: Objective + ?Sized>(obj: &O, bounds: &SearchBox, points: usize, parallel: bool) -> (Velocity3, f64, usize) {
    let e = grid_search(obj, bounds, points, parallel);
    (e.velocity, e.statistic, e.evaluations)
}

fn fd_gradient<O: Objective + ?Sized>(f: &Counted<'_, O>, x: Velocity3, h: f64) -> Vec3 {
    let mut g = [0.0; 3];
    let base = x.to_array();
    for (axis, gi) in g.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[axis] += h;
        minus[axis] -= h;
        *gi = (f.eval(Vec3::from_array(plus)) - f.eval(Vec3::from_array(minus))) / (2.0 * h);
    }
    Vec3::from_array(g)
}

type Mat3 = [[f64; 3]; 3];

fn mat_vec(h: &Mat3, g: Vec3) -> Vec3 {
    let g = g.to_array();
    Vec3::from_array([0, 1, 2].map(|i| h[i][0] * g[0] + h[i][1] * g[1] + h[i][2] * g[2]))
}

fn scaled_identity(s: f64) -> Mat3 {
    [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]
}

/// Inverse-Hessian BFGS update for the minimization of `−f`, with
/// `s = x₊ − x` and `y = ∇f(x) − ∇f(x₊)`.
fn bfgs_update(h: &mut Mat3, s: Vec3, y: Vec3) {
    let sy = s.dot(y);
    if !(sy > 1e-12 * s.norm() * y.norm()) {
        return;
    }
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = y.dot(hy);
    let (s, hy) = (s.to_array(), hy.to_array());
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn gradient_ascent<O: Objective + ?Sized>(f: &Counted<'_, O>, bounds: &SearchBox, init: Velocity3, cfg: &EstimatorConfig) -> (Velocity3, f64, Vec<f64>) {
    let budget = cfg.grad_max_iters * GRADIENT_EVALS_PER_ITER;
    let min_move = 1e-3 * cfg.fd_step;
    let mut x = bounds.clamp(init);
    let mut fx = f.eval(x);
    let mut history = vec![fx];
    let mut g = fd_gradient(f, x, cfg.fd_step);
    let mut h: Option<Mat3> = None;
    for _ in 0..cfg.grad_max_iters {
        let gn = g.norm();
        if !(gn > 0.0) || !gn.is_finite() || f.evaluations() + 7 > budget {
            break;
        }
        let hm = *h.get_or_insert_with(|| scaled_identity(cfg.init_step / gn));
        let mut dir = mat_vec(&hm, g);
        if !(dir.dot(g) > 0.0) {
            // Curvature information went stale: restart from a gradient step.
            h = Some(scaled_identity(cfg.init_step / gn));
            dir = g * (cfg.init_step / gn);
        }
        let mut t = 1.0;
        let mut accepted = None;
        while f.evaluations() + 6 < budget {
            let cand = bounds.clamp(x + dir * t);
            let moved = (cand - x).norm();
            if moved < min_move {
                break;
            }
            let fc = f.eval(cand);
            // Armijo condition along the projected step.
            if fc > fx && fc >= fx + 1e-4 * g.dot(cand - x) {
                accepted = Some((cand, fc));
                break;
            }
            t *= cfg.backtrack;
        }
        let Some((cand, fc)) = accepted else { break };
        let rel = (fc - fx) / fx.abs().max(f64::MIN_POSITIVE);
        let step = cand - x;
        let g_new = fd_gradient(f, cand, cfg.fd_step);
        if let Some(hm) = h.as_mut() {
            bfgs_update(hm, step, g - g_new);
        }
        x = cand;
        fx = fc;
        g = g_new;
        history.push(fx);
        // Converged once the statistic has flattened and the next
        // quasi-Newton step would also be negligible.
        let predicted = h.as_ref().map_or(f64::INFINITY, |hm| mat_vec(hm, g).norm());
        if rel < cfg.tol && step.norm().max(predicted) < cfg.fd_step * 0.1 {
            break;
        }
    }
    (x, fx, history)
}

/// Projected quasi-Newton ascent from `init`: central-difference gradients,
/// BFGS curvature scaling of the ascent direction, and an Armijo backtracking
/// line search. The first step moves `init_step` along the gradient. The
/// statistic sequence in `history` is strictly increasing.
pub fn gradient_refine<O: Objective + ?Sized>(obj: &O, bounds: &SearchBox, init: Velocity3, cfg: &EstimatorConfig) -> VelocityEstimate {
    let start = Instant::now();
    let f = Counted::new(obj);
    let (x, fx, history) = gradient_ascent(&f, bounds, init, cfg);
    VelocityEstimate { velocity: x, statistic: fx, evaluations: f.evaluations(), wall_time: start.elapsed(), history }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    CoarseGrid,
}

fn gradient_method<O: Objective + ?Sized>(obj: &O, bounds: &SearchBox, mode: InitMode, cfg: &EstimatorConfig, rng: &mut SimRng) -> VelocityEstimate {
    let start = Instant::now();
    let f = Counted::new(obj);
    let zero = f.eval(Vec3::ZERO);
    let init = match mode {
        InitMode::Random => bounds.sample(rng),
        InitMode::CoarseGrid => lattice_best(&f, bounds, cfg.coarse_points, cfg.parallel).0,
    };
    let inner = Counted::new(obj);
    let (mut x, mut fx, history) = gradient_ascent(&inner, bounds, init, cfg);
    if zero > fx {
        x = Vec3::ZERO;
        fx = zero;
    }
    VelocityEstimate {
        velocity: x,
        statistic: fx,
        evaluations: f.evaluations() + inner.evaluations(),
        wall_time: start.elapsed(),
        history,
    }
}

/// Global-best PSO with box-clamped positions and speed limited to the box
/// width. One particle always starts at `v = 0`; in coarse-grid mode a
/// second starts at the coarse-lattice optimum.
pub fn pso_search<O: Objective + ?Sized>(obj: &O, bounds: &SearchBox, mode: InitMode, cfg: &EstimatorConfig, rng: &mut SimRng) -> VelocityEstimate {
    let start = Instant::now();
    let f = Counted::new(obj);
    let n = cfg.swarm_size.max(2);
    let vmax = bounds.width();
    let mut pos: Vec<Velocity3> = Vec::with_capacity(n);
    pos.push(Vec3::ZERO);
    if mode == InitMode::CoarseGrid {
        pos.push(lattice_best(&f, bounds, cfg.coarse_points, cfg.parallel).0);
    }
    while pos.len() < n {
        pos.push(bounds.sample(rng));
    }
    let mut vel: Vec<Velocity3> = (0..n)
        .map(|_| {
            let mut u = || if vmax > 0.0 { rng.random_range(-0.25 * vmax..=0.25 * vmax) } else { 0.0 };
            Vec3::new(u(), u(), u())
        })
        .collect();
    let mut fit = f.eval_all(&pos, cfg.parallel);
    let mut best_pos = pos.clone();
    let mut best_fit = fit.clone();
    let g = argmax(&best_fit);
    let (mut gbest, mut gfit) = (best_pos[g], best_fit[g]);
    let mut history = vec![gfit];
    let clamp_speed = |x: f64| x.clamp(-vmax, vmax);
    for _ in 1..cfg.iterations.max(1) {
        for i in 0..n {
            let r1: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let r2: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let x = pos[i].to_array();
            let v = vel[i].to_array();
            let p = best_pos[i].to_array();
            let gb = gbest.to_array();
            let mut nv = [0.0; 3];
            for d in 0..3 {
                nv[d] = clamp_speed(cfg.inertia * v[d] + cfg.cognitive * r1[d] * (p[d] - x[d]) + cfg.social * r2[d] * (gb[d] - x[d]));
            }
            vel[i] = Vec3::from_array(nv);
            pos[i] = bounds.clamp(pos[i] + vel[i]);
        }
        fit = f.eval_all(&pos, cfg.parallel);
        for i in 0..n {
            if fit[i] > best_fit[i] {
                best_fit[i] = fit[i];
                best_pos[i] = pos[i];
            }
            if fit[i] > gfit {
                gfit = fit[i];
                gbest = pos[i];
            }
        }
        history.push(gfit);
    }
    VelocityEstimate { velocity: gbest, statistic: gfit, evaluations: f.evaluations(), wall_time: start.elapsed(), history }
}

/// Runs one of the five strategies.
pub fn estimate<O: Objective + ?Sized>(method: Method, obj: &O, bounds: &SearchBox, cfg: &EstimatorConfig, rng: &mut SimRng) -> VelocityEstimate {
    match method {
        Method::Grid => grid_search(obj, bounds, cfg.grid_points, cfg.parallel),
        Method::GradRi => gradient_method(obj, bounds, InitMode::Random, cfg, rng),
        Method::GradCgi => gradient_method(obj, bounds, InitMode::CoarseGrid, cfg, rng),
        Method::PsoRi => pso_search(obj, bounds, InitMode::Random, cfg, rng),
        Method::PsoCgi => pso_search(obj, bounds, InitMode::CoarseGrid, cfg, rng),
    }
}

/// `|v̂_c − v_c| / ‖v‖` per component; `None` for a stationary truth.
pub fn relative_component_error(estimate: Velocity3, truth: Velocity3) -> Option<[f64; 3]> {
    let speed = truth.norm();
    if speed == 0.0 {
        return None;
    }
    let d = (estimate - truth).to_array();
    Some(d.map(|c| c.abs() / speed))
}

/// `|v̂_c − v_c| / |v_c|` per component (infinite where a true component is 0).
pub fn per_component_error(estimate: Velocity3, truth: Velocity3) -> [f64; 3] {
    let d = (estimate - truth).to_array();
    let t = truth.to_array();
    [0, 1, 2].map(|i| d[i].abs() / t[i].abs())
}
