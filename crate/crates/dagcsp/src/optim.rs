//! Box-constrained minimisation: projected L-BFGS, multistart and penalties.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domains::BoxDomain;
use crate::samplers::ShiftedSobol;

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Smooth objective: returns `f(x)` and writes `∇f(x)` into `grad`.
pub trait Objective: Sync {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpResult {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Projected-gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop as soon as the objective drops to this value.
    pub f_target: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, f_target: f64::NEG_INFINITY }
    }
}

fn project_into(b: &BoxDomain, x: &mut [f64]) {
    b.clamp(x);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn proj_grad_norm(b: &BoxDomain, x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &xk)| ((xk - g[k]).clamp(b.lo[k], b.hi[k]) - xk).abs())
        .fold(0.0, f64::max)
}

/// Projected L-BFGS from `x0` (clamped into the box).
pub fn box_minimize<O: Objective + ?Sized>(obj: &O, b: &BoxDomain, x0: &[f64], opts: &MinimizeOptions) -> NlpResult {
    let n = b.dim();
    let mut x = x0.to_vec();
    project_into(b, &mut x);
    if n == 0 {
        let f = obj.eval(&x, &mut []);
        return NlpResult { x_star: x, f_star: f, converged: true, iterations: 0 };
    }
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut converged = false;
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];

    while iterations < opts.max_iter {
        if !f.is_finite() {
            break;
        }
        if f <= opts.f_target || proj_grad_norm(b, &x, &g) <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let active: Vec<bool> = (0..n)
            .map(|k| (x[k] <= b.lo[k] && g[k] > 0.0) || (x[k] >= b.hi[k] && g[k] < 0.0))
            .collect();
        let mut d = two_loop(&g, &mem);
        for k in 0..n {
            if active[k] {
                d[k] = 0.0;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().zip(&active).map(|(gk, &a)| if a { 0.0 } else { -gk }).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }
        let mut alpha = if mem.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let wmax = b.widths().iter().copied().fold(0.0, f64::max);
            (wmax / dmax).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut fn_ = f;
        for _ in 0..MAX_BACKTRACKS {
            for k in 0..n {
                xn[k] = (x[k] + alpha * d[k]).clamp(b.lo[k], b.hi[k]);
            }
            fn_ = obj.eval(&xn, &mut gn);
            let decrease: f64 = (0..n).map(|k| g[k] * (xn[k] - x[k])).sum();
            if fn_.is_finite() && fn_ <= f + ARMIJO_C1 * decrease {
                accepted = true;
                break;
            }
            // safeguarded quadratic interpolation along the ray
            let trial = if fn_.is_finite() {
                let denom = 2.0 * (fn_ - f - alpha * slope);
                if denom > 0.0 {
                    -slope * alpha * alpha / denom
                } else {
                    0.5 * alpha
                }
            } else {
                0.1 * alpha
            };
            alpha = trial.clamp(0.1 * alpha, 0.5 * alpha);
        }
        if !accepted {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        }
        let s: Vec<f64> = (0..n).map(|k| xn[k] - x[k]).collect();
        let y: Vec<f64> = (0..n).map(|k| gn[k] - g[k]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let stalled = fn_ == f;
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fn_;
        if stalled {
            break;
        }
    }
    if !converged && (f <= opts.f_target || proj_grad_norm(b, &x, &g) <= opts.tol) {
        converged = true;
    }
    NlpResult { x_star: x, f_star: f, converged, iterations }
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; mem.len()];
    for (i, (s, y, rho)) in mem.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        for k in 0..q.len() {
            q[k] -= a * y[k];
        }
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (s, y, rho)) in mem.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for k in 0..q.len() {
            q[k] += s[k] * (alphas[i] - beta);
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Run [`box_minimize`] from the supplied warm starts followed by `n_starts`
/// seeded Sobol points. Returns the best result (ties keep the earliest
/// start). Stops early once a result reaches `opts.f_target`.
pub fn multistart_from<O: Objective + ?Sized>(
    obj: &O,
    b: &BoxDomain,
    warm: &[Vec<f64>],
    n_starts: usize,
    seed: u64,
    opts: &MinimizeOptions,
) -> NlpResult {
    let mut best: Option<NlpResult> = None;
    let seq = ShiftedSobol::new(b.dim(), seed).expect("dimension within the Sobol table");
    let starts = warm.iter().cloned().chain((0..n_starts as u64).map(|k| b.from_unit(&seq.point(k))));
    for x0 in starts {
        let r = box_minimize(obj, b, &x0, opts);
        let better = match &best {
            None => true,
            Some(cur) => r.f_star < cur.f_star,
        };
        if better {
            best = Some(r);
        }
        if best.as_ref().is_some_and(|r| r.f_star <= opts.f_target) {
            break;
        }
    }
    best.unwrap_or_else(|| {
        let x0 = b.from_unit(&vec![0.5; b.dim()]);
        box_minimize(obj, b, &x0, opts)
    })
}

pub fn multistart_minimize<O: Objective + ?Sized>(
    obj: &O,
    b: &BoxDomain,
    n_starts: usize,
    seed: u64,
    opts: &MinimizeOptions,
) -> NlpResult {
    multistart_from(obj, b, &[], n_starts.max(1), seed, opts)
}

/// `f(x) + weight·‖r(x)‖²`, where `residual` writes `r(x)` and its Jacobian
/// (row-major, `m × n`).
pub fn penalty_objective<'a, F, R>(
    base: F,
    residual: R,
    m: usize,
    weight: f64,
) -> impl Fn(&[f64], &mut [f64]) -> f64 + Sync + 'a
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync + 'a,
    R: Fn(&[f64], &mut [f64], &mut [f64]) + Sync + 'a,
{
    move |x: &[f64], grad: &mut [f64]| {
        let n = x.len();
        let mut r = vec![0.0; m];
        let mut jac = vec![0.0; m * n];
        let f = base(x, grad);
        residual(x, &mut r, &mut jac);
        for i in 0..m {
            for k in 0..n {
                grad[k] += 2.0 * weight * r[i] * jac[i * n + k];
            }
        }
        f + weight * r.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Central finite-difference gradient, for checks.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let x0 = xp[k];
            xp[k] = x0 + h;
            let fp = f(&xp);
            xp[k] = x0 - h;
            let fm = f(&xp);
            xp[k] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosen(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn sphere_from_corner() {
        let f = |x: &[f64], g: &mut [f64]| {
            for k in 0..x.len() {
                g[k] = 2.0 * x[k];
            }
            dot(x, x)
        };
        let r = box_minimize(&f, &BoxDomain::cube(3, -1.0, 1.0), &[1.0, 1.0, 1.0], &MinimizeOptions::default());
        assert!(r.f_star <= 1e-12, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn active_lower_bound() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            x[0]
        };
        let r = box_minimize(&f, &BoxDomain::new(vec![2.0], vec![5.0]).unwrap(), &[4.0], &MinimizeOptions::default());
        assert_eq!(r.x_star, vec![2.0]);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock() {
        let r = box_minimize(&rosen, &BoxDomain::cube(2, -2.0, 2.0), &[-1.2, 1.0], &MinimizeOptions::default());
        assert!(r.f_star <= 1e-8, "{r:?}");
        assert!((r.x_star[0] - 1.0).abs() < 1e-3 && (r.x_star[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn convex_quadratics_converge_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = rng.gen_range(2..6);
            // A = M Mᵀ + I, minimiser strictly inside the box
            let m: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum::<f64>();
                }
                a[i * d + i] += 1.0;
            }
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let f = |x: &[f64], g: &mut [f64]| {
                let mut v = 0.0;
                for i in 0..d {
                    g[i] = (0..d).map(|j| a[i * d + j] * (x[j] - c[j])).sum();
                    v += 0.5 * (x[i] - c[i]) * g[i];
                }
                v
            };
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let r = box_minimize(&f, &BoxDomain::cube(d, -3.0, 3.0), &x0, &MinimizeOptions::default());
            assert!(r.converged, "{r:?}");
            assert!(r.iterations <= 3 * d, "d={d} iterations={}", r.iterations);
        }
    }

    #[test]
    fn never_leaves_the_box() {
        let b = BoxDomain::cube(2, -0.5, 0.5);
        let f = |x: &[f64], g: &mut [f64]| {
            assert!(x.iter().all(|v| (-0.5..=0.5).contains(v)));
            rosen(x, g)
        };
        let r = box_minimize(&f, &b, &[-0.5, -0.5], &MinimizeOptions::default());
        assert!(crate::domains::contains(&b, &r.x_star).unwrap());
    }

    #[test]
    fn double_well_multistart() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
            (x[0] * x[0] - 1.0).powi(2)
        };
        let b = BoxDomain::cube(1, -2.0, 2.0);
        let r = multistart_minimize(&f, &b, 10, 0, &MinimizeOptions::default());
        assert!(r.f_star <= 1e-10);
        assert!((r.x_star[0].abs() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn multistart_prefix_is_monotone_and_single_start_matches() {
        let b = BoxDomain::cube(2, -2.0, 2.0);
        let opts = MinimizeOptions { max_iter: 5, ..Default::default() };
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let r = multistart_minimize(&rosen, &b, k, 3, &opts);
            assert!(r.f_star <= prev);
            prev = r.f_star;
        }
        let one = multistart_minimize(&rosen, &b, 1, 3, &opts);
        let x0 = b.from_unit(&ShiftedSobol::new(2, 3).unwrap().point(0));
        assert_eq!(one, box_minimize(&rosen, &b, &x0, &opts));
    }

    #[test]
    fn convex_multistart_agrees() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 0.3);
            g[1] = 2.0 * (x[1] + 0.2);
            (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)
        };
        let b = BoxDomain::cube(2, -1.0, 1.0);
        let seq = ShiftedSobol::new(2, 0).unwrap();
        for k in 0..10 {
            let r = box_minimize(&f, &b, &b.from_unit(&seq.point(k)), &MinimizeOptions::default());
            assert!((r.x_star[0] - 0.3).abs() < 1e-7 && (r.x_star[1] + 0.2).abs() < 1e-7);
        }
    }

    #[test]
    fn penalty_behaviour() {
        let base = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = 0.0;
            x[0] * x[0] + 0.5
        };
        let zero = |_: &[f64], r: &mut [f64], j: &mut [f64]| {
            r[0] = 0.0;
            j.iter_mut().for_each(|v| *v = 0.0);
        };
        let p = penalty_objective(base, zero, 1, 1e3);
        let mut g1 = [0.0; 2];
        let mut g2 = [0.0; 2];
        assert_eq!(p(&[0.3, 0.1], &mut g1), base(&[0.3, 0.1], &mut g2));
        assert_eq!(g1, g2);

        let c = [0.25, -0.4];
        let nothing = |_: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            0.0
        };
        let shift = move |x: &[f64], r: &mut [f64], j: &mut [f64]| {
            r[0] = x[0] - c[0];
            r[1] = x[1] - c[1];
            j.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        };
        let p = penalty_objective(nothing, shift, 2, 1e3);
        let r = box_minimize(&p, &BoxDomain::cube(2, -1.0, 1.0), &[0.9, 0.9], &MinimizeOptions::default());
        assert!((r.x_star[0] - c[0]).abs() < 1e-8 && (r.x_star[1] - c[1]).abs() < 1e-8);

        let curvy = |x: &[f64], r: &mut [f64], j: &mut [f64]| {
            r[0] = x[0].sin() * x[1];
            j[0] = x[0].cos() * x[1];
            j[1] = x[0].sin();
        };
        let p = penalty_objective(rosen, curvy, 1, 1e3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let mut g = [0.0; 2];
            p(&x, &mut g);
            let fd = fd_gradient(|y| p(y, &mut [0.0; 2]), &x, 1e-5);
            for k in 0..2 {
                assert!((g[k] - fd[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{g:?} {fd:?}");
            }
        }
    }
}
