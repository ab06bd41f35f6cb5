//! Newton-Raphson and Iwamoto's optimal-multiplier variant.

use super::{
    inf_norm, state_physical, Counters, SolveReport, SolveStatus, SolverOptions, TraceEntry,
    DIVERGENCE_NORM,
};
use crate::linalg::lu_factorize;
use crate::pfcore::{hessian_action, jacobian, mismatch, PfProblem, StateVector};
use std::time::Instant;

struct Run {
    t0: Instant,
    counters: Counters,
    trace: Vec<TraceEntry>,
    iterations: usize,
}

impl Run {
    fn new() -> Run {
        Run { t0: Instant::now(), counters: Counters::default(), trace: Vec::new(), iterations: 0 }
    }

    fn finish(self, status: SolveStatus, y: StateVector, gn: f64) -> SolveReport {
        SolveReport {
            status,
            iterations: self.iterations,
            trace: super::IterationTrace { entries: self.trace },
            final_state: y,
            final_mismatch: gn,
            counters: self.counters,
            wall_time_s: self.t0.elapsed().as_secs_f64(),
        }
    }
}

fn eval_g(prob: &PfProblem, y: &StateVector, c: &mut Counters) -> Option<Vec<f64>> {
    c.g_evals += 1;
    mismatch(prob, y).ok()
}

/// Plain Newton-Raphson: `y <- y - J(y)^{-1} g(y)` until the mismatch norm
/// reaches `tol` or a stopping rule fires.
pub fn newton_raphson(prob: &PfProblem, y0: &StateVector, opts: &SolverOptions) -> SolveReport {
    newton_like(prob, y0, opts, false)
}

/// Newton-Raphson damped by the scalar multiplier that minimizes the quartic
/// mismatch-cost model along the Newton direction. Degenerates to the plain
/// method (multiplier 1) at a solution.
pub fn iwamoto(prob: &PfProblem, y0: &StateVector, opts: &SolverOptions) -> SolveReport {
    newton_like(prob, y0, opts, true)
}

fn newton_like(
    prob: &PfProblem,
    y0: &StateVector,
    opts: &SolverOptions,
    optimal_mu: bool,
) -> SolveReport {
    let mut run = Run::new();
    let mut y = y0.clone();
    let Some(mut g) = eval_g(prob, &y, &mut run.counters) else {
        return run.finish(SolveStatus::Diverged, y, f64::NAN);
    };
    loop {
        let gn = inf_norm(&g);
        if !gn.is_finite() || gn > DIVERGENCE_NORM {
            return run.finish(SolveStatus::Diverged, y, gn);
        }
        if gn <= opts.tol {
            return run.finish(SolveStatus::Converged, y, gn);
        }
        if run.iterations >= opts.max_iter {
            return run.finish(SolveStatus::MaxIter, y, gn);
        }

        let Ok(j) = jacobian(prob, &y) else {
            return run.finish(SolveStatus::Diverged, y, gn);
        };
        run.counters.j_evals += 1;
        let Ok(lu) = lu_factorize(&j) else {
            return run.finish(SolveStatus::Singular, y, gn);
        };
        run.counters.lu_facts += 1;
        let d_neg = lu.solve(&g); // J^{-1} g
        let mu = if optimal_mu {
            let dir: Vec<f64> = d_neg.iter().map(|v| -v).collect();
            multiplier_from_direction(prob, &y, &g, &dir, &mut run.counters).unwrap_or(1.0)
        } else {
            1.0
        };
        for (yi, di) in y.data.iter_mut().zip(&d_neg) {
            *yi -= mu * di;
        }
        run.iterations += 1;
        run.counters.accepted_steps += 1;
        if !state_physical(prob, &y) {
            run.trace.push(TraceEntry {
                iter: run.iterations,
                err_inf: f64::INFINITY,
                h: mu,
                accepted: true,
            });
            return run.finish(SolveStatus::Diverged, y, f64::INFINITY);
        }
        let Some(g_new) = eval_g(prob, &y, &mut run.counters) else {
            return run.finish(SolveStatus::Diverged, y, f64::NAN);
        };
        g = g_new;
        run.trace.push(TraceEntry {
            iter: run.iterations,
            err_inf: inf_norm(&g),
            h: mu,
            accepted: true,
        });
    }
}

/// Optimal multiplier for the direction `d` at state `y` with mismatch `g`.
///
/// Models `g(y + mu d) ~= a + mu b + mu^2 c` with `a = g`, `b = J d` and
/// `c = (H (x) d) d / 2`, then minimizes `|a + mu b + mu^2 c|^2 / 2` by
/// solving the cubic stationarity condition and keeping the real root with
/// the smallest cost.
pub fn optimal_multiplier(
    prob: &PfProblem,
    y: &StateVector,
    d: &[f64],
) -> Option<f64> {
    let mut c = Counters::default();
    let g = mismatch(prob, y).ok()?;
    multiplier_from_direction(prob, y, &g, d, &mut c)
}

fn multiplier_from_direction(
    prob: &PfProblem,
    y: &StateVector,
    g: &[f64],
    d: &[f64],
    counters: &mut Counters,
) -> Option<f64> {
    let j = jacobian(prob, y).ok()?;
    counters.j_evals += 1;
    let b = j.matvec(d);
    let w = hessian_action(prob, y, d).ok()?;
    counters.hz_evals += 1;
    let hd = w.matvec(d);
    let c: Vec<f64> = hd.iter().map(|v| 0.5 * v).collect();

    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
    let c0 = dot(g, &b);
    let c1 = dot(&b, &b) + 2.0 * dot(g, &c);
    let c2 = 3.0 * dot(&b, &c);
    let c3 = 2.0 * dot(&c, &c);

    let cost = |mu: f64| {
        (0..g.len())
            .map(|i| {
                let r = g[i] + mu * b[i] + mu * mu * c[i];
                r * r
            })
            .sum::<f64>()
    };

    let roots = real_cubic_roots(c3, c2, c1, c0);
    if roots.is_empty() {
        return Some(1.0);
    }
    let mut best = roots[0];
    let mut best_cost = cost(best);
    for &r in &roots[1..] {
        let fc = cost(r);
        if fc < best_cost {
            best = r;
            best_cost = fc;
        }
    }
    if best.is_finite() {
        Some(best)
    } else {
        Some(1.0)
    }
}

/// Real roots of `c3 x^3 + c2 x^2 + c1 x + c0 = 0`, handling degenerate
/// leading coefficients.
fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return vec![];
    }
    let tiny = 1e-14 * scale;
    if c3.abs() <= tiny {
        if c2.abs() <= tiny {
            if c1.abs() <= tiny {
                return vec![];
            }
            return vec![-c0 / c1];
        }
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return vec![];
        }
        let s = disc.sqrt();
        return vec![(-c1 + s) / (2.0 * c2), (-c1 - s) / (2.0 * c2)];
    }
    // depressed cubic t^3 + p t + q with x = t - c2/(3 c3)
    let a = c2 / c3;
    let b = c1 / c3;
    let c = c0 / c3;
    let p = b - a * a / 3.0;
    let q = 2.0 * a.powi(3) / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        vec![shift + u + v]
    } else if disc == 0.0 {
        let u = (-q / 2.0).cbrt();
        vec![shift + 2.0 * u, shift - u]
    } else {
        // three real roots, trigonometric form
        let r = (-p / 3.0).sqrt();
        let phi = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| shift + 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_root_set(c3: f64, c2: f64, c1: f64, c0: f64, expected: &[f64]) {
        let mut roots = real_cubic_roots(c3, c2, c1, c0);
        roots.sort_by(f64::total_cmp);
        let mut exp = expected.to_vec();
        exp.sort_by(f64::total_cmp);
        assert_eq!(roots.len(), exp.len(), "roots {roots:?} vs {exp:?}");
        for (r, e) in roots.iter().zip(&exp) {
            assert!((r - e).abs() < 1e-9, "roots {roots:?} vs {exp:?}");
        }
    }

    #[test]
    fn cubic_three_real_roots() {
        // (x-1)(x-2)(x-3) = x^3 - 6x^2 + 11x - 6
        assert_root_set(1.0, -6.0, 11.0, -6.0, &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn cubic_single_real_root() {
        // x^3 + x + 1: one real root near -0.6823
        let roots = real_cubic_roots(1.0, 0.0, 1.0, 1.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] + 0.6823278038280193).abs() < 1e-12);
    }

    #[test]
    fn quadratic_and_linear_degeneracies() {
        assert_root_set(0.0, 1.0, -3.0, 2.0, &[1.0, 2.0]);
        assert_root_set(0.0, 0.0, 2.0, -4.0, &[2.0]);
        assert!(real_cubic_roots(0.0, 0.0, 0.0, 0.0).is_empty());
    }
}
