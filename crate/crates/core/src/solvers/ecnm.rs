//! Explicit continuous-Newton: classical 4-stage Runge-Kutta applied to the
//! Newton flow `dy/dt = -J(y)^{-1} g(y)` with a fixed step. Every stage
//! factorizes a fresh Jacobian, so the cost is four LU factorizations per
//! step; the stability region of the explicit scheme is what limits it on
//! ill-conditioned cases.

use super::{
    axpy, inf_norm, state_physical, Counters, IterationTrace, SolveReport, SolveStatus,
    SolverOptions, TraceEntry, DIVERGENCE_NORM,
};
use crate::linalg::lu_factorize;
use crate::pfcore::{jacobian, mismatch, PfProblem, StateVector};
use std::time::Instant;

enum StageFail {
    Singular,
    NonFinite,
}

/// `-J(v)^{-1} g(v)` for a given mismatch vector (one LU, one solve).
fn flow_from_g(
    prob: &PfProblem,
    v: &StateVector,
    g: &[f64],
    counters: &mut Counters,
) -> Result<Vec<f64>, StageFail> {
    let j = jacobian(prob, v).map_err(|_| StageFail::NonFinite)?;
    counters.j_evals += 1;
    let lu = lu_factorize(&j).map_err(|_| StageFail::Singular)?;
    counters.lu_facts += 1;
    let d = lu.solve(g);
    if d.iter().any(|x| !x.is_finite()) {
        return Err(StageFail::NonFinite);
    }
    Ok(d.into_iter().map(|x| -x).collect())
}

fn flow(
    prob: &PfProblem,
    v: &StateVector,
    counters: &mut Counters,
) -> Result<Vec<f64>, StageFail> {
    counters.g_evals += 1;
    let g = mismatch(prob, v).map_err(|_| StageFail::NonFinite)?;
    flow_from_g(prob, v, &g, counters)
}

pub fn ecnm_rk4(prob: &PfProblem, y0: &StateVector, opts: &SolverOptions) -> SolveReport {
    let t0 = Instant::now();
    let mut counters = Counters::default();
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut y = y0.clone();
    let h = opts.h0;

    let finish = |status, iterations, trace: Vec<TraceEntry>, y, gn, counters, t0: Instant| SolveReport {
        status,
        iterations,
        trace: IterationTrace { entries: trace },
        final_state: y,
        final_mismatch: gn,
        counters,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };

    counters.g_evals += 1;
    let Ok(mut g) = mismatch(prob, &y) else {
        return finish(SolveStatus::Diverged, 0, trace, y, f64::NAN, counters, t0);
    };
    loop {
        let gn = inf_norm(&g);
        if !gn.is_finite() || gn > DIVERGENCE_NORM {
            return finish(SolveStatus::Diverged, iterations, trace, y, gn, counters, t0);
        }
        if gn <= opts.tol {
            return finish(SolveStatus::Converged, iterations, trace, y, gn, counters, t0);
        }
        if iterations >= opts.max_iter {
            return finish(SolveStatus::MaxIter, iterations, trace, y, gn, counters, t0);
        }

        let step = (|| -> Result<StateVector, StageFail> {
            let k1 = flow_from_g(prob, &y, &g, &mut counters)?;
            let mut v = y.clone();
            axpy(h / 2.0, &k1, &mut v.data);
            let k2 = flow(prob, &v, &mut counters)?;
            let mut v = y.clone();
            axpy(h / 2.0, &k2, &mut v.data);
            let k3 = flow(prob, &v, &mut counters)?;
            let mut v = y.clone();
            axpy(h, &k3, &mut v.data);
            let k4 = flow(prob, &v, &mut counters)?;
            let mut y1 = y.clone();
            axpy(h / 6.0, &k1, &mut y1.data);
            axpy(h / 3.0, &k2, &mut y1.data);
            axpy(h / 3.0, &k3, &mut y1.data);
            axpy(h / 6.0, &k4, &mut y1.data);
            Ok(y1)
        })();

        match step {
            Ok(y1) => {
                y = y1;
                iterations += 1;
                counters.accepted_steps += 1;
                if !state_physical(prob, &y) {
                    trace.push(TraceEntry {
                        iter: iterations,
                        err_inf: f64::INFINITY,
                        h,
                        accepted: true,
                    });
                    return finish(
                        SolveStatus::Diverged,
                        iterations,
                        trace,
                        y,
                        f64::INFINITY,
                        counters,
                        t0,
                    );
                }
                counters.g_evals += 1;
                match mismatch(prob, &y) {
                    Ok(g_new) => {
                        g = g_new;
                        trace.push(TraceEntry {
                            iter: iterations,
                            err_inf: inf_norm(&g),
                            h,
                            accepted: true,
                        });
                    }
                    Err(_) => {
                        return finish(
                            SolveStatus::Diverged,
                            iterations,
                            trace,
                            y,
                            f64::NAN,
                            counters,
                            t0,
                        )
                    }
                }
            }
            Err(StageFail::Singular) => {
                return finish(SolveStatus::Singular, iterations, trace, y, gn, counters, t0)
            }
            Err(StageFail::NonFinite) => {
                return finish(SolveStatus::Diverged, iterations, trace, y, gn, counters, t0)
            }
        }
    }
}
