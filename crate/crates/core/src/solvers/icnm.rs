//! Implicit continuous-Newton: backward Euler on `J(y) dy/dt = -g(y)`,
//! i.e. each outer step solves `J(y1)(y1 - y0) = -h g(y1)` with an inner
//! Newton loop. The variants differ in the inner iteration matrix and how
//! often it is refactorized ("dishonest" reuse trades robustness for LU
//! count):
//!
//! * `Jh` — full matrix `H(u)(x)(u-y0) + (1+h) J(u)`, refactorized every
//!   inner iteration
//! * `J`  — drops the Hessian term: `(1+h) J(u)`, refactorized every inner
//!   iteration
//! * `J1` — `(1+h) J(y0)`, factorized once per outer step and reused
//! * `J0` — `(1+h0) J(y_start)`, factorized once at solver start and reused
//!   for the whole run
//!
//! The step adapts by doubling on inner success (up to `h_max`) and halving
//! with a retry on inner failure.

use super::{
    inf_norm, state_physical, Counters, IterationTrace, SolveReport, SolveStatus, SolverOptions,
    TraceEntry, DIVERGENCE_NORM,
};
use crate::linalg::{lu_factorize, LuFactors, SparseMatrix};
use crate::pfcore::{hessian_action, jacobian, mismatch, PfProblem, StateVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

const MAX_INNER: usize = 20;
const INNER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcnmVariant {
    Jh,
    J,
    J1,
    J0,
}

struct InnerFail;

#[allow(clippy::too_many_arguments)]
fn outer_attempt(
    prob: &PfProblem,
    y: &StateVector,
    h: f64,
    variant: IcnmVariant,
    lu_frozen: Option<&LuFactors>,
    counters: &mut Counters,
) -> Result<(StateVector, Vec<f64>, f64), InnerFail> {
    let mut u = y.clone();
    let mut lu_outer: Option<LuFactors> = None; // J1 cache
    for _ in 0..MAX_INNER {
        counters.g_evals += 1;
        let gu = mismatch(prob, &u).map_err(|_| InnerFail)?;
        let ju = jacobian(prob, &u).map_err(|_| InnerFail)?;
        counters.j_evals += 1;
        let diff: Vec<f64> = u.data.iter().zip(&y.data).map(|(a, b)| a - b).collect();
        let jdiff = ju.matvec(&diff);
        let r: Vec<f64> = jdiff.iter().zip(&gu).map(|(a, g)| a + h * g).collect();
        let gn_u = inf_norm(&gu);
        if inf_norm(&r) <= INNER_TOL * (1.0 + gn_u) {
            return Ok((u, gu, gn_u));
        }

        let step = match variant {
            IcnmVariant::Jh => {
                let w = hessian_action(prob, &u, &diff).map_err(|_| InnerFail)?;
                counters.hz_evals += 1;
                let m = SparseMatrix::scaled_add(1.0 + h, &ju, &w);
                let lu = lu_factorize(&m).map_err(|_| InnerFail)?;
                counters.lu_facts += 1;
                lu.solve(&r)
            }
            IcnmVariant::J => {
                let m = ju.scale(1.0 + h);
                let lu = lu_factorize(&m).map_err(|_| InnerFail)?;
                counters.lu_facts += 1;
                lu.solve(&r)
            }
            IcnmVariant::J1 => {
                if lu_outer.is_none() {
                    let m = ju.scale(1.0 + h);
                    lu_outer = Some(lu_factorize(&m).map_err(|_| InnerFail)?);
                    counters.lu_facts += 1;
                }
                lu_outer.as_ref().unwrap().solve(&r)
            }
            IcnmVariant::J0 => lu_frozen.ok_or(InnerFail)?.solve(&r),
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(InnerFail);
        }
        for (ui, si) in u.data.iter_mut().zip(&step) {
            *ui -= si;
        }
        if !state_physical(prob, &u) {
            return Err(InnerFail);
        }
    }
    Err(InnerFail)
}

pub fn icnm(
    prob: &PfProblem,
    y0: &StateVector,
    opts: &SolverOptions,
    variant: IcnmVariant,
) -> SolveReport {
    let t0 = Instant::now();
    let mut counters = Counters::default();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut iterations = 0usize;
    let mut y = y0.clone();
    let mut h = opts.h0;
    let mut attempt_idx = 0usize;

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

    // the dishonest-J0 policy freezes this factorization for the whole run
    let lu_frozen = if variant == IcnmVariant::J0 {
        let Ok(j) = jacobian(prob, &y) else {
            return finish(SolveStatus::Diverged, 0, trace, y, inf_norm(&g), counters, t0);
        };
        counters.j_evals += 1;
        let m = j.scale(1.0 + h);
        match lu_factorize(&m) {
            Ok(lu) => {
                counters.lu_facts += 1;
                Some(lu)
            }
            Err(_) => {
                return finish(
                    SolveStatus::Singular,
                    0,
                    trace,
                    y,
                    inf_norm(&g),
                    counters,
                    t0,
                )
            }
        }
    } else {
        None
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

        attempt_idx += 1;
        match outer_attempt(prob, &y, h, variant, lu_frozen.as_ref(), &mut counters) {
            Ok((u, gu, gn_u)) => {
                y = u;
                g = gu;
                iterations += 1;
                counters.accepted_steps += 1;
                trace.push(TraceEntry { iter: attempt_idx, err_inf: gn_u, h, accepted: true });
                h = (2.0 * h).min(opts.h_max);
            }
            Err(InnerFail) => {
                counters.rejected_steps += 1;
                trace.push(TraceEntry { iter: attempt_idx, err_inf: gn, h, accepted: false });
                h *= 0.5;
                if h < opts.h_min {
                    return finish(SolveStatus::MaxIter, iterations, trace, y, gn, counters, t0);
                }
            }
        }
    }
}
