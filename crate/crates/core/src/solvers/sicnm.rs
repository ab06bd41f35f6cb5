//! The semi-implicit continuous-Newton engine.
//!
//! The Newton flow is recast as the index-1 DAE
//!
//! ```text
//!   dy/dt = z
//!   0     = J(y) z + g(y),     z(0) = -J(y0)^{-1} g(y0)
//! ```
//!
//! and integrated to its equilibrium with a stiffly accurate Rosenbrock
//! method. Each step linearizes once at `(y0, z0)`; the 2n-by-2n stage
//! matrix is handled by the block elimination in [`crate::linalg`], so one
//! n-by-n LU factorization per step is the whole factorization cost. The
//! embedded solution from the same stages drives the step-size controller.

use super::{
    axpy, inf_norm, state_physical, Counters, IterationTrace, SolveReport, SolveStatus,
    SolverOptions, TraceEntry, DIVERGENCE_NORM,
};
use crate::linalg::{build_stage_system, lu_factorize, SparseMatrix};
use crate::pfcore::{hessian_action, jacobian, mismatch, DaeState, PfProblem, StateVector};
use crate::tableau::RosenbrockTableau;
use std::time::Instant;

/// A stage-system failure; the caller rejects the step and halves h.
#[derive(Debug)]
pub enum StepFail {
    Singular,
    NonFinite,
}

/// Result of one Rosenbrock step on the DAE.
pub struct SicnmStep {
    pub y1: StateVector,
    pub z1: Vec<f64>,
    /// componentwise embedded-error estimates |y_hat - y1|, |z_hat - z1|
    pub err_y: Vec<f64>,
    pub err_z: Vec<f64>,
}

/// Consistent DAE initialization: one mismatch, one Jacobian, one LU.
/// Returns the state plus the mismatch vector so the caller can reuse it
/// for its first convergence check.
pub fn dae_init(
    prob: &PfProblem,
    y: &StateVector,
    counters: &mut Counters,
) -> Result<(DaeState, Vec<f64>), StepFail> {
    counters.g_evals += 1;
    let g = mismatch(prob, y).map_err(|_| StepFail::NonFinite)?;
    let j = jacobian(prob, y).map_err(|_| StepFail::NonFinite)?;
    counters.j_evals += 1;
    let lu = lu_factorize(&j).map_err(|_| StepFail::Singular)?;
    counters.lu_facts += 1;
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let z = lu.solve(&neg_g);
    // consistency contract: J z = -g to working accuracy
    let jz = j.matvec(&z);
    let resid = inf_norm(&jz.iter().zip(&g).map(|(a, b)| a + b).collect::<Vec<_>>());
    if !resid.is_finite() || resid > 1e-10 * (1.0 + inf_norm(&g)) {
        return Err(StepFail::Singular);
    }
    Ok((DaeState { y: y.clone(), z }, g))
}

/// One Rosenbrock step from `(y0, z0)` with step size `h`.
///
/// Assembles `j22 = J(y0)` and `j21 = H(y0)(x)z0 + J(y0)`, factorizes the
/// Schur block once, then runs the explicit stage recursion: stage i solves
/// the block system with right-hand side
/// `[h*w_i; h*(J(v_i) w_i + g(v_i))] + h*Jtilde0 * sum_j gamma_ij [k_j; l_j]`
/// where `(v_i, w_i)` accumulate the alpha-weighted stages. The embedded
/// pair is the last stage's argument, so the error estimate costs nothing
/// extra.
pub fn sicnm_step(
    prob: &PfProblem,
    state: &DaeState,
    h: f64,
    tab: &RosenbrockTableau,
    counters: &mut Counters,
) -> Result<SicnmStep, StepFail> {
    let n = prob.n_state();
    let s = tab.s;
    let j22 = jacobian(prob, &state.y).map_err(|_| StepFail::NonFinite)?;
    counters.j_evals += 1;
    let w = hessian_action(prob, &state.y, &state.z).map_err(|_| StepFail::NonFinite)?;
    counters.hz_evals += 1;
    let j21 = SparseMatrix::scaled_add(1.0, &w, &j22);
    counters.lu_facts += 1;
    let sys = build_stage_system(h, tab.gamma, j21, j22).map_err(|_| StepFail::Singular)?;

    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut ls: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut y_hat = vec![0.0; n];
    let mut z_hat = vec![0.0; n];
    for i in 0..s {
        let mut vy = state.y.data.clone();
        let mut wz = state.z.clone();
        let mut cy = vec![0.0; n];
        let mut cz = vec![0.0; n];
        for j in 0..i {
            axpy(tab.alpha[i][j], &ks[j], &mut vy);
            axpy(tab.alpha[i][j], &ls[j], &mut wz);
            axpy(tab.gamma_ij[i][j], &ks[j], &mut cy);
            axpy(tab.gamma_ij[i][j], &ls[j], &mut cz);
        }
        if i == s - 1 {
            // stiff accuracy: the final stage's argument is the embedded pair
            y_hat.copy_from_slice(&vy);
            z_hat.copy_from_slice(&wz);
        }
        let v = StateVector { data: vy };
        counters.g_evals += 1;
        let gv = mismatch(prob, &v).map_err(|_| StepFail::NonFinite)?;
        let jw = if i == 0 {
            sys.j22().matvec(&wz)
        } else {
            let jv = jacobian(prob, &v).map_err(|_| StepFail::NonFinite)?;
            counters.j_evals += 1;
            jv.matvec(&wz)
        };
        let j21cy = sys.j21().matvec(&cy);
        let j22cz = sys.j22().matvec(&cz);
        let rhs_top: Vec<f64> = (0..n).map(|r| h * (wz[r] + cz[r])).collect();
        let rhs_bot: Vec<f64> =
            (0..n).map(|r| h * (jw[r] + gv[r] + j21cy[r] + j22cz[r])).collect();
        let (k, l) = sys.stage_solve(&rhs_top, &rhs_bot);
        if k.iter().chain(&l).any(|v| !v.is_finite()) {
            return Err(StepFail::NonFinite);
        }
        ks.push(k);
        ls.push(l);
    }

    let mut y1 = state.y.data.clone();
    let mut z1 = state.z.clone();
    for i in 0..s {
        axpy(tab.b[i], &ks[i], &mut y1);
        axpy(tab.b[i], &ls[i], &mut z1);
    }
    let err_y: Vec<f64> = (0..n).map(|r| (y_hat[r] - y1[r]).abs()).collect();
    let err_z: Vec<f64> = (0..n).map(|r| (z_hat[r] - z1[r]).abs()).collect();
    Ok(SicnmStep { y1: StateVector { data: y1 }, z1, err_y, err_z })
}

/// Outcome of the embedded step-size formula.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub h_new: f64,
    pub error_ratio: f64,
    pub accept: bool,
}

/// Embedded error control:
/// `ratio = || err / (atol + rtol*|x1|) ||_inf` over the stacked `[y1; z1]`,
/// `h_new = safety * h * ratio^(-1/q)` clamped by the growth cap `2h` and
/// `[h_min, h_max]`. Zero estimated error jumps straight to `h_max`.
/// The step is accepted iff `ratio <= 1`.
pub fn step_size_update(
    h: f64,
    err_y: &[f64],
    err_z: &[f64],
    y1: &StateVector,
    z1: &[f64],
    opts: &SolverOptions,
    q: u32,
) -> StepControl {
    let ratio_of = |err: &[f64], val: &[f64]| {
        err.iter()
            .zip(val)
            .map(|(e, v)| e / (opts.atol + opts.rtol * v.abs()))
            .fold(0.0f64, f64::max)
    };
    let ratio = ratio_of(err_y, &y1.data).max(ratio_of(err_z, z1));
    let h_new = if ratio == 0.0 {
        opts.h_max
    } else {
        (opts.safety * h * ratio.powf(-1.0 / q as f64)).min(2.0 * h).min(opts.h_max)
    };
    StepControl { h_new: h_new.max(opts.h_min), error_ratio: ratio, accept: ratio <= 1.0 }
}

/// Integrate the DAE to equilibrium with accept/reject step control.
/// Accepted steps are the reported iteration count.
pub fn sicnm_solve(
    prob: &PfProblem,
    y0: &StateVector,
    opts: &SolverOptions,
    tab: &RosenbrockTableau,
) -> SolveReport {
    let t0 = Instant::now();
    let mut counters = Counters::default();
    let mut trace: Vec<TraceEntry> = Vec::new();

    let finish = |status,
                  iterations,
                  trace: Vec<TraceEntry>,
                  y: StateVector,
                  gn: f64,
                  counters,
                  t0: Instant| SolveReport {
        status,
        iterations,
        trace: IterationTrace { entries: trace },
        final_state: y,
        final_mismatch: gn,
        counters,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };

    let (mut dae, g0) = match dae_init(prob, y0, &mut counters) {
        Ok(x) => x,
        Err(StepFail::Singular) => {
            return finish(SolveStatus::Singular, 0, trace, y0.clone(), f64::NAN, counters, t0)
        }
        Err(StepFail::NonFinite) => {
            return finish(SolveStatus::Diverged, 0, trace, y0.clone(), f64::NAN, counters, t0)
        }
    };
    let mut gn = inf_norm(&g0);
    if gn <= opts.tol {
        return finish(SolveStatus::Converged, 0, trace, dae.y, gn, counters, t0);
    }

    let mut h = opts.h0.clamp(opts.h_min, opts.h_max);
    let mut attempt_idx = 0usize;
    loop {
        if !gn.is_finite() || gn > DIVERGENCE_NORM {
            return finish(
                SolveStatus::Diverged,
                counters.accepted_steps as usize,
                trace,
                dae.y,
                gn,
                counters,
                t0,
            );
        }
        if counters.accepted_steps as usize >= opts.max_iter {
            return finish(
                SolveStatus::MaxIter,
                counters.accepted_steps as usize,
                trace,
                dae.y,
                gn,
                counters,
                t0,
            );
        }

        attempt_idx += 1;
        let reject = |h: f64| -> Option<f64> {
            // None means the controller cannot shrink further
            if h <= opts.h_min {
                None
            } else {
                Some((0.5 * h).max(opts.h_min))
            }
        };
        match sicnm_step(prob, &dae, h, tab, &mut counters) {
            Err(_) => {
                counters.rejected_steps += 1;
                trace.push(TraceEntry { iter: attempt_idx, err_inf: gn, h, accepted: false });
                match reject(h) {
                    Some(h2) => h = h2,
                    None => {
                        return finish(
                            SolveStatus::Singular,
                            counters.accepted_steps as usize,
                            trace,
                            dae.y,
                            gn,
                            counters,
                            t0,
                        )
                    }
                }
            }
            Ok(step) => {
                let ctl =
                    step_size_update(h, &step.err_y, &step.err_z, &step.y1, &step.z1, opts, tab.order);
                if ctl.accept && state_physical(prob, &step.y1) {
                    counters.accepted_steps += 1;
                    counters.g_evals += 1;
                    let g = match mismatch(prob, &step.y1) {
                        Ok(g) => g,
                        Err(_) => {
                            return finish(
                                SolveStatus::Diverged,
                                counters.accepted_steps as usize,
                                trace,
                                step.y1,
                                f64::NAN,
                                counters,
                                t0,
                            )
                        }
                    };
                    gn = inf_norm(&g);
                    dae = DaeState { y: step.y1, z: step.z1 };
                    trace.push(TraceEntry { iter: attempt_idx, err_inf: gn, h, accepted: true });
                    if gn <= opts.tol {
                        return finish(
                            SolveStatus::Converged,
                            counters.accepted_steps as usize,
                            trace,
                            dae.y,
                            gn,
                            counters,
                            t0,
                        );
                    }
                    h = ctl.h_new;
                } else {
                    counters.rejected_steps += 1;
                    trace.push(TraceEntry { iter: attempt_idx, err_inf: gn, h, accepted: false });
                    let next = if ctl.accept {
                        // controller liked it but the state went unphysical
                        reject(h)
                    } else if h <= opts.h_min {
                        None
                    } else {
                        Some(ctl.h_new.max(opts.h_min))
                    };
                    match next {
                        Some(h2) => h = h2,
                        None => {
                            return finish(
                                SolveStatus::Singular,
                                counters.accepted_steps as usize,
                                trace,
                                dae.y,
                                gn,
                                counters,
                                t0,
                            )
                        }
                    }
                }
            }
        }
    }
}
