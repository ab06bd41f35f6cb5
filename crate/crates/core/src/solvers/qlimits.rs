//! Reactive-limit enforcement: after an inner solve converges, any PV bus
//! whose total generator reactive output violates its limits is converted
//! to PQ with the injection pinned at the violated limit, and the power
//! flow is rerun (warm-started from the previous solution) until no
//! violations remain.

use super::{solve_with, Method, SolveReport, SolverOptions};
use crate::caseio::{BusType, NetworkCase};
use crate::pfcore::{initial_state, PfError, PfProblem, StartMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Comparison slack when testing limits, in MVAr.
const Q_TOL_MVAR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QlimBound {
    Max,
    Min,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QlimConversion {
    pub bus_id: i64,
    pub bound: QlimBound,
    /// total reactive output demanded of the bus's generators before
    /// conversion, MVAr
    pub qg_mvar: f64,
    pub round: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QlimReport {
    pub report: SolveReport,
    pub conversions: Vec<QlimConversion>,
    pub rounds: usize,
}

#[derive(Debug, Error)]
pub enum QlimError {
    #[error("bus-type switching did not settle after {rounds} rounds")]
    CycleDetected { rounds: usize, last: Box<SolveReport> },
    #[error(transparent)]
    Problem(#[from] PfError),
}

/// Run `method` on `case`, converting limit-violating PV buses to PQ and
/// re-solving until the bus types settle.
pub fn enforce_q_limits(
    method: Method,
    case: &NetworkCase,
    opts: &SolverOptions,
    start: StartMode,
) -> Result<QlimReport, QlimError> {
    let mut work = case.clone();
    let mut conversions: Vec<QlimConversion> = Vec::new();
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let pv_count = work.buses.iter().filter(|b| b.btype == BusType::Pv).count();
    let max_rounds = pv_count + 2;
    let mut last_report: Option<SolveReport> = None;

    for round in 1..=max_rounds {
        let prob = PfProblem::from_case(&work)?;
        let y0 = match &warm {
            Some((theta, vm)) => prob.pack(theta, vm),
            None => initial_state(&prob, &work, start),
        };
        let report = solve_with(method, &prob, &y0, opts);
        if !report.converged() {
            return Ok(QlimReport { report, conversions, rounds: round });
        }

        let (theta, vm) = prob.unpack(&report.final_state);
        let (_, q_inj) = prob.injections(&theta, &vm);
        let mut violations: Vec<(usize, QlimBound, f64, f64)> = Vec::new();
        for (i, bus) in work.buses.iter().enumerate() {
            if bus.btype != BusType::Pv {
                continue;
            }
            let mut qmax_t = 0.0;
            let mut qmin_t = 0.0;
            let mut any = false;
            for g in work.gens_at(i) {
                qmax_t += g.qmax;
                qmin_t += g.qmin;
                any = true;
            }
            if !any {
                continue;
            }
            // total reactive the generators must supply to hold the setpoint
            let qg = q_inj[i] * work.base_mva + bus.qd;
            if qg > qmax_t + Q_TOL_MVAR {
                violations.push((i, QlimBound::Max, qg, qmax_t));
            } else if qg < qmin_t - Q_TOL_MVAR {
                violations.push((i, QlimBound::Min, qg, qmin_t));
            }
        }

        if violations.is_empty() {
            return Ok(QlimReport { report, conversions, rounds: round });
        }

        for (i, bound, qg, _) in violations {
            let bus_id = work.buses[i].id;
            work.buses[i].btype = BusType::Pq;
            for g in work.gens.iter_mut().filter(|g| g.bus == bus_id && g.status == 1) {
                g.qg = match bound {
                    QlimBound::Max => g.qmax,
                    QlimBound::Min => g.qmin,
                };
            }
            conversions.push(QlimConversion { bus_id, bound, qg_mvar: qg, round });
        }
        warm = Some((theta, vm));
        last_report = Some(report);
    }

    Err(QlimError::CycleDetected {
        rounds: max_rounds,
        last: Box::new(last_report.expect("at least one round ran")),
    })
}
