//! Iteration engines: Newton-Raphson, Iwamoto's optimal multiplier, the
//! explicit continuous-Newton method (RK4 on the Newton flow), implicit
//! continuous-Newton with four Jacobian-reuse policies, and the
//! semi-implicit Rosenbrock engine. Plus the reactive-limit outer loop.
//!
//! Every engine shares the same stopping rules: converged when the mismatch
//! infinity norm drops to `tol`, diverged when it exceeds 1e10 or turns
//! non-finite (or a PQ magnitude collapses through zero), `max_iter` when
//! the iteration budget runs out, and `singular` when factorization fails
//! beyond recovery.

mod ecnm;
mod icnm;
mod newton;
mod qlimits;
mod sicnm;

pub use ecnm::ecnm_rk4;
pub use icnm::{icnm, IcnmVariant};
pub use newton::{iwamoto, newton_raphson, optimal_multiplier};
pub use qlimits::{enforce_q_limits, QlimBound, QlimConversion, QlimError, QlimReport};
pub use sicnm::{dae_init, sicnm_solve, sicnm_step, step_size_update, SicnmStep, StepControl, StepFail};

use crate::pfcore::{PfProblem, StateVector};
use crate::tableau::{rodas3d, rodas4};
use serde::{Deserialize, Serialize};

/// Mismatch norms beyond this value count as divergence.
pub const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Diverged,
    MaxIter,
    Singular,
}

impl SolveStatus {
    /// Table-style cell label: "D." for divergent, "NC." for not convergent
    /// within the iteration budget, "S." for a fatal factorization failure.
    pub fn table_label(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Diverged => "D.",
            SolveStatus::MaxIter => "NC.",
            SolveStatus::Singular => "S.",
        }
    }
}

/// Evaluation and factorization tallies for one solver run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub g_evals: u64,
    pub j_evals: u64,
    pub hz_evals: u64,
    pub lu_facts: u64,
    pub rejected_steps: u64,
    pub accepted_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub err_inf: f64,
    pub h: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub entries: Vec<TraceEntry>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// accepted steps for the step-controlled engines, outer steps for the
    /// implicit method, plain iterations for Newton-type methods
    pub iterations: usize,
    pub trace: IterationTrace,
    pub final_state: StateVector,
    pub final_mismatch: f64,
    pub counters: Counters,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// mismatch infinity-norm target
    pub tol: f64,
    pub max_iter: usize,
    /// initial step size for the continuous methods
    pub h0: f64,
    /// embedded-controller absolute and relative tolerances
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub safety: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-5,
            max_iter: 1000,
            h0: 0.1,
            atol: 0.1,
            rtol: 0.1,
            h_min: 1e-8,
            h_max: 10.0,
            safety: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    NewtonRaphson,
    Iwamoto,
    EcnmRk4,
    Icnm(IcnmVariant),
    SicnmRodas4,
    SicnmRodas3d,
}

impl Method {
    pub fn from_id(id: &str) -> Option<Method> {
        match id {
            "m1" => Some(Method::NewtonRaphson),
            "m2" => Some(Method::Iwamoto),
            "m3" => Some(Method::EcnmRk4),
            "m7-jh" => Some(Method::Icnm(IcnmVariant::Jh)),
            "m7-j" => Some(Method::Icnm(IcnmVariant::J)),
            "m7-j1" => Some(Method::Icnm(IcnmVariant::J1)),
            "m7-j0" => Some(Method::Icnm(IcnmVariant::J0)),
            "m8-rodas4" => Some(Method::SicnmRodas4),
            "m8-rodas3d" => Some(Method::SicnmRodas3d),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Method::NewtonRaphson => "m1",
            Method::Iwamoto => "m2",
            Method::EcnmRk4 => "m3",
            Method::Icnm(IcnmVariant::Jh) => "m7-jh",
            Method::Icnm(IcnmVariant::J) => "m7-j",
            Method::Icnm(IcnmVariant::J1) => "m7-j1",
            Method::Icnm(IcnmVariant::J0) => "m7-j0",
            Method::SicnmRodas4 => "m8-rodas4",
            Method::SicnmRodas3d => "m8-rodas3d",
        }
    }

    pub fn all() -> [Method; 9] {
        [
            Method::NewtonRaphson,
            Method::Iwamoto,
            Method::EcnmRk4,
            Method::Icnm(IcnmVariant::Jh),
            Method::Icnm(IcnmVariant::J),
            Method::Icnm(IcnmVariant::J1),
            Method::Icnm(IcnmVariant::J0),
            Method::SicnmRodas4,
            Method::SicnmRodas3d,
        ]
    }

    /// Method-specific defaults: the implicit method needs a cautious
    /// initial step (0.01) to stay convergent, while the explicit method
    /// classically runs at the full Newton step (h = 1).
    pub fn default_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        match self {
            Method::Icnm(_) => o.h0 = 0.01,
            Method::EcnmRk4 => o.h0 = 1.0,
            _ => {}
        }
        o
    }
}

/// Dispatch a solve to the selected engine.
pub fn solve_with(
    method: Method,
    prob: &PfProblem,
    y0: &StateVector,
    opts: &SolverOptions,
) -> SolveReport {
    match method {
        Method::NewtonRaphson => newton_raphson(prob, y0, opts),
        Method::Iwamoto => iwamoto(prob, y0, opts),
        Method::EcnmRk4 => ecnm_rk4(prob, y0, opts),
        Method::Icnm(variant) => icnm(prob, y0, opts, variant),
        Method::SicnmRodas4 => sicnm_solve(prob, y0, opts, &rodas4()),
        Method::SicnmRodas3d => sicnm_solve(prob, y0, opts, &rodas3d()),
    }
}

pub(crate) use crate::linalg::inf_norm;

/// Finite state with strictly positive PQ magnitudes.
pub(crate) fn state_physical(prob: &PfProblem, y: &StateVector) -> bool {
    if y.data.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for bus in 0..prob.idx.n_buses() {
        if let Some(c) = prob.idx.vm_col(bus) {
            if y.data[c] <= 0.0 {
                return false;
            }
        }
    }
    true
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip() {
        for m in Method::all() {
            assert_eq!(Method::from_id(m.id()), Some(m));
        }
        assert_eq!(Method::from_id("m9"), None);
    }

    #[test]
    fn icnm_default_step_is_cautious() {
        assert_eq!(Method::Icnm(IcnmVariant::Jh).default_options().h0, 0.01);
        assert_eq!(Method::NewtonRaphson.default_options().h0, 0.1);
    }

    #[test]
    fn status_labels_follow_table_taxonomy() {
        assert_eq!(SolveStatus::Diverged.table_label(), "D.");
        assert_eq!(SolveStatus::MaxIter.table_label(), "NC.");
    }
}
