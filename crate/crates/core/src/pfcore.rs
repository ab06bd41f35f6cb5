//! Power-flow residual `g(y)`, its Jacobian `J(y)`, and the Hessian-tensor
//! action `H(y) (x) z` needed by the semi-implicit engine's block Jacobian.
//!
//! Polar coordinates throughout, MATPOWER sign convention
//! `g = S_calc - S_sched`, so the Jacobian matches MATPOWER's and iteration
//! traces are directly comparable.

use crate::caseio::{BusType, NetworkCase};
use crate::linalg::SparseMatrix;
use crate::network::{build_ybus, index_states, NetworkError, StateIndexing, YBus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Initial-state recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartMode {
    /// all angles 0, all PQ magnitudes 1
    #[serde(rename = "flat")]
    Flat,
    /// angles and magnitudes from the case tables
    #[serde(rename = "case")]
    CaseValues,
}

/// Immutable problem data: admittances, indexing, and setpoints.
#[derive(Debug, Clone)]
pub struct PfProblem {
    pub ybus: YBus,
    pub idx: StateIndexing,
    /// per-bus net scheduled injections, p.u. (generation minus load)
    pub p_sched: Vec<f64>,
    pub q_sched: Vec<f64>,
    /// per-bus fixed magnitudes; meaningful for slack and PV buses
    pub v_setpoint: Vec<f64>,
    pub slack_angle: f64,
}

/// The unknown vector: `[theta(pv+pq); V(pq)]` per [`StateIndexing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub data: Vec<f64>,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl PfProblem {
    pub fn from_case(case: &NetworkCase) -> Result<Self, PfError> {
        let ybus = build_ybus(case)?;
        let idx = index_states(case)?;
        let n = case.buses.len();
        let base = case.base_mva;
        let mut p_sched = vec![0.0; n];
        let mut q_sched = vec![0.0; n];
        let mut v_setpoint = vec![1.0; n];
        for (i, bus) in case.buses.iter().enumerate() {
            let mut pg = 0.0;
            let mut qg = 0.0;
            let mut vg = None;
            for g in case.gens_at(i) {
                pg += g.pg;
                qg += g.qg;
                vg.get_or_insert(g.vg);
            }
            p_sched[i] = (pg - bus.pd) / base;
            q_sched[i] = (qg - bus.qd) / base;
            // generator setpoint wins over the bus-table magnitude
            v_setpoint[i] = match bus.btype {
                BusType::Pq => bus.vm,
                _ => vg.unwrap_or(bus.vm),
            };
        }
        let slack_angle = case.buses[idx.slack].va.to_radians();
        Ok(PfProblem { ybus, idx, p_sched, q_sched, v_setpoint, slack_angle })
    }

    pub fn n_state(&self) -> usize {
        self.idx.n_state
    }

    /// Expand a state vector into per-bus angle and magnitude arrays.
    pub fn unpack(&self, y: &StateVector) -> (Vec<f64>, Vec<f64>) {
        let n = self.idx.n_buses();
        let mut theta = vec![0.0; n];
        let mut vm = vec![0.0; n];
        for bus in 0..n {
            theta[bus] = match self.idx.theta_col(bus) {
                Some(c) => y.data[c],
                None => self.slack_angle,
            };
            vm[bus] = match self.idx.vm_col(bus) {
                Some(c) => y.data[c],
                None => self.v_setpoint[bus],
            };
        }
        (theta, vm)
    }

    /// Pack per-bus angles/magnitudes into a state vector.
    pub fn pack(&self, theta: &[f64], vm: &[f64]) -> StateVector {
        let mut data = vec![0.0; self.n_state()];
        for bus in 0..self.idx.n_buses() {
            if let Some(c) = self.idx.theta_col(bus) {
                data[c] = theta[bus];
            }
            if let Some(c) = self.idx.vm_col(bus) {
                data[c] = vm[bus];
            }
        }
        StateVector { data }
    }

    /// Complex power injections (P_i, Q_i) at every bus for the given state.
    pub fn injections(&self, theta: &[f64], vm: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.idx.n_buses();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (vi, ti) = (vm[i], theta[i]);
            let mut pi = 0.0;
            let mut qi = 0.0;
            for (k, y) in self.ybus.matrix.row(i) {
                let (g, b) = (y.re, y.im);
                let d = ti - theta[k];
                let (s, c) = d.sin_cos();
                pi += vm[k] * (g * c + b * s);
                qi += vm[k] * (g * s - b * c);
            }
            p[i] = vi * pi;
            q[i] = vi * qi;
        }
        (p, q)
    }
}

fn check_finite(y: &StateVector, what: &'static str) -> Result<(), PfError> {
    if y.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PfError::NonFinite(what))
    }
}

/// Mismatch vector `g(y) = [dP(pv+pq); dQ(pq)]` with
/// `dP_i = P_calc,i - p_sched,i` and analogously for Q.
pub fn mismatch(prob: &PfProblem, y: &StateVector) -> Result<Vec<f64>, PfError> {
    check_finite(y, "mismatch input")?;
    let (theta, vm) = prob.unpack(y);
    let (p, q) = prob.injections(&theta, &vm);
    let mut g = Vec::with_capacity(prob.n_state());
    for bus in prob.idx.p_rows() {
        g.push(p[bus] - prob.p_sched[bus]);
    }
    for bus in prob.idx.q_rows() {
        g.push(q[bus] - prob.q_sched[bus]);
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(PfError::NonFinite("mismatch output"));
    }
    Ok(g)
}

/// Analytic Jacobian `dg/dy` in the module's state ordering.
pub fn jacobian(prob: &PfProblem, y: &StateVector) -> Result<SparseMatrix<f64>, PfError> {
    check_finite(y, "jacobian input")?;
    let (theta, vm) = prob.unpack(y);
    let (p, q) = prob.injections(&theta, &vm);
    let idx = &prob.idx;
    let n_ang = idx.n_angles();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * prob.ybus.matrix.nnz());

    for (row, bus) in idx.p_rows().enumerate() {
        let (vi, ti) = (vm[bus], theta[bus]);
        for (k, yv) in prob.ybus.matrix.row(bus) {
            let (g, b) = (yv.re, yv.im);
            if k == bus {
                // dP_i/dtheta_i = -Q_i - B_ii V_i^2 ; dP_i/dV_i = P_i/V_i + G_ii V_i
                if let Some(c) = idx.theta_col(bus) {
                    trip.push((row, c, -q[bus] - b * vi * vi));
                }
                if let Some(c) = idx.vm_col(bus) {
                    trip.push((row, c, p[bus] / vi + g * vi));
                }
            } else {
                let d = ti - theta[k];
                let (s, c) = d.sin_cos();
                let t_ik = g * c + b * s;
                let u_ik = g * s - b * c;
                if let Some(cc) = idx.theta_col(k) {
                    trip.push((row, cc, vi * vm[k] * u_ik));
                }
                if let Some(cc) = idx.vm_col(k) {
                    trip.push((row, cc, vi * t_ik));
                }
            }
        }
    }
    for (qrow, bus) in idx.q_rows().enumerate() {
        let row = n_ang + qrow;
        let (vi, ti) = (vm[bus], theta[bus]);
        for (k, yv) in prob.ybus.matrix.row(bus) {
            let (g, b) = (yv.re, yv.im);
            if k == bus {
                // dQ_i/dtheta_i = P_i - G_ii V_i^2 ; dQ_i/dV_i = Q_i/V_i - B_ii V_i
                if let Some(c) = idx.theta_col(bus) {
                    trip.push((row, c, p[bus] - g * vi * vi));
                }
                if let Some(c) = idx.vm_col(bus) {
                    trip.push((row, c, q[bus] / vi - b * vi));
                }
            } else {
                let d = ti - theta[k];
                let (s, c) = d.sin_cos();
                let t_ik = g * c + b * s;
                let u_ik = g * s - b * c;
                if let Some(cc) = idx.theta_col(k) {
                    trip.push((row, cc, -vi * vm[k] * t_ik));
                }
                if let Some(cc) = idx.vm_col(k) {
                    trip.push((row, cc, vi * u_ik));
                }
            }
        }
    }
    let n = prob.n_state();
    let j = SparseMatrix::from_triplets(n, n, &trip);
    if j.iter().any(|(_, _, v)| !v.is_finite()) {
        return Err(PfError::NonFinite("jacobian output"));
    }
    Ok(j)
}

/// The matrix `W = d[J(y) z]/dy`, assembled analytically from the second
/// partials of the injection equations. `W` is linear in `z` and shares the
/// Jacobian's sparsity pattern.
pub fn hessian_action(
    prob: &PfProblem,
    y: &StateVector,
    z: &[f64],
) -> Result<SparseMatrix<f64>, PfError> {
    check_finite(y, "hessian_action input")?;
    assert_eq!(z.len(), prob.n_state(), "hessian_action z length");
    if z.iter().any(|v| !v.is_finite()) {
        return Err(PfError::NonFinite("hessian_action direction"));
    }
    let (theta, vm) = prob.unpack(y);
    let idx = &prob.idx;
    let n_ang = idx.n_angles();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * prob.ybus.matrix.nnz());

    let zval = |col: Option<usize>| col.map_or(0.0, |c| z[c]);

    for (prow, bus) in idx.p_rows().enumerate() {
        let row = prow;
        let (vi, ti) = (vm[bus], theta[bus]);
        let cti = idx.theta_col(bus);
        let cvi = idx.vm_col(bus);
        let (zti, zvi) = (zval(cti), zval(cvi));
        for (k, yv) in prob.ybus.matrix.row(bus) {
            let (g, b) = (yv.re, yv.im);
            if k == bus {
                // self term V_i^2 G_ii: d2/dVi2 = 2 G_ii
                if let Some(c) = cvi {
                    trip.push((row, c, 2.0 * g * zvi));
                }
                continue;
            }
            let vk = vm[k];
            let d = ti - theta[k];
            let (s, c) = d.sin_cos();
            let t_ik = g * c + b * s;
            let u_ik = g * s - b * c;
            let ctk = idx.theta_col(k);
            let cvk = idx.vm_col(k);
            let (ztk, zvk) = (zval(ctk), zval(cvk));
            let vivk = vi * vk;
            // pair term f = Vi Vk T_ik of the P_i equation
            if let Some(cc) = cti {
                trip.push((
                    row,
                    cc,
                    -vivk * t_ik * zti + vivk * t_ik * ztk - vk * u_ik * zvi - vi * u_ik * zvk,
                ));
            }
            if let Some(cc) = ctk {
                trip.push((
                    row,
                    cc,
                    vivk * t_ik * zti - vivk * t_ik * ztk + vk * u_ik * zvi + vi * u_ik * zvk,
                ));
            }
            if let Some(cc) = cvi {
                trip.push((row, cc, -vk * u_ik * zti + vk * u_ik * ztk + t_ik * zvk));
            }
            if let Some(cc) = cvk {
                trip.push((row, cc, -vi * u_ik * zti + vi * u_ik * ztk + t_ik * zvi));
            }
        }
    }
    for (qrow, bus) in idx.q_rows().enumerate() {
        let row = n_ang + qrow;
        let (vi, ti) = (vm[bus], theta[bus]);
        let cti = idx.theta_col(bus);
        let cvi = idx.vm_col(bus);
        let (zti, zvi) = (zval(cti), zval(cvi));
        for (k, yv) in prob.ybus.matrix.row(bus) {
            let (g, b) = (yv.re, yv.im);
            if k == bus {
                // self term -V_i^2 B_ii: d2/dVi2 = -2 B_ii
                if let Some(c) = cvi {
                    trip.push((row, c, -2.0 * b * zvi));
                }
                continue;
            }
            let vk = vm[k];
            let d = ti - theta[k];
            let (s, c) = d.sin_cos();
            let t_ik = g * c + b * s;
            let u_ik = g * s - b * c;
            let ctk = idx.theta_col(k);
            let cvk = idx.vm_col(k);
            let (ztk, zvk) = (zval(ctk), zval(cvk));
            let vivk = vi * vk;
            // pair term q = Vi Vk U_ik of the Q_i equation
            if let Some(cc) = cti {
                trip.push((
                    row,
                    cc,
                    -vivk * u_ik * zti + vivk * u_ik * ztk + vk * t_ik * zvi + vi * t_ik * zvk,
                ));
            }
            if let Some(cc) = ctk {
                trip.push((
                    row,
                    cc,
                    vivk * u_ik * zti - vivk * u_ik * ztk - vk * t_ik * zvi - vi * t_ik * zvk,
                ));
            }
            if let Some(cc) = cvi {
                trip.push((row, cc, vk * t_ik * zti - vk * t_ik * ztk + u_ik * zvk));
            }
            if let Some(cc) = cvk {
                trip.push((row, cc, vi * t_ik * zti - vi * t_ik * ztk + u_ik * zvi));
            }
        }
    }
    let n = prob.n_state();
    let w = SparseMatrix::from_triplets(n, n, &trip);
    if w.iter().any(|(_, _, v)| !v.is_finite()) {
        return Err(PfError::NonFinite("hessian_action output"));
    }
    Ok(w)
}

/// Build the initial state for a solve.
pub fn initial_state(prob: &PfProblem, case: &NetworkCase, mode: StartMode) -> StateVector {
    let n = prob.idx.n_buses();
    match mode {
        StartMode::Flat => {
            let theta = vec![0.0; n];
            let vm = vec![1.0; n];
            prob.pack(&theta, &vm)
        }
        StartMode::CaseValues => {
            let theta: Vec<f64> = case.buses.iter().map(|b| b.va.to_radians()).collect();
            let vm: Vec<f64> = case.buses.iter().map(|b| b.vm).collect();
            prob.pack(&theta, &vm)
        }
    }
}

/// State plus its DAE companion `z = dy/dt`.
#[derive(Debug, Clone)]
pub struct DaeState {
    pub y: StateVector,
    pub z: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::{BranchRecord, BusRecord, GenRecord, NetworkCase};

    fn bus(id: i64, btype: BusType, pd: f64, qd: f64) -> BusRecord {
        BusRecord {
            id,
            btype,
            pd,
            qd,
            gs: 0.0,
            bs: 0.0,
            vm: 1.0,
            va: 0.0,
            base_kv: 345.0,
            vmax: 1.1,
            vmin: 0.9,
        }
    }

    fn two_bus(pd: f64, qd: f64) -> NetworkCase {
        NetworkCase {
            name: "t".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusType::Slack, 0.0, 0.0), bus(2, BusType::Pq, pd, qd)],
            branches: vec![BranchRecord {
                from_bus: 1,
                to_bus: 2,
                r: 0.0,
                x: 0.1,
                b: 0.0,
                tap: 1.0,
                shift: 0.0,
                status: 1,
            }],
            gens: vec![GenRecord {
                bus: 1,
                pg: 0.0,
                qg: 0.0,
                qmax: 300.0,
                qmin: -300.0,
                vg: 1.0,
                status: 1,
            }],
        }
    }

    #[test]
    fn zero_injection_flat_start_is_exact_fixed_point() {
        let case = two_bus(0.0, 0.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::Flat);
        let g = mismatch(&prob, &y).unwrap();
        assert_eq!(g, vec![0.0, 0.0], "flat zero-load mismatch must vanish exactly");
    }

    #[test]
    fn two_bus_sign_convention() {
        // pd = 50 MW on 100 MVA base -> p_sched = -0.5; at flat start
        // P_calc = 0, so dP = 0 - (-0.5) = +0.5
        let case = two_bus(50.0, 0.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::Flat);
        let g = mismatch(&prob, &y).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_bus_flat_jacobian_is_diagonal_ten() {
        let case = two_bus(50.0, 0.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::Flat);
        let j = jacobian(&prob, &y).unwrap();
        assert!((j.get(0, 0) - 10.0).abs() < 1e-12);
        assert!(j.get(0, 1).abs() < 1e-12);
        assert!(j.get(1, 0).abs() < 1e-12);
        assert!((j.get(1, 1) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_action_zero_direction_is_zero() {
        let case = two_bus(50.0, 20.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::Flat);
        let w = hessian_action(&prob, &y, &[0.0, 0.0]).unwrap();
        assert!(w.iter().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn hessian_action_is_linear_in_z() {
        let case = two_bus(50.0, 20.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = StateVector { data: vec![-0.13, 0.93] };
        let z1 = [0.4, -1.2];
        let z2 = [-0.7, 0.3];
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = (0..2).map(|i| a * z1[i] + b * z2[i]).collect();
        let w1 = hessian_action(&prob, &y, &z1).unwrap();
        let w2 = hessian_action(&prob, &y, &z2).unwrap();
        let wc = hessian_action(&prob, &y, &combo).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let lin = a * w1.get(i, j) + b * w2.get(i, j);
                assert!((wc.get(i, j) - lin).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nonfinite_input_is_rejected() {
        let case = two_bus(50.0, 20.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = StateVector { data: vec![f64::NAN, 1.0] };
        assert!(matches!(mismatch(&prob, &y), Err(PfError::NonFinite(_))));
        assert!(matches!(jacobian(&prob, &y), Err(PfError::NonFinite(_))));
    }

    #[test]
    fn flat_start_has_zero_angles() {
        let case = two_bus(50.0, 20.0);
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::Flat);
        assert_eq!(y.data, vec![0.0, 1.0]);
    }

    #[test]
    fn case_values_start_copies_bus_table() {
        let mut case = two_bus(50.0, 20.0);
        case.buses[1].vm = 0.97;
        case.buses[1].va = -3.0;
        let prob = PfProblem::from_case(&case).unwrap();
        let y = initial_state(&prob, &case, StartMode::CaseValues);
        assert!((y.data[0] - (-3.0f64).to_radians()).abs() < 1e-15);
        assert_eq!(y.data[1], 0.97);
    }

    #[test]
    fn gen_setpoint_beats_bus_vm() {
        let mut case = two_bus(50.0, 20.0);
        case.buses[0].vm = 0.99; // slack bus table says 0.99
        case.gens[0].vg = 1.05; // generator setpoint says 1.05
        let prob = PfProblem::from_case(&case).unwrap();
        assert_eq!(prob.v_setpoint[0], 1.05);
    }
}
