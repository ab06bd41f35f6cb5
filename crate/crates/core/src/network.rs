//! Nodal admittance matrix assembly and state-vector indexing.

use crate::caseio::{BusType, NetworkCase};
use crate::linalg::SparseMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("zero-impedance in-service branch {from}-{to}")]
    ZeroImpedanceBranch { from: i64, to: i64 },
    #[error("no slack bus")]
    NoSlack,
}

/// Complex nodal admittance matrix.
#[derive(Debug, Clone)]
pub struct YBus {
    pub n: usize,
    pub matrix: SparseMatrix<Complex64>,
}

/// Which buses contribute which unknowns, and where they live in the state
/// vector. The layout is `[theta for pv+pq ascending; V for pq ascending]`,
/// matching the Jacobian block convention used throughout the solvers.
#[derive(Debug, Clone)]
pub struct StateIndexing {
    pub slack: usize,
    pub pv: Vec<usize>,
    pub pq: Vec<usize>,
    pub n_state: usize,
    /// per-bus state column of the angle unknown (None for the slack)
    theta_col: Vec<Option<usize>>,
    /// per-bus state column of the magnitude unknown (None unless PQ)
    vm_col: Vec<Option<usize>>,
}

impl StateIndexing {
    pub fn n_buses(&self) -> usize {
        self.theta_col.len()
    }

    pub fn theta_col(&self, bus: usize) -> Option<usize> {
        self.theta_col[bus]
    }

    pub fn vm_col(&self, bus: usize) -> Option<usize> {
        self.vm_col[bus]
    }

    /// Buses with a P-equation row, in row order (pv followed by pq,
    /// each ascending).
    pub fn p_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.pv.iter().chain(self.pq.iter()).copied()
    }

    /// Buses with a Q-equation row, in row order.
    pub fn q_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.pq.iter().copied()
    }

    pub fn n_angles(&self) -> usize {
        self.pv.len() + self.pq.len()
    }
}

/// Standard pi-model assembly of the bus admittance matrix.
pub fn build_ybus(case: &NetworkCase) -> Result<YBus, NetworkError> {
    let n = case.buses.len();
    let mut triplets: Vec<(usize, usize, Complex64)> = Vec::with_capacity(4 * case.branches.len() + n);
    for br in &case.branches {
        if br.status != 1 {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(NetworkError::ZeroImpedanceBranch { from: br.from_bus, to: br.to_bus });
        }
        let f = case.bus_index(br.from_bus).expect("validated case");
        let t = case.bus_index(br.to_bus).expect("validated case");
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ytt = ys + Complex64::new(0.0, br.b / 2.0);
        let shift_rad = br.shift.to_radians();
        let tap = Complex64::from_polar(br.tap, shift_rad);
        // Yff = (ys + jb/2)/t^2, Yft = -ys/conj(tap), Ytf = -ys/tap
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        triplets.push((f, f, yff));
        triplets.push((t, t, ytt));
        triplets.push((f, t, yft));
        triplets.push((t, f, ytf));
    }
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            triplets.push((i, i, Complex64::new(bus.gs, bus.bs) / case.base_mva));
        }
    }
    Ok(YBus { n, matrix: SparseMatrix::from_triplets(n, n, &triplets) })
}

/// Determine bus roles and the deterministic state layout.
///
/// A PV bus with no in-service generator is demoted to PQ here; indexing is
/// the single authority on bus roles, so downstream code never re-derives
/// them from the raw case.
pub fn index_states(case: &NetworkCase) -> Result<StateIndexing, NetworkError> {
    let n = case.buses.len();
    let mut slack = None;
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    // pv/pq ordered by bus id: iterate positions sorted by id
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| case.buses[i].id);
    for &i in &order {
        match case.buses[i].btype {
            BusType::Slack => slack = Some(i),
            BusType::Pv => {
                if case.gens_at(i).next().is_some() {
                    pv.push(i);
                } else {
                    pq.push(i);
                }
            }
            BusType::Pq => pq.push(i),
        }
    }
    let slack = slack.ok_or(NetworkError::NoSlack)?;
    let mut theta_col = vec![None; n];
    let mut vm_col = vec![None; n];
    for (k, &bus) in pv.iter().chain(pq.iter()).enumerate() {
        theta_col[bus] = Some(k);
    }
    let n_angles = pv.len() + pq.len();
    for (k, &bus) in pq.iter().enumerate() {
        vm_col[bus] = Some(n_angles + k);
    }
    Ok(StateIndexing {
        slack,
        n_state: n_angles + pq.len(),
        pv,
        pq,
        theta_col,
        vm_col,
    })
}
