//! Shared oracles for the integration suite. Everything here is an
//! independent route: dense linear algebra from nalgebra, finite
//! differences instead of analytic partials, and a standalone Rosenbrock
//! ODE stepper that never touches the power-flow engine.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sicnm::caseio::{parse_case, NetworkCase};
use sicnm::linalg::SparseMatrix;
use sicnm::pfcore::{jacobian, mismatch, PfProblem, StateVector};
use sicnm::tableau::RosenbrockTableau;

pub fn case_path(name: &str) -> String {
    format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load_case(name: &str) -> NetworkCase {
    let text = std::fs::read_to_string(case_path(name)).unwrap();
    parse_case(&text).unwrap()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn to_dense(m: &SparseMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.iter() {
        d[(i, j)] = v;
    }
    d
}

/// Dense LU solve (nalgebra) as the reference linear-algebra route.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let lu = a.clone().lu();
    let x = lu.solve(&DVector::from_column_slice(b)).expect("dense solve");
    x.iter().copied().collect()
}

/// Random physically-plausible state: angles in [-0.3, 0.3] rad, PQ
/// magnitudes in [0.9, 1.1].
pub fn random_state(prob: &PfProblem, rng: &mut ChaCha8Rng) -> StateVector {
    let idx = &prob.idx;
    let mut data = vec![0.0; prob.n_state()];
    for bus in 0..idx.n_buses() {
        if let Some(c) = idx.theta_col(bus) {
            data[c] = rng.gen_range(-0.3..0.3);
        }
        if let Some(c) = idx.vm_col(bus) {
            data[c] = rng.gen_range(0.9..1.1);
        }
    }
    StateVector { data }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central-difference Jacobian of the mismatch, step 1e-6.
pub fn fd_jacobian(prob: &PfProblem, y: &StateVector) -> DMatrix<f64> {
    let n = prob.n_state();
    let eps = 1e-6;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut yp = y.clone();
        yp.data[j] += eps;
        let gp = mismatch(prob, &yp).unwrap();
        let mut ym = y.clone();
        ym.data[j] -= eps;
        let gm = mismatch(prob, &ym).unwrap();
        for i in 0..n {
            out[(i, j)] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }
    out
}

/// Central-difference directional derivative of `J(y) z` along each state
/// coordinate: column j is `[J(y + e_j eps) z - J(y - e_j eps) z] / (2 eps)`.
pub fn fd_hessian_action(prob: &PfProblem, y: &StateVector, z: &[f64]) -> DMatrix<f64> {
    let n = prob.n_state();
    let eps = 1e-6;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut yp = y.clone();
        yp.data[j] += eps;
        let jp = jacobian(prob, &yp).unwrap().matvec(z);
        let mut ym = y.clone();
        ym.data[j] -= eps;
        let jm = jacobian(prob, &ym).unwrap().matvec(z);
        for i in 0..n {
            out[(i, j)] = (jp[i] - jm[i]) / (2.0 * eps);
        }
    }
    out
}

/// Reference Rosenbrock integrator for a non-autonomous scalar ODE
/// `y' = f(t, y)`, run on the autonomized 2-vector `(y, t)` with the exact
/// 2x2 Jacobian. Dense algebra only; used for convergence-order studies.
pub struct ScalarOde {
    pub f: fn(f64, f64) -> f64,
    pub dfdy: fn(f64, f64) -> f64,
    pub dfdt: fn(f64, f64) -> f64,
}

pub fn rosenbrock_integrate(
    ode: &ScalarOde,
    tab: &RosenbrockTableau,
    weights: &[f64],
    y0: f64,
    t0: f64,
    t_end: f64,
    n_steps: usize,
) -> f64 {
    let h = (t_end - t0) / n_steps as f64;
    let s = tab.s;
    let mut y = y0;
    let mut t = t0;
    for _ in 0..n_steps {
        // J = [[df/dy, df/dt], [0, 0]] on the augmented state (y, t)
        let a = (ode.dfdy)(t, y);
        let b = (ode.dfdt)(t, y);
        // E = I - h*gamma*J  (2x2, lower-right entry 1)
        let e11 = 1.0 - h * tab.gamma * a;
        let e12 = -h * tab.gamma * b;
        let mut ky = vec![0.0; s];
        let mut kt = vec![0.0; s];
        for i in 0..s {
            let mut vy = y;
            let mut vt = t;
            let mut cy = 0.0;
            let mut ct = 0.0;
            for j in 0..i {
                vy += tab.alpha[i][j] * ky[j];
                vt += tab.alpha[i][j] * kt[j];
                cy += tab.gamma_ij[i][j] * ky[j];
                ct += tab.gamma_ij[i][j] * kt[j];
            }
            let rhs_y = h * (ode.f)(vt, vy) + h * (a * cy + b * ct);
            let rhs_t = h * 1.0;
            // solve [e11 e12; 0 1] [ky; kt] = [rhs_y; rhs_t]
            kt[i] = rhs_t;
            ky[i] = (rhs_y - e12 * kt[i]) / e11;
        }
        for i in 0..s {
            y += weights[i] * ky[i];
            t += weights[i] * kt[i];
        }
    }
    y
}

/// Least-squares slope of log(err) against log(h).
pub fn fit_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    num / den
}

/// Prothero-Robinson convergence study: integrate
/// `y' = lam (y - sin t) + cos t` over [0, 1] from y(0) = 0 (exact solution
/// `sin t`) at a ladder of fixed steps, and fit the global-error slope.
pub fn pr_slope(tab: &RosenbrockTableau, weights: &[f64], lam: f64, k_range: std::ops::RangeInclusive<u32>) -> f64 {
    // closures cannot capture lam in a fn pointer; thread it through state
    thread_local! {
        static LAM: std::cell::Cell<f64> = const { std::cell::Cell::new(0.0) };
    }
    LAM.with(|c| c.set(lam));
    fn f(t: f64, y: f64) -> f64 {
        let lam = LAM.with(|c| c.get());
        lam * (y - t.sin()) + t.cos()
    }
    fn dfdy(_t: f64, _y: f64) -> f64 {
        LAM.with(|c| c.get())
    }
    fn dfdt(t: f64, _y: f64) -> f64 {
        let lam = LAM.with(|c| c.get());
        -lam * t.cos() - t.sin()
    }
    let ode = ScalarOde { f, dfdy, dfdt };
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for k in k_range {
        let n = 1usize << k;
        let yn = rosenbrock_integrate(&ode, tab, weights, 0.0, 0.0, 1.0, n);
        hs.push(1.0 / n as f64);
        errs.push((yn - 1.0f64.sin()).abs());
    }
    fit_slope(&hs, &errs)
}
