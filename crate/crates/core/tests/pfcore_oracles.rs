//! Derivative oracles: the analytic Jacobian and Hessian action against
//! central finite differences, plus solved-state and indexing checks.

mod common;

use common::*;
use rand::Rng;
use sicnm::pfcore::{initial_state, hessian_action, jacobian, mismatch, PfProblem, StartMode};
use sicnm::solvers::{newton_raphson, SolverOptions};

#[test]
fn nine_bus_dimensions() {
    let case = load_case("case9.m");
    let prob = PfProblem::from_case(&case).unwrap();
    // 1 slack, 2 PV, 6 PQ: 8 angles + 6 magnitudes
    assert_eq!(prob.idx.pv.len(), 2);
    assert_eq!(prob.idx.pq.len(), 6);
    assert_eq!(prob.n_state(), 14);
}

#[test]
fn jacobian_matches_fd_on_random_states() {
    for name in ["case9.m", "case30s.m"] {
        let case = load_case(name);
        let prob = PfProblem::from_case(&case).unwrap();
        let mut rng = rng(0xA11CE);
        for trial in 0..10 {
            let y = random_state(&prob, &mut rng);
            let j = to_dense(&jacobian(&prob, &y).unwrap());
            let j_fd = fd_jacobian(&prob, &y);
            let scale = j.amax();
            let diff = (&j - &j_fd).amax();
            assert!(
                diff <= 1e-6 * scale,
                "{name} trial {trial}: FD mismatch {diff:.3e} vs scale {scale:.3e}"
            );
        }
    }
}

#[test]
fn hessian_action_matches_fd_of_jacobian() {
    for name in ["case9.m", "case30s.m"] {
        let case = load_case(name);
        let prob = PfProblem::from_case(&case).unwrap();
        let mut rng = rng(0xBEE5);
        for trial in 0..10 {
            let y = random_state(&prob, &mut rng);
            let z: Vec<f64> = (0..prob.n_state()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = to_dense(&hessian_action(&prob, &y, &z).unwrap());
            let w_fd = fd_hessian_action(&prob, &y, &z);
            let scale = w.amax().max(1e-3);
            let diff = (&w - &w_fd).amax();
            assert!(
                diff <= 1e-5 * scale,
                "{name} trial {trial}: Hessian-action FD mismatch {diff:.3e} vs scale {scale:.3e}"
            );
        }
    }
}

#[test]
fn hessian_bilinear_form_is_symmetric() {
    // second-derivative symmetry: z' (d J_i / dy) w == w' (d J_i / dy) z
    // contracted per equation row via the action matrix
    let case = load_case("case9.m");
    let prob = PfProblem::from_case(&case).unwrap();
    let mut rng = rng(0xD00F);
    let y = random_state(&prob, &mut rng);
    let n = prob.n_state();
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // row i of hessian_action(y, z) dotted with w equals z' H_i w;
    // swapping z and w must give the same value
    let hz = hessian_action(&prob, &y, &z).unwrap();
    let hw = hessian_action(&prob, &y, &w).unwrap();
    let hz_w = hz.matvec(&w);
    let hw_z = hw.matvec(&z);
    for i in 0..n {
        assert!(
            (hz_w[i] - hw_z[i]).abs() <= 1e-12 * (1.0 + hz_w[i].abs()),
            "row {i}: {} vs {}",
            hz_w[i],
            hw_z[i]
        );
    }
}

#[test]
fn mismatch_at_newton_solution_is_small() {
    let case = load_case("case9.m");
    let prob = PfProblem::from_case(&case).unwrap();
    let y0 = initial_state(&prob, &case, StartMode::Flat);
    let opts = SolverOptions { tol: 1e-9, ..SolverOptions::default() };
    let report = newton_raphson(&prob, &y0, &opts);
    assert!(report.converged());
    let g = mismatch(&prob, &report.final_state).unwrap();
    assert!(inf_norm(&g) <= 1e-8);
    // re-evaluation is idempotent
    let g2 = mismatch(&prob, &report.final_state).unwrap();
    assert_eq!(g, g2);
}

#[test]
fn jacobian_sparsity_is_bounded_by_ybus() {
    let case = load_case("case30s.m");
    let prob = PfProblem::from_case(&case).unwrap();
    let y = initial_state(&prob, &case, StartMode::Flat);
    let j = jacobian(&prob, &y).unwrap();
    assert!(j.nnz() <= 4 * prob.ybus.matrix.nnz());
}

#[test]
fn indexing_is_stable_across_reparses() {
    let text = std::fs::read_to_string(case_path("case30s.m")).unwrap();
    let a = sicnm::caseio::parse_case(&text).unwrap();
    let b = sicnm::caseio::parse_case(&text).unwrap();
    let ia = sicnm::network::index_states(&a).unwrap();
    let ib = sicnm::network::index_states(&b).unwrap();
    assert_eq!(ia.pv, ib.pv);
    assert_eq!(ia.pq, ib.pq);
    assert_eq!(ia.slack, ib.slack);
}

#[test]
fn ybus_matches_dense_brute_force() {
    for name in ["case9.m", "case30s.m", "ill_feeder.m"] {
        ybus_dense_check(name);
    }
}

fn ybus_dense_check(name: &str) {
    use num_complex::Complex64;
    let case = load_case(name);
    let y = sicnm::network::build_ybus(&case).unwrap();
    let n = case.buses.len();
    // naive dense assembly looping over branches
    let mut dense = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        if br.status != 1 {
            continue;
        }
        let f = case.bus_index(br.from_bus).unwrap();
        let t = case.bus_index(br.to_bus).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ytt = ys + Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.tap, br.shift.to_radians());
        dense[f][f] += ytt / (tap * tap.conj());
        dense[t][t] += ytt;
        dense[f][t] += -ys / tap.conj();
        dense[t][f] += -ys / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        dense[i][i] += Complex64::new(bus.gs, bus.bs) / case.base_mva;
    }
    for (i, row) in dense.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!((y.matrix.get(i, j) - want).norm() <= 1e-12, "Ybus({i},{j}) mismatch");
        }
    }
}
