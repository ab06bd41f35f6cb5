//! Sparse AC power-flow solvers built around continuous-Newton iteration.
//!
//! The crate models the power-flow problem `g(y) = 0` over a per-unitized
//! network parsed from MATPOWER case files, and solves it with a family of
//! iteration engines:
//!
//! * plain Newton-Raphson and Iwamoto's optimal-multiplier variant,
//! * an explicit continuous-Newton method (classical RK4 on the Newton flow),
//! * implicit continuous-Newton methods (backward Euler with an inner Newton
//!   loop and several Jacobian-reuse policies),
//! * a semi-implicit engine that integrates the equivalent index-1 DAE with
//!   stiffly accurate Rosenbrock methods (Rodas3d / Rodas4) and embedded
//!   step-size control, factoring a single n-by-n Schur block per step.
//!
//! Module map:
//!
//! * [`caseio`] — MATPOWER `.m` / JSON case parsing and serialization
//! * [`network`] — admittance-matrix assembly and state indexing
//! * [`pfcore`] — mismatch, Jacobian, and Hessian-action evaluation
//! * [`linalg`] — sparse storage, LU factorization, block stage solves
//! * [`tableau`] — Rosenbrock tableaus, order conditions, stability functions
//! * [`solvers`] — the iteration engines and the reactive-limit outer loop
//! * [`bench`] — deterministic experiment harness over cases and methods

pub mod bench;
pub mod caseio;
pub mod linalg;
pub mod network;
pub mod pfcore;
pub mod solvers;
pub mod tableau;
