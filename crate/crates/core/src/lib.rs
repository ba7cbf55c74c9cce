//! Numerical solvers and certifiers for steering front propagation with a
//! running-cost obstacle.
//!
//! The value function `u` of a front is the solution of the backward
//! Hamilton-Jacobi equation `-u_t + H(x, Du) = f`, `u(T) = u_T`, where the
//! Hamiltonian is the support function of the admissible velocity set and
//! `f >= 0` is the obstacle. Choosing `f` to trade construction cost
//! `K(f)` against the reward `int u(0) dm_0` is a convex problem whose dual
//! lives on densities transported by the continuity equation. This crate
//! solves that dual problem, recovers `(u, f)` from it and checks the
//! resulting optimality system numerically.
//!
//! Modules:
//! - [`grid`]: periodic space-time grids and fields,
//! - [`model`]: velocity sets and costs,
//! - [`hj`]: semi-Lagrangian value-function solver, closed-form blocking example,
//! - [`transport`]: continuity-equation solver and trajectory sampler,
//! - [`pdopt`]: primal-dual solver for the dual problem,
//! - [`certify`]: numerical checks of the duality and optimality conditions,
//! - [`presets`]: named problem instances,
//! - [`io`]: field files.

pub mod certify;
pub mod error;
pub mod grid;
pub mod hj;
pub mod io;
pub mod model;
pub mod pdopt;
pub mod presets;
pub mod problem;
pub mod transport;

pub use error::{Error, Result};
pub use problem::ProblemInstance;
