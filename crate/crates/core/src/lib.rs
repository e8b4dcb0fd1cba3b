//! Canonical token encodings for time-dependent PDEs, conservation-law
//! solvers, and sequential Monte Carlo refinement of equation coefficients.

pub mod canon;
pub mod datagen;
pub mod eval;
pub mod expr;
pub mod filter;
pub mod metrics;
mod par;
pub mod perturb;
pub mod rng;
pub mod solver;
pub mod study;
