//! Sums of pointwise minima of convex functions: objective evaluation,
//! convex subproblems, alternating-minimization local search, big-M models
//! with branch-and-bound, local optimality certificates and an instance
//! library.

pub mod cli;
pub mod funcs;
pub mod local;
pub mod micp;
pub mod problems;
pub mod smc;
pub mod subsolve;
