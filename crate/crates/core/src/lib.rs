//! Exact primal-dual solvers for tabular constrained MDPs.
//!
//! A constrained MDP asks for a policy maximizing one discounted value
//! subject to lower bounds on others. This crate provides:
//!
//! - [`mdp`]: problem-instance types and exact (linear-solve) policy
//!   evaluation — values, occupancy measures, discounted entropy,
//!   entropy-regularized Q functions.
//! - [`regpo`]: inner entropy-regularized policy optimizers (soft Q
//!   iteration and natural-policy-gradient style soft policy iteration).
//! - [`arcpo`]: the accelerated regularized dual loop with an
//!   occupancy-weighted output policy, plus its stepsize calculators.
//! - [`pdo`]: the classical alternating primal-dual baseline.
//! - [`oracle`]: ground-truth solutions via an occupancy-measure LP,
//!   Slater margins, and brute-force enumeration for tiny instances.
//! - [`arco`]: the same accelerated dual loop over a pluggable black-box
//!   Lagrangian minimizer for generic constrained problems.
//! - [`gen`], [`bench`], [`cli`]: seeded instance generation, the
//!   AR-CPO vs PDO benchmark harness, and the command-line front end.
//!
//! Everything is deterministic: identical inputs (and seeds) produce
//! bit-identical outputs.

// Parameter guards are written `!(x > 0.0)` on purpose: the negation also
// rejects NaN, which `x <= 0.0` lets through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arco;
pub mod arcpo;
pub mod bench;
pub mod cli;
pub mod error;
pub mod gen;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod pdo;
pub mod regpo;
pub mod simplex;
pub mod svg;
pub mod trace;
pub mod verify;

pub use error::{CmdpError, Result};
pub use mdp::{OccupancyMeasure, Policy, RewardStats, TabularCmdp};
