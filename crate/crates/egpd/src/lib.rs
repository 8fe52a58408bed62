//! Simulation and control toolkit for dynamic matching systems and, more
//! generally, slotted-time queueing networks whose queues may be signed.
//!
//! The crate has three layers:
//!
//! * controllers: the greedy primal-dual control rule for general networks
//!   ([`engine`]) and the virtual/physical matching scheme built on top of it
//!   ([`matching`]);
//! * ground truth: a self-contained simplex solver plus Frank-Wolfe routines
//!   over the achievable drift region ([`oracle`]), and a fluid-limit
//!   integrator with Lyapunov diagnostics ([`fluid`]);
//! * plumbing: scenario and network types with structural checkers
//!   ([`model`]), the scenario file format ([`scenario_file`]), and experiment
//!   presets, sweeps and reports ([`harness`]).
//!
//! Everything is deterministic given a scenario and a 64-bit seed; see
//! [`rng`] for how parallel sweeps derive independent streams.

pub mod engine;
pub mod fluid;
pub mod harness;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scenario_file;
