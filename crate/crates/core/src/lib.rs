//! Policy elicitation through semantic reward updates.
//!
//! An expert agent watches another agent act under a malformed reward
//! function, locates the states where the two models meaningfully diverge,
//! and solves a weighted set cover over human-readable predicates to produce
//! the smallest reward correction that repairs the other agent's policy.
//!
//! The crate is split along those lines:
//!
//! - [`mdp`]: tabular MDPs, value iteration, policies, and rollouts.
//! - [`evac`]: the emergency-evacuation gridworld used for evaluation, with
//!   procedural rooms, hallways, exits, and fire placement.
//! - [`predicates`]: base/composite/ball predicates with precomputed
//!   bitset extensions, and the coverage matrices fed to the solver.
//! - [`setcover`]: the penalized set-cover integer program, solved exactly
//!   by branch and bound, plus greedy, brute-force, and exact-cover
//!   (Quine-McCluskey style) baselines.
//! - [`spear`]: the end-to-end repair procedure, from divergence detection
//!   to the rendered feedback message.
//!
//! Everything here is deterministic given explicit seeds; no global RNG,
//! clocks, or IO. File formats and benchmarks live in the companion CLI
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bitset;
pub mod evac;
pub mod mdp;
pub mod predicates;
pub mod rng;
pub mod setcover;
pub mod spear;

pub use bitset::BitSet;
pub use mdp::{Mdp, Policy, RewardFunction, RolloutMode, Trajectory};
pub use predicates::{CoverageMatrices, Predicate, PredicateSet};
pub use setcover::{CoverCase, IpInstance, SetCoverSolution};
pub use spear::{Feedback, SpearConfig, SpearRun};
