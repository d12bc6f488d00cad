//! Discrete-time simulator of a wireless networked control system in which a
//! sensor reports a finite-state process to a remote controller through
//! half-duplex relays assisted by an intelligent reflecting surface, plus an
//! offline reinforcement-learning stack that learns joint status-sampling and
//! relay-selection policies from static experience datasets.
//!
//! The crate is organised around the data flow of an experiment:
//!
//! * [`config`] / [`state`] — system configuration, domain types, feature
//!   encoding, seeded RNG streams.
//! * [`process`] — the physical process of interest as a finite-state Markov
//!   chain.
//! * [`radio`] — per-slot channel realizations, link budgets and two-hop
//!   delivery with sensor-side energy accounting.
//! * [`env`] — the slot-level MDP tying process, radio, inference and age-of-
//!   semantics bookkeeping together, and policy evaluation.
//! * [`net`] — a small dense network with analytic gradients and an
//!   adaptive-moment optimizer; no external learning framework.
//! * [`agents`] — online policies: Random, advantage actor-critic, and
//!   greedy-from-Q wrappers.
//! * [`offline`] — support-constrained offline Q-learning with a margin
//!   penalty against out-of-distribution actions, a conservative Q-learning
//!   baseline, and exact tabular oracles.
//! * [`dataset`] — experience collection, mixing and a versioned on-disk
//!   format.
//! * [`harness`] — experiment orchestration: calibration, convergence runs,
//!   sweeps, CSV outputs.
//!
//! Runnable entry points live in `examples/`; the `aos-ncs` binary exposes
//! the same pipeline as subcommands.

pub mod agents;
pub mod config;
pub mod dataset;
pub mod env;
pub mod harness;
pub mod net;
pub mod offline;
pub mod process;
pub mod radio;
pub mod rng;
pub mod state;

pub use config::SystemConfig;
pub use env::NcsEnv;
pub use state::{Action, EnvState, Experience};
