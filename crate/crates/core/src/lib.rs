//! Simulation and optimization toolkit for jump-process risk models with
//! joint claim-frequency and claim-severity controls under exponential
//! utility.
//!
//! An insurer (or any agent exposed to a stream of random losses) can
//! spend effort on two margins: reducing how often claims arrive and
//! reducing how much each claim costs. This crate
//!
//! * simulates the loss process under several arrival-intensity models
//!   (constant, regime-switching, shot-noise, self-exciting) with exact
//!   thinning and reproducible per-path random substreams ([`simulate`]);
//! * prices strategies by Monte Carlo, both by sampling the controlled
//!   process directly and by likelihood-ratio reweighting of uncontrolled
//!   paths ([`simulate::estimate_expected_utility`]);
//! * computes the optimal effort policy and value function in closed form
//!   (up to a one-dimensional time integral) for constant intensity, via
//!   the pointwise minimization of a cost-plus-risk rate ([`solver`]);
//! * verifies optimality numerically through martingale/submartingale
//!   drift checks on the candidate value process ([`solver::bellman_residual_check`]);
//! * layers proportional loss coverage on top and optimizes the retained
//!   fraction jointly with the effort policy ([`insurance`]);
//! * checks the integrability and convexity conditions that the theory
//!   requires before any of the above is trusted ([`risk_models`],
//!   [`prevention`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod insurance;
pub mod prevention;
pub mod risk_models;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod stats;

pub use error::Error;
