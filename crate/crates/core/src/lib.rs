//! Parameter estimation for reduced-order electrochemical battery models with a
//! Gaussian-process discrepancy term.
//!
//! The crate contains an SPMe cell model ([`cell`]), squared-exponential
//! Gaussian-process machinery ([`gp`]), the discrepancy-aware likelihood and
//! least-squares objectives with grouped sequential estimation
//! ([`estimator`]), a bounded particle swarm minimizer ([`pso`]) and a seeded
//! simulation-study harness ([`scenario`]).

pub mod cell;
pub mod estimator;
pub mod exec;
pub mod gp;
pub mod pso;
pub mod scenario;
