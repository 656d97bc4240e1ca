//! Solver and simulator for a dynamic-player stochastic game of
//! computational investment.
//!
//! Strategic players arrive and depart at exponential rates and choose how
//! much computational power to invest in each state (the set of present
//! players). The crate builds the state space and the induced transition
//! structure, solves expected utilities for a policy, constructs Markov
//! perfect equilibria for the two reward scenarios, certifies them with a
//! best-response search, and cross-checks everything by Monte Carlo
//! simulation of the continuous-time chain.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod montecarlo;
pub mod policy;
pub mod solver;
pub mod state_space;

pub use config::{GameConfig, PlayerParams, RateFunction, Scenario};
pub use error::{GameError, Result};
pub use policy::Policy;
pub use solver::{SolverOptions, UtilityVector};
pub use state_space::{Mode, PlayerSet, State, StateSpace};
