//! Steady-state load flow for coupled electricity, gas, and district-heat
//! networks.
//!
//! The crate models each carrier on a shared graph, joins them through
//! conversion units (electrolyser, power-to-gas, electric boiler) attached by
//! dummy links, checks well-posedness of a boundary-condition set, and solves
//! the resulting nonlinear system with Newton's method.

pub mod carrier;
pub mod coupling;
pub mod fixtures;
pub mod io;
pub mod model;
pub mod solver;
pub mod system;
pub mod wellposedness;

#[cfg(test)]
pub(crate) mod testnets;

pub use io::{load_case, load_case_from_path, IoError, LoadedCase};
pub use model::{Carrier, Network};
pub use solver::{solve_network, SolveOutcome, SolveStatus, SolverConfig};
pub use system::{assemble_system, DomainPolicy, EquationSystem};
pub use wellposedness::{BcTemplate, BoundaryConditionSet, RankVerdict, Squareness};
