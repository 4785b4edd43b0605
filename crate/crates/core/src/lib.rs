//! Simulation and numerical verification of BSDEs driven by a compensated
//! integer-valued random measure that need not be quasi-left-continuous.
//!
//! - [`measures`]: point measures, compensators, `W * (mu - nu)` and `C(W)`.
//! - [`processes`]: PDMP and jump-diffusion simulators.
//! - [`bsde`]: regression Monte Carlo solvers and value-function oracles.
//! - [`identify`]: checks of the `Z` and `U` identification formulas.
//! - [`experiment`]: config parsing and the end-to-end runner behind the CLI.

pub mod bsde;
pub mod experiment;
pub mod identify;
pub mod measures;
pub mod processes;
pub mod quadrature;
pub mod stats;
