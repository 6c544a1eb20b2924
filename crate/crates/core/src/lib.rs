//! Closed-loop model-predictive simulation of adaptive cruise following for a
//! series-parallel plug-in hybrid, with a self-contained mixed-integer
//! nonlinear solver.
//!
//! The crate splits into plant models ([`powertrain`], [`acc`]), map fitting
//! ([`maps`]), finite-horizon problem transcriptions ([`ocp`]), the solver
//! stack ([`minlp`]), and the receding-horizon simulation harness ([`sim`]).
//! [`params`] carries the validated parameter file all of them share;
//! [`instances`] generates seeded random problem instances for tests and
//! benchmarks.

pub mod acc;
pub mod ad;
pub mod instances;
pub mod maps;
pub mod minlp;
pub mod ocp;
pub mod params;
pub mod powertrain;
pub mod sim;

pub use params::Params;
