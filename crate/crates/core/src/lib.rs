//! Operator-weight dynamics of the Brownian cluster model with imperfect
//! time reversal and depolarizing noise.
//!
//! The master equation for the branch-overlap profile `b_w` is integrated in
//! [`integrator`]; [`dilute`] holds the closed forms of the large-N limit;
//! [`analysis`] builds the lifetime, crossover and collapse studies on top;
//! [`oracle`] simulates the circuit itself at small N.

pub mod acceptance;
pub mod analysis;
pub mod dilute;
pub mod error;
pub mod integrator;
pub mod io;
pub mod oracle;
pub mod params;
pub mod profile;
pub mod rate;

pub use error::{Error, Result};
pub use integrator::{integrate, steady_state_mean_weight, IntegrationConfig};
pub use params::{correlation_from_perturbation, effective_params, perturbation_from_correlation, DiluteParams, ModelParams};
pub use profile::{Echo, Observables, Trajectory, WeightProfile};
pub use rate::{Form, RateOperator};
