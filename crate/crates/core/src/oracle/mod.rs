//! Exact small-N Monte Carlo simulation of the Brownian circuit, used to
//! validate the master equation from first principles.

pub mod circuit;
pub mod dense;
pub mod pauli;

pub use circuit::{
    autocorrelator_rate, coupling_terms, estimate_observables, evolve_step, fit_decay_rate, protocol_commutator,
    run_protocol, sample_rng, sample_step_couplings, CircuitConfig, CouplingTerm, DecayFit, Direction, Estimate,
    OracleEstimate, StepCouplings, DEFAULT_SEED,
};
pub use pauli::{Pauli, PauliOperator};
