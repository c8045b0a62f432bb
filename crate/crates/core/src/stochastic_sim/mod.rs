//! Simulation of the perturbed delay equation, its centre coordinate, and
//! the reduced scalar process.

mod field;
mod sim;

pub use field::{NonlinearField, Tap};
pub(crate) use sim::integrate_reduced;
pub use sim::{
    simulate_full, simulate_full_with_noise, simulate_reduced, simulate_reduced_slow, simulate_reduced_with_noise, sup_gap,
    FullRun, SdeRunConfig,
};
