//! Rate function of the reduced process: Hamiltonian, Lagrangian, action
//! and quasipotential.

mod action;
mod model;
mod quasipotential;

pub use action::{action, action_two_state_closed_form};
pub(crate) use model::two_state_cost;
pub use model::{RateModel, ScalarField, ScalarFn};
pub use quasipotential::{quasipotential, quasipotential_with, ControlPath, QuasipotentialOptions, QuasipotentialResult};
