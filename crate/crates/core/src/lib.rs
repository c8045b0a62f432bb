//! Large deviations for stochastic delay differential equations near an
//! instability.
//!
//! The crate covers the whole pipeline for equations of the form
//! `x'(t) = L0(Π_t x) + ε G(Π_t x) + ε F(Π_t x) σ(ξ_t)` where `L0` has a
//! simple characteristic root at zero and `ξ` is a finite-state Markov chain:
//!
//! * [`dde_core`]: delay measures, segments, characteristic roots, the
//!   method-of-steps solver and the fundamental solution.
//! * [`spectral`]: the bilinear form and the projection onto the centre
//!   direction.
//! * [`markov_noise`]: Markov-chain noise, path sampling and the tilted
//!   generator eigenvalue `H_F`.
//! * [`stochastic_sim`]: the full perturbed equation and the scalar reduced
//!   process driven by shared noise.
//! * [`ldp_rate`]: Hamiltonian, Lagrangian, action functionals and the
//!   quasipotential by direct transcription.
//! * [`linear_fast`]: linear equations with fast switching noise and the
//!   analytic optimal control via a Lagrange multiplier.
//! * [`experiments`]: Monte Carlo exit probabilities compared with the rate
//!   function.

pub mod dde_core;
pub mod error;
pub mod experiments;
pub mod ldp_rate;
pub mod linear_fast;
pub mod markov_noise;
pub mod optim;
pub mod spectral;
pub mod stochastic_sim;

pub use error::{Error, Result};
