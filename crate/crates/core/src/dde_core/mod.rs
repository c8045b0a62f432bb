//! Deterministic linear delay equations `x'(t) = L0(Π_t x)`.

mod measure;
mod path;
mod roots;
mod segment;
mod solver;
mod stability;

pub use measure::{Density, DelayMeasure, PointMass};
pub use path::PathGrid;
pub(crate) use path::format_float;
pub(crate) use solver::step_nodes;
pub use roots::{find_roots, winding_number, CharacteristicRoot, Rect, RootOptions};
pub use segment::{History, Segment};
pub use solver::{
    default_step, fundamental_solution, fundamental_trajectories, matrix_row, semigroup_apply,
    semigroup_apply_with_step, solve_deterministic, Forcing, InitialHistory, MethodOfSteps, Side,
    StepContext, Trajectory,
};
pub use stability::{
    det_magnitude, imaginary_bound, verify_instability, verify_instability_with, DecayConstants,
    StabilityReport, ZERO_ROOT_RADIUS,
};
