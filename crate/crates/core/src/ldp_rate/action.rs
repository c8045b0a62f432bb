use super::model::RateModel;
use crate::dde_core::PathGrid;
use crate::error::{invalid, Result};

fn check_path(phi: &PathGrid) -> Result<()> {
    if phi.width() != 1 {
        return Err(invalid(format!("action needs a scalar path, got width {}", phi.width())));
    }
    if phi.len() < 2 {
        return Err(invalid("action needs at least two path points"));
    }
    Ok(())
}

fn cellwise(phi: &PathGrid, mut cost: impl FnMut(f64, f64) -> Result<f64>) -> Result<f64> {
    check_path(phi)?;
    let t = phi.times();
    let mut total = 0.0;
    for k in 0..phi.len() - 1 {
        let h = t[k + 1] - t[k];
        let (a, b) = (phi.row(k)[0], phi.row(k + 1)[0]);
        let l = cost(0.5 * (a + b), (b - a) / h)?;
        if l.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += l * h;
    }
    Ok(total)
}

/// `S(φ) = ∫ L(φ, φ̇)` by the midpoint rule on the path's own grid.
pub fn action(model: &RateModel, phi: &PathGrid) -> Result<f64> {
    cellwise(phi, |z, beta| model.lagrangian(z, beta))
}

/// The same functional through the two-state closed-form Lagrangian.
pub fn action_two_state_closed_form(model: &RateModel, phi: &PathGrid) -> Result<f64> {
    model.two_state()?;
    cellwise(phi, |z, beta| model.two_state_lagrangian(z, beta))
}
