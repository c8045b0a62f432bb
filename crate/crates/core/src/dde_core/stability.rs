use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::measure::DelayMeasure;
use super::roots::{find_roots, CharacteristicRoot, Rect, RootOptions};
use crate::error::{invalid, Error, Result};

/// Constants in `‖T(t)η‖ ≤ K e^{−κt} ‖η‖` on the decaying subspace, fitted
/// from simulated probe segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub k: f64,
    pub kappa: f64,
}

/// Outcome of checking that `det Δ` has a simple zero root and every other
/// root in the search region has negative real part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verified: bool,
    pub zero_root_found: bool,
    pub zero_root_simple: bool,
    /// `−max Re λ` over nonzero roots in the region (the search depth when
    /// there are none).
    pub spectral_gap: f64,
    pub search_region: Rect,
    pub roots: Vec<CharacteristicRoot>,
    pub decay_constants: Option<DecayConstants>,
    /// Which clause of the assumption failed, if any.
    pub violation: Option<String>,
}

impl StabilityReport {
    pub fn ensure_verified(&self) -> Result<()> {
        if self.verified {
            Ok(())
        } else {
            Err(Error::AssumptionViolated(self.violation.clone().unwrap_or_else(|| "unknown".into())))
        }
    }

    pub fn nonzero_roots(&self) -> impl Iterator<Item = &CharacteristicRoot> {
        self.roots.iter().filter(|r| r.value().norm() > ZERO_ROOT_RADIUS)
    }
}

/// Roots closer than this to the origin count as the zero root.
pub const ZERO_ROOT_RADIUS: f64 = 1e-6;

/// Imaginary extent guaranteeing every root with `Re λ ≥ −R` is enclosed:
/// `|λ| ≤ TV(μ)·e^{R r}` on that half-plane.
pub fn imaginary_bound(measure: &DelayMeasure, search_depth: f64) -> f64 {
    measure.total_variation() * (search_depth * measure.max_delay()).exp() + search_depth + 1.0
}

pub fn verify_instability(measure: &DelayMeasure, search_depth: f64, margin: f64) -> Result<StabilityReport> {
    verify_instability_with(measure, search_depth, margin, RootOptions::default())
}

pub fn verify_instability_with(
    measure: &DelayMeasure,
    search_depth: f64,
    margin: f64,
    opts: RootOptions,
) -> Result<StabilityReport> {
    if !(search_depth > 0.0 && margin > 0.0) {
        return Err(invalid("search depth and margin must be positive"));
    }
    let lam = imaginary_bound(measure, search_depth);
    let region = Rect::new(-search_depth, margin, -lam, lam);
    let (roots, region) = find_roots(measure, region, opts)?;

    let det0 = measure.delta_at_zero().determinant();
    let zero = roots.iter().find(|r| r.value().norm() <= ZERO_ROOT_RADIUS);
    let zero_root_found = zero.is_some() && det0.abs() < opts.tol;
    let zero_root_simple = zero_root_found && zero.is_some_and(|r| r.multiplicity == 1);
    let max_re = roots
        .iter()
        .filter(|r| r.value().norm() > ZERO_ROOT_RADIUS)
        .map(|r| r.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let spectral_gap = if max_re.is_finite() { -max_re } else { search_depth };

    let violation = if !zero_root_found {
        Some(format!("no zero root: det Δ(0) = {det0:e}"))
    } else if !zero_root_simple {
        Some(format!(
            "zero root not simple (multiplicity {})",
            zero.map_or(0, |r| r.multiplicity)
        ))
    } else if spectral_gap <= 0.0 {
        Some(format!(
            "nonzero root with Re λ = {max_re} ≥ 0 in the search region"
        ))
    } else {
        None
    };

    let mut report = StabilityReport {
        verified: violation.is_none(),
        zero_root_found,
        zero_root_simple,
        spectral_gap,
        search_region: region,
        roots,
        decay_constants: None,
        violation,
    };
    if report.verified {
        let sd = crate::spectral::build_spectral_data(measure, &report)?;
        report.decay_constants = Some(crate::spectral::fit_decay_constants(measure, &sd, spectral_gap)?);
    }
    Ok(report)
}

/// `|det Δ(λ)|` on a dense grid, used as an independent check of the root
/// finder.
pub fn det_magnitude(measure: &DelayMeasure, z: Complex64) -> f64 {
    let d = measure.char_delta(z);
    d.determinant().norm()
}
