use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_sf};

/// Design sensitivity of Wilcoxon's signed rank test when pair differences
/// are `N(δ, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSensitivity {
    pub effect_size: f64,
    pub gamma_tilde: f64,
}

/// `Γ̃ = p̃/(1 − p̃)` with `p̃ = P(Y_i + Y_j > 0) = Φ(√2·δ)`.
///
/// Below Γ̃ the power of the sensitivity analysis tends to 1 as the number of
/// pairs grows; above it, to 0.
pub fn design_sensitivity_normal(effect_size: f64) -> Result<DesignSensitivity> {
    if !(effect_size.is_finite() && effect_size >= 0.0) {
        return Err(Error::invalid(format!("effect size must be ≥ 0 (got {effect_size})")));
    }
    let z = std::f64::consts::SQRT_2 * effect_size;
    Ok(DesignSensitivity {
        effect_size,
        gamma_tilde: norm_cdf(z) / norm_sf(z),
    })
}
