//! Γ sensitivity analysis for matched pairs.
//!
//! Two matched subjects may differ in their odds of treatment by at most a
//! factor Γ ≥ 1. For a one-sided test in the direction of positive
//! differences, the largest p-value consistent with Γ comes from letting each
//! pair be "positive" independently with probability `p⁺ = Γ/(1+Γ)`. This
//! module computes that upper bound for McNemar's test and Wilcoxon's signed
//! rank test, maps (Λ, Δ) onto Γ, and evaluates design sensitivity and the
//! power of a sensitivity analysis in the favorable situation (a real effect,
//! no hidden bias).
//!
//! Only upper bounds are provided. Callers wanting the other direction negate
//! their differences.

mod amplification;
mod design;
mod mcnemar;
mod power;
mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use amplification::{amplification_curve, amplify, AmplificationCurve, AmplificationPoint, SkippedLambda};
pub use design::{design_sensitivity_normal, DesignSensitivity};
pub use mcnemar::{mcnemar_gamma_bound, McNemarMethod};
pub use power::{binomial_se, power_of_sensitivity, PowerEstimate, PowerOptions};
pub use wilcoxon::{
    signed_rank_summary, wilcoxon_gamma_bound, SignedRankSummary, WilcoxonMethod,
    MAX_EXACT_PAIRS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    ExactBinomial,
    NormalApprox,
    NormalApproxCorrected,
    ExactConvolution,
}

impl std::fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundMethod::ExactBinomial => "exact-binomial",
            BoundMethod::NormalApprox => "normal-approx",
            BoundMethod::NormalApproxCorrected => "normal-approx-corrected",
            BoundMethod::ExactConvolution => "exact-convolution",
        })
    }
}

/// Worst-case p-value at a given Γ together with the statistic and the
/// moments of the bounding null distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBoundResult {
    pub gamma: f64,
    pub statistic: f64,
    pub p_upper: f64,
    pub mu_bound: f64,
    pub sigma_bound: f64,
    pub method: BoundMethod,
}

/// `Γ/(1+Γ)` after checking that Γ is a finite real ≥ 1.
pub fn p_plus(gamma: f64) -> Result<f64> {
    if !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "gamma must be finite (got {gamma}); the Γ = ∞ limit has a degenerate bound"
        )));
    }
    if gamma < 1.0 {
        return Err(Error::invalid(format!("gamma must be ≥ 1 (got {gamma})")));
    }
    Ok(gamma / (1.0 + gamma))
}

/// Parses `a:b:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::invalid(format!("grid {spec:?} is not of the form a:b:step")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("grid {spec:?}: {p:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    let (a, b, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !a.is_finite() || !b.is_finite() || b < a {
        return Err(Error::invalid(format!("grid {spec:?} needs a ≤ b and step > 0")));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| a + i as f64 * step).collect())
}
