use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A confounder that multiplies the odds of treatment by Λ and the odds of a
/// positive pair difference by Δ, and the Γ it is equivalent to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationPoint {
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLambda {
    pub lambda: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationCurve {
    pub gamma: f64,
    pub points: Vec<AmplificationPoint>,
    pub skipped: Vec<SkippedLambda>,
}

/// `Γ = (ΛΔ + 1)/(Λ + Δ)` for Λ, Δ > 1.
pub fn amplify(lambda: f64, delta: f64) -> Result<AmplificationPoint> {
    for (name, v) in [("lambda", lambda), ("delta", delta)] {
        if !(v.is_finite() && v > 1.0) {
            return Err(Error::invalid(format!("{name} must be a finite value > 1 (got {v})")));
        }
    }
    Ok(AmplificationPoint {
        lambda,
        delta,
        gamma: (lambda * delta + 1.0) / (lambda + delta),
    })
}

/// The (Λ, Δ) pairs equivalent to `gamma`, solving `Δ = (ΛΓ − 1)/(Λ − Γ)` at
/// each Λ of the grid. Λ ≤ Γ admits no finite Δ and is skipped with a note.
pub fn amplification_curve(gamma: f64, lambdas: &[f64]) -> Result<AmplificationCurve> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::invalid(format!("gamma must be a finite value > 1 (got {gamma})")));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &lambda in lambdas {
        if !lambda.is_finite() || lambda <= gamma {
            skipped.push(SkippedLambda {
                lambda,
                note: format!("lambda {lambda} ≤ gamma {gamma}: no finite delta"),
            });
            continue;
        }
        let delta = (lambda * gamma - 1.0) / (lambda - gamma);
        points.push(AmplificationPoint { lambda, delta, gamma });
    }
    Ok(AmplificationCurve { gamma, points, skipped })
}
