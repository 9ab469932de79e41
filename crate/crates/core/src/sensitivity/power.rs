use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wilcoxon::{signed_rank_summary, wilcoxon_gamma_bound, WilcoxonMethod};
use super::{p_plus, BoundMethod};
use crate::error::{Error, Result};
use crate::pairs::rank_diffs;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub method: WilcoxonMethod,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            method: WilcoxonMethod::NormalApprox,
        }
    }
}

/// Monte Carlo power of a Γ sensitivity analysis in the favorable situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub n_pairs: usize,
    pub effect_size: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub reps: usize,
    pub power: f64,
    pub mc_standard_error: f64,
    pub method: BoundMethod,
}

/// `√(p(1−p)/reps)`.
pub fn binomial_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Fraction of `reps` samples of `n` differences `~ N(δ, 1)` whose Wilcoxon
/// upper bound at Γ is ≤ α.
///
/// Replicate `r` draws from the substream `(seed, r)`, so the estimate does
/// not depend on the number of worker threads.
pub fn power_of_sensitivity(
    n: usize,
    effect_size: f64,
    gamma: f64,
    alpha: f64,
    reps: usize,
    seed: u64,
    options: PowerOptions,
) -> Result<PowerEstimate> {
    if reps < 100 {
        return Err(Error::invalid(format!("need at least 100 replicates (got {reps})")));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one pair"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if !effect_size.is_finite() {
        return Err(Error::invalid("effect size must be finite"));
    }
    p_plus(gamma)?;
    let normal = Normal::new(effect_size, 1.0).map_err(|e| Error::invalid(e.to_string()))?;

    let rejections: Result<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, &[rng::domain::POWER, r as u64]);
            let diffs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let p = match options.method {
                WilcoxonMethod::NormalApprox => match signed_rank_summary(&diffs) {
                    Some(s) => s.normal_upper_p(gamma)?,
                    None => 1.0,
                },
                WilcoxonMethod::ExactConvolution => match rank_diffs(&diffs) {
                    Ok(ranked) => wilcoxon_gamma_bound(&ranked, gamma, options.method)?.p_upper,
                    Err(_) => 1.0,
                },
            };
            Ok(p <= alpha)
        })
        .collect();
    let hits = rejections?.into_iter().filter(|&b| b).count();
    let power = hits as f64 / reps as f64;
    Ok(PowerEstimate {
        n_pairs: n,
        effect_size,
        gamma,
        alpha,
        reps,
        power,
        mc_standard_error: binomial_se(power, reps),
        method: match options.method {
            WilcoxonMethod::NormalApprox => BoundMethod::NormalApprox,
            WilcoxonMethod::ExactConvolution => BoundMethod::ExactConvolution,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_at_null() {
        let est = power_of_sensitivity(500, 0.0, 1.0, 0.05, 2000, 11, PowerOptions::default()).unwrap();
        assert!((est.power - 0.05).abs() <= 3.0 * binomial_se(0.05, 2000), "{}", est.power);
    }

    #[test]
    fn beyond_and_below_design_sensitivity() {
        let low = power_of_sensitivity(2000, 0.5, 5.0, 0.05, 200, 3, PowerOptions::default()).unwrap();
        assert!(low.power < 0.02);
        let high = power_of_sensitivity(2000, 1.0, 5.0, 0.05, 200, 3, PowerOptions::default()).unwrap();
        assert!(high.power > 0.98);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| power_of_sensitivity(100, 0.2, 1.5, 0.05, 300, 99, PowerOptions::default()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn exact_mode_close_to_normal() {
        let opts = PowerOptions { method: WilcoxonMethod::ExactConvolution };
        let exact = power_of_sensitivity(60, 0.4, 1.5, 0.05, 400, 5, opts).unwrap();
        let approx = power_of_sensitivity(60, 0.4, 1.5, 0.05, 400, 5, PowerOptions::default()).unwrap();
        assert!((exact.power - approx.power).abs() < 0.05);
    }

    #[test]
    fn validates() {
        assert!(power_of_sensitivity(10, 0.1, 1.0, 0.05, 99, 1, PowerOptions::default()).is_err());
        assert!(power_of_sensitivity(10, 0.1, 0.5, 0.05, 100, 1, PowerOptions::default()).is_err());
    }
}
