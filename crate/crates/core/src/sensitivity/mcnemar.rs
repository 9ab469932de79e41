use serde::{Deserialize, Serialize};

use super::{p_plus, BoundMethod, GammaBoundResult};
use crate::error::{Error, Result};
use crate::stats::{ln_choose, log_sum_exp, norm_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarMethod {
    /// Normal approximation to the bounding binomial with a continuity
    /// correction of one half, as in the classic `binarysens` tables.
    #[default]
    NormalCorrected,
    /// Exact binomial tail summed in log space.
    Exact,
}

/// Upper bound on McNemar's one-sided p-value: `P(X ≥ T)` for
/// `X ~ Binomial(D, Γ/(1+Γ))`, where `D` counts discordant pairs and `T` the
/// discordant pairs in which the treated subject had the event.
///
/// For Hammond's 122 discordant pairs with 110 smoker deaths the default
/// method gives 0.0036 at Γ = 4; the exact tail there is 0.0020.
pub fn mcnemar_gamma_bound(
    discordant: u64,
    treated_events: u64,
    gamma: f64,
    method: McNemarMethod,
) -> Result<GammaBoundResult> {
    if discordant == 0 {
        return Err(Error::invalid("need at least one discordant pair"));
    }
    if treated_events > discordant {
        return Err(Error::invalid(format!(
            "treated events {treated_events} exceed discordant pairs {discordant}"
        )));
    }
    let p = p_plus(gamma)?;
    let d = discordant as f64;
    let mu = d * p;
    let sigma = (d * p * (1.0 - p)).sqrt();
    let (p_upper, method) = match method {
        _ if treated_events == 0 => (1.0, bound_method(method)),
        McNemarMethod::Exact => (exact_tail(discordant, treated_events, p), BoundMethod::ExactBinomial),
        McNemarMethod::NormalCorrected => (
            norm_sf((treated_events as f64 - 0.5 - mu) / sigma),
            BoundMethod::NormalApproxCorrected,
        ),
    };
    Ok(GammaBoundResult {
        gamma,
        statistic: treated_events as f64,
        p_upper,
        mu_bound: mu,
        sigma_bound: sigma,
        method,
    })
}

fn bound_method(m: McNemarMethod) -> BoundMethod {
    match m {
        McNemarMethod::Exact => BoundMethod::ExactBinomial,
        McNemarMethod::NormalCorrected => BoundMethod::NormalApproxCorrected,
    }
}

fn exact_tail(n: u64, k: u64, p: f64) -> f64 {
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    let terms: Vec<f64> = (k..=n)
        .map(|x| ln_choose(n, x) + x as f64 * ln_p + (n - x) as f64 * ln_q)
        .collect();
    log_sum_exp(&terms).exp().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom_tail_direct(n: u64, k: u64, p: f64) -> f64 {
        // product form of the pmf; fine for small n
        (k..=n)
            .map(|x| {
                let mut c = 1.0;
                for i in 0..x {
                    c *= (n - i) as f64 / (i + 1) as f64;
                }
                c * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32)
            })
            .sum()
    }

    #[test]
    fn hammond_smoking_example() {
        let p = |g| {
            mcnemar_gamma_bound(122, 110, g, McNemarMethod::NormalCorrected)
                .unwrap()
                .p_upper
        };
        assert!(p(1.0) < 1e-4);
        assert!(p(2.0) < 1e-4);
        assert!(p(3.0) < 1e-4);
        assert!((p(4.0) - 0.0036).abs() < 0.0005, "{}", p(4.0));
        assert!((p(5.0) - 0.03).abs() < 0.005, "{}", p(5.0));
        assert!((p(6.0) - 0.10).abs() < 0.01, "{}", p(6.0));
    }

    #[test]
    fn hammond_exact_tail() {
        // independent reference values from a binomial survival function
        let p = |g| mcnemar_gamma_bound(122, 110, g, McNemarMethod::Exact).unwrap().p_upper;
        assert!((p(4.0) - 0.001_963_344_470_402).abs() < 1e-12);
        assert!((p(5.0) - 0.023_168_563_842_540).abs() < 1e-12);
        assert!((p(6.0) - 0.096_928_774_794_249).abs() < 1e-12);
    }

    #[test]
    fn ten_five_at_gamma_one() {
        let r = mcnemar_gamma_bound(10, 5, 1.0, McNemarMethod::Exact).unwrap();
        assert!((r.p_upper - 638.0 / 1024.0).abs() < 1e-12);
        assert!((r.p_upper - 0.623).abs() < 5e-4);
        assert_eq!(r.mu_bound, 5.0);
        assert_eq!(r.method, BoundMethod::ExactBinomial);
    }

    #[test]
    fn exact_matches_direct_binomial_at_gamma_one() {
        for n in 1..=30u64 {
            for k in 0..=n {
                let r = mcnemar_gamma_bound(n, k, 1.0, McNemarMethod::Exact).unwrap();
                let direct = binom_tail_direct(n, k, 0.5);
                assert!((r.p_upper - direct).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn monotone_in_gamma() {
        for method in [McNemarMethod::Exact, McNemarMethod::NormalCorrected] {
            let mut last = 0.0;
            for i in 0..60 {
                let g = 1.0 + i as f64 * 0.25;
                let p = mcnemar_gamma_bound(40, 28, g, method).unwrap().p_upper;
                assert!(p >= last);
                last = p;
            }
        }
    }

    #[test]
    fn invalid_counts() {
        let m = McNemarMethod::Exact;
        assert!(mcnemar_gamma_bound(0, 0, 1.0, m).is_err());
        assert!(mcnemar_gamma_bound(5, 6, 1.0, m).is_err());
        assert!(mcnemar_gamma_bound(5, 2, 0.9, m).is_err());
        assert_eq!(mcnemar_gamma_bound(5, 0, 3.0, m).unwrap().p_upper, 1.0);
    }
}
