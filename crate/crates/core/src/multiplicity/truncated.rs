use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PValueSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{ln_choose, log_sum_exp};
use statrs::function::gamma::ln_gamma;

pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncatedMethod {
    /// Analytic up to `auto_mc_above` p-values, Monte Carlo beyond.
    Auto,
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedOptions {
    pub method: TruncatedMethod,
    /// Largest k evaluated analytically under [`TruncatedMethod::Auto`].
    pub auto_mc_above: usize,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for TruncatedOptions {
    fn default() -> Self {
        TruncatedOptions {
            method: TruncatedMethod::Auto,
            auto_mc_above: 50,
            mc_draws: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedProductResult {
    pub tau: f64,
    pub k: usize,
    /// `W = Π p_i` over the p-values `≤ τ`; 1 when none qualify.
    pub w_statistic: f64,
    pub combined_p: f64,
    pub method: TruncatedMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_standard_error: Option<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("truncation point {tau} outside (0, 1]")))
    }
}

/// Truncated product combination of independent p-values.
///
/// The combined p-value is `P(W ≤ w_obs)` for `k` independent U(0,1)
/// p-values. It stays valid, and becomes conservative, when the inputs are
/// stochastically larger than uniform under the null, as Γ-bound p-values
/// are. With `τ = 1` this is Fisher's combination.
pub fn truncated_product(
    ps: &PValueSet,
    tau: f64,
    options: TruncatedOptions,
) -> Result<TruncatedProductResult> {
    check_tau(tau)?;
    let k = ps.len();
    let kept: Vec<f64> = ps.p_values().iter().copied().filter(|&p| p <= tau).collect();
    let ln_w: f64 = kept.iter().map(|p| p.ln()).sum();
    let w = ln_w.exp();
    let method = match options.method {
        TruncatedMethod::Auto if k > options.auto_mc_above => TruncatedMethod::MonteCarlo,
        TruncatedMethod::Auto => TruncatedMethod::Analytic,
        m => m,
    };
    let mut result = TruncatedProductResult {
        tau,
        k,
        w_statistic: w,
        combined_p: 1.0,
        method,
        mc_draws: None,
        mc_standard_error: None,
    };
    if kept.is_empty() {
        return Ok(result);
    }
    match method {
        TruncatedMethod::MonteCarlo => {
            if options.mc_draws < 100_000 {
                return Err(Error::invalid(format!(
                    "Monte Carlo tail needs at least 100000 draws (got {})",
                    options.mc_draws
                )));
            }
            let p = monte_carlo_tail(k, tau, ln_w, options.mc_draws, options.seed);
            result.combined_p = p;
            result.mc_draws = Some(options.mc_draws);
            result.mc_standard_error = Some((p * (1.0 - p) / options.mc_draws as f64).sqrt());
        }
        _ => result.combined_p = tail_from_ln_w(k, tau, ln_w),
    }
    Ok(result)
}

/// Null CDF of the truncated product, `P(W ≤ w)`, for `k` independent
/// uniforms:
///
/// `(1−τ)^k·1{w ≥ 1} + Σ_{m=1}^{k} C(k,m)(1−τ)^{k−m} A_m(w)` with
/// `A_m(w) = w Σ_{s<m} (m ln τ − ln w)^s / s!` when `w ≤ τ^m`, else `τ^m`.
///
/// Every term is formed in log space and the outer sum is compensated.
pub fn truncated_product_tail(k: usize, tau: f64, w: f64) -> Result<f64> {
    check_tau(tau)?;
    if k == 0 {
        return Err(Error::invalid("need at least one p-value"));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("w {w} outside [0, 1]")));
    }
    if w >= 1.0 {
        return Ok(1.0);
    }
    Ok(tail_from_ln_w(k, tau, w.ln()))
}

fn tail_from_ln_w(k: usize, tau: f64, ln_w: f64) -> f64 {
    if ln_w == f64::NEG_INFINITY {
        return 0.0;
    }
    if ln_w >= 0.0 {
        return 1.0;
    }
    let ln_tau = tau.ln();
    let ln_one_minus_tau = (1.0 - tau).ln();
    let mut terms = Vec::with_capacity(k);
    for m in 1..=k {
        let untruncated = k - m;
        let ln_weight = if untruncated == 0 {
            0.0
        } else if tau >= 1.0 {
            continue;
        } else {
            untruncated as f64 * ln_one_minus_tau
        };
        let ln_tau_m = m as f64 * ln_tau;
        let ln_a = if ln_w <= ln_tau_m {
            let x = ln_tau_m - ln_w;
            let inner: Vec<f64> = if x == 0.0 {
                vec![0.0]
            } else {
                (0..m)
                    .map(|s| s as f64 * x.ln() - ln_gamma(s as f64 + 1.0))
                    .collect()
            };
            ln_w + log_sum_exp(&inner)
        } else {
            ln_tau_m
        };
        terms.push(ln_choose(k as u64, m as u64) + ln_weight + ln_a);
    }
    log_sum_exp(&terms).exp().clamp(0.0, 1.0)
}

const MC_BATCH: usize = 10_000;

fn monte_carlo_tail(k: usize, tau: f64, ln_w: f64, draws: usize, seed: u64) -> f64 {
    let batches = draws.div_ceil(MC_BATCH);
    let hits: usize = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::substream(seed, &[rng::domain::TRUNCATED_MC, k as u64, b as u64]);
            let len = MC_BATCH.min(draws - b * MC_BATCH);
            (0..len)
                .filter(|_| {
                    let mut s = 0.0;
                    for _ in 0..k {
                        let u: f64 = rng.random();
                        if u <= tau {
                            s += u.ln();
                        }
                    }
                    s <= ln_w
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    hits as f64 / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_uniform;
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn combine(ps: &[f64], tau: f64, method: TruncatedMethod) -> TruncatedProductResult {
        let set = PValueSet::unlabeled(ps.to_vec()).unwrap();
        let opts = TruncatedOptions { method, ..Default::default() };
        truncated_product(&set, tau, opts).unwrap()
    }

    #[test]
    fn all_above_tau() {
        let r = combine(&[0.5, 0.9, 0.3], 0.2, TruncatedMethod::Analytic);
        assert_eq!(r.w_statistic, 1.0);
        assert_eq!(r.combined_p, 1.0);
    }

    #[test]
    fn single_p_value_reduces_to_itself() {
        let r = combine(&[0.05], 0.2, TruncatedMethod::Analytic);
        assert!((r.combined_p - 0.05).abs() < 1e-14);
    }

    #[test]
    fn tau_one_is_fisher() {
        for ps in [vec![0.01, 0.3], vec![0.2, 0.5, 0.04, 0.9, 0.11], vec![1e-6; 8]] {
            let r = combine(&ps, 1.0, TruncatedMethod::Analytic);
            let stat = -2.0 * ps.iter().map(|p| p.ln()).sum::<f64>();
            let fisher = ChiSquared::new(2.0 * ps.len() as f64).unwrap().sf(stat);
            assert!((r.combined_p - fisher).abs() < 1e-8, "{} vs {fisher}", r.combined_p);
        }
    }

    #[test]
    fn analytic_matches_simulation_oracle() {
        // Independent simulation: plain ChaCha draws, not the library's MC path.
        let ps = [0.01, 0.03, 0.15, 0.6, 0.9];
        let r = combine(&ps, 0.2, TruncatedMethod::Analytic);
        let obs: f64 = ps.iter().filter(|&&p| p <= 0.2).map(|p| p.ln()).sum();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                let s: f64 = (0..5)
                    .map(|_| rng.random::<f64>())
                    .filter(|&u| u <= 0.2)
                    .map(f64::ln)
                    .sum();
                s <= obs
            })
            .count();
        let est = hits as f64 / n as f64;
        let se = (est * (1.0 - est) / n as f64).sqrt();
        assert!((r.combined_p - est).abs() <= 3.0 * se, "{} vs {est} ± {se}", r.combined_p);
    }

    #[test]
    fn monte_carlo_method_and_auto_switch() {
        let ps = [0.01, 0.03, 0.15, 0.6, 0.9];
        let a = combine(&ps, 0.2, TruncatedMethod::Analytic);
        let m = combine(&ps, 0.2, TruncatedMethod::MonteCarlo);
        assert_eq!(m.method, TruncatedMethod::MonteCarlo);
        assert!((a.combined_p - m.combined_p).abs() <= 4.0 * m.mc_standard_error.unwrap());

        let many: Vec<f64> = (0..60).map(|i| (i as f64 + 0.5) / 60.0).collect();
        assert_eq!(combine(&many, 0.2, TruncatedMethod::Auto).method, TruncatedMethod::MonteCarlo);
        assert_eq!(combine(&many[..50], 0.2, TruncatedMethod::Auto).method, TruncatedMethod::Analytic);
    }

    #[test]
    fn tail_is_a_cdf() {
        for k in [1, 2, 5, 10, 30] {
            let mut last = 0.0;
            for i in 0..=200 {
                let w = (i as f64 / 200.0).powi(6);
                let p = truncated_product_tail(k, 0.2, w).unwrap();
                assert!(p >= last - 1e-15, "k={k} w={w}");
                last = p;
            }
            assert_eq!(truncated_product_tail(k, 0.2, 1.0).unwrap(), 1.0);
            // just below 1 the mass (1-τ)^k of W = 1 is excluded
            let below = truncated_product_tail(k, 0.2, 1.0 - 1e-12).unwrap();
            assert!((below - (1.0 - 0.8f64.powi(k as i32))).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_under_null() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let combined: Vec<f64> = (0..20_000)
            .map(|_| {
                let ps: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                combine(&ps, 0.2, TruncatedMethod::Analytic).combined_p
            })
            .filter(|&p| p < 1.0)
            .collect();
        // Given W < 1 the combined p is uniform on (0, 1 − 0.8^4).
        let top = 1.0 - 0.8f64.powi(4);
        let scaled: Vec<f64> = combined.iter().map(|p| p / top).collect();
        assert!(ks_uniform(&scaled).1 > 0.01);
    }

    #[test]
    fn rejects_bad_tau() {
        let set = PValueSet::unlabeled(vec![0.1]).unwrap();
        assert!(truncated_product(&set, 0.0, TruncatedOptions::default()).is_err());
        assert!(truncated_product(&set, 1.5, TruncatedOptions::default()).is_err());
    }
}
