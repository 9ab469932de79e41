use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{p_plus, BoundMethod, GammaBoundResult};
use crate::error::{Error, Result};
use crate::pairs::RankedPairs;
use crate::stats::norm_sf;

/// Largest number of nonzero pairs accepted by the exact convolution.
pub const MAX_EXACT_PAIRS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    #[default]
    NormalApprox,
    ExactConvolution,
}

/// Everything the normal approximation needs from a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedRankSummary {
    pub nonzero: usize,
    pub statistic: f64,
    pub rank_sum: f64,
    pub rank_sq_sum: f64,
}

impl SignedRankSummary {
    pub fn from_ranked(r: &RankedPairs) -> Self {
        SignedRankSummary {
            nonzero: r.len(),
            statistic: r.statistic(),
            rank_sum: r.abs_ranks.iter().sum(),
            rank_sq_sum: r.abs_ranks.iter().map(|q| q * q).sum(),
        }
    }

    pub fn bound_moments(&self, p: f64) -> (f64, f64) {
        let mu = p * self.rank_sum;
        let sigma = (p * (1.0 - p) * self.rank_sq_sum).sqrt();
        (mu, sigma)
    }

    /// Normal-approximation upper bound, no continuity correction.
    pub fn normal_upper_p(&self, gamma: f64) -> Result<f64> {
        let p = p_plus(gamma)?;
        let (mu, sigma) = self.bound_moments(p);
        if !(sigma > 0.0) {
            return Err(Error::Numeric("bounding distribution has zero variance".into()));
        }
        Ok(norm_sf((self.statistic - mu) / sigma))
    }

    /// Standardized statistic at Γ = 1, used to score outcomes.
    pub fn standardized(&self) -> f64 {
        let (mu, sigma) = self.bound_moments(0.5);
        (self.statistic - mu) / sigma
    }
}

/// Signed-rank summary straight from raw differences (zeros dropped, ties
/// averaged). Returns `None` when every difference is zero.
///
/// This is the allocation-light path used inside simulations; it agrees with
/// `rank_diffs` followed by [`SignedRankSummary::from_ranked`].
pub fn signed_rank_summary(diffs: &[f64]) -> Option<SignedRankSummary> {
    let mut abs: Vec<(f64, bool)> = diffs
        .iter()
        .filter(|d| **d != 0.0)
        .map(|&d| (d.abs(), d > 0.0))
        .collect();
    if abs.is_empty() {
        return None;
    }
    abs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let m = abs.len();
    let (mut t, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < m {
        let mut j = i + 1;
        while j < m && abs[j].0 == abs[i].0 {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for item in &abs[i..j] {
            if item.1 {
                t += rank;
            }
            s1 += rank;
            s2 += rank * rank;
        }
        i = j;
    }
    Some(SignedRankSummary {
        nonzero: m,
        statistic: t,
        rank_sum: s1,
        rank_sq_sum: s2,
    })
}

/// Upper bound on the one-sided p-value of Wilcoxon's signed rank test under
/// sensitivity parameter Γ.
///
/// `T` sums the ranks of `|diff|` over positive pairs. The bounding
/// distribution takes pair `i` positive independently with probability
/// `p⁺ = Γ/(1+Γ)`, giving `μ = p⁺Σq` and `σ² = p⁺(1−p⁺)Σq²`. The normal method
/// reports `1 − Φ((T − μ)/σ)`; the exact method convolves the pair
/// contributions with a dynamic program over attainable rank sums.
pub fn wilcoxon_gamma_bound(
    ranked: &RankedPairs,
    gamma: f64,
    method: WilcoxonMethod,
) -> Result<GammaBoundResult> {
    if ranked.is_empty() {
        return Err(Error::Degenerate("no nonzero pairs".into()));
    }
    let p = p_plus(gamma)?;
    let summary = SignedRankSummary::from_ranked(ranked);
    let (mu, sigma) = summary.bound_moments(p);
    let (p_upper, method) = match method {
        WilcoxonMethod::NormalApprox => {
            (summary.normal_upper_p(gamma)?, BoundMethod::NormalApprox)
        }
        WilcoxonMethod::ExactConvolution => {
            (exact_upper_tail(ranked, p)?, BoundMethod::ExactConvolution)
        }
    };
    Ok(GammaBoundResult {
        gamma,
        statistic: summary.statistic,
        p_upper,
        mu_bound: mu,
        sigma_bound: sigma,
        method,
    })
}

fn exact_upper_tail(ranked: &RankedPairs, p: f64) -> Result<f64> {
    let m = ranked.len();
    if m > MAX_EXACT_PAIRS {
        return Err(Error::invalid(format!(
            "exact convolution supports at most {MAX_EXACT_PAIRS} nonzero pairs (got {m})"
        )));
    }
    // Average ranks are multiples of 1/2; doubling makes every weight integral.
    let scale = if ranked.abs_ranks.iter().all(|q| q.fract() == 0.0) {
        1.0
    } else {
        2.0
    };
    let weights: Vec<usize> = ranked
        .abs_ranks
        .iter()
        .map(|q| (q * scale).round() as usize)
        .collect();
    let total: usize = weights.iter().sum();
    let target = (ranked.statistic() * scale).round() as usize;

    let q = 1.0 - p;
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &w in &weights {
        for s in (0..=reach).rev() {
            let mass = dist[s];
            if mass != 0.0 {
                dist[s + w] += p * mass;
                dist[s] = q * mass;
            }
        }
        reach += w;
    }
    let tail: f64 = dist[target.min(total + 1)..].iter().sum();
    Ok(tail.clamp(0.0, 1.0))
}
