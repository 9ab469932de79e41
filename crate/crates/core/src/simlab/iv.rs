use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScenarioResult;
use crate::error::{Error, Result};
use crate::matcher::{distance_matrix, optimal_pair_match, DistanceMetric, SubjectTable};
use crate::rng;
use crate::stats::{mean, variance};

/// Observational study with a measured covariate `Z` and an unmeasured `U`:
///
/// `U = ρZ + √(1−ρ²)V`, `A ~ Bernoulli(logistic(a₀ + γ_z Z + γ_u U))`,
/// `Y = τA + β_u U + ε`, with `Z, V, ε` independent N(0,1).
///
/// With `ρ = 0`, `Z` only moves treatment and behaves like an instrument;
/// matching on it removes no bias and can enlarge the bias from `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvParams {
    pub n_subjects: usize,
    pub treat_intercept: f64,
    pub treat_z: f64,
    pub treat_u: f64,
    /// Correlation ρ between `Z` and `U`.
    pub zu_correlation: f64,
    pub outcome_u: f64,
    pub effect: f64,
}

impl Default for IvParams {
    fn default() -> Self {
        IvParams {
            n_subjects: 300,
            treat_intercept: -0.7,
            treat_z: 1.5,
            treat_u: 1.0,
            zu_correlation: 0.0,
            outcome_u: 1.0,
            effect: 1.0,
        }
    }
}

impl IvParams {
    pub(super) fn validated(&self) -> Result<Self> {
        if self.n_subjects < 4 {
            return Err(Error::invalid("need at least 4 subjects"));
        }
        if !(-1.0..=1.0).contains(&self.zu_correlation) {
            return Err(Error::invalid("zu_correlation must lie in [-1, 1]"));
        }
        let all = [
            self.treat_intercept,
            self.treat_z,
            self.treat_u,
            self.outcome_u,
            self.effect,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("IV parameters must be finite"));
        }
        Ok(self.clone())
    }
}

pub const DESIGN_MATCH_Z: &str = "match-on-z";
pub const DESIGN_IGNORE_Z: &str = "ignore-z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRow {
    pub design: String,
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub rmse: f64,
    /// Delta-method standard error of the RMSE.
    pub rmse_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvTable {
    pub effect: f64,
    /// Replicates with both treated and control subjects.
    pub used_reps: usize,
    pub skipped_reps: usize,
    pub rows: Vec<IvRow>,
}

impl IvTable {
    pub fn row(&self, design: &str) -> Option<&IvRow> {
        self.rows.iter().find(|r| r.design == design)
    }
}

/// Mean treated-minus-control difference over matched pairs, for the two
/// designs; `None` if every subject landed in one arm.
fn one_rep<R: Rng>(p: &IvParams, rng: &mut R) -> Result<Option<(f64, f64)>> {
    let n = p.n_subjects;
    let rho = p.zu_correlation;
    let mut z = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let zi: f64 = StandardNormal.sample(rng);
        let vi: f64 = StandardNormal.sample(rng);
        let ei: f64 = StandardNormal.sample(rng);
        let ui = rho * zi + (1.0 - rho * rho).sqrt() * vi;
        let eta = p.treat_intercept + p.treat_z * zi + p.treat_u * ui;
        let ai = rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp());
        z.push(zi);
        a.push(ai);
        y.push(p.effect * f64::from(u8::from(ai)) + p.outcome_u * ui + ei);
    }
    let mut treated: Vec<usize> = (0..n).filter(|&i| a[i]).collect();
    let mut controls: Vec<usize> = (0..n).filter(|&i| !a[i]).collect();
    if treated.is_empty() || controls.is_empty() {
        return Ok(None);
    }

    let table = SubjectTable::new(
        (0..n).map(|i| i.to_string()).collect(),
        a.clone(),
        vec!["z".into()],
        z.iter().map(|&v| vec![v]).collect(),
    )?;
    let d = distance_matrix(&table, DistanceMetric::RankMahalanobis, None, None)?;
    let m = optimal_pair_match(&d);
    let mut diffs = Vec::with_capacity(m.pairs.len());
    for pair in &m.pairs {
        let (ti, ci) = match (pair.treated_id.parse::<usize>(), pair.control_id.parse::<usize>()) {
            (Ok(t), Ok(c)) => (t, c),
            _ => return Err(Error::Numeric("matcher returned an unknown id".into())),
        };
        diffs.push(y[ti] - y[ci]);
    }
    let matched = mean(&diffs);

    // same number of pairs, partners drawn at random
    let k = treated.len().min(controls.len());
    treated.shuffle(rng);
    controls.shuffle(rng);
    let random_diffs: Vec<f64> = (0..k).map(|i| y[treated[i]] - y[controls[i]]).collect();
    Ok(Some((matched, mean(&random_diffs))))
}

fn summarize(design: &str, estimates: &[f64], effect: f64) -> IvRow {
    let r = estimates.len() as f64;
    let errors: Vec<f64> = estimates.iter().map(|e| e - effect).collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let bias = mean(&errors);
    let mse = mean(&sq);
    let rmse = mse.sqrt();
    let (bias_se, mse_se) = if estimates.len() > 1 {
        ((variance(&errors) / r).sqrt(), (variance(&sq) / r).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    IvRow {
        design: design.to_string(),
        mean_estimate: mean(estimates),
        bias,
        bias_se,
        rmse,
        rmse_se: if rmse > 0.0 { mse_se / (2.0 * rmse) } else { f64::NAN },
    }
}

pub(super) fn run(
    p: &IvParams,
    reps: usize,
    seed: u64,
    scenario_id: u64,
) -> Result<(ScenarioResult, Vec<String>)> {
    let per_rep: Result<Vec<Option<(f64, f64)>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, &[rng::domain::SCENARIO, scenario_id, r as u64]);
            one_rep(p, &mut rng)
        })
        .collect();
    let per_rep = per_rep?;
    let kept: Vec<(f64, f64)> = per_rep.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Degenerate(
            "no replicate had both treated and control subjects".into(),
        ));
    }
    let matched: Vec<f64> = kept.iter().map(|x| x.0).collect();
    let random: Vec<f64> = kept.iter().map(|x| x.1).collect();
    let table = IvTable {
        effect: p.effect,
        used_reps: kept.len(),
        skipped_reps: reps - kept.len(),
        rows: vec![
            summarize(DESIGN_MATCH_Z, &matched, p.effect),
            summarize(DESIGN_IGNORE_Z, &random, p.effect),
        ],
    };
    Ok((ScenarioResult::Iv(table), Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::super::{run as run_spec, Scenario, ScenarioSpec};
    use super::*;

    fn table(rho: f64, outcome_u: f64, reps: usize) -> IvTable {
        let params = IvParams {
            n_subjects: 120,
            zu_correlation: rho,
            outcome_u,
            ..Default::default()
        };
        let out = run_spec(&ScenarioSpec::new(Scenario::IvAdjustment(params), reps, 21)).unwrap();
        out.iv().unwrap().clone()
    }

    #[test]
    fn no_hidden_confounding_both_unbiased() {
        // U does not touch Y, Z does not touch Y: both unbiased
        let t = table(0.0, 0.0, 150);
        for r in &t.rows {
            assert!(r.bias.abs() < 4.0 * r.bias_se + 0.02, "{r:?}");
        }
    }

    #[test]
    fn valid_instrument_amplifies_bias() {
        let t = table(0.0, 1.0, 150);
        let m = t.row(DESIGN_MATCH_Z).unwrap();
        let g = t.row(DESIGN_IGNORE_Z).unwrap();
        assert!(m.bias.abs() > g.bias.abs(), "{m:?} {g:?}");
    }

    #[test]
    fn strong_z_u_association_matching_reduces_bias() {
        let t = table(0.9, 1.0, 150);
        let m = t.row(DESIGN_MATCH_Z).unwrap();
        let g = t.row(DESIGN_IGNORE_Z).unwrap();
        assert!(m.bias.abs() < g.bias.abs(), "{m:?} {g:?}");
    }

    #[test]
    fn rmse_se_by_delta_method() {
        let est = [1.0, 1.2, 0.8, 1.4, 0.6];
        let row = summarize("x", &est, 1.0);
        assert!((row.rmse - (0.08f64).sqrt()).abs() < 1e-12);
        let sq = [0.0, 0.04, 0.04, 0.16, 0.16];
        let se_mse = (variance(&sq) / 5.0).sqrt();
        assert!((row.rmse_se - se_mse / (2.0 * row.rmse)).abs() < 1e-12);
    }
}
