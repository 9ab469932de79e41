use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bound_p, check_alpha, check_grid, linspace, point, PowerCurve, ScenarioResult};
use crate::error::{Error, Result};
use crate::pairs::{planning_size, split_with};
use crate::rng;
use crate::sensitivity::signed_rank_summary;

pub const METHOD_A_PRIORI: &str = "a-priori";
pub const METHOD_BONFERRONI: &str = "bonferroni";
pub const METHOD_SPLITTING: &str = "splitting";

/// `K` outcomes on `n` pairs, all N(0,1) differences except outcome 0,
/// which is shifted by the effect on the x axis.
///
/// Three protocols are compared. The a-priori investigator tests one
/// outcome, the right one with probability `prior_correct`. Bonferroni tests
/// all `K` at `α/K`. Splitting picks the outcome with the largest
/// standardized signed-rank statistic on a random planning sample and tests
/// it at `α` on the rest. Power is the chance a protocol rejects any null it
/// tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiOutcomeParams {
    pub n_pairs: usize,
    pub outcomes: usize,
    /// Shifts of outcome 0; defaults depend on the scenario kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects: Option<Vec<f64>>,
    /// 1 for the randomized kind, 3 for the sensitivity kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub planning_fraction: f64,
    pub prior_correct: f64,
}

impl Default for MultiOutcomeParams {
    fn default() -> Self {
        MultiOutcomeParams {
            n_pairs: 500,
            outcomes: 100,
            effects: None,
            gamma: None,
            alpha: 0.05,
            planning_fraction: 1.0 / 3.0,
            prior_correct: 2.0 / 3.0,
        }
    }
}

impl MultiOutcomeParams {
    pub(super) fn resolved(&self, sensitivity: bool) -> Result<Self> {
        let mut p = self.clone();
        let gamma = p.gamma.unwrap_or(if sensitivity { 3.0 } else { 1.0 });
        if !sensitivity && gamma != 1.0 {
            return Err(Error::invalid("the randomized scenario fixes gamma at 1"));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma {gamma} must be finite and >= 1")));
        }
        p.gamma = Some(gamma);
        if p.effects.is_none() {
            p.effects = Some(if sensitivity {
                linspace(0.45, 0.8, 8)
            } else {
                linspace(0.0, 0.35, 8)
            });
        }
        check_grid("effects", p.effects.as_deref().unwrap_or_default())?;
        check_alpha(p.alpha)?;
        if p.outcomes == 0 {
            return Err(Error::invalid("need at least one outcome"));
        }
        if !(0.0..=1.0).contains(&p.prior_correct) {
            return Err(Error::invalid("prior_correct must lie in [0, 1]"));
        }
        planning_size(p.n_pairs, p.planning_fraction)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct RepOutcome {
    a_priori: bool,
    bonferroni: bool,
    splitting: bool,
}

fn one_rep<R: Rng>(p: &MultiOutcomeParams, effect: f64, gamma: f64, rng: &mut R) -> Result<RepOutcome> {
    let n = p.n_pairs;
    let k_out = p.outcomes;
    let mut data = vec![0.0f64; n * k_out];
    for (idx, v) in data.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *v = if idx < n { z + effect } else { z };
    }
    let outcome = |k: usize| &data[k * n..(k + 1) * n];

    let prior_pick = if k_out == 1 || rng.random::<f64>() < p.prior_correct {
        0
    } else {
        1
    };
    let a_priori = bound_p(outcome(prior_pick), gamma)? <= p.alpha;

    let mut bonferroni = false;
    let threshold = p.alpha / k_out as f64;
    for k in 0..k_out {
        if bound_p(outcome(k), gamma)? <= threshold {
            bonferroni = true;
            break;
        }
    }

    let k_plan = planning_size(n, p.planning_fraction)?;
    let (planning, analysis) = split_with(n, k_plan, rng);
    let mut buf = Vec::with_capacity(n);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..k_out {
        buf.clear();
        buf.extend(planning.iter().map(|&i| outcome(k)[i]));
        let score = signed_rank_summary(&buf)
            .map(|s| s.standardized())
            .unwrap_or(f64::NEG_INFINITY);
        if score > best.0 {
            best = (score, k);
        }
    }
    buf.clear();
    buf.extend(analysis.iter().map(|&i| outcome(best.1)[i]));
    let splitting = bound_p(&buf, gamma)? <= p.alpha;

    Ok(RepOutcome {
        a_priori,
        bonferroni,
        splitting,
    })
}

pub(super) fn run(
    p: &MultiOutcomeParams,
    reps: usize,
    seed: u64,
    scenario_id: u64,
) -> Result<(ScenarioResult, Vec<String>)> {
    let gamma = p.gamma.unwrap_or(1.0);
    let effects = p.effects.clone().unwrap_or_default();
    let mut points = Vec::with_capacity(effects.len() * 3);
    for (g, &effect) in effects.iter().enumerate() {
        let reps_out: Result<Vec<RepOutcome>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng::substream(
                    seed,
                    &[rng::domain::SCENARIO, scenario_id, g as u64, r as u64],
                );
                one_rep(p, effect, gamma, &mut rng)
            })
            .collect();
        let reps_out = reps_out?;
        let count = |f: fn(&RepOutcome) -> bool| reps_out.iter().filter(|o| f(o)).count();
        points.push(point(effect, METHOD_A_PRIORI, count(|o| o.a_priori), reps));
        points.push(point(effect, METHOD_BONFERRONI, count(|o| o.bonferroni), reps));
        points.push(point(effect, METHOD_SPLITTING, count(|o| o.splitting), reps));
    }
    let notes = vec![format!(
        "gamma={gamma}; power is the probability of rejecting at least one tested null"
    )];
    Ok((
        ScenarioResult::Curve(PowerCurve {
            x_label: "effect".into(),
            reps,
            points,
            markers: Vec::new(),
        }),
        notes,
    ))
}
