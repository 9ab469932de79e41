use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bound_p, check_alpha, point, PowerCurve, ScenarioResult};
use crate::error::{Error, Result};
use crate::multiplicity::{truncated_product, PValueSet, TruncatedMethod, TruncatedOptions};
use crate::rng;

pub const METHOD_COMBINED: &str = "combined";
pub const METHOD_TRUNCATED: &str = "truncated-product";

/// Two subgroups of `group_size` pairs with N(δ₁,1) and N(δ₂,1)
/// differences. The effects move linearly from `start` to `end`; x is the
/// position along that path in [0, 1]. The combined test applies the Γ
/// bound to all pairs at once; the alternative bounds each group separately
/// and merges the two p-values with the truncated product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgroupHeteroParams {
    pub group_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<[f64; 2]>,
    pub points: usize,
    pub alpha: f64,
    pub tau: f64,
}

impl Default for SubgroupHeteroParams {
    fn default() -> Self {
        SubgroupHeteroParams {
            group_size: 500,
            gamma: None,
            start: None,
            end: None,
            points: 8,
            alpha: 0.05,
            tau: crate::multiplicity::DEFAULT_TAU,
        }
    }
}

impl SubgroupHeteroParams {
    pub(super) fn resolved(&self) -> Result<Self> {
        let mut p = self.clone();
        let gamma = p.gamma.unwrap_or(1.0);
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma {gamma} must be finite and >= 1")));
        }
        // effects scale up by 8 once there is bias to overcome
        let scale = if gamma > 1.0 { 8.0 } else { 1.0 };
        p.gamma = Some(gamma);
        p.start.get_or_insert([0.06875 * scale, 0.06875 * scale]);
        p.end.get_or_insert([0.1375 * scale, 0.0]);
        if p.group_size < 1 || p.points == 0 {
            return Err(Error::invalid("group_size and points must be positive"));
        }
        check_alpha(p.alpha)?;
        if !(p.tau > 0.0 && p.tau <= 1.0) {
            return Err(Error::invalid(format!("tau {} outside (0, 1]", p.tau)));
        }
        Ok(p)
    }

    /// Effects of the two groups at each grid position.
    pub fn path(&self) -> Vec<(f64, [f64; 2])> {
        let s = self.start.unwrap_or([0.0; 2]);
        let e = self.end.unwrap_or([0.0; 2]);
        super::linspace(0.0, 1.0, self.points)
            .into_iter()
            .map(|t| (t, [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]))
            .collect()
    }
}

pub(super) fn run(
    p: &SubgroupHeteroParams,
    reps: usize,
    seed: u64,
    scenario_id: u64,
) -> Result<(ScenarioResult, Vec<String>)> {
    let gamma = p.gamma.unwrap_or(1.0);
    let options = TruncatedOptions {
        method: TruncatedMethod::Analytic,
        ..Default::default()
    };
    let m = p.group_size;
    let mut points = Vec::new();
    let mut notes = vec![format!("gamma={gamma} tau={}", p.tau)];
    for (g, (t, effects)) in p.path().into_iter().enumerate() {
        notes.push(format!("x={t}: effects {} and {}", effects[0], effects[1]));
        let per_rep: Result<Vec<(bool, bool)>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng =
                    rng::substream(seed, &[rng::domain::SCENARIO, scenario_id, g as u64, r as u64]);
                let diffs: Vec<f64> = (0..2 * m)
                    .map(|i| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + effects[i / m]
                    })
                    .collect();
                let combined = bound_p(&diffs, gamma)? <= p.alpha;
                let p1 = bound_p(&diffs[..m], gamma)?;
                let p2 = bound_p(&diffs[m..], gamma)?;
                let set = PValueSet::unlabeled(vec![p1, p2])?;
                let tp = truncated_product(&set, p.tau, options)?.combined_p <= p.alpha;
                Ok((combined, tp))
            })
            .collect();
        let per_rep = per_rep?;
        let combined = per_rep.iter().filter(|x| x.0).count();
        let truncated = per_rep.iter().filter(|x| x.1).count();
        points.push(point(t, METHOD_COMBINED, combined, reps));
        points.push(point(t, METHOD_TRUNCATED, truncated, reps));
    }
    Ok((
        ScenarioResult::Curve(PowerCurve {
            x_label: "heterogeneity".into(),
            reps,
            points,
            markers: Vec::new(),
        }),
        notes,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::{run as run_spec, Scenario, ScenarioSpec};
    use super::*;

    #[test]
    fn scaled_defaults() {
        let p = SubgroupHeteroParams {
            gamma: Some(3.0),
            ..Default::default()
        }
        .resolved()
        .unwrap();
        assert_eq!(p.start, Some([0.55, 0.55]));
        assert_eq!(p.end, Some([1.1, 0.0]));
        let path = p.path();
        assert_eq!(path.len(), 8);
        assert_eq!(path[7].1, [1.1, 0.0]);
    }

    #[test]
    fn concentrated_effect_favours_truncated() {
        let params = SubgroupHeteroParams {
            gamma: Some(3.0),
            points: 2,
            group_size: 200,
            ..Default::default()
        };
        let out = run_spec(&ScenarioSpec::new(Scenario::SubgroupHetero(params), 150, 4)).unwrap();
        let c = out.curve().unwrap();
        let comb = c.at(METHOD_COMBINED, 1.0).unwrap().power;
        let tp = c.at(METHOD_TRUNCATED, 1.0).unwrap().power;
        assert!(tp > comb + 0.5, "{tp} vs {comb}");
    }
}
