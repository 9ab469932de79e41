use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bound_p, ScenarioResult};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::ks_uniform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCaseSpec {
    pub label: String,
    pub gamma: f64,
    pub effect: f64,
}

/// Distribution of the signed-rank Γ bound p-value over replicate samples
/// of `n_pairs` N(δ,1) differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    pub n_pairs: usize,
    pub bins: usize,
    pub cases: Vec<HistogramCaseSpec>,
}

impl Default for HistogramParams {
    fn default() -> Self {
        HistogramParams {
            n_pairs: 500,
            bins: 20,
            cases: vec![
                HistogramCaseSpec {
                    label: "effect gamma=5".into(),
                    gamma: 5.0,
                    effect: 0.5,
                },
                HistogramCaseSpec {
                    label: "null gamma=1".into(),
                    gamma: 1.0,
                    effect: 0.0,
                },
            ],
        }
    }
}

impl HistogramParams {
    pub(super) fn validated(&self) -> Result<Self> {
        if self.n_pairs == 0 || self.bins == 0 {
            return Err(Error::invalid("n_pairs and bins must be positive"));
        }
        if self.cases.is_empty() {
            return Err(Error::invalid("need at least one histogram case"));
        }
        for c in &self.cases {
            if !(c.gamma >= 1.0 && c.gamma.is_finite()) || !c.effect.is_finite() {
                return Err(Error::invalid(format!("bad case {:?}", c.label)));
            }
        }
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCase {
    pub label: String,
    pub gamma: f64,
    pub effect: f64,
    /// Bin edges, `bins + 1` values from 0 to 1; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_p: f64,
    pub fraction_above_half: f64,
    /// Kolmogorov–Smirnov distance from U(0,1) and its p-value.
    pub ks_statistic: f64,
    pub ks_p: f64,
}

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

pub(super) fn run(
    p: &HistogramParams,
    reps: usize,
    seed: u64,
    scenario_id: u64,
) -> Result<(ScenarioResult, Vec<String>)> {
    let mut cases = Vec::with_capacity(p.cases.len());
    for (ci, case) in p.cases.iter().enumerate() {
        let normal = Normal::new(case.effect, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        let ps: Result<Vec<f64>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng =
                    rng::substream(seed, &[rng::domain::SCENARIO, scenario_id, ci as u64, r as u64]);
                let diffs: Vec<f64> = (0..p.n_pairs).map(|_| normal.sample(&mut rng)).collect();
                bound_p(&diffs, case.gamma)
            })
            .collect();
        let ps = ps?;
        let mut counts = vec![0usize; p.bins];
        for &v in &ps {
            counts[bin_of(v, p.bins)] += 1;
        }
        let (ks_statistic, ks_p) = ks_uniform(&ps);
        cases.push(HistogramCase {
            label: case.label.clone(),
            gamma: case.gamma,
            effect: case.effect,
            edges: (0..=p.bins).map(|b| b as f64 / p.bins as f64).collect(),
            counts,
            mean_p: ps.iter().sum::<f64>() / reps as f64,
            fraction_above_half: ps.iter().filter(|&&v| v > 0.5).count() as f64 / reps as f64,
            ks_statistic,
            ks_p,
        });
    }
    Ok((ScenarioResult::Histogram { cases }, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::super::{run as run_spec, Scenario, ScenarioSpec};
    use super::*;

    #[test]
    fn binning_edges() {
        assert_eq!(bin_of(0.0, 20), 0);
        assert_eq!(bin_of(0.05, 20), 1);
        assert_eq!(bin_of(1.0, 20), 19);
    }

    #[test]
    fn shapes_of_the_two_cases() {
        let spec = ScenarioSpec::new(Scenario::PvalueHistogram(Default::default()), 300, 9);
        let out = run_spec(&spec).unwrap();
        let h = out.histograms().unwrap();
        assert_eq!(h.len(), 2);
        for c in h {
            assert_eq!(c.counts.iter().sum::<usize>(), 300);
            assert_eq!(c.edges.len(), 21);
        }
        // conservative bound: mass piles up near 1
        assert!(h[0].fraction_above_half > 0.9, "{}", h[0].fraction_above_half);
        assert!(h[1].ks_p > 0.001, "{}", h[1].ks_p);
    }
}
