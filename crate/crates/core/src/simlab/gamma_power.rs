use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_alpha, check_grid, linspace, point, Marker, PowerCurve, ScenarioResult};
use crate::error::{Error, Result};
use crate::rng;
use crate::sensitivity::{design_sensitivity_normal, signed_rank_summary};

/// Power of the signed-rank Γ bound against Γ for N(δ,1) differences, one
/// curve per (δ, n). Each replicate sample is evaluated at every Γ on the
/// grid, so a curve is monotone in Γ by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerVsGammaParams {
    pub sample_sizes: Vec<usize>,
    pub effects: Vec<f64>,
    pub gammas: Vec<f64>,
    pub alpha: f64,
}

impl Default for PowerVsGammaParams {
    fn default() -> Self {
        PowerVsGammaParams {
            sample_sizes: vec![200, 2000, 20000],
            effects: vec![0.5, 1.0],
            gammas: linspace(1.0, 14.0, 53),
            alpha: 0.05,
        }
    }
}

impl PowerVsGammaParams {
    pub(super) fn validated(&self) -> Result<Self> {
        check_grid("effects", &self.effects)?;
        check_grid("gammas", &self.gammas)?;
        check_alpha(self.alpha)?;
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::invalid("sample_sizes must be nonempty and positive"));
        }
        if self.gammas.iter().any(|&g| g < 1.0) {
            return Err(Error::invalid("every gamma must be >= 1"));
        }
        Ok(self.clone())
    }
}

pub fn series_label(effect: f64, n: usize) -> String {
    format!("delta={effect} n={n}")
}

pub(super) fn run(
    p: &PowerVsGammaParams,
    reps: usize,
    seed: u64,
    scenario_id: u64,
) -> Result<(ScenarioResult, Vec<String>)> {
    let mut points = Vec::new();
    let mut markers = Vec::new();
    let mut notes = Vec::new();
    for (ei, &effect) in p.effects.iter().enumerate() {
        let normal = Normal::new(effect, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        for (ni, &n) in p.sample_sizes.iter().enumerate() {
            let per_rep: Result<Vec<Vec<bool>>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rng::substream(
                        seed,
                        &[rng::domain::SCENARIO, scenario_id, ei as u64, ni as u64, r as u64],
                    );
                    let diffs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    match signed_rank_summary(&diffs) {
                        Some(s) => p
                            .gammas
                            .iter()
                            .map(|&g| Ok(s.normal_upper_p(g)? <= p.alpha))
                            .collect(),
                        None => Ok(vec![false; p.gammas.len()]),
                    }
                })
                .collect();
            let per_rep = per_rep?;
            let label = series_label(effect, n);
            for (gi, &g) in p.gammas.iter().enumerate() {
                let hits = per_rep.iter().filter(|v| v[gi]).count();
                points.push(point(g, &label, hits, reps));
            }
        }
        match design_sensitivity_normal(effect) {
            Ok(d) => markers.push(Marker {
                label: format!("design sensitivity delta={effect}"),
                x: d.gamma_tilde,
            }),
            Err(e) => notes.push(format!("no design sensitivity for delta={effect}: {e}")),
        }
    }
    Ok((
        ScenarioResult::Curve(PowerCurve {
            x_label: "gamma".into(),
            reps,
            points,
            markers,
        }),
        notes,
    ))
}
