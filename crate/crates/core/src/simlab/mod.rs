//! Monte Carlo scenarios for protocol design.
//!
//! A [`ScenarioSpec`] names a scenario kind, its parameters, the number of
//! replicates and a master seed. [`run`] evaluates it; every replicate draws
//! from its own ChaCha8 substream keyed by (seed, scenario, grid point,
//! replicate), so results are identical whatever the rayon pool size.

mod gamma_power;
mod histogram;
mod iv;
mod multi_outcome;
mod output;
mod subgroup;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gamma_power::PowerVsGammaParams;
pub use histogram::{HistogramCase, HistogramParams};
pub use iv::{IvParams, IvRow, IvTable};
pub use multi_outcome::MultiOutcomeParams;
pub use output::{render_svg, table_name, write_outputs, write_table_csv};
pub use subgroup::SubgroupHeteroParams;

/// Replicates per grid point when a spec does not say.
pub const DEFAULT_REPS: usize = 2000;

fn default_reps() -> usize {
    DEFAULT_REPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// Power for an effect on one of many outcomes, randomized setting.
    MultiOutcomeRct(MultiOutcomeParams),
    /// The same comparison for a sensitivity analysis at Γ > 1.
    MultiOutcomeGamma(MultiOutcomeParams),
    /// Power of the signed-rank sensitivity analysis across Γ.
    PowerVsGamma(PowerVsGammaParams),
    /// Histograms of bound p-values under an effect and under the null.
    PvalueHistogram(HistogramParams),
    /// Combined test versus the truncated product over two subgroups.
    SubgroupHetero(SubgroupHeteroParams),
    /// Bias from matching on an instrument-like covariate.
    IvAdjustment(IvParams),
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::MultiOutcomeRct(_) => "multi-outcome-rct",
            Scenario::MultiOutcomeGamma(_) => "multi-outcome-gamma",
            Scenario::PowerVsGamma(_) => "power-vs-gamma",
            Scenario::PvalueHistogram(_) => "pvalue-histogram",
            Scenario::SubgroupHetero(_) => "subgroup-hetero",
            Scenario::IvAdjustment(_) => "iv-adjustment",
        }
    }

    /// Default parameters for a scenario name.
    pub fn from_name(name: &str) -> Result<Scenario> {
        Ok(match name {
            "multi-outcome-rct" | "fig1" => Scenario::MultiOutcomeRct(Default::default()),
            "multi-outcome-gamma" | "fig2" => Scenario::MultiOutcomeGamma(Default::default()),
            "power-vs-gamma" | "fig3" => Scenario::PowerVsGamma(Default::default()),
            "pvalue-histogram" | "fig4" => Scenario::PvalueHistogram(Default::default()),
            "subgroup-hetero" | "fig8" => Scenario::SubgroupHetero(Default::default()),
            "iv-adjustment" | "iv" => Scenario::IvAdjustment(Default::default()),
            other => return Err(Error::invalid(format!("unknown scenario {other:?}"))),
        })
    }

    fn stream_id(&self) -> u64 {
        match self {
            Scenario::MultiOutcomeRct(_) => 1,
            Scenario::MultiOutcomeGamma(_) => 2,
            Scenario::PowerVsGamma(_) => 3,
            Scenario::PvalueHistogram(_) => 4,
            Scenario::SubgroupHetero(_) => 8,
            Scenario::IvAdjustment(_) => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(flatten)]
    pub scenario: Scenario,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, reps: usize, seed: u64) -> Self {
        ScenarioSpec {
            seed,
            reps,
            scenario,
        }
    }

    /// Copy with every defaulted parameter filled in.
    pub fn resolved(&self) -> Result<ScenarioSpec> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be positive"));
        }
        let scenario = match &self.scenario {
            Scenario::MultiOutcomeRct(p) => Scenario::MultiOutcomeRct(p.resolved(false)?),
            Scenario::MultiOutcomeGamma(p) => Scenario::MultiOutcomeGamma(p.resolved(true)?),
            Scenario::PowerVsGamma(p) => Scenario::PowerVsGamma(p.validated()?),
            Scenario::PvalueHistogram(p) => Scenario::PvalueHistogram(p.validated()?),
            Scenario::SubgroupHetero(p) => Scenario::SubgroupHetero(p.resolved()?),
            Scenario::IvAdjustment(p) => Scenario::IvAdjustment(p.validated()?),
        };
        Ok(ScenarioSpec {
            seed: self.seed,
            reps: self.reps,
            scenario,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub method: String,
    pub power: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub x: f64,
}

/// Rejection rates with binomial standard errors `sqrt(p(1−p)/reps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub x_label: String,
    pub reps: usize,
    pub points: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub markers: Vec<Marker>,
}

impl PowerCurve {
    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.points {
            if !out.contains(&p.method.as_str()) {
                out.push(&p.method);
            }
        }
        out
    }

    pub fn series(&self, method: &str) -> Vec<&CurvePoint> {
        self.points.iter().filter(|p| p.method == method).collect()
    }

    /// Point of `method` whose x is within 1e-9 of `x`.
    pub fn at(&self, method: &str, x: f64) -> Option<&CurvePoint> {
        self.points
            .iter()
            .find(|p| p.method == method && (p.x - x).abs() < 1e-9)
    }
}

fn point(x: f64, method: &str, hits: usize, reps: usize) -> CurvePoint {
    let power = hits as f64 / reps as f64;
    CurvePoint {
        x,
        method: method.to_string(),
        power,
        se: crate::sensitivity::binomial_se(power, reps),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ScenarioResult {
    Curve(PowerCurve),
    Histogram { cases: Vec<HistogramCase> },
    Iv(IvTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    /// The fully resolved spec that produced this output.
    pub spec: ScenarioSpec,
    pub result: ScenarioResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SimulationOutput {
    pub fn curve(&self) -> Option<&PowerCurve> {
        match &self.result {
            ScenarioResult::Curve(c) => Some(c),
            _ => None,
        }
    }

    pub fn histograms(&self) -> Option<&[HistogramCase]> {
        match &self.result {
            ScenarioResult::Histogram { cases } => Some(cases),
            _ => None,
        }
    }

    pub fn iv(&self) -> Option<&IvTable> {
        match &self.result {
            ScenarioResult::Iv(t) => Some(t),
            _ => None,
        }
    }
}

/// Runs a scenario on the current rayon pool.
pub fn run(spec: &ScenarioSpec) -> Result<SimulationOutput> {
    let spec = spec.resolved()?;
    let id = spec.scenario.stream_id();
    let (result, notes) = match &spec.scenario {
        Scenario::MultiOutcomeRct(p) | Scenario::MultiOutcomeGamma(p) => {
            multi_outcome::run(p, spec.reps, spec.seed, id)?
        }
        Scenario::PowerVsGamma(p) => gamma_power::run(p, spec.reps, spec.seed, id)?,
        Scenario::PvalueHistogram(p) => histogram::run(p, spec.reps, spec.seed, id)?,
        Scenario::SubgroupHetero(p) => subgroup::run(p, spec.reps, spec.seed, id)?,
        Scenario::IvAdjustment(p) => iv::run(p, spec.reps, spec.seed, id)?,
    };
    Ok(SimulationOutput { spec, result, notes })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")))
    }
}

fn check_grid(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} must be a nonempty list of finite numbers")));
    }
    Ok(())
}

/// Normal-approximation Γ bound for raw differences; 1 when all are zero.
fn bound_p(diffs: &[f64], gamma: f64) -> Result<f64> {
    match crate::sensitivity::signed_rank_summary(diffs) {
        Some(s) => s.normal_upper_p(gamma),
        None => Ok(1.0),
    }
}

/// `points` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_minimal() {
        let s: ScenarioSpec =
            serde_json::from_str(r#"{"kind":"multi-outcome-gamma","seed":7,"reps":10}"#).unwrap();
        let r = s.resolved().unwrap();
        match r.scenario {
            Scenario::MultiOutcomeGamma(p) => {
                assert_eq!(p.gamma, Some(3.0));
                assert_eq!(p.outcomes, 100);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn spec_round_trip() {
        let s = ScenarioSpec::new(Scenario::from_name("fig8").unwrap(), 5, 1).resolved().unwrap();
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"kind\":\"subgroup-hetero\""));
        let back: ScenarioSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_scenario() {
        assert!(Scenario::from_name("fig9").is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 0.35, 8);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.0);
        assert!((g[7] - 0.35).abs() < 1e-15);
    }
}

#[cfg(test)]
mod determinism_tests {
    use super::*;

    fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(f)
    }

    #[test]
    fn identical_across_thread_counts() {
        let params = MultiOutcomeParams {
            n_pairs: 90,
            outcomes: 6,
            effects: Some(vec![0.3]),
            ..Default::default()
        };
        let spec = ScenarioSpec::new(Scenario::MultiOutcomeGamma(params), 60, 17);
        let one = in_pool(1, || run(&spec).unwrap());
        let four = in_pool(4, || run(&spec).unwrap());
        assert_eq!(one, four);

        let iv = ScenarioSpec::new(
            Scenario::IvAdjustment(IvParams {
                n_subjects: 40,
                ..Default::default()
            }),
            20,
            3,
        );
        assert_eq!(in_pool(1, || run(&iv).unwrap()), in_pool(3, || run(&iv).unwrap()));
    }

    #[test]
    fn doubling_reps_shrinks_se() {
        let params = PowerVsGammaParams {
            sample_sizes: vec![60],
            effects: vec![0.2],
            gammas: vec![1.0],
            alpha: 0.05,
        };
        let se = |reps| {
            let out = run(&ScenarioSpec::new(Scenario::PowerVsGamma(params.clone()), reps, 5)).unwrap();
            out.curve().unwrap().points[0].se
        };
        let ratio = se(800) / se(1600);
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "{ratio}");
    }
}
