use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PropensityModel, SubjectTable};
use crate::error::{Error, Result};
use crate::stats::{average_ranks, variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    RankMahalanobis,
    PropensityAbsDiff,
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceMetric::RankMahalanobis => "rank-mahalanobis",
            DistanceMetric::PropensityAbsDiff => "propensity-abs-diff",
        })
    }
}

/// Treated-by-control distances, row-major. Infeasible pairs are `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub treated_ids: Vec<String>,
    pub control_ids: Vec<String>,
    values: Vec<f64>,
    /// Diagonal ridge added to a singular rank covariance, if any.
    pub ridge: Option<f64>,
    pub notes: Vec<String>,
}

impl DistanceMatrix {
    /// Builds a matrix from explicit rows; entries must be `≥ 0` or `+∞`.
    pub fn from_rows(
        treated_ids: Vec<String>,
        control_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != treated_ids.len() || treated_ids.is_empty() || control_ids.is_empty() {
            return Err(Error::invalid("distance matrix shape does not match the ids"));
        }
        let mut values = Vec::with_capacity(rows.len() * control_ids.len());
        for row in rows {
            if row.len() != control_ids.len() {
                return Err(Error::invalid("ragged distance matrix"));
            }
            if row.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::invalid("distances must be nonnegative"));
            }
            values.extend(row);
        }
        Ok(DistanceMatrix {
            treated_ids,
            control_ids,
            values,
            ridge: None,
            notes: Vec::new(),
        })
    }

    /// Square matrix with ids `t0..`, `c0..`.
    pub fn from_square(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nt = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        Self::from_rows(
            (0..nt).map(|i| format!("t{i}")).collect(),
            (0..nc).map(|j| format!("c{j}")).collect(),
            rows,
        )
    }

    pub fn n_treated(&self) -> usize {
        self.treated_ids.len()
    }

    pub fn n_controls(&self) -> usize {
        self.control_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_controls() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_controls();
        &self.values[i * m..(i + 1) * m]
    }
}

/// Distances between every treated and every control subject of `t`.
///
/// Rank-Mahalanobis replaces each covariate by its average ranks over all
/// subjects, inflates tied columns back to the variance of untied ranks, and
/// uses the quadratic form `Δᵀ S⁻¹ Δ` of the rank covariance `S`. A caliper
/// sets every pair whose propensity scores differ by more than it to `+∞`.
pub fn distance_matrix(
    t: &SubjectTable,
    metric: DistanceMetric,
    caliper: Option<f64>,
    propensity: Option<&PropensityModel>,
) -> Result<DistanceMatrix> {
    if let Some(c) = caliper {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("caliper must be positive, got {c}")));
        }
    }
    let scores = match propensity {
        Some(m) => Some(m.scores(t)?),
        None if metric == DistanceMetric::PropensityAbsDiff || caliper.is_some() => {
            return Err(Error::invalid(
                "a fitted propensity model is required for this metric or caliper",
            ))
        }
        None => None,
    };
    let treated = t.treated_indices();
    let controls = t.control_indices();
    let mut notes = Vec::new();
    let mut ridge = None;

    let base: Box<dyn Fn(usize, usize) -> f64 + Sync> = match metric {
        DistanceMetric::PropensityAbsDiff => {
            let s = scores.clone().expect("checked above");
            Box::new(move |a, b| (s[a] - s[b]).abs())
        }
        DistanceMetric::RankMahalanobis => {
            if t.covariate_names().is_empty() {
                return Err(Error::invalid("rank-Mahalanobis distance needs covariates"));
            }
            let (ranks, inv, r) = rank_mahalanobis_setup(t)?;
            if let Some(r) = r {
                notes.push(format!(
                    "rank covariance is singular; ridge {r:e} added to its diagonal"
                ));
                ridge = Some(r);
            }
            Box::new(move |a, b| {
                let k = ranks.ncols();
                let diff: Vec<f64> = (0..k).map(|j| ranks[(a, j)] - ranks[(b, j)]).collect();
                let mut q = 0.0;
                for u in 0..k {
                    let mut row = 0.0;
                    for v in 0..k {
                        row += inv[(u, v)] * diff[v];
                    }
                    q += diff[u] * row;
                }
                q.max(0.0)
            })
        }
    };

    let values: Vec<f64> = treated
        .par_iter()
        .flat_map_iter(|&a| {
            let base = &base;
            let scores = &scores;
            controls.iter().map(move |&b| {
                if let (Some(c), Some(s)) = (caliper, scores.as_ref()) {
                    if (s[a] - s[b]).abs() > c {
                        return f64::INFINITY;
                    }
                }
                base(a, b)
            })
        })
        .collect();

    Ok(DistanceMatrix {
        treated_ids: treated.iter().map(|&i| t.ids()[i].clone()).collect(),
        control_ids: controls.iter().map(|&i| t.ids()[i].clone()).collect(),
        values,
        ridge,
        notes,
    })
}

/// Rank matrix, inverse (possibly ridged) rank covariance and the ridge used.
fn rank_mahalanobis_setup(t: &SubjectTable) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<f64>)> {
    let n = t.len();
    let k = t.covariate_names().len();
    let mut ranks = DMatrix::zeros(n, k);
    for j in 0..k {
        for (i, r) in average_ranks(&t.column(j)).into_iter().enumerate() {
            ranks[(i, j)] = r;
        }
    }
    let centred = {
        let mut c = ranks.clone();
        for j in 0..k {
            let m = c.column(j).mean();
            c.column_mut(j).add_scalar_mut(-m);
        }
        c
    };
    let mut cov = centred.tr_mul(&centred) / (n.max(2) - 1) as f64;
    // untied ranks 1..n have this variance; ties shrink it
    let untied = variance(&(1..=n).map(|v| v as f64).collect::<Vec<_>>());
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let d = cov[(j, j)];
            if d > 0.0 {
                (untied / d).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for u in 0..k {
        for v in 0..k {
            cov[(u, v)] *= scale[u] * scale[v];
        }
    }
    if let Some(ch) = cov.clone().cholesky() {
        if cov.clone().symmetric_eigen().eigenvalues.min() > 1e-12 * cov.trace().max(1.0) {
            return Ok((ranks, ch.inverse(), None));
        }
    }
    let r = 1e-6 * cov.trace() / k as f64;
    let r = if r > 0.0 { r } else { 1e-6 };
    for j in 0..k {
        cov[(j, j)] += r;
    }
    let inv = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("rank covariance not invertible after ridge".into()))?
        .inverse();
    Ok((ranks, inv, Some(r)))
}
