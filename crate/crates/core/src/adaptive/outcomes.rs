use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{parse_finite, split_indices, PairSample, COVARIATE_PREFIX};
use crate::sensitivity::signed_rank_summary;

/// `n` pairs measured on `K ≥ 1` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutcomeSample {
    pair_ids: Vec<String>,
    labels: Vec<String>,
    /// `outcomes[k][i]`: difference for outcome `k` in pair `i`.
    outcomes: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
    covariates: Vec<Vec<f64>>,
}

impl MultiOutcomeSample {
    pub fn new(pair_ids: Vec<String>, labels: Vec<String>, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let n = pair_ids.len();
        Self::with_covariates(pair_ids, labels, outcomes, Vec::new(), vec![Vec::new(); n])
    }

    pub fn with_covariates(
        pair_ids: Vec<String>,
        labels: Vec<String>,
        outcomes: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != outcomes.len() {
            return Err(Error::invalid("need at least one labelled outcome"));
        }
        if pair_ids.is_empty() {
            return Err(Error::invalid("need at least one pair"));
        }
        let mut seen = HashSet::new();
        if !labels.iter().all(|l| seen.insert(l)) {
            return Err(Error::invalid("outcome labels must be unique"));
        }
        for (k, col) in outcomes.iter().enumerate() {
            if col.len() != pair_ids.len() {
                return Err(Error::invalid(format!("outcome {:?} has the wrong length", labels[k])));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::parse(i + 1, labels[k].clone(), "difference must be finite"));
            }
        }
        // validates ids and covariates
        PairSample::new(
            pair_ids.clone(),
            outcomes[0].clone(),
            covariate_names.clone(),
            covariates.clone(),
        )?;
        Ok(MultiOutcomeSample {
            pair_ids,
            labels,
            outcomes,
            covariate_names,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }

    pub fn n_outcomes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pair_ids(&self) -> &[String] {
        &self.pair_ids
    }

    pub fn outcome(&self, k: usize) -> &[f64] {
        &self.outcomes[k]
    }

    /// The pairs at `indices` as a single-outcome sample for outcome `k`.
    pub fn pair_sample(&self, k: usize, indices: &[usize]) -> Result<PairSample> {
        PairSample::new(
            indices.iter().map(|&i| self.pair_ids[i].clone()).collect(),
            indices.iter().map(|&i| self.outcomes[k][i]).collect(),
            self.covariate_names.clone(),
            indices.iter().map(|&i| self.covariates[i].clone()).collect(),
        )
    }
}

pub fn load_outcomes(path: impl AsRef<Path>) -> Result<MultiOutcomeSample> {
    read_outcomes(std::fs::File::open(path)?)
}

/// Reads `pair_id,<outcome>...[,cov_<name>...]`: every column other than
/// `pair_id` and the `cov_` columns is an outcome difference.
pub fn read_outcomes<R: Read>(reader: R) -> Result<MultiOutcomeSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::parse(0, "pair_id", "empty file: header row missing")),
    };
    let id_col = header
        .iter()
        .position(|h| h == "pair_id")
        .ok_or_else(|| Error::parse(0, "pair_id", "missing column"))?;
    let mut out_cols = Vec::new();
    let mut cov_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if i == id_col {
            continue;
        }
        match h.strip_prefix(COVARIATE_PREFIX) {
            Some(name) => cov_cols.push((i, name.to_string())),
            None => out_cols.push((i, h.to_string())),
        }
    }
    if out_cols.is_empty() {
        return Err(Error::parse(0, "outcome", "no outcome columns"));
    }
    let mut ids = Vec::new();
    let mut outcomes = vec![Vec::new(); out_cols.len()];
    let mut covs = Vec::new();
    for (r, rec) in records.enumerate() {
        let row = r + 1;
        let rec = rec?;
        let get = |c: usize, name: &str| -> Result<&str> {
            rec.get(c)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::parse(row, name, "missing value"))
        };
        ids.push(get(id_col, "pair_id")?.to_string());
        for (k, (c, name)) in out_cols.iter().enumerate() {
            outcomes[k].push(parse_finite(get(*c, name)?, row, name)?);
        }
        let mut cv = Vec::with_capacity(cov_cols.len());
        for (c, name) in &cov_cols {
            let cname = format!("{COVARIATE_PREFIX}{name}");
            cv.push(parse_finite(get(*c, &cname)?, row, &cname)?);
        }
        covs.push(cv);
    }
    if ids.is_empty() {
        return Err(Error::parse(1, "pair_id", "empty file: no data rows"));
    }
    MultiOutcomeSample::with_covariates(
        ids,
        out_cols.into_iter().map(|c| c.1).collect(),
        outcomes,
        cov_cols.into_iter().map(|c| c.1).collect(),
        covs,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScore {
    pub label: String,
    /// Standardized signed-rank statistic on the planning sample; `None`
    /// when every planning difference is zero.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSelection {
    /// Best first.
    pub chosen: Vec<String>,
    pub planning_scores: Vec<OutcomeScore>,
    pub planning_ids: Vec<String>,
    pub analysis_ids: Vec<String>,
    /// Analysis-sample differences, one sample per chosen outcome.
    pub analysis: Vec<PairSample>,
}

/// Scores every outcome on a random planning sample by its standardized
/// signed-rank statistic and keeps the best `top` (usually 1). Ties go to
/// the outcome listed first.
pub fn select_outcome_split(
    m: &MultiOutcomeSample,
    fraction: f64,
    seed: u64,
    top: usize,
) -> Result<OutcomeSelection> {
    if top == 0 || top > m.n_outcomes() {
        return Err(Error::invalid(format!(
            "cannot carry forward {top} of {} outcomes",
            m.n_outcomes()
        )));
    }
    let (planning, analysis) = split_indices(m.len(), fraction, seed)?;
    let mut buf = Vec::with_capacity(planning.len());
    let scores: Vec<Option<f64>> = (0..m.n_outcomes())
        .map(|k| {
            buf.clear();
            buf.extend(planning.iter().map(|&i| m.outcomes[k][i]));
            signed_rank_summary(&buf).map(|s| s.standardized())
        })
        .collect();
    if scores.iter().all(Option::is_none) {
        return Err(Error::Degenerate(
            "every outcome is zero throughout the planning sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..m.n_outcomes()).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| {
        let sa = scores[a].unwrap_or(f64::NEG_INFINITY);
        let sb = scores[b].unwrap_or(f64::NEG_INFINITY);
        sb.total_cmp(&sa)
    });
    let chosen: Vec<usize> = order.into_iter().take(top).collect();
    Ok(OutcomeSelection {
        chosen: chosen.iter().map(|&k| m.labels[k].clone()).collect(),
        planning_scores: m
            .labels
            .iter()
            .zip(&scores)
            .map(|(l, s)| OutcomeScore {
                label: l.clone(),
                score: *s,
            })
            .collect(),
        planning_ids: planning.iter().map(|&i| m.pair_ids[i].clone()).collect(),
        analysis_ids: analysis.iter().map(|&i| m.pair_ids[i].clone()).collect(),
        analysis: chosen
            .iter()
            .map(|&k| m.pair_sample(k, &analysis))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::sensitivity::{wilcoxon_gamma_bound, WilcoxonMethod};
    use crate::pairs::rank_pairs;
    use rand_distr::{Distribution, StandardNormal};
    use rayon::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn simulate(seed: u64, n: usize, k: usize, shift: f64) -> MultiOutcomeSample {
        let mut rng = substream(seed, &[99]);
        let outcomes = (0..k)
            .map(|j| {
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if j == 0 { z + shift } else { z }
                    })
                    .collect()
            })
            .collect();
        MultiOutcomeSample::new(ids(n), (0..k).map(|j| format!("y{j}")).collect(), outcomes).unwrap()
    }

    #[test]
    fn single_outcome_always_chosen() {
        let m = simulate(1, 30, 1, -2.0);
        let s = select_outcome_split(&m, 1.0 / 3.0, 4, 1).unwrap();
        assert_eq!(s.chosen, vec!["y0"]);
        assert_eq!(s.analysis[0].len(), 20);
    }

    #[test]
    fn identical_columns_pick_first() {
        let col = vec![1.0, -0.5, 2.0, 3.0, -1.0, 0.7];
        let m = MultiOutcomeSample::new(ids(6), vec!["b".into(), "a".into()], vec![col.clone(), col])
            .unwrap();
        let s = select_outcome_split(&m, 0.5, 9, 1).unwrap();
        assert_eq!(s.chosen, vec!["b"]);
        let s = select_outcome_split(&m, 0.5, 9, 2).unwrap();
        assert_eq!(s.chosen, vec!["b", "a"]);
    }

    #[test]
    fn all_zero_planning_is_degenerate() {
        let m = MultiOutcomeSample::new(ids(6), vec!["y".into()], vec![vec![0.0; 6]]).unwrap();
        assert!(matches!(select_outcome_split(&m, 0.5, 1, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn correct_selection_with_one_real_effect() {
        let hits: usize = (0..1000u64)
            .into_par_iter()
            .map(|s| {
                let m = simulate(s, 500, 100, 1.0);
                (select_outcome_split(&m, 1.0 / 3.0, s, 1).unwrap().chosen[0] == "y0") as usize
            })
            .sum();
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn null_size_after_selection() {
        let reps = 1000u64;
        let rejections: usize = (0..reps)
            .into_par_iter()
            .map(|s| {
                let m = simulate(10_000 + s, 120, 10, 0.0);
                let sel = select_outcome_split(&m, 0.5, s, 1).unwrap();
                let r = rank_pairs(&sel.analysis[0]).unwrap();
                let b = wilcoxon_gamma_bound(&r, 1.0, WilcoxonMethod::NormalApprox).unwrap();
                (b.p_upper <= 0.05) as usize
            })
            .sum();
        let rate = rejections as f64 / reps as f64;
        let se = (0.05f64 * 0.95 / reps as f64).sqrt();
        assert!(rate <= 0.05 + 2.0 * se, "{rate}");
    }

    #[test]
    fn reads_outcome_csv() {
        let m = read_outcomes("pair_id,a,b,cov_age\n1,0.5,-1,30\n2,1.5,2,40\n".as_bytes()).unwrap();
        assert_eq!(m.labels(), &["a", "b"]);
        assert_eq!(m.outcome(1), &[-1.0, 2.0]);
        let s = m.pair_sample(0, &[1]).unwrap();
        assert_eq!(s.covariate_row(0), &[40.0]);
    }
}
