//! Matched-pair data model: treated-minus-control differences with pair-level
//! covariates, plus ranking and random splitting.
//!
//! The CSV layout is `pair_id,diff[,cov_<name>...]`. Parse errors carry the
//! 1-based data row (the header is row 0) and the column name.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::average_ranks;

pub const COVARIATE_PREFIX: &str = "cov_";

/// Treated-minus-control outcome differences for `n ≥ 1` matched pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    ids: Vec<String>,
    diffs: Vec<f64>,
    covariate_names: Vec<String>,
    /// Row-major: `covariates[i][j]` is covariate `j` of pair `i`.
    covariates: Vec<Vec<f64>>,
}

impl PairSample {
    pub fn new(
        ids: Vec<String>,
        diffs: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("a pair sample needs at least one pair"));
        }
        if ids.len() != diffs.len() || ids.len() != covariates.len() {
            return Err(Error::invalid(format!(
                "length mismatch: {} ids, {} diffs, {} covariate rows",
                ids.len(),
                diffs.len(),
                covariates.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::parse(i + 1, "pair_id", format!("duplicate pair_id {id:?}")));
            }
            if !diffs[i].is_finite() {
                return Err(Error::parse(i + 1, "diff", "diff must be finite"));
            }
            if covariates[i].len() != covariate_names.len() {
                return Err(Error::parse(
                    i + 1,
                    "covariates",
                    format!(
                        "expected {} covariate values, found {}",
                        covariate_names.len(),
                        covariates[i].len()
                    ),
                ));
            }
            for (j, v) in covariates[i].iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::parse(
                        i + 1,
                        format!("{COVARIATE_PREFIX}{}", covariate_names[j]),
                        "covariate must be finite",
                    ));
                }
            }
        }
        Ok(PairSample {
            ids,
            diffs,
            covariate_names,
            covariates,
        })
    }

    /// Sample with generated ids `p1..pn` and no covariates.
    pub fn from_diffs(diffs: Vec<f64>) -> Result<Self> {
        let n = diffs.len();
        let ids = (1..=n).map(|i| format!("p{i}")).collect();
        PairSample::new(ids, diffs, Vec::new(), vec![Vec::new(); n])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn diffs(&self) -> &[f64] {
        &self.diffs
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i]
    }

    pub fn covariate_rows(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Pairs at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<PairSample> {
        PairSample::new(
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
            indices.iter().map(|&i| self.diffs[i]).collect(),
            self.covariate_names.clone(),
            indices.iter().map(|&i| self.covariates[i].clone()).collect(),
        )
    }

    /// Same pairs and covariates with replacement differences.
    pub fn with_diffs(&self, diffs: Vec<f64>) -> Result<PairSample> {
        PairSample::new(
            self.ids.clone(),
            diffs,
            self.covariate_names.clone(),
            self.covariates.clone(),
        )
    }
}

/// Which covariate columns a pair file must provide.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum PairSchema {
    /// Take every `cov_*` column present in the header.
    #[default]
    AllCovariates,
    /// Require exactly these covariates (names without the `cov_` prefix);
    /// other `cov_*` columns are ignored.
    Covariates(Vec<String>),
}

pub fn load_pairs(path: impl AsRef<Path>, schema: &PairSchema) -> Result<PairSample> {
    let file = std::fs::File::open(path)?;
    read_pairs(file, schema)
}

pub fn read_pairs<R: Read>(reader: R, schema: &PairSchema) -> Result<PairSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::parse(0, "pair_id", "empty file: header row missing")),
    };
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col = find("pair_id").ok_or_else(|| Error::parse(0, "pair_id", "missing column"))?;
    let diff_col = find("diff").ok_or_else(|| Error::parse(0, "diff", "missing column"))?;

    let covariate_names: Vec<String> = match schema {
        PairSchema::AllCovariates => header
            .iter()
            .filter_map(|h| h.strip_prefix(COVARIATE_PREFIX))
            .map(str::to_string)
            .collect(),
        PairSchema::Covariates(names) => names.clone(),
    };
    let mut cov_cols = Vec::with_capacity(covariate_names.len());
    for name in &covariate_names {
        let col = format!("{COVARIATE_PREFIX}{name}");
        cov_cols.push(find(&col).ok_or_else(|| Error::parse(0, col.clone(), "missing column"))?);
    }

    let mut ids = Vec::new();
    let mut diffs = Vec::new();
    let mut covariates = Vec::new();
    for (r, record) in records.enumerate() {
        let row = r + 1;
        let record = record?;
        let field = |col: usize, name: &str| -> Result<&str> {
            match record.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::parse(row, name, "missing value")),
            }
        };
        ids.push(field(id_col, "pair_id")?.to_string());
        diffs.push(parse_finite(field(diff_col, "diff")?, row, "diff")?);
        let mut covs = Vec::with_capacity(cov_cols.len());
        for (name, &col) in covariate_names.iter().zip(&cov_cols) {
            let cname = format!("{COVARIATE_PREFIX}{name}");
            covs.push(parse_finite(field(col, &cname)?, row, &cname)?);
        }
        covariates.push(covs);
    }
    if ids.is_empty() {
        return Err(Error::parse(1, "pair_id", "empty file: no data rows"));
    }
    PairSample::new(ids, diffs, covariate_names, covariates)
}

pub(crate) fn parse_finite(raw: &str, row: usize, col: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::parse(row, col, format!("non-finite value {raw:?}"))),
        Err(_) => Err(Error::parse(row, col, format!("non-numeric value {raw:?}"))),
    }
}

pub fn save_pairs(sample: &PairSample, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_pairs(sample, file)
}

/// Writes values in Rust's shortest round-trip float format, so reading the
/// file back reproduces every bit.
pub fn write_pairs<W: Write>(sample: &PairSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["pair_id".to_string(), "diff".to_string()];
    header.extend(
        sample
            .covariate_names
            .iter()
            .map(|c| format!("{COVARIATE_PREFIX}{c}")),
    );
    wtr.write_record(&header)?;
    for i in 0..sample.len() {
        let mut rec = vec![sample.ids[i].clone(), sample.diffs[i].to_string()];
        rec.extend(sample.covariates[i].iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Signed-rank inputs: nonzero differences with average ranks of `|diff|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPairs {
    /// Positions of the nonzero pairs in the source sample.
    pub indices: Vec<usize>,
    pub abs_ranks: Vec<f64>,
    pub positive: Vec<bool>,
    pub dropped_zeros: usize,
}

impl RankedPairs {
    /// Number of nonzero pairs, `m`.
    pub fn len(&self) -> usize {
        self.abs_ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_ranks.is_empty()
    }

    /// Wilcoxon signed-rank statistic: sum of ranks over positive pairs.
    pub fn statistic(&self) -> f64 {
        self.abs_ranks
            .iter()
            .zip(&self.positive)
            .filter(|(_, &pos)| pos)
            .map(|(q, _)| q)
            .sum()
    }
}

pub fn rank_pairs(sample: &PairSample) -> Result<RankedPairs> {
    rank_diffs(&sample.diffs)
}

/// Ranks raw differences; zero differences are dropped and counted.
pub fn rank_diffs(diffs: &[f64]) -> Result<RankedPairs> {
    let indices: Vec<usize> = (0..diffs.len()).filter(|&i| diffs[i] != 0.0).collect();
    if indices.is_empty() {
        return Err(Error::Degenerate("all differences are zero".into()));
    }
    let abs: Vec<f64> = indices.iter().map(|&i| diffs[i].abs()).collect();
    let positive = indices.iter().map(|&i| diffs[i] > 0.0).collect();
    Ok(RankedPairs {
        dropped_zeros: diffs.len() - indices.len(),
        abs_ranks: average_ranks(&abs),
        positive,
        indices,
    })
}

/// Disjoint planning and analysis subsets of a pair sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub planning_ids: Vec<String>,
    pub analysis_ids: Vec<String>,
    /// Positions in the source sample, ascending.
    pub planning_indices: Vec<usize>,
    pub analysis_indices: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

/// Size of the planning sample for `n` units.
pub fn planning_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0, 1)")));
    }
    let k = (fraction * n as f64).round() as usize;
    if k < 1 || k >= n {
        return Err(Error::invalid(format!(
            "sample of {n} pairs too small to split at fraction {fraction}"
        )));
    }
    Ok(k)
}

/// Uniformly random planning subset of size `round(fraction·n)`, drawn from
/// the ChaCha8 stream for `seed`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = planning_size(n, fraction)?;
    let mut rng = rng::substream(seed, &[rng::domain::SPLIT]);
    Ok(split_with(n, k, &mut rng))
}

pub(crate) fn split_with<R: rand::Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut planning = index::sample(rng, n, k).into_vec();
    planning.sort_unstable();
    let mut in_planning = vec![false; n];
    for &i in &planning {
        in_planning[i] = true;
    }
    let analysis = (0..n).filter(|&i| !in_planning[i]).collect();
    (planning, analysis)
}

pub fn split_sample(sample: &PairSample, fraction: f64, seed: u64) -> Result<SampleSplit> {
    let (planning, analysis) = split_indices(sample.len(), fraction, seed)?;
    Ok(SampleSplit {
        planning_ids: planning.iter().map(|&i| sample.ids[i].clone()).collect(),
        analysis_ids: analysis.iter().map(|&i| sample.ids[i].clone()).collect(),
        planning_indices: planning,
        analysis_indices: analysis,
        fraction,
        seed,
    })
}
