use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MatchResult, MatchedPair};
use crate::error::{Error, Result};
use crate::pairs::{parse_finite, COVARIATE_PREFIX};

/// Subject-level data: one row per subject with a treatment flag and
/// measured covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTable {
    ids: Vec<String>,
    treated: Vec<bool>,
    covariate_names: Vec<String>,
    covariates: Vec<Vec<f64>>,
}

impl SubjectTable {
    pub fn new(
        ids: Vec<String>,
        treated: Vec<bool>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if ids.len() != treated.len() || ids.len() != covariates.len() {
            return Err(Error::invalid("subject table columns differ in length"));
        }
        let mut seen = HashSet::new();
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::parse(i + 1, "id", format!("duplicate id {id:?}")));
            }
            if covariates[i].len() != covariate_names.len() {
                return Err(Error::parse(i + 1, "covariates", "incomplete covariate row"));
            }
            if let Some(j) = covariates[i].iter().position(|v| !v.is_finite()) {
                return Err(Error::parse(
                    i + 1,
                    format!("{COVARIATE_PREFIX}{}", covariate_names[j]),
                    "covariate must be finite",
                ));
            }
        }
        let n_treated = treated.iter().filter(|&&t| t).count();
        if n_treated == 0 || n_treated == treated.len() {
            return Err(Error::invalid("need at least one treated and one control subject"));
        }
        Ok(SubjectTable {
            ids,
            treated,
            covariate_names,
            covariates,
        })
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

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.covariates.iter().map(|r| r[j]).collect()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treated[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.treated[i]).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

pub fn load_subjects(path: impl AsRef<Path>) -> Result<SubjectTable> {
    read_subjects(std::fs::File::open(path)?)
}

/// Reads `id,treated,cov_<name>...` with `treated ∈ {0,1}`.
pub fn read_subjects<R: Read>(reader: R) -> Result<SubjectTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::parse(0, "id", "empty file: header row missing")),
    };
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::parse(0, "id", "missing column"))?;
    let t_col = find("treated").ok_or_else(|| Error::parse(0, "treated", "missing column"))?;
    let covs: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(COVARIATE_PREFIX).map(|n| (i, n.to_string())))
        .collect();

    let mut ids = Vec::new();
    let mut treated = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in records.enumerate() {
        let row = r + 1;
        let rec = rec?;
        let get = |col: usize, name: &str| -> Result<&str> {
            match rec.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::parse(row, name, "missing value")),
            }
        };
        ids.push(get(id_col, "id")?.to_string());
        treated.push(match get(t_col, "treated")? {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(row, "treated", format!("expected 0 or 1, found {other:?}")))
            }
        });
        let mut values = Vec::with_capacity(covs.len());
        for (col, name) in &covs {
            let cname = format!("{COVARIATE_PREFIX}{name}");
            values.push(parse_finite(get(*col, &cname)?, row, &cname)?);
        }
        rows.push(values);
    }
    if ids.is_empty() {
        return Err(Error::parse(1, "id", "empty file: no data rows"));
    }
    SubjectTable::new(ids, treated, covs.into_iter().map(|c| c.1).collect(), rows)
}

/// `treated_id,control_id,distance`.
pub fn write_match_csv<W: Write>(m: &MatchResult, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["treated_id", "control_id", "distance"])?;
    for p in &m.pairs {
        wtr.write_record([p.treated_id.as_str(), p.control_id.as_str(), &p.distance.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_match_csv<R: Read>(reader: R) -> Result<MatchResult> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(0, name, "missing column"))
    };
    let (tc, cc, dc) = (find("treated_id")?, find("control_id")?, find("distance")?);
    let mut pairs = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize, name: &str| {
            rec.get(c)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::parse(r + 1, name, "missing value"))
        };
        pairs.push(MatchedPair {
            treated_id: field(tc, "treated_id")?.to_string(),
            control_id: field(cc, "control_id")?.to_string(),
            distance: parse_finite(field(dc, "distance")?, r + 1, "distance")?,
        });
    }
    let total_distance = pairs.iter().map(|p| p.distance).sum();
    Ok(MatchResult {
        pairs,
        total_distance,
        unmatched_treated: Vec::new(),
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_subject_csv() {
        let t = read_subjects("id,treated,cov_age,cov_iq\na,1,30,100\nb,0,31,98\nc,0,45,120\n".as_bytes())
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.treated(), &[true, false, false]);
        assert_eq!(t.column(1), vec![100.0, 98.0, 120.0]);
    }

    #[test]
    fn rejects_bad_treatment_code() {
        let err = read_subjects("id,treated,cov_x\na,2,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("row:1 col:treated"));
    }

    #[test]
    fn needs_both_groups() {
        assert!(read_subjects("id,treated,cov_x\na,1,1\nb,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_covariate_is_error() {
        let err = read_subjects("id,treated,cov_x\na,1,\nb,0,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("col:cov_x missing value"));
    }
}
