use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{MatchResult, SubjectTable};
use crate::error::{Error, Result};
use crate::stats::{mean, variance};

pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    /// Mean over matched treated subjects.
    pub mean_treated: f64,
    pub mean_matched_control: f64,
    pub mean_all_controls: f64,
    /// Mean over every treated subject, matched or not.
    pub mean_all_treated: f64,
    /// `sqrt((s²_treated + s²_controls) / 2)` before matching.
    pub pooled_sd: f64,
    /// `None` when the pooled SD is zero but the means differ.
    pub std_diff_before: Option<f64>,
    pub std_diff_after: Option<f64>,
    pub flagged_before: bool,
    pub flagged_after: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub flag_threshold: f64,
    pub n_matched: usize,
    pub rows: Vec<BalanceRow>,
}

fn std_diff(a: f64, b: f64, sd: f64) -> Option<f64> {
    if sd > 0.0 {
        Some((a - b) / sd)
    } else if a == b {
        Some(0.0)
    } else {
        None
    }
}

/// Covariate balance before matching (all treated vs all controls) and
/// after (matched treated vs matched controls). Both standardized
/// differences divide by the pooled pre-matching SD.
pub fn balance_report(t: &SubjectTable, m: &MatchResult, flag_threshold: f64) -> Result<BalanceReport> {
    if m.pairs.is_empty() {
        return Err(Error::invalid("balance report needs a nonempty match"));
    }
    if !(flag_threshold.is_finite() && flag_threshold >= 0.0) {
        return Err(Error::invalid("flag threshold must be nonnegative"));
    }
    let index: HashMap<&str, usize> = t.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let lookup = |id: &str, want_treated: bool| -> Result<usize> {
        let &i = index
            .get(id)
            .ok_or_else(|| Error::invalid(format!("matched id {id:?} is not in the subject table")))?;
        if t.treated()[i] != want_treated {
            return Err(Error::invalid(format!("matched id {id:?} has the wrong treatment status")));
        }
        Ok(i)
    };
    let mut mt = Vec::with_capacity(m.pairs.len());
    let mut mc = Vec::with_capacity(m.pairs.len());
    for p in &m.pairs {
        mt.push(lookup(&p.treated_id, true)?);
        mc.push(lookup(&p.control_id, false)?);
    }
    let all_t = t.treated_indices();
    let all_c = t.control_indices();

    let rows = t
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = t.column(j);
            let pick = |idx: &[usize]| idx.iter().map(|&i| col[i]).collect::<Vec<_>>();
            let (xt, xc) = (pick(&all_t), pick(&all_c));
            let pooled_sd = ((variance(&xt) + variance(&xc)) / 2.0).sqrt();
            let mean_all_treated = mean(&xt);
            let mean_all_controls = mean(&xc);
            let mean_treated = mean(&pick(&mt));
            let mean_matched_control = mean(&pick(&mc));
            let before = std_diff(mean_all_treated, mean_all_controls, pooled_sd);
            let after = std_diff(mean_treated, mean_matched_control, pooled_sd);
            let flag = |s: Option<f64>| s.map_or(true, |v| v.abs() > flag_threshold);
            BalanceRow {
                covariate: name.clone(),
                mean_treated,
                mean_matched_control,
                mean_all_controls,
                mean_all_treated,
                pooled_sd,
                std_diff_before: before,
                std_diff_after: after,
                flagged_before: flag(before),
                flagged_after: flag(after),
                degenerate: before.is_none() || after.is_none(),
            }
        })
        .collect();
    Ok(BalanceReport {
        flag_threshold,
        n_matched: m.pairs.len(),
        rows,
    })
}

fn fmt_diff(v: Option<f64>, flagged: bool) -> String {
    match v {
        Some(v) if flagged => format!("{v:.2}*"),
        Some(v) => format!("{v:.2}"),
        None => "degenerate".into(),
    }
}

impl BalanceReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "covariate",
            "mean_treated",
            "mean_matched_control",
            "mean_all_controls",
            "std_diff_before",
            "std_diff_after",
            "flagged_before",
            "flagged_after",
        ])?;
        let opt = |v: Option<f64>| v.map_or("degenerate".to_string(), |x| x.to_string());
        for r in &self.rows {
            wtr.write_record([
                r.covariate.clone(),
                r.mean_treated.to_string(),
                r.mean_matched_control.to_string(),
                r.mean_all_controls.to_string(),
                opt(r.std_diff_before),
                opt(r.std_diff_after),
                r.flagged_before.to_string(),
                r.flagged_after.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Aligned table: means for treated, matched controls and all controls,
    /// then standardized differences before and after matching. Entries
    /// beyond the threshold carry a trailing `*`.
    pub fn render_text(&self) -> String {
        let header = [
            "Covariate",
            "Treated",
            "Matched control",
            "All controls",
            "Std diff before",
            "Std diff after",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.covariate.clone(),
                format!("{:.2}", r.mean_treated),
                format!("{:.2}", r.mean_matched_control),
                format!("{:.2}", r.mean_all_controls),
                fmt_diff(r.std_diff_before, r.flagged_before),
                fmt_diff(r.std_diff_after, r.flagged_after),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str(&format!(
            "* |standardized difference| > {}; {} matched pairs\n",
            self.flag_threshold, self.n_matched
        ));
        out
    }
}
