//! Multiple-testing control: Bonferroni, Holm, Benjamini–Hochberg, the
//! truncated product combination, testing in order with sequentially
//! exclusive partitions, and the follow-up rule for subgroups.

mod ordered;
mod stepwise;
mod truncated;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ordered::{testing_in_order, NodeDecision, OrderedTestPlan, TestNode};
pub use stepwise::{benjamini_hochberg, bonferroni, holm, subgroup_followup, Rejections, StepMethod};
pub use truncated::{
    truncated_product, truncated_product_tail, TruncatedMethod, TruncatedOptions,
    TruncatedProductResult, DEFAULT_TAU,
};

/// Labelled p-values, each finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSet {
    labels: Vec<String>,
    p_values: Vec<f64>,
}

impl PValueSet {
    pub fn new(labels: Vec<String>, p_values: Vec<f64>) -> Result<Self> {
        if labels.len() != p_values.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} p-values",
                labels.len(),
                p_values.len()
            )));
        }
        if p_values.is_empty() {
            return Err(Error::invalid("need at least one p-value"));
        }
        for (l, &p) in labels.iter().zip(&p_values) {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("p-value {p} for {l:?} outside [0, 1]")));
            }
        }
        Ok(PValueSet { labels, p_values })
    }

    /// Labels `p1..pk`.
    pub fn unlabeled(p_values: Vec<f64>) -> Result<Self> {
        let labels = (1..=p_values.len()).map(|i| format!("p{i}")).collect();
        PValueSet::new(labels, p_values)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn len(&self) -> usize {
        self.p_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_values.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.p_values[i])
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")))
    }
}
