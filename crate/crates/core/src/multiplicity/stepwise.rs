use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{check_alpha, PValueSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMethod {
    Bonferroni,
    Holm,
    BenjaminiHochberg,
    SubgroupFollowup,
}

/// Per-hypothesis decisions, in the input order of the p-value set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejections {
    pub method: StepMethod,
    pub alpha: f64,
    pub labels: Vec<String>,
    pub p_values: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl Rejections {
    pub fn rejected_labels(&self) -> Vec<&str> {
        self.labels
            .iter()
            .zip(&self.rejected)
            .filter(|(_, &r)| r)
            .map(|(l, _)| l.as_str())
            .collect()
    }

    pub fn count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

fn build(ps: &PValueSet, method: StepMethod, alpha: f64, rejected: Vec<bool>) -> Rejections {
    Rejections {
        method,
        alpha,
        labels: ps.labels().to_vec(),
        p_values: ps.p_values().to_vec(),
        rejected,
    }
}

/// Ascending p-value order; equal p-values fall back to label order.
fn sorted_order(ps: &PValueSet) -> Vec<usize> {
    let p = ps.p_values();
    let labels = ps.labels();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        p[a].partial_cmp(&p[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    order
}

/// Rejects `p_i ≤ α/k`.
pub fn bonferroni(ps: &PValueSet, alpha: f64) -> Result<Rejections> {
    check_alpha(alpha)?;
    let k = ps.len() as f64;
    let rejected = ps.p_values().iter().map(|&p| p <= alpha / k).collect();
    Ok(build(ps, StepMethod::Bonferroni, alpha, rejected))
}

/// Holm's step-down: walk the sorted p-values, rejecting `p_(i) ≤ α/(k−i+1)`
/// until the first failure.
pub fn holm(ps: &PValueSet, alpha: f64) -> Result<Rejections> {
    check_alpha(alpha)?;
    let k = ps.len();
    let mut rejected = vec![false; k];
    for (step, &i) in sorted_order(ps).iter().enumerate() {
        if ps.p_values()[i] <= alpha / (k - step) as f64 {
            rejected[i] = true;
        } else {
            break;
        }
    }
    Ok(build(ps, StepMethod::Holm, alpha, rejected))
}

/// Benjamini–Hochberg step-up at false discovery rate α: reject the `j`
/// smallest p-values for the largest `j` with `p_(j) ≤ jα/k`.
pub fn benjamini_hochberg(ps: &PValueSet, alpha: f64) -> Result<Rejections> {
    check_alpha(alpha)?;
    let k = ps.len();
    let order = sorted_order(ps);
    let cutoff = (1..=k)
        .rev()
        .find(|&j| ps.p_values()[order[j - 1]] <= j as f64 * alpha / k as f64)
        .unwrap_or(0);
    let mut rejected = vec![false; k];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    Ok(build(ps, StepMethod::BenjaminiHochberg, alpha, rejected))
}

/// Follow-up after the global null has been rejected by a combined subgroup
/// test: subgroup `i` is rejected when `p_i < α/(k − 1)`.
pub fn subgroup_followup(ps: &PValueSet, alpha: f64, subgroups: usize) -> Result<Rejections> {
    check_alpha(alpha)?;
    if subgroups < 2 {
        return Err(Error::invalid(format!(
            "follow-up needs at least 2 subgroups (got {subgroups})"
        )));
    }
    let threshold = alpha / (subgroups - 1) as f64;
    let rejected = ps.p_values().iter().map(|&p| p < threshold).collect();
    Ok(build(ps, StepMethod::SubgroupFollowup, alpha, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(ps: &[f64]) -> PValueSet {
        PValueSet::unlabeled(ps.to_vec()).unwrap()
    }

    #[test]
    fn single_test() {
        let s = set(&[0.04]);
        assert_eq!(bonferroni(&s, 0.05).unwrap().rejected, vec![true]);
        assert_eq!(holm(&s, 0.05).unwrap().rejected, vec![true]);
        assert_eq!(benjamini_hochberg(&s, 0.05).unwrap().rejected, vec![true]);
    }

    #[test]
    fn holm_and_bh_hand_example() {
        let s = set(&[0.01, 0.02, 0.04]);
        assert_eq!(bonferroni(&s, 0.05).unwrap().rejected, vec![true, false, false]);
        // thresholds 0.05/3, 0.05/2, 0.05: the last step passes as well
        assert_eq!(holm(&s, 0.05).unwrap().rejected, vec![true, true, true]);
        assert_eq!(benjamini_hochberg(&s, 0.05).unwrap().rejected, vec![true, true, true]);
        let s = set(&[0.01, 0.02, 0.06]);
        assert_eq!(holm(&s, 0.05).unwrap().rejected, vec![true, true, false]);
    }

    #[test]
    fn order_of_input_irrelevant() {
        let a = holm(&set(&[0.06, 0.01, 0.02]), 0.05).unwrap();
        assert_eq!(a.rejected, vec![false, true, true]);
        assert_eq!(a.rejected_labels(), vec!["p2", "p3"]);
    }

    #[test]
    fn bh_step_up_rescues_earlier() {
        // p_(1)=0.03 > 0.05/4 but p_(4)=0.045 ≤ 0.05 rejects all four
        let s = set(&[0.03, 0.035, 0.04, 0.045]);
        assert_eq!(benjamini_hochberg(&s, 0.05).unwrap().count(), 4);
        assert_eq!(holm(&s, 0.05).unwrap().count(), 0);
    }

    #[test]
    fn followup_thresholds() {
        let r = subgroup_followup(&set(&[0.03, 0.2]), 0.05, 2).unwrap();
        assert_eq!(r.rejected, vec![true, false]);
        let r = subgroup_followup(&set(&[0.0166, 0.0167, 0.02, 0.5]), 0.05, 4).unwrap();
        assert_eq!(r.rejected, vec![true, false, false, false]);
        assert!(subgroup_followup(&set(&[0.01]), 0.05, 1).is_err());
    }

    #[test]
    fn tukey_uncorrected_familywise_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let reps = 10_000;
        let any = (0..reps)
            .filter(|_| (0..12).any(|_| rng.random::<f64>() <= 0.05))
            .count();
        let fwer = any as f64 / reps as f64;
        assert!((fwer - (1.0 - 0.95f64.powi(12))).abs() < 0.02, "{fwer}");
    }

    proptest! {
        #[test]
        fn nesting(ps in proptest::collection::vec(0.0f64..=1.0, 1..30), alpha in 0.001f64..0.3) {
            let s = set(&ps);
            let b = bonferroni(&s, alpha).unwrap();
            let h = holm(&s, alpha).unwrap();
            let q = benjamini_hochberg(&s, alpha).unwrap();
            for i in 0..ps.len() {
                prop_assert!(!b.rejected[i] || h.rejected[i]);
                prop_assert!(!h.rejected[i] || q.rejected[i]);
            }
        }
    }
}
