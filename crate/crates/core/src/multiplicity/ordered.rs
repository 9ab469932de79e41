use serde::{Deserialize, Serialize};

use super::{check_alpha, PValueSet};
use crate::error::{Error, Result};

/// One step of an ordered test plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestNode {
    Single(String),
    /// A sequentially exclusive partition: given that every earlier null is
    /// false, at most one of these nulls can be true, so each member is
    /// tested at the full α.
    Exclusive(Vec<String>),
}

impl TestNode {
    pub fn labels(&self) -> Vec<&str> {
        match self {
            TestNode::Single(l) => vec![l.as_str()],
            TestNode::Exclusive(ls) => ls.iter().map(String::as_str).collect(),
        }
    }
}

/// Hypotheses tested in a fixed order, stopping at the first node that is
/// not fully rejected. Familywise error is controlled at `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedTestPlan {
    pub alpha: f64,
    pub nodes: Vec<TestNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecision {
    pub node: usize,
    pub tested: bool,
    /// `(label, p-value, rejected)` per member; p-values are reported even
    /// for untested nodes.
    pub members: Vec<(String, f64, bool)>,
}

impl NodeDecision {
    pub fn all_rejected(&self) -> bool {
        self.tested && self.members.iter().all(|m| m.2)
    }
}

/// Sequential gatekeeping. Node `j` is tested only if every member of every
/// earlier node was rejected; each tested member is rejected when `p ≤ α`.
pub fn testing_in_order(plan: &OrderedTestPlan, ps: &PValueSet) -> Result<Vec<NodeDecision>> {
    check_alpha(plan.alpha)?;
    if plan.nodes.is_empty() {
        return Err(Error::invalid("test plan has no nodes"));
    }
    let mut gate_open = true;
    let mut decisions = Vec::with_capacity(plan.nodes.len());
    for (j, node) in plan.nodes.iter().enumerate() {
        let labels = node.labels();
        if labels.is_empty() {
            return Err(Error::invalid(format!("node {j} has no hypotheses")));
        }
        let mut members = Vec::with_capacity(labels.len());
        for label in labels {
            let p = ps
                .get(label)
                .ok_or_else(|| Error::invalid(format!("hypothesis {label:?} has no p-value")))?;
            members.push((label.to_string(), p, gate_open && p <= plan.alpha));
        }
        let decision = NodeDecision {
            node: j,
            tested: gate_open,
            members,
        };
        gate_open = decision.all_rejected();
        decisions.push(decision);
    }
    Ok(decisions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(nodes: Vec<TestNode>) -> OrderedTestPlan {
        OrderedTestPlan { alpha: 0.05, nodes }
    }

    fn single(l: &str) -> TestNode {
        TestNode::Single(l.into())
    }

    fn ps(pairs: &[(&str, f64)]) -> PValueSet {
        PValueSet::new(
            pairs.iter().map(|p| p.0.to_string()).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn stops_at_first_failure() {
        let d = testing_in_order(
            &plan(vec![single("a"), single("b"), single("c")]),
            &ps(&[("a", 0.01), ("b", 0.03), ("c", 0.20)]),
        )
        .unwrap();
        assert!(d[0].all_rejected() && d[1].all_rejected());
        assert!(d[2].tested && !d[2].members[0].2);
    }

    #[test]
    fn closed_gate() {
        let d = testing_in_order(
            &plan(vec![single("a"), single("b"), single("c")]),
            &ps(&[("a", 0.2), ("b", 0.001), ("c", 0.001)]),
        )
        .unwrap();
        assert!(d[0].tested && !d[0].all_rejected());
        assert!(!d[1].tested && !d[2].tested);
        assert!(d.iter().flat_map(|n| &n.members).all(|m| !m.2));
    }

    #[test]
    fn exclusive_partition_at_full_alpha() {
        let d = testing_in_order(
            &plan(vec![
                single("i"),
                TestNode::Exclusive(vec!["ii_a".into(), "ii_b".into()]),
                single("iii"),
            ]),
            &ps(&[("i", 0.01), ("ii_a", 0.04), ("ii_b", 0.30), ("iii", 0.001)]),
        )
        .unwrap();
        assert!(d[1].tested);
        assert!(d[1].members[0].2);
        assert!(!d[1].members[1].2);
        assert!(!d[2].tested);
    }

    #[test]
    fn dangling_label() {
        let err = testing_in_order(&plan(vec![single("x")]), &ps(&[("a", 0.01)])).unwrap_err();
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn plan_json_shape() {
        let p: OrderedTestPlan = serde_json::from_str(
            r#"{"alpha":0.05,"nodes":[{"single":"i"},{"exclusive":["a","b"]}]}"#,
        )
        .unwrap();
        assert_eq!(p.nodes[1], TestNode::Exclusive(vec!["a".into(), "b".into()]));
    }
}
