use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::pairs::PairSample;
use crate::stats::average_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Nodes smaller than this are not split.
    pub min_split: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    /// A split must cut the within-node sum of squares by at least
    /// `cp × root sum of squares`.
    pub cp: f64,
    /// Optional significance guard: the best split's F statistic, with its
    /// p-value multiplied by the number of candidate splits, must be at most
    /// this level. Stops the tree from chasing noise.
    pub split_alpha: Option<f64>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_split: 20,
            min_leaf: 7,
            max_depth: 5,
            cp: 0.01,
            split_alpha: Some(0.05),
        }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 || self.min_split < 2 {
            return Err(Error::invalid("min_leaf must be ≥ 1 and min_split ≥ 2"));
        }
        if !(self.cp >= 0.0 && self.cp.is_finite()) {
            return Err(Error::invalid("cp must be a nonnegative number"));
        }
        if let Some(a) = self.split_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid("split_alpha must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeResponse {
    /// Ranks of `|diff|`; blind to the signs of the differences.
    AbsDiffRanks,
    /// Ranks of the signed differences.
    SignedDiffRanks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        n: usize,
        mean: f64,
        sse: f64,
        pair_ids: Vec<String>,
    },
    /// Pairs with `covariate < threshold` go left, the rest right.
    Split {
        covariate: String,
        threshold: f64,
        n: usize,
        mean: f64,
        sse: f64,
        improvement: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn n(&self) -> usize {
        match self {
            TreeNode::Leaf { n, .. } | TreeNode::Split { n, .. } => *n,
        }
    }

    pub fn sse(&self) -> f64 {
        match self {
            TreeNode::Leaf { sse, .. } | TreeNode::Split { sse, .. } => *sse,
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Greedy binary regression tree on pair covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub params: TreeParams,
    pub response: TreeResponse,
    pub covariate_names: Vec<String>,
    pub root: TreeNode,
}

fn fmt_threshold(v: f64) -> String {
    format!("{v}")
}

impl RegressionTree {
    /// Leaves left to right, each with its root-to-leaf predicate string.
    pub fn leaves(&self) -> Vec<(String, &TreeNode)> {
        fn walk<'a>(node: &'a TreeNode, path: &mut Vec<String>, out: &mut Vec<(String, &'a TreeNode)>) {
            match node {
                TreeNode::Leaf { .. } => {
                    let label = if path.is_empty() { "all".to_string() } else { path.join(" & ") };
                    out.push((label, node));
                }
                TreeNode::Split {
                    covariate,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    path.push(format!("{covariate}<{}", fmt_threshold(*threshold)));
                    walk(left, path, out);
                    path.pop();
                    path.push(format!("{covariate}≥{}", fmt_threshold(*threshold)));
                    walk(right, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves().into_iter().map(|l| l.0).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// `(covariate, threshold)` of the root split, if the tree split at all.
    pub fn root_split(&self) -> Option<(&str, f64)> {
        match &self.root {
            TreeNode::Split {
                covariate, threshold, ..
            } => Some((covariate.as_str(), *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    /// Index (left to right) of the leaf reached by a covariate vector laid
    /// out as `columns` names it.
    pub fn leaf_index(&self, columns: &[String], x: &[f64]) -> Result<usize> {
        let mut node = &self.root;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return Ok(offset),
                TreeNode::Split {
                    covariate,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let j = columns.iter().position(|c| c == covariate).ok_or_else(|| {
                        Error::invalid(format!("covariate {covariate:?} is missing"))
                    })?;
                    if x[j] < *threshold {
                        node = left;
                    } else {
                        offset += count_leaves(left);
                        node = right;
                    }
                }
            }
        }
    }
}

fn count_leaves(node: &TreeNode) -> usize {
    match node {
        TreeNode::Leaf { .. } => 1,
        TreeNode::Split { left, right, .. } => count_leaves(left) + count_leaves(right),
    }
}

/// Tree on the ranks of `|diff|`. The fit depends on the data only through
/// `|diff|` and the covariates, so flipping any signs leaves it unchanged.
pub fn fit_abs_rank_tree(s: &PairSample, params: TreeParams) -> Result<RegressionTree> {
    fit_rank_tree(s, TreeResponse::AbsDiffRanks, params)
}

pub fn fit_rank_tree(s: &PairSample, response: TreeResponse, params: TreeParams) -> Result<RegressionTree> {
    params.validate()?;
    if s.covariate_names().is_empty() {
        return Err(Error::invalid("the tree needs at least one pair covariate"));
    }
    if s.len() < 2 * params.min_leaf {
        return Err(Error::invalid(format!(
            "tree needs at least {} pairs, found {}",
            2 * params.min_leaf,
            s.len()
        )));
    }
    let y = match response {
        TreeResponse::AbsDiffRanks => {
            average_ranks(&s.diffs().iter().map(|d| d.abs()).collect::<Vec<_>>())
        }
        TreeResponse::SignedDiffRanks => average_ranks(s.diffs()),
    };
    let all: Vec<usize> = (0..s.len()).collect();
    let root_sse = sse(&y, &all).1;
    let builder = Builder {
        s,
        y: &y,
        params,
        min_gain: params.cp * root_sse,
    };
    Ok(RegressionTree {
        params,
        response,
        covariate_names: s.covariate_names().to_vec(),
        root: builder.grow(all, 0),
    })
}

fn sse(y: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    (mean, sse)
}

struct Builder<'a> {
    s: &'a PairSample,
    y: &'a [f64],
    params: TreeParams,
    min_gain: f64,
}

struct Candidate {
    covariate: usize,
    threshold: f64,
    split_sse: f64,
}

impl Builder<'_> {
    fn grow(&self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let (mean, node_sse) = sse(self.y, &idx);
        let n = idx.len();
        let leaf = |idx: Vec<usize>| TreeNode::Leaf {
            n,
            mean,
            sse: node_sse,
            pair_ids: idx.iter().map(|&i| self.s.ids()[i].clone()).collect(),
        };
        if n < self.params.min_split || depth >= self.params.max_depth || node_sse <= 0.0 {
            return leaf(idx);
        }
        let Some((best, candidates)) = self.best_split(&idx) else {
            return leaf(idx);
        };
        let gain = node_sse - best.split_sse;
        if gain <= 0.0 || gain < self.min_gain {
            return leaf(idx);
        }
        if let Some(alpha) = self.params.split_alpha {
            let df = (n - 2) as f64;
            let p = if best.split_sse <= 0.0 {
                0.0
            } else {
                let f = gain / (best.split_sse / df);
                FisherSnedecor::new(1.0, df).map(|d| d.sf(f)).unwrap_or(1.0)
            };
            if p * candidates as f64 > alpha {
                return leaf(idx);
            }
        }
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.s.covariate_row(i)[best.covariate] < best.threshold);
        TreeNode::Split {
            covariate: self.s.covariate_names()[best.covariate].clone(),
            threshold: best.threshold,
            n,
            mean,
            sse: node_sse,
            improvement: gain,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }

    /// Lowest within-node SSE over admissible splits, with the number of
    /// admissible candidates. Earlier covariates and lower thresholds win ties.
    fn best_split(&self, idx: &[usize]) -> Option<(Candidate, usize)> {
        let min_leaf = self.params.min_leaf;
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mut best: Option<Candidate> = None;
        let mut candidates = 0usize;
        for j in 0..self.s.covariate_names().len() {
            let x = |i: usize| self.s.covariate_row(i)[j];
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yi = self.y[order[k]];
                sum += yi;
                sum_sq += yi * yi;
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf || x(order[k]) == x(order[k + 1]) {
                    continue;
                }
                candidates += 1;
                let sse_l = sum_sq - sum * sum / nl as f64;
                let rs = total - sum;
                let sse_r = (total_sq - sum_sq) - rs * rs / nr as f64;
                let split_sse = (sse_l + sse_r).max(0.0);
                if best.as_ref().map_or(true, |b| split_sse < b.split_sse - 1e-9 * (1.0 + b.split_sse)) {
                    best = Some(Candidate {
                        covariate: j,
                        threshold: 0.5 * (x(order[k]) + x(order[k + 1])),
                        split_sse,
                    });
                }
            }
        }
        best.map(|b| (b, candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(diffs: Vec<f64>, covs: Vec<(&str, Vec<f64>)>) -> PairSample {
        let n = diffs.len();
        PairSample::new(
            (0..n).map(|i| format!("p{i:03}")).collect(),
            diffs,
            covs.iter().map(|c| c.0.to_string()).collect(),
            (0..n).map(|i| covs.iter().map(|c| c.1[i]).collect()).collect(),
        )
        .unwrap()
    }

    fn step_data(seed: u64, n: usize) -> PairSample {
        let mut rng = substream(seed, &[7]);
        let mut diffs = Vec::new();
        let mut age = Vec::new();
        let mut sex = Vec::new();
        for _ in 0..n {
            let a = rng.random_range(0..40) as f64;
            let size: f64 = if a < 10.0 { 5.0 + rng.random::<f64>() } else { rng.random::<f64>() };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            diffs.push(sign * size);
            age.push(a);
            sex.push(rng.random_range(0..2) as f64);
        }
        sample(diffs, vec![("sex", sex), ("age", age)])
    }

    #[test]
    fn constant_covariate_single_leaf() {
        let s = sample((0..50).map(|i| i as f64 - 20.0).collect(), vec![("k", vec![1.0; 50])]);
        let t = fit_abs_rank_tree(&s, TreeParams::default()).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaf_labels(), vec!["all"]);
    }

    #[test]
    fn step_data_root_threshold() {
        let t = fit_abs_rank_tree(&step_data(1, 400), TreeParams::default()).unwrap();
        let (cov, thr) = t.root_split().unwrap();
        assert_eq!(cov, "age");
        assert!(thr > 9.0 && thr < 11.0, "{thr}");
        assert_eq!(thr, 9.5);
    }

    #[test]
    fn no_covariates_is_error() {
        let s = PairSample::from_diffs(vec![1.0; 30]).unwrap();
        assert!(fit_abs_rank_tree(&s, TreeParams::default()).is_err());
    }

    #[test]
    fn too_few_pairs_is_error() {
        let s = sample(vec![1.0; 10], vec![("x", (0..10).map(f64::from).collect())]);
        assert!(fit_abs_rank_tree(&s, TreeParams::default()).is_err());
    }

    #[test]
    fn splits_respect_cp_and_min_leaf() {
        let s = step_data(3, 600);
        let params = TreeParams {
            split_alpha: None,
            ..TreeParams::default()
        };
        let t = fit_abs_rank_tree(&s, params).unwrap();
        let root_sse = t.root.sse();
        fn check(node: &TreeNode, min_gain: f64, min_leaf: usize) {
            match node {
                TreeNode::Leaf { n, pair_ids, .. } => {
                    assert!(*n >= min_leaf);
                    assert_eq!(pair_ids.len(), *n);
                }
                TreeNode::Split {
                    improvement,
                    left,
                    right,
                    n,
                    ..
                } => {
                    assert!(*improvement >= min_gain);
                    assert_eq!(left.n() + right.n(), *n);
                    check(left, min_gain, min_leaf);
                    check(right, min_gain, min_leaf);
                }
            }
        }
        check(&t.root, params.cp * root_sse, params.min_leaf);
        assert!(t.depth() <= params.max_depth);
        let total: usize = t.leaves().iter().map(|l| l.1.n()).sum();
        assert_eq!(total, 600);
    }

    #[test]
    fn leaf_index_agrees_with_training_membership() {
        let s = step_data(4, 300);
        let t = fit_abs_rank_tree(&s, TreeParams::default()).unwrap();
        for (li, (_, leaf)) in t.leaves().iter().enumerate() {
            let TreeNode::Leaf { pair_ids, .. } = leaf else { unreachable!() };
            for id in pair_ids {
                let i = s.ids().iter().position(|x| x == id).unwrap();
                assert_eq!(t.leaf_index(s.covariate_names(), s.covariate_row(i)).unwrap(), li);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let t = fit_abs_rank_tree(&step_data(5, 200), TreeParams::default()).unwrap();
        let js = serde_json::to_string(&t).unwrap();
        assert!(js.contains("\"kind\":\"split\""));
        let back: RegressionTree = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn sign_flip_invariance(seed in any::<u64>(), flips in proptest::collection::vec(any::<bool>(), 120)) {
            let s = step_data(seed, 120);
            let flipped: Vec<f64> = s.diffs().iter().zip(&flips).map(|(d, &f)| if f { -d } else { *d }).collect();
            let params = TreeParams { split_alpha: None, ..TreeParams::default() };
            let a = fit_abs_rank_tree(&s, params).unwrap();
            let b = fit_abs_rank_tree(&s.with_diffs(flipped).unwrap(), params).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
