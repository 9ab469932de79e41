use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::tree::{fit_rank_tree, RegressionTree, TreeNode, TreeParams, TreeResponse};
use crate::error::{Error, Result};
use crate::multiplicity::{truncated_product, PValueSet, TruncatedOptions, TruncatedProductResult};
use crate::pairs::{rank_diffs, split_sample, PairSample};
use crate::sensitivity::{wilcoxon_gamma_bound, GammaBoundResult, WilcoxonMethod};

pub const DEFAULT_SUBGROUP_PLANNING_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionProvenance {
    APriori,
    PlanningSplit,
    CartAbsolute,
}

/// A group label for every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub pair_ids: Vec<String>,
    pub labels: Vec<String>,
    /// Distinct labels in order of first appearance.
    pub group_labels: Vec<String>,
    pub provenance: PartitionProvenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SubgroupPartition {
    pub fn new(pair_ids: Vec<String>, labels: Vec<String>, provenance: PartitionProvenance) -> Result<Self> {
        if pair_ids.is_empty() || pair_ids.len() != labels.len() {
            return Err(Error::invalid("partition needs one label per pair"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = pair_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("pair {dup:?} appears twice in the partition")));
        }
        let mut group_labels: Vec<String> = Vec::new();
        for l in &labels {
            if !group_labels.contains(l) {
                group_labels.push(l.clone());
            }
        }
        Ok(SubgroupPartition {
            pair_ids,
            labels,
            group_labels,
            provenance,
            notes: Vec::new(),
        })
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    /// Pair ids per group, in `group_labels` order.
    pub fn groups(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.group_labels.len()];
        for (id, l) in self.pair_ids.iter().zip(&self.labels) {
            let g = self.group_labels.iter().position(|x| x == l).expect("label listed");
            out[g].push(id.as_str());
        }
        out
    }

    /// `pair_id,group_label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["pair_id", "group_label"])?;
        for (id, l) in self.pair_ids.iter().zip(&self.labels) {
            wtr.write_record([id, l])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Assigns every pair of `s` to the leaf its covariates reach.
    pub fn from_tree_predicates(
        tree: &RegressionTree,
        s: &PairSample,
        provenance: PartitionProvenance,
    ) -> Result<Self> {
        let leaf_labels = tree.leaf_labels();
        let labels = (0..s.len())
            .map(|i| {
                tree.leaf_index(s.covariate_names(), s.covariate_row(i))
                    .map(|k| leaf_labels[k].clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = SubgroupPartition::new(s.ids().to_vec(), labels, provenance)?;
        // keep leaf order rather than first-appearance order
        p.group_labels = leaf_labels.into_iter().filter(|l| p.labels.contains(l)).collect();
        Ok(p)
    }
}

/// One group per leaf, labelled by its root-to-leaf predicates.
pub fn subgroups_from_tree(tree: &RegressionTree) -> SubgroupPartition {
    let provenance = match tree.response {
        TreeResponse::AbsDiffRanks => PartitionProvenance::CartAbsolute,
        TreeResponse::SignedDiffRanks => PartitionProvenance::PlanningSplit,
    };
    let mut pair_ids = Vec::new();
    let mut labels = Vec::new();
    let mut group_labels = Vec::new();
    for (label, leaf) in tree.leaves() {
        if let TreeNode::Leaf { pair_ids: ids, .. } = leaf {
            for id in ids {
                pair_ids.push(id.clone());
                labels.push(label.clone());
            }
        }
        group_labels.push(label);
    }
    SubgroupPartition {
        pair_ids,
        labels,
        group_labels,
        provenance,
        notes: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBound {
    pub label: String,
    pub n_pairs: usize,
    pub bound: GammaBoundResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTestResult {
    pub groups: Vec<GroupBound>,
    pub combined: TruncatedProductResult,
}

/// Γ-bound signed-rank p-value in each group, combined with the truncated
/// product at `tau`.
pub fn subgroup_sensitivity_test(
    s: &PairSample,
    g: &SubgroupPartition,
    gamma: f64,
    tau: f64,
    method: WilcoxonMethod,
    options: TruncatedOptions,
) -> Result<SubgroupTestResult> {
    let group_of: HashMap<&str, usize> = {
        let index: HashMap<&str, usize> =
            g.group_labels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
        g.pair_ids
            .iter()
            .zip(&g.labels)
            .map(|(id, l)| (id.as_str(), index[l.as_str()]))
            .collect()
    };
    let mut diffs = vec![Vec::new(); g.n_groups()];
    for (id, &d) in s.ids().iter().zip(s.diffs()) {
        let k = group_of
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("pair {id:?} has no subgroup")))?;
        diffs[*k].push(d);
    }
    let mut groups = Vec::with_capacity(diffs.len());
    for (label, d) in g.group_labels.iter().zip(&diffs) {
        if d.is_empty() {
            return Err(Error::invalid(format!("subgroup {label:?} has no pairs")));
        }
        let ranked = rank_diffs(d).map_err(|_| {
            Error::Degenerate(format!("subgroup {label:?} has only zero differences"))
        })?;
        groups.push(GroupBound {
            label: label.clone(),
            n_pairs: d.len(),
            bound: wilcoxon_gamma_bound(&ranked, gamma, method)?,
        });
    }
    let ps = PValueSet::new(
        groups.iter().map(|g| g.label.clone()).collect(),
        groups.iter().map(|g| g.bound.p_upper).collect(),
    )?;
    Ok(SubgroupTestResult {
        combined: truncated_product(&ps, tau, options)?,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSplit {
    /// Groups of the analysis pairs.
    pub partition: SubgroupPartition,
    pub analysis: PairSample,
    pub planning_ids: Vec<String>,
    pub tree: Option<RegressionTree>,
}

/// Grows a tree on the ranks of the signed differences in a random planning
/// sample and applies its leaf predicates, unchanged, to the analysis pairs.
/// A planning tree that cannot or does not split yields a single group.
pub fn select_subgroups_split(
    s: &PairSample,
    fraction: f64,
    seed: u64,
    params: TreeParams,
) -> Result<SubgroupSplit> {
    if s.covariate_names().is_empty() {
        return Err(Error::invalid("subgroup selection needs pair covariates"));
    }
    let split = split_sample(s, fraction, seed)?;
    let planning = s.subset(&split.planning_indices)?;
    let analysis = s.subset(&split.analysis_indices)?;
    let single = |note: String| -> Result<SubgroupSplit> {
        let mut partition = SubgroupPartition::new(
            analysis.ids().to_vec(),
            vec!["all".to_string(); analysis.len()],
            PartitionProvenance::PlanningSplit,
        )?;
        partition.notes.push(note);
        Ok(SubgroupSplit {
            partition,
            analysis: analysis.clone(),
            planning_ids: split.planning_ids.clone(),
            tree: None,
        })
    };
    if planning.len() < 2 * params.min_leaf {
        return single(format!(
            "planning sample of {} pairs is too small to split; using a single group",
            planning.len()
        ));
    }
    let tree = fit_rank_tree(&planning, TreeResponse::SignedDiffRanks, params)?;
    if tree.n_leaves() == 1 {
        let mut out = single("planning tree did not split; using a single group".into())?;
        out.tree = Some(tree);
        return Ok(out);
    }
    let partition =
        SubgroupPartition::from_tree_predicates(&tree, &analysis, PartitionProvenance::PlanningSplit)?;
    Ok(SubgroupSplit {
        partition,
        analysis,
        planning_ids: split.planning_ids,
        tree: Some(tree),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::fit_abs_rank_tree;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use rayon::prelude::*;

    fn sample(diffs: Vec<f64>, covs: Vec<(&str, Vec<f64>)>) -> PairSample {
        let n = diffs.len();
        PairSample::new(
            (0..n).map(|i| format!("p{i:04}")).collect(),
            diffs,
            covs.iter().map(|c| c.0.to_string()).collect(),
            (0..n).map(|i| covs.iter().map(|c| c.1[i]).collect()).collect(),
        )
        .unwrap()
    }

    /// Signed effect `shift` for age < 9.5, none above.
    fn malaria_like(seed: u64, n: usize, shift: f64) -> PairSample {
        let mut rng = substream(seed, &[8]);
        let mut diffs = Vec::new();
        let mut age = Vec::new();
        let mut sex = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random::<f64>() * 40.0;
            let z: f64 = StandardNormal.sample(&mut rng);
            diffs.push(z + if a < 9.5 { shift } else { 0.0 });
            age.push(a);
            sex.push(rng.random_range(0..2) as f64);
        }
        sample(diffs, vec![("sex", sex), ("age", age)])
    }

    fn check_partition(p: &SubgroupPartition, s: &PairSample) {
        let mut ids: Vec<&str> = p.groups().concat();
        ids.sort();
        let mut want: Vec<&str> = s.ids().iter().map(String::as_str).collect();
        want.sort();
        assert_eq!(ids, want);
        assert!(p.groups().iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn single_leaf_single_group() {
        let s = sample((0..40).map(|i| i as f64 - 15.5).collect(), vec![("k", vec![2.0; 40])]);
        let t = fit_abs_rank_tree(&s, TreeParams::default()).unwrap();
        let p = subgroups_from_tree(&t);
        assert_eq!(p.group_labels, vec!["all"]);
        check_partition(&p, &s);
    }

    #[test]
    fn age_split_groups() {
        // step in |diff| at 9.5 with integer ages
        let mut rng = substream(2, &[9]);
        let mut diffs = Vec::new();
        let mut age = Vec::new();
        for _ in 0..300 {
            let a = rng.random_range(1..30) as f64;
            let size = if a < 9.5 { 4.0 + rng.random::<f64>() } else { rng.random::<f64>() };
            diffs.push(if rng.random::<bool>() { size } else { -size });
            age.push(a);
        }
        let s = sample(diffs, vec![("age", age)]);
        let params = TreeParams {
            max_depth: 1,
            ..TreeParams::default()
        };
        let p = subgroups_from_tree(&fit_abs_rank_tree(&s, params).unwrap());
        assert_eq!(p.group_labels, vec!["age<9.5", "age≥9.5"]);
        assert_eq!(p.provenance, PartitionProvenance::CartAbsolute);
        check_partition(&p, &s);
    }

    #[test]
    fn two_splits_three_groups() {
        // |diff| level set by age band: <10, 10..20, ≥20
        let n = 300;
        let age: Vec<f64> = (0..n).map(|i| (i % 30) as f64).collect();
        let diffs: Vec<f64> = (0..n)
            .map(|i| {
                let base = if age[i] < 10.0 { 10.0 } else if age[i] < 20.0 { 5.0 } else { 1.0 };
                let v = base + (i as f64) * 1e-3;
                if i % 2 == 0 { v } else { -v }
            })
            .collect();
        let s = sample(diffs, vec![("age", age)]);
        let params = TreeParams {
            max_depth: 2,
            ..TreeParams::default()
        };
        let t = fit_abs_rank_tree(&s, params).unwrap();
        let p = subgroups_from_tree(&t);
        assert_eq!(p.n_groups(), 3, "{:?}", p.group_labels);
        check_partition(&p, &s);
        let via_predicates =
            SubgroupPartition::from_tree_predicates(&t, &s, PartitionProvenance::CartAbsolute).unwrap();
        for (id, l) in p.pair_ids.iter().zip(&p.labels) {
            let i = via_predicates.pair_ids.iter().position(|x| x == id).unwrap();
            assert_eq!(&via_predicates.labels[i], l);
        }
    }

    #[test]
    fn one_group_reduces_to_its_bound() {
        let s = sample((1..=30).map(|i| i as f64 * 0.1 + 0.5).collect(), vec![("x", vec![0.0; 30])]);
        let g = SubgroupPartition::new(s.ids().to_vec(), vec!["all".into(); 30], PartitionProvenance::APriori)
            .unwrap();
        let r = subgroup_sensitivity_test(&s, &g, 1.5, 0.2, WilcoxonMethod::NormalApprox, Default::default())
            .unwrap();
        let p = r.groups[0].bound.p_upper;
        assert!(p <= 0.2);
        assert!((r.combined.combined_p - p).abs() < 1e-12);
    }

    #[test]
    fn zero_group_is_error() {
        let s = sample(vec![0.0, 0.0, 1.0, 2.0], vec![("x", vec![0.0, 0.0, 1.0, 1.0])]);
        let g = SubgroupPartition::new(
            s.ids().to_vec(),
            vec!["a".into(), "a".into(), "b".into(), "b".into()],
            PartitionProvenance::APriori,
        )
        .unwrap();
        let err = subgroup_sensitivity_test(&s, &g, 1.0, 0.2, WilcoxonMethod::NormalApprox, Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn null_signal_keeps_one_group() {
        let single: usize = (0..200u64)
            .into_par_iter()
            .map(|seed| {
                let s = malaria_like(seed, 400, 0.0);
                let out = select_subgroups_split(&s, DEFAULT_SUBGROUP_PLANNING_FRACTION, seed, TreeParams::default())
                    .unwrap();
                check_partition(&out.partition, &out.analysis);
                (out.partition.n_groups() == 1) as usize
            })
            .sum();
        assert!(single >= 180, "{single}/200");
    }

    #[test]
    fn age_interaction_recovered() {
        let hits: usize = (0..200u64)
            .into_par_iter()
            .map(|seed| {
                let s = malaria_like(1000 + seed, 800, 2.0);
                let out = select_subgroups_split(&s, DEFAULT_SUBGROUP_PLANNING_FRACTION, seed, TreeParams::default())
                    .unwrap();
                match out.tree.as_ref().and_then(|t| t.root_split()) {
                    Some(("age", thr)) if (thr - 9.5).abs() <= 1.5 => 1,
                    _ => 0,
                }
            })
            .sum();
        assert!(hits >= 180, "{hits}/200");
    }

    #[test]
    fn cart_pipeline_null_familywise() {
        let reps = 2000u64;
        let rejections: usize = (0..reps)
            .into_par_iter()
            .map(|seed| {
                let s = malaria_like(50_000 + seed, 200, 0.0);
                let t = fit_abs_rank_tree(&s, TreeParams::default()).unwrap();
                let g = subgroups_from_tree(&t);
                let r = subgroup_sensitivity_test(
                    &s,
                    &g,
                    1.0,
                    0.2,
                    WilcoxonMethod::NormalApprox,
                    TruncatedOptions::default(),
                )
                .unwrap();
                (r.combined.combined_p <= 0.05) as usize
            })
            .sum();
        let rate = rejections as f64 / reps as f64;
        let se = (0.05f64 * 0.95 / reps as f64).sqrt();
        assert!(rate <= 0.05 + 2.0 * se, "{rate}");
    }

    #[test]
    fn partition_csv() {
        let g = SubgroupPartition::new(
            vec!["a".into(), "b".into()],
            vec!["x<1".into(), "x≥1".into()],
            PartitionProvenance::APriori,
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "pair_id,group_label\na,x<1\nb,x≥1\n");
    }
}
