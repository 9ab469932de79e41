//! Adaptive protocols: pick the outcome or the subgroups on a random
//! planning sample, then test on the untouched analysis sample; or grow a
//! regression tree on ranks of `|diff|`, which leaves the randomization
//! distribution of the signs intact, and test within its leaves.

mod outcomes;
mod subgroups;
mod tree;

pub use outcomes::{
    load_outcomes, read_outcomes, select_outcome_split, MultiOutcomeSample, OutcomeScore,
    OutcomeSelection,
};
pub use subgroups::{
    select_subgroups_split, subgroup_sensitivity_test, subgroups_from_tree, GroupBound,
    PartitionProvenance, SubgroupPartition, SubgroupSplit, SubgroupTestResult,
    DEFAULT_SUBGROUP_PLANNING_FRACTION,
};
pub use tree::{fit_abs_rank_tree, fit_rank_tree, RegressionTree, TreeNode, TreeParams, TreeResponse};
