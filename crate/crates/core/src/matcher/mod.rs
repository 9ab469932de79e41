//! Optimal treated-control pair matching and covariate balance.
//!
//! The pipeline is: load a [`SubjectTable`], optionally [`fit_propensity`],
//! build a [`DistanceMatrix`] (rank-based Mahalanobis or propensity gap,
//! with an optional hard caliper), solve the assignment exactly with
//! [`optimal_pair_match`], then summarise balance with [`balance_report`].
//!
//! Only 1:1 pair matching is provided.

mod assignment;
mod balance;
mod distance;
mod propensity;
mod subjects;

pub use assignment::{optimal_pair_match, MatchResult, MatchedPair};
pub use balance::{balance_report, BalanceReport, BalanceRow, DEFAULT_FLAG_THRESHOLD};
pub use distance::{distance_matrix, DistanceMatrix, DistanceMetric};
pub use propensity::{fit_propensity, PropensityModel, MAX_NEWTON_ITERATIONS, SCORE_TOLERANCE};
pub use subjects::{load_subjects, read_match_csv, read_subjects, write_match_csv, SubjectTable};
