use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "obskit",
    version,
    about = "Matched observational studies: matching, sensitivity analysis, multiplicity and adaptive protocols"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed for every random draw.
    #[arg(long, global = true, env = "OBSKIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for CSV/SVG artifacts and manifest.json.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    /// Key/value lines with probabilities to 6 significant digits.
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal pair matching of treated to control subjects.
    Match(MatchArgs),
    /// Standardized differences before and after matching.
    Balance(BalanceArgs),
    /// Upper p-value bounds under hidden bias Γ.
    Sens {
        #[command(subcommand)]
        test: SensCommand,
    },
    /// Map (Λ, Δ) to Γ, or Γ to a curve of (Λ, Δ).
    Amplify(AmplifyArgs),
    /// Limiting Γ for N(δ, 1) pair differences.
    DesignSens(DesignSensArgs),
    /// Monte Carlo power of the sensitivity analysis.
    Power(PowerArgs),
    /// Combine or adjust a set of p-values.
    Combine {
        #[command(subcommand)]
        method: CombineCommand,
    },
    /// Test hypotheses in a fixed order, each at full α.
    OrderTest(OrderTestArgs),
    /// Choose on a planning sample, test on the analysis sample.
    SplitSelect {
        #[command(subcommand)]
        target: SplitCommand,
    },
    /// Subgroups from a tree on ranks of |diff|, tested on the full sample.
    TreeSubgroups(TreeSubgroupsArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    RankMahalanobis,
    PropensityAbsDiff,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// CSV with id, treated (0/1) and cov_* columns.
    #[arg(long)]
    pub subjects: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::RankMahalanobis)]
    pub metric: MetricArg,
    /// Largest allowed difference in propensity score.
    #[arg(long)]
    pub caliper: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub subjects: PathBuf,
    /// CSV with treated_id, control_id, distance as written by `match`.
    #[arg(long)]
    pub matches: PathBuf,
    /// Absolute standardized difference that gets flagged.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct GammaArgs {
    #[arg(long, conflicts_with = "gamma_grid")]
    pub gamma: Option<f64>,
    /// Inclusive grid a:b:step.
    #[arg(long)]
    pub gamma_grid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WilcoxonMethodArg {
    Normal,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum McNemarMethodArg {
    NormalCorrected,
    Exact,
}

#[derive(Debug, Subcommand)]
pub enum SensCommand {
    /// Signed-rank test on pair differences.
    Wilcoxon {
        /// CSV with pair_id and diff columns.
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        gamma: GammaArgs,
        #[arg(long, value_enum, default_value_t = WilcoxonMethodArg::Normal)]
        method: WilcoxonMethodArg,
    },
    /// McNemar's test on discordant pairs of a binary outcome.
    Mcnemar {
        #[arg(long)]
        discordant: u64,
        /// Discordant pairs in which the treated subject had the event.
        #[arg(long)]
        treated_events: u64,
        #[command(flatten)]
        gamma: GammaArgs,
        #[arg(long, value_enum, default_value_t = McNemarMethodArg::NormalCorrected)]
        method: McNemarMethodArg,
    },
}

#[derive(Debug, Args)]
pub struct AmplifyArgs {
    #[arg(long, requires = "delta", conflicts_with = "gamma")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Γ to decompose; pair with --lambda-grid.
    #[arg(long, requires = "lambda_grid")]
    pub gamma: Option<f64>,
    /// Λ values a:b:step.
    #[arg(long)]
    pub lambda_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct DesignSensArgs {
    /// Effect size δ of N(δ, 1) differences.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long)]
    pub pairs: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = WilcoxonMethodArg::Normal)]
    pub method: WilcoxonMethodArg,
}

#[derive(Debug, Args)]
pub struct PValueArgs {
    /// A p-value; repeat for several.
    #[arg(long = "p")]
    pub p: Vec<f64>,
    /// CSV of p-values: one column, or label,p.
    #[arg(long)]
    pub p_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CombineCommand {
    /// Truncated product of the p-values at or below τ.
    Truncated {
        #[command(flatten)]
        ps: PValueArgs,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        /// Monte Carlo draws when k is large.
        #[arg(long, default_value_t = 100_000)]
        mc_draws: usize,
    },
    Bonferroni {
        #[command(flatten)]
        ps: PValueArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    Holm {
        #[command(flatten)]
        ps: PValueArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Benjamini–Hochberg false discovery rate control.
    Bh {
        #[command(flatten)]
        ps: PValueArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Debug, Args)]
pub struct OrderTestArgs {
    /// Hypotheses in test order; a comma-separated list is a sequentially
    /// exclusive node whose members are each tested at α.
    #[arg(long = "node", required = true)]
    pub nodes: Vec<String>,
    /// label=p; repeat for several.
    #[arg(long = "pv")]
    pub pv: Vec<String>,
    /// CSV with label,p rows.
    #[arg(long)]
    pub p_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Subcommand)]
pub enum SplitCommand {
    /// Pick the most promising outcome(s), then bound them on the rest.
    Outcome {
        /// CSV with pair_id, one column per outcome difference, optional cov_*.
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        planning_frac: f64,
        /// Outcomes carried to the analysis sample (Holm over them).
        #[arg(long, default_value_t = 1)]
        top: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Grow subgroups on the planning sample, test them on the rest.
    Subgroups {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = obskit::adaptive::DEFAULT_SUBGROUP_PLANNING_FRACTION)]
        planning_frac: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[command(flatten)]
        tree: TreeArgs,
    },
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[arg(long, default_value_t = 20)]
    pub min_split: usize,
    #[arg(long, default_value_t = 7)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    /// Minimum relative decrease in squared error for a split.
    #[arg(long, default_value_t = 0.01)]
    pub cp: f64,
    /// Bonferroni-adjusted level a split must reach; 1 disables the check.
    #[arg(long, default_value_t = 0.05)]
    pub split_alpha: f64,
}

#[derive(Debug, Args)]
pub struct TreeSubgroupsArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[command(flatten)]
    pub tree: TreeArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// multi-outcome-rct, multi-outcome-gamma, power-vs-gamma,
    /// pvalue-histogram, subgroup-hetero or iv-adjustment (fig1, fig2, fig3,
    /// fig4, fig8 and iv also work).
    pub scenario: String,
    /// TOML or JSON file of scenario parameters.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Γ grid a:b:step for power-vs-gamma.
    #[arg(long)]
    pub gamma_grid: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub planning_frac: Option<f64>,
    /// Also write plot.svg into --out.
    #[arg(long)]
    pub svg: bool,
}
