use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use obskit::adaptive::{
    fit_abs_rank_tree, load_outcomes, select_outcome_split, select_subgroups_split,
    subgroup_sensitivity_test, subgroups_from_tree, TreeParams,
};
use obskit::matcher::{
    balance_report, distance_matrix, fit_propensity, load_subjects, optimal_pair_match,
    read_match_csv, write_match_csv, DistanceMetric,
};
use obskit::multiplicity::{
    benjamini_hochberg, bonferroni, holm, testing_in_order, truncated_product, OrderedTestPlan,
    PValueSet, TestNode, TruncatedOptions,
};
use obskit::pairs::{load_pairs, rank_pairs, PairSchema};
use obskit::sensitivity::{
    amplification_curve, amplify, design_sensitivity_normal, mcnemar_gamma_bound, parse_grid,
    power_of_sensitivity, wilcoxon_gamma_bound, GammaBoundResult, McNemarMethod, PowerOptions,
    WilcoxonMethod,
};
use obskit::simlab::{self, Scenario, ScenarioSpec};
use serde_json::{json, Map, Value};

use crate::args::*;
use crate::CliError;

/// Seed used when neither --seed nor OBSKIT_SEED is given.
pub const DEFAULT_SEED: u64 = 0;

pub struct Ctx {
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Ctx {
    fn out_file(&self, name: &str) -> Result<Option<BufWriter<File>>, CliError> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                let path = dir.join(name);
                let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
                Ok(Some(BufWriter::new(f)))
            }
            None => Ok(None),
        }
    }
}

pub struct Report {
    pub value: Value,
    /// Replaces the generic key/value text rendering.
    pub text: Option<String>,
}

impl Report {
    fn json(value: Value) -> Self {
        Report { value, text: None }
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Files a command reads, for the manifest.
pub fn input_paths(cmd: &Command) -> Vec<PathBuf> {
    let mut v: Vec<&Path> = Vec::new();
    match cmd {
        Command::Match(a) => v.push(&a.subjects),
        Command::Balance(a) => {
            v.push(&a.subjects);
            v.push(&a.matches);
        }
        Command::Sens {
            test: SensCommand::Wilcoxon { pairs, .. },
        } => v.push(pairs),
        Command::Combine { method } => {
            let ps = match method {
                CombineCommand::Truncated { ps, .. }
                | CombineCommand::Bonferroni { ps, .. }
                | CombineCommand::Holm { ps, .. }
                | CombineCommand::Bh { ps, .. } => ps,
            };
            v.extend(ps.p_file.as_deref());
        }
        Command::OrderTest(a) => v.extend(a.p_file.as_deref()),
        Command::SplitSelect { target } => match target {
            SplitCommand::Outcome { outcomes, .. } => v.push(outcomes),
            SplitCommand::Subgroups { pairs, .. } => v.push(pairs),
        },
        Command::TreeSubgroups(a) => v.push(&a.pairs),
        Command::Simulate(a) => v.extend(a.spec.as_deref()),
        _ => {}
    }
    v.into_iter().map(Path::to_path_buf).collect()
}

pub fn run(cmd: &Command, ctx: &Ctx) -> Result<Report, CliError> {
    match cmd {
        Command::Match(a) => run_match(a, ctx),
        Command::Balance(a) => run_balance(a, ctx),
        Command::Sens { test } => run_sens(test, ctx),
        Command::Amplify(a) => run_amplify(a),
        Command::DesignSens(a) => Ok(Report::json(to_value(&design_sensitivity_normal(a.delta)?))),
        Command::Power(a) => {
            let est = power_of_sensitivity(
                a.pairs,
                a.delta,
                a.gamma,
                a.alpha,
                a.reps,
                ctx.seed,
                PowerOptions {
                    method: wilcoxon_method(a.method),
                },
            )?;
            Ok(Report::json(to_value(&est)))
        }
        Command::Combine { method } => run_combine(method, ctx),
        Command::OrderTest(a) => run_order_test(a),
        Command::SplitSelect { target } => run_split(target, ctx),
        Command::TreeSubgroups(a) => run_tree_subgroups(a, ctx),
        Command::Simulate(a) => run_simulate(a, ctx),
    }
}

fn run_match(a: &MatchArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let t = load_subjects(&a.subjects)?;
    let metric = match a.metric {
        MetricArg::RankMahalanobis => DistanceMetric::RankMahalanobis,
        MetricArg::PropensityAbsDiff => DistanceMetric::PropensityAbsDiff,
    };
    let model = if metric == DistanceMetric::PropensityAbsDiff || a.caliper.is_some() {
        Some(fit_propensity(&t)?)
    } else {
        None
    };
    let d = distance_matrix(&t, metric, a.caliper, model.as_ref())?;
    let m = optimal_pair_match(&d);
    if let Some(w) = ctx.out_file("matches.csv")? {
        write_match_csv(&m, w)?;
    }
    Ok(Report::json(json!({
        "metric": metric,
        "caliper": a.caliper,
        "n_treated": d.n_treated(),
        "n_controls": d.n_controls(),
        "ridge": d.ridge,
        "notes": d.notes,
        "propensity": model,
        "matching": m,
    })))
}

fn run_balance(a: &BalanceArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let t = load_subjects(&a.subjects)?;
    let f = File::open(&a.matches).map_err(|e| CliError::io(&a.matches, e))?;
    let m = read_match_csv(f)?;
    let report = balance_report(&t, &m, a.threshold)?;
    if let Some(w) = ctx.out_file("balance.csv")? {
        report.write_csv(w)?;
    }
    Ok(Report {
        value: to_value(&report),
        text: Some(report.render_text()),
    })
}

fn wilcoxon_method(m: WilcoxonMethodArg) -> WilcoxonMethod {
    match m {
        WilcoxonMethodArg::Normal => WilcoxonMethod::NormalApprox,
        WilcoxonMethodArg::Exact => WilcoxonMethod::ExactConvolution,
    }
}

fn gammas(g: &GammaArgs) -> Result<(Vec<f64>, bool), CliError> {
    match (&g.gamma_grid, g.gamma) {
        (Some(grid), _) => Ok((parse_grid(grid)?, true)),
        (None, Some(x)) => Ok((vec![x], false)),
        (None, None) => Ok((vec![1.0], false)),
    }
}

fn bounds_report(
    mut header: Map<String, Value>,
    results: Vec<GammaBoundResult>,
    grid: bool,
    ctx: &Ctx,
) -> Result<Report, CliError> {
    if let Some(w) = ctx.out_file("bounds.csv")? {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["gamma", "statistic", "p_upper", "mu_bound", "sigma_bound"])
            .map_err(obskit::Error::from)?;
        for r in &results {
            w.write_record([
                r.gamma.to_string(),
                r.statistic.to_string(),
                r.p_upper.to_string(),
                r.mu_bound.to_string(),
                r.sigma_bound.to_string(),
            ])
            .map_err(obskit::Error::from)?;
        }
        w.flush().map_err(obskit::Error::from)?;
    }
    if grid {
        header.insert("results".into(), to_value(&results));
    } else if let Value::Object(fields) = to_value(&results[0]) {
        header.extend(fields);
    }
    Ok(Report::json(Value::Object(header)))
}

fn run_sens(test: &SensCommand, ctx: &Ctx) -> Result<Report, CliError> {
    match test {
        SensCommand::Wilcoxon {
            pairs,
            gamma,
            method,
        } => {
            let s = load_pairs(pairs, &PairSchema::AllCovariates)?;
            let ranked = rank_pairs(&s)?;
            let (grid, is_grid) = gammas(gamma)?;
            let results = grid
                .iter()
                .map(|&g| wilcoxon_gamma_bound(&ranked, g, wilcoxon_method(*method)))
                .collect::<obskit::Result<Vec<_>>>()?;
            let mut header = Map::new();
            header.insert("test".into(), json!("wilcoxon"));
            header.insert("n_pairs".into(), json!(s.len()));
            header.insert("zero_diffs".into(), json!(ranked.dropped_zeros));
            bounds_report(header, results, is_grid, ctx)
        }
        SensCommand::Mcnemar {
            discordant,
            treated_events,
            gamma,
            method,
        } => {
            let m = match method {
                McNemarMethodArg::NormalCorrected => McNemarMethod::NormalCorrected,
                McNemarMethodArg::Exact => McNemarMethod::Exact,
            };
            let (grid, is_grid) = gammas(gamma)?;
            let results = grid
                .iter()
                .map(|&g| mcnemar_gamma_bound(*discordant, *treated_events, g, m))
                .collect::<obskit::Result<Vec<_>>>()?;
            let mut header = Map::new();
            header.insert("test".into(), json!("mcnemar"));
            header.insert("discordant".into(), json!(discordant));
            header.insert("treated_events".into(), json!(treated_events));
            bounds_report(header, results, is_grid, ctx)
        }
    }
}

fn run_amplify(a: &AmplifyArgs) -> Result<Report, CliError> {
    match (a.lambda, a.delta, a.gamma, &a.lambda_grid) {
        (Some(l), Some(d), None, _) => Ok(Report::json(to_value(&amplify(l, d)?))),
        (None, None, Some(g), Some(grid)) => {
            Ok(Report::json(to_value(&amplification_curve(g, &parse_grid(grid)?)?)))
        }
        _ => Err(CliError::Usage(
            "give either --lambda and --delta, or --gamma and --lambda-grid".into(),
        )),
    }
}

fn read_p_file(path: &Path) -> Result<(Vec<String>, Vec<f64>), CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(f);
    let mut labels = Vec::new();
    let mut ps = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(obskit::Error::from)?;
        let (label, raw) = match rec.len() {
            0 => continue,
            1 => (None, &rec[0]),
            2 => (Some(rec[0].to_string()), &rec[1]),
            n => {
                return Err(CliError::Usage(format!(
                    "{}: row {} has {n} columns; expected p or label,p",
                    path.display(),
                    i + 1
                )))
            }
        };
        match raw.parse::<f64>() {
            Ok(p) => {
                labels.push(label.unwrap_or_else(|| format!("p{}", ps.len() + 1)));
                ps.push(p);
            }
            // a header row
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(CliError::Usage(format!(
                    "{}: row {} col p: {raw:?} is not a number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok((labels, ps))
}

fn p_values(a: &PValueArgs) -> Result<PValueSet, CliError> {
    let mut labels: Vec<String> = (1..=a.p.len()).map(|i| format!("p{i}")).collect();
    let mut ps = a.p.clone();
    if let Some(path) = &a.p_file {
        let (l, p) = read_p_file(path)?;
        let offset = ps.len();
        labels.extend(l.into_iter().map(|s| {
            // renumber default labels after the inline values
            match s.strip_prefix('p').and_then(|n| n.parse::<usize>().ok()) {
                Some(n) => format!("p{}", n + offset),
                None => s,
            }
        }));
        ps.extend(p);
    }
    if ps.is_empty() {
        return Err(CliError::Usage("no p-values given; use --p or --p-file".into()));
    }
    Ok(PValueSet::new(labels, ps)?)
}

fn run_combine(method: &CombineCommand, ctx: &Ctx) -> Result<Report, CliError> {
    let rejections = match method {
        CombineCommand::Truncated { ps, tau, mc_draws } => {
            let set = p_values(ps)?;
            let options = TruncatedOptions {
                mc_draws: *mc_draws,
                seed: ctx.seed,
                ..Default::default()
            };
            let r = truncated_product(&set, *tau, options)?;
            return Ok(Report::json(json!({
                "method": "truncated-product",
                "tau": r.tau,
                "k": r.k,
                "w": r.w_statistic,
                "combined_p": r.combined_p,
                "evaluation": r.method,
                "mc_draws": r.mc_draws,
                "mc_standard_error": r.mc_standard_error,
            })));
        }
        CombineCommand::Bonferroni { ps, alpha } => bonferroni(&p_values(ps)?, *alpha)?,
        CombineCommand::Holm { ps, alpha } => holm(&p_values(ps)?, *alpha)?,
        CombineCommand::Bh { ps, alpha } => benjamini_hochberg(&p_values(ps)?, *alpha)?,
    };
    let mut v = to_value(&rejections);
    if let Value::Object(m) = &mut v {
        m.insert("rejected_labels".into(), json!(rejections.rejected_labels()));
    }
    Ok(Report::json(v))
}

fn run_order_test(a: &OrderTestArgs) -> Result<Report, CliError> {
    let mut labels = Vec::new();
    let mut ps = Vec::new();
    for item in &a.pv {
        let (l, p) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--pv {item:?} is not label=p")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("--pv {item:?}: p is not a number")))?;
        labels.push(l.trim().to_string());
        ps.push(p);
    }
    if let Some(path) = &a.p_file {
        let (l, p) = read_p_file(path)?;
        labels.extend(l);
        ps.extend(p);
    }
    let set = PValueSet::new(labels, ps)?;
    let nodes = a
        .nodes
        .iter()
        .map(|n| {
            let members: Vec<String> = n.split(',').map(|s| s.trim().to_string()).collect();
            if members.len() == 1 {
                TestNode::Single(members.into_iter().next().unwrap_or_default())
            } else {
                TestNode::Exclusive(members)
            }
        })
        .collect();
    let plan = OrderedTestPlan {
        alpha: a.alpha,
        nodes,
    };
    let decisions = testing_in_order(&plan, &set)?;
    let rejected: Vec<&str> = decisions
        .iter()
        .flat_map(|d| d.members.iter().filter(|m| m.2).map(|m| m.0.as_str()))
        .collect();
    Ok(Report::json(json!({
        "alpha": a.alpha,
        "plan": plan,
        "decisions": decisions,
        "rejected_labels": rejected,
    })))
}

fn tree_params(t: &TreeArgs) -> Result<TreeParams, CliError> {
    if !(t.split_alpha > 0.0 && t.split_alpha <= 1.0) {
        return Err(CliError::Usage("--split-alpha must lie in (0, 1]".into()));
    }
    Ok(TreeParams {
        min_split: t.min_split,
        min_leaf: t.min_leaf,
        max_depth: t.max_depth,
        cp: t.cp,
        split_alpha: (t.split_alpha < 1.0).then_some(t.split_alpha),
    })
}

fn run_split(target: &SplitCommand, ctx: &Ctx) -> Result<Report, CliError> {
    match target {
        SplitCommand::Outcome {
            outcomes,
            planning_frac,
            top,
            gamma,
            alpha,
        } => {
            let m = load_outcomes(outcomes)?;
            let sel = select_outcome_split(&m, *planning_frac, ctx.seed, *top)?;
            let mut bounds = Vec::new();
            for (label, sample) in sel.chosen.iter().zip(&sel.analysis) {
                let ranked = rank_pairs(sample)?;
                let b = wilcoxon_gamma_bound(&ranked, *gamma, WilcoxonMethod::NormalApprox)?;
                bounds.push((label.clone(), b));
            }
            let set = PValueSet::new(
                bounds.iter().map(|b| b.0.clone()).collect(),
                bounds.iter().map(|b| b.1.p_upper).collect(),
            )?;
            let adjusted = holm(&set, *alpha)?;
            if let Some(w) = ctx.out_file("split.csv")? {
                let mut w = csv::Writer::from_writer(w);
                w.write_record(["pair_id", "sample"]).map_err(obskit::Error::from)?;
                for id in &sel.planning_ids {
                    w.write_record([id.as_str(), "planning"]).map_err(obskit::Error::from)?;
                }
                for id in &sel.analysis_ids {
                    w.write_record([id.as_str(), "analysis"]).map_err(obskit::Error::from)?;
                }
                w.flush().map_err(obskit::Error::from)?;
            }
            Ok(Report::json(json!({
                "chosen": sel.chosen,
                "planning_scores": sel.planning_scores,
                "n_planning": sel.planning_ids.len(),
                "n_analysis": sel.analysis_ids.len(),
                "gamma": gamma,
                "bounds": bounds.iter().map(|(l, b)| json!({"outcome": l, "bound": b})).collect::<Vec<_>>(),
                "holm": adjusted,
            })))
        }
        SplitCommand::Subgroups {
            pairs,
            planning_frac,
            gamma,
            tau,
            tree,
        } => {
            let s = load_pairs(pairs, &PairSchema::AllCovariates)?;
            let split = select_subgroups_split(&s, *planning_frac, ctx.seed, tree_params(tree)?)?;
            let options = TruncatedOptions {
                seed: ctx.seed,
                ..Default::default()
            };
            let test = subgroup_sensitivity_test(
                &split.analysis,
                &split.partition,
                *gamma,
                *tau,
                WilcoxonMethod::NormalApprox,
                options,
            )?;
            if let Some(w) = ctx.out_file("subgroups.csv")? {
                split.partition.write_csv(w)?;
            }
            Ok(Report::json(json!({
                "n_planning": split.planning_ids.len(),
                "n_analysis": split.analysis.len(),
                "group_labels": split.partition.group_labels,
                "notes": split.partition.notes,
                "tree": split.tree,
                "test": test,
            })))
        }
    }
}

fn run_tree_subgroups(a: &TreeSubgroupsArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let s = load_pairs(&a.pairs, &PairSchema::AllCovariates)?;
    let tree = fit_abs_rank_tree(&s, tree_params(&a.tree)?)?;
    let partition = subgroups_from_tree(&tree);
    let options = TruncatedOptions {
        seed: ctx.seed,
        ..Default::default()
    };
    let test = subgroup_sensitivity_test(
        &s,
        &partition,
        a.gamma,
        a.tau,
        WilcoxonMethod::NormalApprox,
        options,
    )?;
    if let Some(w) = ctx.out_file("subgroups.csv")? {
        partition.write_csv(w)?;
    }
    Ok(Report::json(json!({
        "group_labels": partition.group_labels,
        "tree": tree,
        "test": test,
    })))
}

/// Builds the scenario spec: defaults for the named scenario, then the
/// spec file, then command-line overrides.
pub fn scenario_spec(a: &SimulateArgs, seed: u64) -> Result<ScenarioSpec, CliError> {
    let kind = Scenario::from_name(&a.scenario)?.name();
    let mut obj = match &a.spec {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let is_json = path.extension().is_some_and(|e| e == "json");
            let v: Value = if is_json {
                serde_json::from_str(&raw)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&raw).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            };
            match v {
                Value::Object(m) => m,
                _ => return Err(CliError::Usage(format!("{}: expected a table", path.display()))),
            }
        }
        None => Map::new(),
    };
    match obj.get("kind") {
        Some(Value::String(k)) if Scenario::from_name(k)?.name() != kind => {
            return Err(CliError::Usage(format!(
                "spec file describes {k:?} but the command asks for {kind:?}"
            )))
        }
        _ => {
            obj.insert("kind".into(), json!(kind));
        }
    }
    obj.insert("seed".into(), json!(seed));
    if let Some(r) = a.reps {
        obj.insert("reps".into(), json!(r));
    }
    let allowed: &[&str] = match kind {
        "multi-outcome-rct" => &["alpha", "planning_fraction"],
        "multi-outcome-gamma" => &["alpha", "gamma", "planning_fraction"],
        "power-vs-gamma" => &["alpha", "gammas"],
        "subgroup-hetero" => &["alpha", "gamma", "tau"],
        _ => &[],
    };
    let mut overrides: Vec<(&str, Value)> = Vec::new();
    if let Some(x) = a.alpha {
        overrides.push(("alpha", json!(x)));
    }
    if let Some(x) = a.gamma {
        overrides.push(("gamma", json!(x)));
    }
    if let Some(g) = &a.gamma_grid {
        overrides.push(("gammas", json!(parse_grid(g)?)));
    }
    if let Some(x) = a.tau {
        overrides.push(("tau", json!(x)));
    }
    if let Some(x) = a.planning_frac {
        overrides.push(("planning_fraction", json!(x)));
    }
    for (key, v) in overrides {
        if !allowed.contains(&key) {
            return Err(CliError::Usage(format!("scenario {kind} does not take a {key} override")));
        }
        obj.insert(key.into(), v);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Usage(format!("scenario spec: {e}")))
}

fn run_simulate(a: &SimulateArgs, ctx: &Ctx) -> Result<Report, CliError> {
    if a.svg && ctx.out.is_none() {
        return Err(CliError::Usage("--svg needs --out".into()));
    }
    let spec = scenario_spec(a, ctx.seed)?;
    let out = simlab::run(&spec)?;
    if let Some(dir) = &ctx.out {
        simlab::write_outputs(dir, &out, a.svg)?;
    }
    Ok(Report::json(to_value(&out)))
}
