//! Command-line surface for the range-partition pipeline:
//! `gen`, `split`, `run`, `compare`, `bounds` and `cdf-curve`.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad input files,
//! infeasible requests), 2 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use facetpart::bounds::{check_theorem1, check_theorem2, check_theorem3, theorem1_deviations};
use facetpart::click::{fit_click_model, click_probabilities, ClickModel};
use facetpart::dp::dp_partition;
use facetpart::ecdf::{cache_cdf, surrogate_cn};
use facetpart::grid::{grid_search_surrogate, grid_search_true_arr};
use facetpart::log::{parse_log, split_by_time, ParsedLog, SearchLog};
use facetpart::metric::{arr_evaluate, EvalReport, SeparatorSet};
use facetpart::optim::{optimize_ratio, OptMethod, OptimizerConfig};
use facetpart::partition::{quantile_partition, ratio_to_separators, round_separators, RatioVector};
use facetpart::stats::paired_t_test_between;
use facetpart::synth::{generate_synthetic, CdfShape, EntityCount, SynthConfig};
use facetpart::tree::{fit_tree, prune_tree, FeatureOptions, RatioTree, SplitCriterion, TreeConfig};

#[derive(Parser)]
#[command(name = "facetpart", version, about = "Numerical facet range partitioning: training, evaluation and comparison on click logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic search log with a controllable click-quantile CDF
    Gen(GenArgs),
    /// Split a log into earlier/later parts by timestamp
    Split(SplitArgs),
    /// Train one partition method and evaluate its ARR on a test log
    Run(RunArgs),
    /// Run several methods on the same split and t-test the differences
    Compare(CompareArgs),
    /// Empirically verify the deviation bounds on the surrogate
    Bounds(BoundsArgs),
    /// Emit the cached empirical CDF (and the k=2 surrogate curve) as CSV
    CdfCurve(CdfCurveArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML file mirroring the generator config (overrides inline flags)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of impressions
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Entities per impression
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Clicked-quantile CDF shape
    #[arg(long, value_enum, default_value_t = CdfArg::Linear)]
    cdf: CdfArg,
    /// Exponent of the rank^(-bias) click tilt
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    #[arg(long, env = "FACETPART_SEED", default_value_t = 0)]
    seed: u64,
    /// Draw entity ids from a fixed catalog of this size
    #[arg(long)]
    catalog: Option<usize>,
    /// Output log path (JSON lines)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CdfArg {
    Linear,
    Concave,
    Convex,
}

impl From<CdfArg> for CdfShape {
    fn from(value: CdfArg) -> CdfShape {
        match value {
            CdfArg::Linear => CdfShape::Linear,
            CdfArg::Concave => CdfShape::Concave,
            CdfArg::Convex => CdfShape::Convex,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Fraction of impressions (earliest first) kept for training
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Quantile,
    Dp,
    Ratio,
    Tree,
    Grid,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Quantile => "quantile",
            Method::Dp => "dp",
            Method::Ratio => "ratio",
            Method::Tree => "tree",
            Method::Grid => "grid",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClickModelArg {
    Mixture,
    RankBased,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Powell,
    NelderMead,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Mse,
    MinCn,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    /// Only the log's own feature vectors
    Opaque,
    /// Only the facet-value quartiles
    Quartiles,
    /// Both
    All,
}

impl From<FeatureArg> for FeatureOptions {
    fn from(value: FeatureArg) -> FeatureOptions {
        match value {
            FeatureArg::Opaque => FeatureOptions { use_opaque: true, use_quartiles: false },
            FeatureArg::Quartiles => FeatureOptions { use_opaque: false, use_quartiles: true },
            FeatureArg::All => FeatureOptions { use_opaque: true, use_quartiles: true },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GridObjective {
    /// Minimize the cached surrogate on the training log
    Surrogate,
    /// Minimize the true ARR on the test log (oracle mode)
    TrueArr,
}

#[derive(Args, Clone)]
struct MethodOptions {
    /// Number of ranges
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Mixture weight between query-level and category-level clicks
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = ClickModelArg::Mixture)]
    click_model: ClickModelArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Powell)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_evals: usize,
    #[arg(long, env = "FACETPART_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = CriterionArg::Mse)]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 20)]
    min_leaf: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, value_enum, default_value_t = FeatureArg::All)]
    features: FeatureArg,
    /// Skip cost-complexity pruning of the fitted tree
    #[arg(long)]
    no_prune: bool,
    /// Round separators to multiples of this before evaluation
    #[arg(long)]
    round_precision: Option<f64>,
    #[arg(long, value_enum, default_value_t = GridObjective::TrueArr)]
    objective: GridObjective,
    /// Combination cap for exhaustive searches
    #[arg(long, default_value_t = 1_000_000)]
    grid_cap: u128,
}

impl MethodOptions {
    fn optimizer_config(&self, restarts: Option<usize>) -> OptimizerConfig {
        OptimizerConfig {
            method: match self.optimizer {
                OptimizerArg::Powell => OptMethod::Powell,
                OptimizerArg::NelderMead => OptMethod::NelderMead,
            },
            restarts: restarts.unwrap_or(self.restarts),
            tolerance: self.tol,
            max_evals_per_restart: self.max_evals,
            seed: self.seed,
        }
    }

    fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            criterion: match self.criterion {
                CriterionArg::Mse => SplitCriterion::Mse,
                CriterionArg::MinCn => SplitCriterion::MinCn,
            },
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            optimizer: self.optimizer_config(Some(3)),
            features: self.features.into(),
            cv_folds: 5,
            se_factor: 0.5,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Training log (required by dp, ratio, tree and surrogate-grid)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test log the ARR is computed on
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    options: MethodOptions,
    /// Per-impression refined ranks as CSV
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// JSON summary (method, k, arr, fitted parameters)
    #[arg(long)]
    summary_out: Option<PathBuf>,
    /// Persist the fitted model (click counts or tree)
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Reuse a previously fitted model instead of training
    #[arg(long)]
    model_in: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated methods to compare
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<Method>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    options: MethodOptions,
    /// Directory the comparison CSVs are written into
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    /// Which bound to check (1, 2 or 3)
    #[arg(long)]
    theorem: u8,
    #[arg(long, value_enum, default_value_t = CdfArg::Concave)]
    cdf: CdfArg,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// Neighborhood radius for theorem 3
    #[arg(long, default_value_t = 0.05)]
    radius: f64,
    #[arg(long, env = "FACETPART_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON report destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-trial sup deviations (theorem 1)
    #[arg(long)]
    deviations_out: Option<PathBuf>,
}

#[derive(Args)]
struct CdfCurveArgs {
    #[arg(long)]
    train: PathBuf,
    /// CSV of (r, F_n(r)) over the cached candidate grid
    #[arg(long)]
    cdf_out: PathBuf,
    /// Optional CSV of (r1, C_n(r1)) for k = 2
    #[arg(long)]
    cn_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<facetpart::Error>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::Split(args) => cmd_split(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::CdfCurve(args) => cmd_cdf_curve(args),
    }
}

fn load_log(path: &Path) -> anyhow::Result<SearchLog> {
    let ParsedLog { log, dropped_no_click, dropped_missing_value } = parse_log(path)?;
    if dropped_no_click + dropped_missing_value > 0 {
        eprintln!(
            "note: {}: dropped {dropped_no_click} clickless and {dropped_missing_value} value-less-click records",
            path.display()
        );
    }
    Ok(log)
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str::<SynthConfig>(&text)
                .map_err(|e| facetpart::Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig {
            n_queries: args.n,
            entities_per_query: EntityCount::Fixed { n: args.m },
            value_cdf: args.cdf.into(),
            click_position_bias: args.bias,
            seed: args.seed,
            value_range: (10.0, 1010.0),
            catalog_size: args.catalog,
            clusters: None,
        },
    };
    let log = generate_synthetic(&config)?;
    log.save(&args.out)?;
    println!("wrote {} impressions to {}", log.len(), args.out.display());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> anyhow::Result<()> {
    let log = load_log(&args.input)?;
    let (train, test) = split_by_time(&log, args.train_frac)?;
    if test.is_empty() {
        eprintln!("warning: test split is empty (n = {})", log.len());
    }
    train.save(&args.train_out)?;
    test.save(&args.test_out)?;
    println!("train: {} impressions, test: {} impressions", train.len(), test.len());
    Ok(())
}

/// A trained method, ready to partition each test impression.
enum Fitted {
    Quantile,
    Dp { model: ClickModel },
    Ratio { ratios: RatioVector, cn: f64, n_eval: usize },
    Tree { tree: Box<RatioTree> },
}

#[derive(Serialize)]
struct RunSummary {
    method: &'static str,
    k: usize,
    arr: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_eval: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree_leaves: Option<usize>,
}

fn fit_method(
    method: Method,
    options: &MethodOptions,
    train: Option<&SearchLog>,
    test: &SearchLog,
    model_in: Option<&Path>,
) -> anyhow::Result<Fitted> {
    let need_train = || -> anyhow::Result<&SearchLog> {
        train.ok_or_else(|| {
            facetpart::Error::InvalidConfig(format!("method {} needs --train", method.name())).into()
        })
    };
    Ok(match method {
        Method::Quantile => Fitted::Quantile,
        Method::Dp => {
            let model = match (model_in, options.click_model) {
                (Some(path), _) => ClickModel::load(path)?,
                (None, ClickModelArg::RankBased) => ClickModel::rank_based(),
                (None, ClickModelArg::Mixture) => fit_click_model(need_train()?, options.lambda)?,
            };
            Fitted::Dp { model }
        }
        Method::Ratio => {
            let cdf = cache_cdf(need_train()?)?;
            let fit = optimize_ratio(&cdf, options.k, &options.optimizer_config(None))?;
            Fitted::Ratio { ratios: fit.ratios, cn: fit.cn, n_eval: fit.n_eval }
        }
        Method::Tree => {
            let tree = match model_in {
                Some(path) => RatioTree::load(path)?,
                None => {
                    let train = need_train()?;
                    let grown = fit_tree(train, options.k, &options.tree_config())?;
                    if options.no_prune {
                        grown
                    } else {
                        prune_tree(&grown, train)?.0
                    }
                }
            };
            Fitted::Tree { tree: Box::new(tree) }
        }
        Method::Grid => match options.objective {
            GridObjective::Surrogate => {
                let cdf = cache_cdf(need_train()?)?;
                let found = grid_search_surrogate(&cdf, options.k, options.grid_cap)?;
                Fitted::Ratio { ratios: found.ratios, cn: found.value, n_eval: found.n_evaluated }
            }
            GridObjective::TrueArr => {
                let found = grid_search_true_arr(test, options.k, options.grid_cap)?;
                Fitted::Ratio { ratios: found.ratios, cn: found.value, n_eval: found.n_evaluated }
            }
        },
    })
}

fn evaluate(
    fitted: &Fitted,
    options: &MethodOptions,
    test: &SearchLog,
) -> anyhow::Result<EvalReport> {
    let k = options.k;
    let precision = options.round_precision;
    let finish = |separators: SeparatorSet| -> facetpart::Result<SeparatorSet> {
        match precision {
            Some(p) => round_separators(&separators, p),
            None => Ok(separators),
        }
    };
    let report = match fitted {
        Fitted::Quantile => arr_evaluate(test, |imp| {
            finish(quantile_partition(&imp.facet_values(), k)?.separators)
        })?,
        Fitted::Dp { model } => arr_evaluate(test, |imp| {
            let probs = click_probabilities(model, imp)?;
            let values = imp.facet_values();
            finish(dp_partition(&values, &probs, k)?.separators)
        })?,
        Fitted::Ratio { ratios, .. } => arr_evaluate(test, |imp| {
            finish(ratio_to_separators(&imp.facet_values(), ratios)?)
        })?,
        Fitted::Tree { tree } => arr_evaluate(test, |imp| {
            let ratios = tree.predict_for(imp)?;
            finish(ratio_to_separators(&imp.facet_values(), ratios)?)
        })?,
    };
    Ok(report)
}

fn summarize(method: Method, options: &MethodOptions, fitted: &Fitted, report: &EvalReport) -> RunSummary {
    let (ratios, surrogate, n_eval, tree_leaves) = match fitted {
        Fitted::Quantile | Fitted::Dp { .. } => (None, None, None, None),
        Fitted::Ratio { ratios, cn, n_eval } => {
            (Some(ratios.ratios().to_vec()), Some(*cn), Some(*n_eval), None)
        }
        Fitted::Tree { tree } => (None, None, None, Some(tree.n_leaves())),
    };
    RunSummary {
        method: method.name(),
        k: options.k,
        arr: report.arr,
        n: report.n,
        ratios,
        surrogate,
        n_eval,
        tree_leaves,
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let test = load_log(&args.test)?;
    let train = args.train.as_deref().map(load_log).transpose()?;
    let fitted = fit_method(args.method, &args.options, train.as_ref(), &test, args.model_in.as_deref())?;

    if let Some(path) = &args.model_out {
        match &fitted {
            Fitted::Dp { model } => model.save(path)?,
            Fitted::Tree { tree } => tree.save(path)?,
            Fitted::Ratio { ratios, .. } => {
                std::fs::write(path, serde_json::to_string_pretty(&ratios)?)?;
            }
            Fitted::Quantile => {
                eprintln!("note: quantile has no model to save");
            }
        }
    }

    let report = evaluate(&fitted, &args.options, &test)?;
    if let Some(path) = &args.report_out {
        report.save_csv(path)?;
    }
    let summary = summarize(args.method, &args.options, &fitted, &report);
    let summary_json = serde_json::to_string_pretty(&summary)?;
    match &args.summary_out {
        Some(path) => std::fs::write(path, &summary_json)?,
        None => println!("{summary_json}"),
    }
    println!("{} k={} arr={:.6}", summary.method, summary.k, summary.arr);
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    if args.methods.len() < 2 {
        return Err(facetpart::Error::InvalidConfig("compare needs at least two methods".into()).into());
    }
    let test = load_log(&args.test)?;
    let train = args.train.as_deref().map(load_log).transpose()?;

    let mut reports: Vec<(Method, EvalReport)> = Vec::new();
    for &method in &args.methods {
        let fitted = fit_method(method, &args.options, train.as_ref(), &test, None)?;
        let report = evaluate(&fitted, &args.options, &test)?;
        println!("{} k={} arr={:.6}", method.name(), args.options.k, report.arr);
        reports.push((method, report));
    }

    // all reports must cover the identical impression sequence
    for (method, report) in &reports[1..] {
        let aligned = report
            .per_impression_rr
            .iter()
            .zip(&reports[0].1.per_impression_rr)
            .all(|((a, _), (b, _))| a == b);
        if !aligned || report.n != reports[0].1.n {
            return Err(facetpart::Error::InvalidConfig(format!(
                "method {} was evaluated on a different test split",
                method.name()
            ))
            .into());
        }
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let arr_path = args.out_dir.join("compare_arr.csv");
    let mut arr_csv = String::from("method,k,arr,n\n");
    for (method, report) in &reports {
        arr_csv.push_str(&format!("{},{},{},{}\n", method.name(), args.options.k, report.arr, report.n));
    }
    std::fs::write(&arr_path, arr_csv)?;

    let tt_path = args.out_dir.join("compare_ttests.csv");
    let mut tt_csv = String::from("method_a,method_b,k,t,p,mean_diff\n");
    for i in 0..reports.len() {
        for j in (i + 1)..reports.len() {
            let a: Vec<f64> = reports[i].1.per_impression_rr.iter().map(|(_, rr)| *rr as f64).collect();
            let b: Vec<f64> = reports[j].1.per_impression_rr.iter().map(|(_, rr)| *rr as f64).collect();
            let t = paired_t_test_between(&a, &b)?;
            tt_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                reports[i].0.name(),
                reports[j].0.name(),
                args.options.k,
                t.t,
                t.p,
                t.mean_diff
            ));
        }
    }
    std::fs::write(&tt_path, tt_csv)?;
    println!("wrote {} and {}", arr_path.display(), tt_path.display());
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> anyhow::Result<()> {
    let cdf: CdfShape = args.cdf.into();
    let report_json = match args.theorem {
        1 => {
            if let Some(path) = &args.deviations_out {
                let devs = theorem1_deviations(&cdf, args.n, args.k, args.trials, args.resolution, args.seed)?;
                let mut csv = String::from("trial,sup_deviation\n");
                for (i, d) in devs.iter().enumerate() {
                    csv.push_str(&format!("{i},{d}\n"));
                }
                std::fs::write(path, csv)?;
            }
            let report = check_theorem1(&cdf, args.n, args.k, args.epsilon, args.trials, args.resolution, args.seed)?;
            println!(
                "theorem 1: observed {} vs bound {} -> {}",
                report.observed_exceedance_rate,
                report.theoretical_bound,
                if report.pass { "PASS" } else { "FAIL" }
            );
            serde_json::to_string_pretty(&report)?
        }
        2 => {
            let report = check_theorem2(&cdf, args.k, args.resolution)?;
            println!(
                "theorem 2: applicable={} monotone={} -> {}",
                report.applicable,
                report.monotone,
                if report.pass { "PASS" } else { "INAPPLICABLE/FAIL" }
            );
            serde_json::to_string_pretty(&report)?
        }
        3 => {
            let report = check_theorem3(
                &cdf, args.n, args.k, args.epsilon, args.trials, args.radius, args.resolution, args.seed,
            )?;
            match &report.report {
                Some(inner) => println!(
                    "theorem 3: observed {} vs bound {} -> {}",
                    inner.observed_exceedance_rate,
                    inner.theoretical_bound,
                    if inner.pass { "PASS" } else { "FAIL" }
                ),
                None => println!("theorem 3: inapplicable (CDF not strongly concave)"),
            }
            serde_json::to_string_pretty(&report)?
        }
        other => {
            return Err(facetpart::Error::InvalidConfig(format!("unknown theorem {other}; use 1, 2 or 3")).into())
        }
    };
    match &args.out {
        Some(path) => std::fs::write(path, report_json)?,
        None => println!("{report_json}"),
    }
    Ok(())
}

fn cmd_cdf_curve(args: CdfCurveArgs) -> anyhow::Result<()> {
    let train = load_log(&args.train)?;
    let cdf = cache_cdf(&train)?;
    let mut csv = String::from("r,f_n\n");
    for (x, y) in cdf.x_sorted().iter().zip(cdf.y()) {
        csv.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&args.cdf_out, csv)?;
    if let Some(path) = &args.cn_out {
        let mut csv = String::from("r1,c_n\n");
        for &x in cdf.x_sorted() {
            let value = surrogate_cn(&cdf, &RatioVector::new(vec![x])?);
            csv.push_str(&format!("{x},{value}\n"));
        }
        std::fs::write(path, csv)?;
    }
    println!("wrote {}", args.cdf_out.display());
    Ok(())
}
