//! Command-line front end: dataset simulation, experiment runs, prior
//! studies, expected-loss calibration, and trace summarization.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bartree::experiment::{
    prior_study, resolve_prior, run_experiment, summarize_trace, ExperimentConfig, PriorConfig,
};
use bartree::{ExpectedLossSpec, LossVariant, RulePrior};

#[derive(Parser)]
#[command(
    name = "bartree",
    version,
    about = "Bayesian CART/BART sampling with classic and loss-based tree priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the block-design regression dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a full experiment from a TOML config (with flag overrides).
    Fit(FitArgs),
    /// Sample tree topologies from a prior and tabulate leaf count and depth.
    PriorStudy(PriorStudyArgs),
    /// Maximize the expected loss to find default loss-based parameters.
    Calibrate(CalibrateArgs),
    /// Summarize existing trace files.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of observations (positive multiple of 3).
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Noise standard deviation (0 for the noiseless responses).
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    /// Output CSV path; a provenance JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Experiment config in TOML.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    min_obs: Option<u32>,
    /// Splitting-rule prior: discrete | continuous.
    #[arg(long)]
    rule_prior: Option<String>,
    /// Prior override: classic:<alpha>,<beta> | loss-based:<omega>,<gamma>
    /// | loss-based-default.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PriorStudyArgs {
    /// Prior: classic:<alpha>,<beta> | loss-based:<omega>,<gamma> |
    /// loss-based-default.
    #[arg(long)]
    prior: String,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for the leaf-count and depth distribution tables.
    #[arg(long)]
    out_dir: PathBuf,
    /// Threshold for the reported P(n_L > t).
    #[arg(long, default_value_t = 9)]
    nl_threshold: u32,
    /// Threshold for the reported P(depth > t).
    #[arg(long, default_value_t = 6)]
    depth_threshold: u32,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Objective variant: el1 (additive in gamma) or el2 (multiplicative).
    #[arg(long, default_value = "el2")]
    variant: String,
    /// Optional CSV dump of the objective surface.
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Grid step for the surface dump.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace files (JSON-lines), one per chain.
    #[arg(long, required = true, num_args = 1..)]
    trace: Vec<PathBuf>,
    #[arg(long, default_value_t = 9)]
    nl_threshold: u32,
    #[arg(long, default_value_t = 6)]
    depth_threshold: u32,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Per-chain summary CSV (a pooled row is appended).
    #[arg(long)]
    out: PathBuf,
}

fn parse_prior(text: &str) -> Result<PriorConfig> {
    match text {
        "loss-based-default" | "lb-default" => return Ok(PriorConfig::LossBasedDefault),
        _ => {}
    }
    let (family, params) = text
        .split_once(':')
        .context("expected <family>:<a>,<b> or loss-based-default")?;
    let (a, b) = params.split_once(',').context("expected two comma-separated parameters")?;
    let a: f64 = a.trim().parse().context("first parameter is not a number")?;
    let b: f64 = b.trim().parse().context("second parameter is not a number")?;
    match family {
        "classic" | "cl" => Ok(PriorConfig::Classic { alpha: a, beta: b }),
        "loss-based" | "lb" => Ok(PriorConfig::LossBased { omega: a, gamma: b }),
        other => bail!("unknown prior family {other:?} (expected classic or loss-based)"),
    }
}

fn parse_rule_prior(text: &str) -> Result<RulePrior> {
    match text {
        "discrete" => Ok(RulePrior::Discrete),
        "continuous" => Ok(RulePrior::Continuous),
        other => bail!("unknown rule prior {other:?} (expected discrete or continuous)"),
    }
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let dataset = bartree::simulate_cart(args.n, args.sigma, &mut rng);
    bartree::data::save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} rows x {} covariates to {} (provenance sidecar alongside)",
        dataset.n(),
        dataset.p(),
        args.out.display()
    );
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).context("config file does not parse as an experiment config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(chains) = args.chains {
        config.chains = chains;
    }
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(burn_in) = args.burn_in {
        config.burn_in = burn_in;
    }
    if let Some(thinning) = args.thinning {
        config.thinning = thinning;
    }
    if let Some(m) = args.m {
        config.m = m;
    }
    if let Some(min_obs) = args.min_obs {
        config.min_obs = min_obs;
    }
    if let Some(rule_prior) = &args.rule_prior {
        config.rule_prior = parse_rule_prior(rule_prior)?;
    }
    if let Some(prior) = &args.prior {
        config.prior = parse_prior(prior)?;
    }
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    let summary = run_experiment(&config)?;
    let post = &summary.posterior;
    println!("traces: {} chains in {}", config.chains, config.output_dir.display());
    println!("summary: {}", summary.summary_path.display());
    println!(
        "prior     E(n_L) = {:.3}  P(n_L>{}) = {:.3}  E(depth) = {:.3}  P(depth>{}) = {:.3}",
        summary.prior_mean_leaves,
        config.nl_threshold,
        summary.prior_exceed_leaves,
        summary.prior_mean_depth,
        config.depth_threshold,
        summary.prior_exceed_depth
    );
    println!(
        "posterior E(n_L) = {:.3}  P(n_L>{}) = {:.3}  E(depth) = {:.3}  P(depth>{}) = {:.3}",
        post.mean_leaves,
        config.nl_threshold,
        post.exceed_leaves,
        post.mean_depth,
        config.depth_threshold,
        post.exceed_depth
    );
    println!(
        "n_L 95% interval = ({}, {})  best log-lik = {:.3}{}",
        post.leaves_ci.0,
        post.leaves_ci.1,
        post.best_log_lik,
        post.best_missing_rate
            .map(|m| format!("  best missing rate = {m:.4}"))
            .unwrap_or_default()
    );
    if post.single_sample {
        println!("note: burn-in leaves a single sample per chain");
    }
    Ok(())
}

fn run_prior_study(args: PriorStudyArgs) -> Result<()> {
    let prior = resolve_prior(&parse_prior(&args.prior)?)?;
    let study = prior_study(&prior, args.samples, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let leaves_path = args.out_dir.join("prior_leaves.csv");
    let depth_path = args.out_dir.join("prior_depth.csv");
    study.leaves.write_csv(&leaves_path)?;
    study.depth.write_csv(&depth_path)?;
    println!("prior {} over {} samples", prior.label(), args.samples);
    println!(
        "E(n_L) = {:.4}  P(n_L>{}) = {:.4}",
        study.leaves.mean(),
        args.nl_threshold,
        study.leaves.exceedance(args.nl_threshold)
    );
    println!(
        "E(depth) = {:.4}  P(depth>{}) = {:.4}",
        study.depth.mean(),
        args.depth_threshold,
        study.depth.exceedance(args.depth_threshold)
    );
    println!("tables: {} and {}", leaves_path.display(), depth_path.display());
    Ok(())
}

fn run_calibrate(args: CalibrateArgs) -> Result<()> {
    let variant = match args.variant.as_str() {
        "el1" => LossVariant::El1,
        "el2" => LossVariant::El2,
        other => bail!("unknown variant {other:?} (expected el1 or el2)"),
    };
    let spec = ExpectedLossSpec::new(variant);
    let maximum = bartree::maximize_expected_loss(&spec)?;
    println!(
        "{} maximum: omega = {:.6}, gamma = {:.6}, expected loss = {:.6}",
        args.variant, maximum.omega, maximum.gamma, maximum.value
    );
    if let Some(path) = args.surface {
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(["omega", "gamma", "expected_loss"])?;
        for (omega, gamma, value) in bartree::calibrate::loss_surface(&spec, args.step) {
            writer.write_record([omega.to_string(), gamma.to_string(), value.to_string()])?;
        }
        writer.flush()?;
        println!("surface: {}", path.display());
    }
    Ok(())
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let summary =
        summarize_trace(&args.trace, args.nl_threshold, args.depth_threshold, args.burn_in)?;
    let mut writer = csv::Writer::from_path(&args.out)?;
    writer.write_record([
        "chain",
        "retained",
        "mean_leaves",
        "mean_depth",
        "mean_log_lik",
        "best_log_lik",
        "best_missing_rate",
        "accept_rate",
        "stalled",
    ])?;
    let mut write_row = |label: String, c: &bartree::experiment::ChainSummary| {
        writer.write_record([
            label,
            c.retained.to_string(),
            c.mean_leaves.to_string(),
            c.mean_depth.to_string(),
            c.mean_log_lik.to_string(),
            c.best_log_lik.to_string(),
            c.best_missing_rate.map(|m| m.to_string()).unwrap_or_default(),
            c.accept_rate.to_string(),
            c.stalled.to_string(),
        ])
    };
    for chain in &summary.per_chain {
        write_row(chain.chain.to_string(), chain)?;
    }
    let pooled = bartree::experiment::ChainSummary {
        chain: 0,
        retained: summary.retained,
        mean_leaves: summary.mean_leaves,
        mean_depth: summary.mean_depth,
        mean_log_lik: summary
            .per_chain
            .iter()
            .map(|c| c.mean_log_lik * c.retained as f64)
            .sum::<f64>()
            / summary.retained as f64,
        best_log_lik: summary.best_log_lik,
        best_missing_rate: summary.best_missing_rate,
        accept_rate: summary.accept_rate,
        stalled: summary.stalled,
    };
    write_row("pooled".into(), &pooled)?;
    writer.flush()?;
    println!(
        "pooled: E(n_L) = {:.4}  P(n_L>{}) = {:.4}  E(depth) = {:.4}  P(depth>{}) = {:.4}",
        summary.mean_leaves,
        summary.nl_threshold,
        summary.exceed_leaves,
        summary.mean_depth,
        summary.depth_threshold,
        summary.exceed_depth
    );
    println!(
        "n_L 95% interval = ({}, {})  best log-lik = {:.4}{}",
        summary.leaves_ci.0,
        summary.leaves_ci.1,
        summary.best_log_lik,
        summary
            .best_missing_rate
            .map(|m| format!("  best missing rate = {m:.4}"))
            .unwrap_or_default()
    );
    println!("per-chain table: {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::PriorStudy(args) => run_prior_study(args),
        Command::Calibrate(args) => run_calibrate(args),
        Command::Summarize(args) => run_summarize(args),
    }
}
