//! Experiment orchestration: declarative configs resolved against the data,
//! concurrent seeded chains, prior sampling studies, and trace summaries.
//!
//! All randomness flows from one master seed. Stream 0 of the seed drives
//! dataset simulation and subsampling, streams 1..=chains drive the chains
//! (so adding chains never perturbs existing ones), and prior studies use a
//! dedicated far-away stream.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{maximize_expected_loss, CalibrationError, ExpectedLossSpec, LossVariant};
use crate::data::{self, DataError, Dataset, SexFilter};
use crate::likelihood::{BernoulliModel, GaussianModel, InvGammaParams, LikelihoodError, Model};
use crate::prior::{sample_tree_topology, ClPriorParams, LbPriorParams, PriorError, PriorSpec};
use crate::sampler::{run_bart_chain, ChainConfig, RulePrior, SamplerError};
use crate::trace::{read_trace, write_trace, TraceError, TraceRecord};

/// Stream id for prior-study sampling, far from any plausible chain count.
const PRIOR_STUDY_STREAM: u64 = u64::MAX;
/// Stream id for dataset simulation and subsampling.
const DATA_STREAM: u64 = 0;
/// Leaf cap for rejection sampling from the topology prior.
const PRIOR_SAMPLE_MAX_LEAVES: u32 = 200;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to serialize config snapshot: {0}")]
    Snapshot(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    /// Block-design simulation (`sigma` is the noise standard deviation).
    Simulate { n: usize, sigma: f64 },
    BreastCancer { path: PathBuf },
    Diabetes {
        path: PathBuf,
        sex: SexFilter,
        /// Optional seeded subsample size applied after loading.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Gaussian {
        /// Fixed (known) noise variance; omit to sample sigma2 under an
        /// inverse-gamma prior with shape 3 and scale set so the prior 90th
        /// percentile equals the sample variance of y.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma2: Option<f64>,
        /// Half-widths of the response range the summed leaf prior should
        /// span: leaf sd = range / (2 * leaf_width * sqrt(m)).
        #[serde(default = "default_leaf_width")]
        leaf_width: f64,
    },
    Bernoulli {
        #[serde(default = "default_beta_param")]
        alpha: f64,
        #[serde(default = "default_beta_param")]
        beta: f64,
    },
}

fn default_leaf_width() -> f64 {
    2.0
}

fn default_beta_param() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorConfig {
    Classic { alpha: f64, beta: f64 },
    LossBased { omega: f64, gamma: f64 },
    /// Loss-based prior at the expected-loss maximum, calibrated at run
    /// time (second variant of the objective).
    LossBasedDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    #[serde(default = "default_m")]
    pub m: usize,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    pub seed: u64,
    #[serde(default = "default_min_obs")]
    pub min_obs: u32,
    #[serde(default = "default_rule_prior")]
    pub rule_prior: RulePrior,
    #[serde(default = "default_nl_threshold")]
    pub nl_threshold: u32,
    #[serde(default = "default_depth_threshold")]
    pub depth_threshold: u32,
    #[serde(default = "default_prior_samples")]
    pub prior_samples: usize,
    pub output_dir: PathBuf,
}

fn default_m() -> usize {
    1
}

fn default_thinning() -> usize {
    1
}

fn default_min_obs() -> u32 {
    1
}

fn default_rule_prior() -> RulePrior {
    RulePrior::Discrete
}

fn default_nl_threshold() -> u32 {
    9
}

fn default_depth_threshold() -> u32 {
    6
}

fn default_prior_samples() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        if self.chains == 0 {
            return fail("chains must be at least 1".into());
        }
        if self.iterations <= self.burn_in {
            return fail(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            ));
        }
        if self.thinning == 0 || self.m == 0 || self.min_obs == 0 {
            return fail("thinning, m, and min_obs must be at least 1".into());
        }
        if self.prior_samples == 0 {
            return fail("prior_samples must be at least 1".into());
        }
        match &self.dataset {
            DatasetConfig::Simulate { n, sigma } => {
                if *n == 0 || n % 3 != 0 {
                    return fail(format!("simulate n must be a positive multiple of 3, got {n}"));
                }
                if *sigma < 0.0 {
                    return fail(format!("simulate sigma must be non-negative, got {sigma}"));
                }
            }
            DatasetConfig::Diabetes { subsample: Some(0), .. } => {
                return fail("diabetes subsample must be at least 1".into());
            }
            _ => {}
        }
        if let ModelConfig::Gaussian { sigma2: Some(v), leaf_width } = &self.model {
            if *v <= 0.0 {
                return fail(format!("fixed sigma2 must be positive, got {v}"));
            }
            if *leaf_width <= 0.0 {
                return fail(format!("leaf_width must be positive, got {leaf_width}"));
            }
        }
        Ok(())
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            thinning: self.thinning,
            min_obs: self.min_obs,
            rule_prior: self.rule_prior,
            retry_cap: 10,
        }
    }
}

/// Numbers the run actually used after resolving data-dependent and
/// calibrated settings; written next to the outputs for audit.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSettings {
    pub prior: String,
    pub prior_a: f64,
    pub prior_b: f64,
    pub n: usize,
    pub p: usize,
    pub dataset_source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_prior_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_prior_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2_fixed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_prior_shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_prior_scale: Option<f64>,
}

pub fn resolve_prior(config: &PriorConfig) -> Result<PriorSpec, ExperimentError> {
    Ok(match config {
        PriorConfig::Classic { alpha, beta } => {
            PriorSpec::Classic(ClPriorParams::new(*alpha, *beta)?)
        }
        PriorConfig::LossBased { omega, gamma } => {
            PriorSpec::LossBased(LbPriorParams::new(*omega, *gamma)?)
        }
        PriorConfig::LossBasedDefault => {
            let optimum = maximize_expected_loss(&ExpectedLossSpec::new(LossVariant::El2))?;
            PriorSpec::LossBased(LbPriorParams::new(optimum.omega, optimum.gamma)?)
        }
    })
}

/// Loads or simulates the dataset named by the config, using stream 0 of
/// the master seed for any data-level randomness.
pub fn resolve_dataset(config: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(DATA_STREAM);
    Ok(match &config.dataset {
        DatasetConfig::Simulate { n, sigma } => data::simulate_cart(*n, *sigma, &mut rng),
        DatasetConfig::BreastCancer { path } => data::load_breast_cancer(path)?,
        DatasetConfig::Diabetes { path, sex, subsample } => {
            let full = data::load_diabetes(path, *sex)?;
            match subsample {
                Some(k) if *k < full.n() => data::subsample(&full, *k, &mut rng),
                _ => full,
            }
        }
    })
}

/// Builds the likelihood model for a dataset. The Gaussian leaf prior is
/// centered at the per-tree share of the response midrange with standard
/// deviation range / (2 * leaf_width * sqrt(m)), so the summed prior spans
/// the observed response range.
pub fn resolve_model(
    config: &ModelConfig,
    dataset: &Dataset,
    m: usize,
) -> Result<(Model, ResolvedSettings), ExperimentError> {
    let mut settings = ResolvedSettings {
        prior: String::new(),
        prior_a: 0.0,
        prior_b: 0.0,
        n: dataset.n(),
        p: dataset.p(),
        dataset_source: dataset.provenance.source.clone(),
        leaf_prior_mean: None,
        leaf_prior_sd: None,
        sigma2_fixed: None,
        sigma_prior_shape: None,
        sigma_prior_scale: None,
    };
    let model = match config {
        ModelConfig::Bernoulli { alpha, beta } => {
            Model::Bernoulli(BernoulliModel::new(*alpha, *beta)?)
        }
        ModelConfig::Gaussian { sigma2, leaf_width } => {
            let lo = dataset.y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = dataset.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            let mean = (lo + hi) / 2.0 / m as f64;
            let sd = range / (2.0 * leaf_width * (m as f64).sqrt());
            settings.leaf_prior_mean = Some(mean);
            settings.leaf_prior_sd = Some(sd);
            match sigma2 {
                Some(v) => {
                    settings.sigma2_fixed = Some(*v);
                    Model::Gaussian(GaussianModel::new(*v, mean, sd * sd)?)
                }
                None => {
                    let n = dataset.n();
                    let mean_y = dataset.y.iter().sum::<f64>() / n as f64;
                    let var = if n >= 2 {
                        dataset.y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>()
                            / (n - 1) as f64
                    } else {
                        1.0
                    };
                    let var = if var > 0.0 { var } else { 1.0 };
                    let shape = 3.0;
                    let scale = ig_scale_for_upper_quantile(shape, var, 0.9);
                    settings.sigma_prior_shape = Some(shape);
                    settings.sigma_prior_scale = Some(scale);
                    Model::Gaussian(
                        GaussianModel::new(var, mean, sd * sd)?
                            .with_sigma_prior(InvGammaParams::new(shape, scale)?),
                    )
                }
            }
        }
    };
    Ok((model, settings))
}

/// Scale b such that an inverse-gamma(shape, b) variable is below `value`
/// with probability `prob`: solve P_lower(shape, b / value) = 1 - prob.
fn ig_scale_for_upper_quantile(shape: f64, value: f64, prob: f64) -> f64 {
    let target = 1.0 - prob;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while statrs::function::gamma::gamma_lr(shape, hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if statrs::function::gamma::gamma_lr(shape, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * value
}

/// Empirical pmf/cdf over the observed values of a nonnegative integer
/// statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub values: Vec<u32>,
    pub pmf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn from_samples(samples: &[u32]) -> Self {
        assert!(!samples.is_empty(), "empty sample set");
        let mut counts = std::collections::BTreeMap::new();
        for &s in samples {
            *counts.entry(s).or_insert(0usize) += 1;
        }
        let total = samples.len() as f64;
        let values: Vec<u32> = counts.keys().copied().collect();
        let pmf: Vec<f64> = counts.values().map(|&c| c as f64 / total).collect();
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        DiscreteDistribution { values, pmf, cdf }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.pmf).map(|(&v, p)| v as f64 * p).sum()
    }

    /// P(statistic > threshold).
    pub fn exceedance(&self, threshold: u32) -> f64 {
        self.values
            .iter()
            .zip(&self.pmf)
            .filter(|(&v, _)| v > threshold)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["value", "pmf", "cdf"])?;
        for ((v, p), c) in self.values.iter().zip(&self.pmf).zip(&self.cdf) {
            writer.write_record([v.to_string(), p.to_string(), c.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(std::io::Error::other(e))
    }
}

/// Empirical leaf-count and depth distributions of the topology prior.
#[derive(Debug, Clone)]
pub struct PriorStudy {
    pub n_samples: usize,
    pub leaves: DiscreteDistribution,
    pub depth: DiscreteDistribution,
}

/// Samples `n_samples` topologies from the prior on a dedicated RNG stream
/// of `seed` and tabulates leaf count and depth.
pub fn prior_study(
    prior: &PriorSpec,
    n_samples: usize,
    seed: u64,
) -> Result<PriorStudy, ExperimentError> {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PRIOR_STUDY_STREAM);
    let mut leaves = Vec::with_capacity(n_samples);
    let mut depths = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let tree = sample_tree_topology(prior, &mut rng, PRIOR_SAMPLE_MAX_LEAVES)?;
        let stats = tree.cached_stats();
        leaves.push(stats.n_leaves);
        depths.push(stats.depth);
    }
    Ok(PriorStudy {
        n_samples,
        leaves: DiscreteDistribution::from_samples(&leaves),
        depth: DiscreteDistribution::from_samples(&depths),
    })
}

/// Per-chain summary over retained (post burn-in) records.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub chain: u32,
    pub retained: usize,
    /// Mean over retained iterations of the per-iteration ensemble-average
    /// leaf count.
    pub mean_leaves: f64,
    pub mean_depth: f64,
    pub mean_log_lik: f64,
    pub best_log_lik: f64,
    pub best_missing_rate: Option<f64>,
    pub accept_rate: f64,
    pub stalled: usize,
}

/// Pooled summary across chains plus the threshold statistics the study
/// tables report.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub per_chain: Vec<ChainSummary>,
    pub retained: usize,
    pub mean_leaves: f64,
    pub mean_depth: f64,
    pub exceed_leaves: f64,
    pub exceed_depth: f64,
    /// Equal-tailed 95% interval of per-tree leaf counts; endpoints are
    /// attained sample values.
    pub leaves_ci: (f64, f64),
    pub best_log_lik: f64,
    pub best_missing_rate: Option<f64>,
    pub mean_sigma2: Option<f64>,
    pub accept_rate: f64,
    pub stalled: usize,
    pub nl_threshold: u32,
    pub depth_threshold: u32,
    pub burn_in: usize,
    /// Set when only one sample per chain survives burn-in.
    pub single_sample: bool,
    pub leaves_distribution: DiscreteDistribution,
    pub depth_distribution: DiscreteDistribution,
}

fn summarize_records(chain: u32, records: &[&TraceRecord]) -> ChainSummary {
    let retained = records.len();
    let mut mean_leaves = 0.0;
    let mut mean_depth = 0.0;
    let mut mean_log_lik = 0.0;
    let mut best_log_lik = f64::NEG_INFINITY;
    let mut best_missing_rate: Option<f64> = None;
    let mut accepted = 0usize;
    let mut updates = 0usize;
    let mut stalled = 0usize;
    for r in records {
        let trees = r.trees.len() as f64;
        mean_leaves += r.trees.iter().map(|s| s.n_leaves as f64).sum::<f64>() / trees;
        mean_depth += r.trees.iter().map(|s| s.depth as f64).sum::<f64>() / trees;
        mean_log_lik += r.log_lik;
        best_log_lik = best_log_lik.max(r.log_lik);
        if let Some(miss) = r.missing_rate {
            best_missing_rate =
                Some(best_missing_rate.map_or(miss, |current: f64| current.min(miss)));
        }
        accepted += r.accepted.iter().filter(|&&a| a).count();
        updates += r.accepted.len();
        stalled += r.moves.iter().filter(|mv| mv.as_str() == "stalled").count();
    }
    let denom = retained.max(1) as f64;
    ChainSummary {
        chain,
        retained,
        mean_leaves: mean_leaves / denom,
        mean_depth: mean_depth / denom,
        mean_log_lik: mean_log_lik / denom,
        best_log_lik,
        best_missing_rate,
        accept_rate: if updates > 0 { accepted as f64 / updates as f64 } else { 0.0 },
        stalled,
    }
}

/// Attained-value equal-tailed quantile of a sorted sample.
fn empirical_quantile(sorted: &[u32], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx] as f64
}

/// Summarizes one or more trace files: per-chain statistics plus pooled
/// means, exceedance probabilities, and the leaf-count credible interval.
/// Records with iteration <= burn_in are discarded. Pure function of the
/// file contents.
pub fn summarize_trace(
    paths: &[PathBuf],
    nl_threshold: u32,
    depth_threshold: u32,
    burn_in: usize,
) -> Result<TraceSummary, ExperimentError> {
    let mut all_records: Vec<TraceRecord> = Vec::new();
    for path in paths {
        all_records.extend(read_trace(path)?);
    }
    let retained: Vec<&TraceRecord> =
        all_records.iter().filter(|r| r.iteration as usize > burn_in).collect();
    if retained.is_empty() {
        return Err(ExperimentError::Config(format!(
            "no records survive burn_in = {burn_in}; traces hold {} records",
            all_records.len()
        )));
    }

    let mut chain_ids: Vec<u32> = retained.iter().map(|r| r.chain).collect();
    chain_ids.sort_unstable();
    chain_ids.dedup();
    let per_chain: Vec<ChainSummary> = chain_ids
        .iter()
        .map(|&id| {
            let records: Vec<&TraceRecord> =
                retained.iter().copied().filter(|r| r.chain == id).collect();
            summarize_records(id, &records)
        })
        .collect();
    let pooled = summarize_records(0, &retained);

    // Per-tree samples pooled over chains and iterations.
    let mut leaf_samples: Vec<u32> = Vec::new();
    let mut depth_samples: Vec<u32> = Vec::new();
    let mut sigma_sum = 0.0;
    let mut sigma_count = 0usize;
    for r in &retained {
        for s in &r.trees {
            leaf_samples.push(s.n_leaves);
            depth_samples.push(s.depth);
        }
        if let Some(s) = r.sigma2 {
            sigma_sum += s;
            sigma_count += 1;
        }
    }
    let leaves_distribution = DiscreteDistribution::from_samples(&leaf_samples);
    let depth_distribution = DiscreteDistribution::from_samples(&depth_samples);
    let mut sorted_leaves = leaf_samples;
    sorted_leaves.sort_unstable();
    let leaves_ci = (
        empirical_quantile(&sorted_leaves, 0.025),
        empirical_quantile(&sorted_leaves, 0.975),
    );
    let single_sample = per_chain.iter().all(|c| c.retained <= 1);

    Ok(TraceSummary {
        retained: pooled.retained,
        mean_leaves: pooled.mean_leaves,
        mean_depth: pooled.mean_depth,
        exceed_leaves: leaves_distribution.exceedance(nl_threshold),
        exceed_depth: depth_distribution.exceedance(depth_threshold),
        leaves_ci,
        best_log_lik: pooled.best_log_lik,
        best_missing_rate: pooled.best_missing_rate,
        mean_sigma2: if sigma_count > 0 { Some(sigma_sum / sigma_count as f64) } else { None },
        accept_rate: pooled.accept_rate,
        stalled: pooled.stalled,
        per_chain,
        nl_threshold,
        depth_threshold,
        burn_in,
        single_sample,
        leaves_distribution,
        depth_distribution,
    })
}

/// Everything a finished experiment reports, with prior-study columns
/// alongside the posterior summary.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub prior_mean_leaves: f64,
    pub prior_exceed_leaves: f64,
    pub prior_mean_depth: f64,
    pub prior_exceed_depth: f64,
    pub posterior: TraceSummary,
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

fn write_summary_csv(
    path: &Path,
    config: &ExperimentConfig,
    settings: &ResolvedSettings,
    prior: &PriorStudy,
    posterior: &TraceSummary,
) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["key", "value"])?;
    let mut row = |key: &str, value: String| writer.write_record([key.to_string(), value]);
    row("n", settings.n.to_string())?;
    row("p", settings.p.to_string())?;
    row("prior", settings.prior.clone())?;
    row("prior_a", settings.prior_a.to_string())?;
    row("prior_b", settings.prior_b.to_string())?;
    row("m", config.m.to_string())?;
    row("chains", config.chains.to_string())?;
    row("iterations", config.iterations.to_string())?;
    row("burn_in", config.burn_in.to_string())?;
    row("nl_threshold", config.nl_threshold.to_string())?;
    row("depth_threshold", config.depth_threshold.to_string())?;
    row("prior_mean_leaves", prior.leaves.mean().to_string())?;
    row("prior_exceed_leaves", prior.leaves.exceedance(config.nl_threshold).to_string())?;
    row("prior_mean_depth", prior.depth.mean().to_string())?;
    row("prior_exceed_depth", prior.depth.exceedance(config.depth_threshold).to_string())?;
    row("post_mean_leaves", posterior.mean_leaves.to_string())?;
    row("post_exceed_leaves", posterior.exceed_leaves.to_string())?;
    row("post_mean_depth", posterior.mean_depth.to_string())?;
    row("post_exceed_depth", posterior.exceed_depth.to_string())?;
    row("post_leaves_ci_low", posterior.leaves_ci.0.to_string())?;
    row("post_leaves_ci_high", posterior.leaves_ci.1.to_string())?;
    row("best_log_lik", posterior.best_log_lik.to_string())?;
    if let Some(miss) = posterior.best_missing_rate {
        row("best_missing_rate", miss.to_string())?;
    }
    if let Some(s) = posterior.mean_sigma2 {
        row("post_mean_sigma2", s.to_string())?;
    }
    row("accept_rate", posterior.accept_rate.to_string())?;
    row("stalled", posterior.stalled.to_string())?;
    row("retained_records", posterior.retained.to_string())?;
    row("single_sample_summary", posterior.single_sample.to_string())?;
    writer.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    config: &'a ExperimentConfig,
    resolved: &'a ResolvedSettings,
}

/// Runs the full experiment: resolves everything, executes `chains` seeded
/// chains concurrently, writes per-chain JSON-lines traces, the prior and
/// posterior distribution tables, a key/value summary CSV, and a resolved
/// config snapshot. Returns the summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let dataset = resolve_dataset(config)?;
    let prior = resolve_prior(&config.prior)?;
    let (model, mut settings) = resolve_model(&config.model, &dataset, config.m)?;
    let (label, a, b) = prior.describe();
    settings.prior = label.to_string();
    settings.prior_a = a;
    settings.prior_b = b;

    let chain_config = config.chain_config();
    let trace_paths: Vec<PathBuf> = (1..=config.chains)
        .map(|c| config.output_dir.join(format!("trace_chain_{c:03}.jsonl")))
        .collect();
    trace_paths
        .par_iter()
        .enumerate()
        .try_for_each(|(idx, path)| -> Result<(), ExperimentError> {
            let chain = idx + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(chain as u64);
            let run = run_bart_chain(
                &dataset,
                &model,
                &prior,
                config.m,
                &chain_config,
                chain as u32,
                &mut rng,
            )?;
            write_trace(path, &run.records)?;
            Ok(())
        })?;

    let study = prior_study(&prior, config.prior_samples, config.seed)?;
    let posterior = summarize_trace(
        &trace_paths,
        config.nl_threshold,
        config.depth_threshold,
        config.burn_in,
    )?;

    study.leaves.write_csv(&config.output_dir.join("prior_leaves.csv"))?;
    study.depth.write_csv(&config.output_dir.join("prior_depth.csv"))?;
    posterior
        .leaves_distribution
        .write_csv(&config.output_dir.join("posterior_leaves.csv"))?;
    posterior
        .depth_distribution
        .write_csv(&config.output_dir.join("posterior_depth.csv"))?;
    let summary_path = config.output_dir.join("summary.csv");
    write_summary_csv(&summary_path, config, &settings, &study, &posterior)?;
    let snapshot = ConfigSnapshot { config, resolved: &settings };
    std::fs::write(
        config.output_dir.join("config.toml"),
        toml::to_string_pretty(&snapshot)?,
    )?;

    Ok(ExperimentSummary {
        prior_mean_leaves: study.leaves.mean(),
        prior_exceed_leaves: study.leaves.exceedance(config.nl_threshold),
        prior_mean_depth: study.depth.mean(),
        prior_exceed_depth: study.depth.exceedance(config.depth_threshold),
        posterior,
        trace_paths,
        summary_path,
    })
}
