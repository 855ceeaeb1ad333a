//! Metropolis-Hastings topology sampling for single trees and the
//! backfitting Gibbs sweep that extends it to tree ensembles.
//!
//! One iteration proposes a move (GROW, PRUNE, SWAP, or CHANGE, uniform
//! over whichever are available), accepts or rejects it on the ratio of
//! leaf-integrated marginal likelihoods times topology priors times the
//! proposal correction, and then refreshes the leaf values from their
//! conjugate posterior. Because the accept step works with the marginal
//! likelihood, refreshing leaf values after it leaves the topology chain
//! untouched; the values only feed fit and likelihood reporting.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::Dataset;
use crate::likelihood::{sample_leaf_values, sample_sigma2, LikelihoodError, Model};
use crate::matrix::Matrix;
use crate::prior::PriorSpec;
use crate::trace::TraceRecord;
use crate::tree::{MoveDescriptor, MoveKind, SplitRule, Tree};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("non-finite {name} passed to accept_probability: {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("dataset has {n} observations but min_obs is {min_obs}: even the root leaf is invalid")]
    TooFewObservations { n: usize, min_obs: u32 },
    #[error("ensemble size m must be at least 1")]
    NoTrees,
    #[error("{0} must be at least 1")]
    ZeroConfig(&'static str),
}

/// How GROW and CHANGE draw replacement splitting rules.
///
/// Both pick the predictor uniformly; `Discrete` then picks uniformly among
/// the distinct observed values of that predictor inside the node's region,
/// while `Continuous` draws the threshold uniformly between the observed
/// minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RulePrior {
    Discrete,
    Continuous,
}

/// Proposal-level knobs shared by CART and ensemble chains.
#[derive(Debug, Clone, Copy)]
pub struct ProposalConfig {
    pub min_obs: u32,
    pub rule_prior: RulePrior,
    /// Invalid GROW/CHANGE draws are resampled this many times before the
    /// iteration gives up and records a forced self-transition.
    pub retry_cap: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { min_obs: 1, rule_prior: RulePrior::Discrete, retry_cap: 10 }
    }
}

/// A candidate tree together with the raw single-draw log proposal
/// densities in both directions.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub candidate: Tree,
    pub kind: MoveKind,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
}

#[derive(Debug, Clone)]
pub enum ProposeResult {
    Proposed(Proposal),
    /// A SWAP whose candidate breaks the partition constraint. It counts
    /// as a rejected candidate rather than being resampled.
    InvalidCandidate { kind: MoveKind },
    /// The retry cap ran out without a valid candidate; the chain keeps
    /// the current tree and flags the iteration.
    Stalled,
}

/// Move kinds currently available: single-leaf trees admit only GROW, SWAP
/// additionally needs a parent-child pair of internal nodes (guaranteed as
/// soon as there are two internals, since one of them cannot be the root).
fn available_kinds(tree: &Tree) -> &'static [MoveKind] {
    match tree.cached_stats().n_leaves {
        1 => &[MoveKind::Grow],
        2 => &[MoveKind::Grow, MoveKind::Prune, MoveKind::Change],
        _ => &[MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap],
    }
}

/// Rows whose root-to-leaf path passes through `node`.
fn observations_at_node(tree: &Tree, x: &Matrix, node: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..x.n_rows() {
        let row = x.row(i);
        let mut id = tree.root();
        loop {
            if id == node {
                out.push(i);
                break;
            }
            match (tree.children(id), tree.rule(id)) {
                (Some((left, right)), Some(rule)) => {
                    id = if rule.goes_left(row) { left } else { right };
                }
                _ => break,
            }
        }
    }
    out
}

fn distinct_values(x: &Matrix, obs: &[usize], predictor: usize) -> Vec<f64> {
    let mut values: Vec<f64> = obs.iter().map(|&i| x.get(i, predictor)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

fn value_range(x: &Matrix, obs: &[usize], predictor: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in obs {
        let v = x.get(i, predictor);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Draws a rule from the splitting-rule prior restricted to the observations
/// in `obs`, returning it with its log density. `None` marks a degenerate
/// continuous draw (zero-width value range), which the caller retries.
fn draw_rule<R: Rng + ?Sized>(
    x: &Matrix,
    obs: &[usize],
    rule_prior: RulePrior,
    rng: &mut R,
) -> Option<(SplitRule, f64)> {
    debug_assert!(!obs.is_empty());
    let p = x.n_cols();
    let predictor = rng.random_range(0..p);
    match rule_prior {
        RulePrior::Discrete => {
            let values = distinct_values(x, obs, predictor);
            let threshold = values[rng.random_range(0..values.len())];
            let log_q = -(p as f64).ln() - (values.len() as f64).ln();
            Some((SplitRule::new(predictor, threshold), log_q))
        }
        RulePrior::Continuous => {
            let (lo, hi) = value_range(x, obs, predictor);
            if hi <= lo {
                return None;
            }
            let threshold = lo + (hi - lo) * rng.random::<f64>();
            let log_q = -(p as f64).ln() - (hi - lo).ln();
            Some((SplitRule::new(predictor, threshold), log_q))
        }
    }
}

/// Log density of `rule` under the splitting-rule prior at a node holding
/// `obs`; negative infinity when the rule is outside the prior's support
/// there (possible for reverse moves after the region shifted).
fn rule_log_density(x: &Matrix, obs: &[usize], rule: &SplitRule, rule_prior: RulePrior) -> f64 {
    let log_p = -(x.n_cols() as f64).ln();
    match rule_prior {
        RulePrior::Discrete => {
            let values = distinct_values(x, obs, rule.predictor);
            if values.iter().any(|&v| v == rule.threshold) {
                log_p - (values.len() as f64).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        RulePrior::Continuous => {
            let (lo, hi) = value_range(x, obs, rule.predictor);
            if hi > lo && rule.threshold >= lo && rule.threshold <= hi {
                log_p - (hi - lo).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Proposes one move from `tree`. The returned log densities are the raw
/// probabilities of the single draw that produced the candidate (and of the
/// draw that would undo it), exactly the q's the acceptance ratio needs.
pub fn propose<R: Rng + ?Sized>(
    tree: &Tree,
    x: &Matrix,
    rng: &mut R,
    config: &ProposalConfig,
) -> ProposeResult {
    let kinds = available_kinds(tree);
    let log_q_kind = -(kinds.len() as f64).ln();
    for _ in 0..config.retry_cap {
        let kind = kinds[rng.random_range(0..kinds.len())];
        match kind {
            MoveKind::Grow => {
                let leaves = tree.leaf_ids();
                let node = leaves[rng.random_range(0..leaves.len())];
                let obs = observations_at_node(tree, x, node);
                let Some((rule, log_q_rule)) = draw_rule(x, &obs, config.rule_prior, rng) else {
                    continue;
                };
                let (candidate, _) = tree
                    .apply_move(&MoveDescriptor::grow(node, rule))
                    .expect("grow targets a leaf of the current tree");
                if !candidate.is_valid(x, config.min_obs) {
                    continue;
                }
                let log_q_forward = log_q_kind - (leaves.len() as f64).ln() + log_q_rule;
                // Undone by pruning the same node, picked uniformly among
                // the candidate's prunable internals.
                let log_q_reverse = -(available_kinds(&candidate).len() as f64).ln()
                    - (candidate.prunable_ids().len() as f64).ln();
                return ProposeResult::Proposed(Proposal {
                    candidate,
                    kind,
                    log_q_forward,
                    log_q_reverse,
                });
            }
            MoveKind::Prune => {
                let prunable = tree.prunable_ids();
                let node = prunable[rng.random_range(0..prunable.len())];
                let old_rule = tree.rule(node).expect("prunable node is internal");
                let (candidate, _) = tree
                    .apply_move(&MoveDescriptor::prune(node))
                    .expect("prune targets a prunable node of the current tree");
                let log_q_forward = log_q_kind - (prunable.len() as f64).ln();
                // Undone by regrowing the merged leaf (same node id in the
                // candidate) with the removed rule.
                let obs = observations_at_node(&candidate, x, node);
                let log_q_reverse = -(available_kinds(&candidate).len() as f64).ln()
                    - (candidate.leaf_ids().len() as f64).ln()
                    + rule_log_density(x, &obs, &old_rule, config.rule_prior);
                return ProposeResult::Proposed(Proposal {
                    candidate,
                    kind,
                    log_q_forward,
                    log_q_reverse,
                });
            }
            MoveKind::Change => {
                let internals = tree.internal_ids();
                let node = internals[rng.random_range(0..internals.len())];
                let obs = observations_at_node(tree, x, node);
                let Some((rule, log_q_rule)) = draw_rule(x, &obs, config.rule_prior, rng) else {
                    continue;
                };
                let old_rule = tree.rule(node).expect("change targets an internal node");
                let (candidate, _) = tree
                    .apply_move(&MoveDescriptor::change(node, rule))
                    .expect("change targets an internal node of the current tree");
                if !candidate.is_valid(x, config.min_obs) {
                    continue;
                }
                let log_q_node = log_q_kind - (internals.len() as f64).ln();
                // The reverse draw re-selects the same node (the topology is
                // unchanged, so counts match) and redraws the old rule; its
                // region is also unchanged because ancestors kept their rules.
                let log_q_forward = log_q_node + log_q_rule;
                let log_q_reverse =
                    log_q_node + rule_log_density(x, &obs, &old_rule, config.rule_prior);
                return ProposeResult::Proposed(Proposal {
                    candidate,
                    kind,
                    log_q_forward,
                    log_q_reverse,
                });
            }
            MoveKind::Swap => {
                let children = tree.swappable_child_ids();
                let child = children[rng.random_range(0..children.len())];
                let (candidate, _) = tree
                    .apply_move(&MoveDescriptor::swap(child))
                    .expect("swap child has an internal parent");
                if !candidate.is_valid(x, config.min_obs) {
                    return ProposeResult::InvalidCandidate { kind };
                }
                // Swapping the same pair again undoes the move, and the
                // node structure is unchanged, so both densities coincide.
                let log_q = log_q_kind - (children.len() as f64).ln();
                return ProposeResult::Proposed(Proposal {
                    candidate,
                    kind,
                    log_q_forward: log_q,
                    log_q_reverse: log_q,
                });
            }
        }
    }
    ProposeResult::Stalled
}

/// Acceptance probability min(1, q_rev/q_fwd * marginal ratio * prior
/// ratio), computed in log space. A candidate with zero prior or zero
/// reverse density yields 0; NaN inputs are rejected as errors.
#[allow(clippy::too_many_arguments)]
pub fn accept_probability(
    current: &Tree,
    candidate: &Tree,
    log_q_forward: f64,
    log_q_reverse: f64,
    log_marginal_current: f64,
    log_marginal_candidate: f64,
    log_prior_current: f64,
    log_prior_candidate: f64,
) -> Result<f64, SamplerError> {
    debug_assert!(current.cached_stats().n_leaves >= 1);
    debug_assert!(candidate.cached_stats().n_leaves >= 1);
    let inputs = [
        ("log_q_forward", log_q_forward),
        ("log_q_reverse", log_q_reverse),
        ("log_marginal_current", log_marginal_current),
        ("log_marginal_candidate", log_marginal_candidate),
        ("log_prior_current", log_prior_current),
        ("log_prior_candidate", log_prior_candidate),
    ];
    for (name, value) in inputs {
        if value.is_nan() {
            return Err(SamplerError::NonFinite { name, value });
        }
    }
    if log_prior_candidate == f64::NEG_INFINITY
        || log_marginal_candidate == f64::NEG_INFINITY
        || log_q_reverse == f64::NEG_INFINITY
    {
        return Ok(0.0);
    }
    let log_ratio = (log_q_reverse - log_q_forward)
        + (log_marginal_candidate - log_marginal_current)
        + (log_prior_candidate - log_prior_current);
    if log_ratio.is_nan() {
        return Err(SamplerError::NonFinite { name: "log_ratio", value: log_ratio });
    }
    Ok(log_ratio.min(0.0).exp())
}

/// Chain-level knobs. Burn-in is a summary-stage concept; chains always
/// record from the start state (iteration 0) onward.
#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    pub iterations: usize,
    /// Keep every `thinning`-th iteration in the trace (iteration 0 and the
    /// final iteration are always kept).
    pub thinning: usize,
    pub min_obs: u32,
    pub rule_prior: RulePrior,
    pub retry_cap: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            thinning: 1,
            min_obs: 1,
            rule_prior: RulePrior::Discrete,
            retry_cap: 10,
        }
    }
}

impl ChainConfig {
    fn validate(&self) -> Result<(), SamplerError> {
        if self.thinning == 0 {
            return Err(SamplerError::ZeroConfig("thinning"));
        }
        if self.min_obs == 0 {
            return Err(SamplerError::ZeroConfig("min_obs"));
        }
        if self.retry_cap == 0 {
            return Err(SamplerError::ZeroConfig("retry_cap"));
        }
        Ok(())
    }

    fn proposal(&self) -> ProposalConfig {
        ProposalConfig {
            min_obs: self.min_obs,
            rule_prior: self.rule_prior,
            retry_cap: self.retry_cap,
        }
    }
}

/// Final state of a finished chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub trees: Vec<Tree>,
    pub sigma2: Option<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub records: Vec<TraceRecord>,
    pub state: ChainState,
}

/// Outcome of one topology update on one tree.
struct MoveOutcome {
    label: &'static str,
    accepted: bool,
}

/// One MH step on `tree` against response `y`: propose, evaluate, accept or
/// reject. Leaf values are untouched here; callers refresh them afterwards.
fn topology_update<R: Rng + ?Sized>(
    tree: &mut Tree,
    y: &[f64],
    x: &Matrix,
    model: &Model,
    prior: &PriorSpec,
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<MoveOutcome, SamplerError> {
    match propose(tree, x, rng, config) {
        ProposeResult::Stalled => Ok(MoveOutcome { label: "stalled", accepted: false }),
        ProposeResult::InvalidCandidate { kind } => {
            Ok(MoveOutcome { label: kind.name(), accepted: false })
        }
        ProposeResult::Proposed(proposal) => {
            let log_marginal_current = model.log_marginal(tree, y, x)?;
            let log_marginal_candidate = model.log_marginal(&proposal.candidate, y, x)?;
            let alpha = accept_probability(
                tree,
                &proposal.candidate,
                proposal.log_q_forward,
                proposal.log_q_reverse,
                log_marginal_current,
                log_marginal_candidate,
                prior.log_prior(tree),
                prior.log_prior(&proposal.candidate),
            )?;
            let accepted = rng.random::<f64>() < alpha;
            if accepted {
                *tree = proposal.candidate;
            }
            Ok(MoveOutcome { label: proposal.kind.name(), accepted })
        }
    }
}

/// Single-tree chain: ensemble of size one.
pub fn run_cart_chain<R: Rng + ?Sized>(
    dataset: &Dataset,
    model: &Model,
    prior: &PriorSpec,
    config: &ChainConfig,
    chain_id: u32,
    rng: &mut R,
) -> Result<ChainRun, SamplerError> {
    run_bart_chain(dataset, model, prior, 1, config, chain_id, rng)
}

enum Engine {
    /// Gaussian response, residual backfitting; sigma2 resampled when the
    /// model carries an inverse-gamma prior.
    Gaussian,
    /// Single classification tree with the leaf-probability model.
    BernoulliDirect,
    /// Ensemble classification on a latent Gaussian scale: each iteration
    /// draws truncated-normal latents around the current fit, backfits the
    /// trees on them with unit variance, and maps fits through the standard
    /// normal CDF for probabilities.
    ProbitLatent,
}

/// Backfitting chain over `m` trees. For Gaussian models each tree takes
/// one MH step against the residuals of the others; `m = 1` therefore
/// reduces to the plain CART chain. Binary responses use the direct
/// leaf-probability model when `m = 1` and latent-scale augmentation
/// otherwise.
pub fn run_bart_chain<R: Rng + ?Sized>(
    dataset: &Dataset,
    model: &Model,
    prior: &PriorSpec,
    m: usize,
    config: &ChainConfig,
    chain_id: u32,
    rng: &mut R,
) -> Result<ChainRun, SamplerError> {
    config.validate()?;
    if m == 0 {
        return Err(SamplerError::NoTrees);
    }
    let n = dataset.n();
    if n < config.min_obs as usize {
        return Err(SamplerError::TooFewObservations { n, min_obs: config.min_obs });
    }
    let x = &dataset.x;
    let y = &dataset.y;

    let engine = match model {
        Model::Gaussian(_) => Engine::Gaussian,
        Model::Bernoulli(_) if m == 1 => Engine::BernoulliDirect,
        Model::Bernoulli(_) => Engine::ProbitLatent,
    };
    if matches!(engine, Engine::BernoulliDirect | Engine::ProbitLatent) {
        if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(LikelihoodError::NotBinary(bad).into());
        }
    }

    // Working model for the per-tree MH steps. Probit runs on a fixed
    // unit-variance latent scale with the usual ensemble-shrunk leaf prior.
    let mut working = match engine {
        Engine::ProbitLatent => {
            let sd = 3.0 / (2.0 * (m as f64).sqrt());
            Model::Gaussian(
                crate::likelihood::GaussianModel::new(1.0, 0.0, sd * sd)
                    .expect("probit working model parameters are fixed and positive"),
            )
        }
        _ => model.clone(),
    };

    // Start state: m single-leaf trees. Deterministic initial leaf values;
    // the first iteration immediately refreshes them from the posterior.
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let init_value = match engine {
        Engine::Gaussian => mean_y / m as f64,
        Engine::BernoulliDirect => mean_y,
        Engine::ProbitLatent => 0.0,
    };
    let mut trees: Vec<Tree> = (0..m).map(|_| Tree::leaf(init_value)).collect();

    // Initial sigma2: the sample variance when it is to be sampled.
    if let (Engine::Gaussian, Model::Gaussian(gm)) = (&engine, &mut working) {
        if gm.sigma_prior().is_some() && n >= 2 {
            let var = y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var > 0.0 {
                gm.set_sigma2(var);
            }
        }
    }

    // Per-tree fitted values and their sum, kept in sync incrementally.
    let mut fits: Vec<Vec<f64>> = trees
        .iter()
        .map(|t| (0..n).map(|i| t.evaluate(x.row(i))).collect())
        .collect();
    let mut fit_total: Vec<f64> = (0..n)
        .map(|i| fits.iter().map(|f| f[i]).sum())
        .collect();

    let proposal_config = config.proposal();
    let mut records = Vec::new();
    let record = |iteration: usize,
                      trees: &[Tree],
                      working: &Model,
                      fit_total: &[f64],
                      outcomes: &[(String, bool)]|
     -> Result<TraceRecord, SamplerError> {
        let (log_lik, missing_rate) = match engine {
            Engine::Gaussian => {
                let sigma2 = match working {
                    Model::Gaussian(gm) => gm.sigma2(),
                    Model::Bernoulli(_) => unreachable!(),
                };
                let ll = y
                    .iter()
                    .zip(fit_total)
                    .map(|(yi, fi)| {
                        let r = yi - fi;
                        -0.5 * ((2.0 * std::f64::consts::PI * sigma2).ln() + r * r / sigma2)
                    })
                    .sum();
                (ll, None)
            }
            Engine::BernoulliDirect => {
                let ll = model.log_marginal(&trees[0], y, x)?;
                let probs = crate::likelihood::bernoulli_posterior_mean_probs(
                    &trees[0],
                    y,
                    x,
                    match model {
                        Model::Bernoulli(bm) => bm,
                        Model::Gaussian(_) => unreachable!(),
                    },
                )?;
                let miss = y
                    .iter()
                    .zip(&probs)
                    .filter(|(yi, pi)| (**pi > 0.5) != (**yi == 1.0))
                    .count() as f64
                    / n as f64;
                (ll, Some(miss))
            }
            Engine::ProbitLatent => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                let ll = y
                    .iter()
                    .zip(fit_total)
                    .map(|(yi, fi)| {
                        let p = normal.cdf(*fi).clamp(1e-12, 1.0 - 1e-12);
                        if *yi == 1.0 {
                            p.ln()
                        } else {
                            (1.0 - p).ln()
                        }
                    })
                    .sum();
                let miss = y
                    .iter()
                    .zip(fit_total)
                    .filter(|(yi, fi)| (**fi > 0.0) != (**yi == 1.0))
                    .count() as f64
                    / n as f64;
                (ll, Some(miss))
            }
        };
        let sigma2 = match (&engine, working) {
            (Engine::Gaussian, Model::Gaussian(gm)) => Some(gm.sigma2()),
            _ => None,
        };
        Ok(TraceRecord {
            chain: chain_id,
            iteration: iteration as u32,
            trees: trees.iter().map(|t| t.cached_stats()).collect(),
            log_lik,
            sigma2,
            missing_rate,
            accepted: outcomes.iter().map(|(_, a)| *a).collect(),
            moves: outcomes.iter().map(|(l, _)| l.clone()).collect(),
        })
    };

    let start_outcomes: Vec<(String, bool)> = vec![("start".into(), false); m];
    records.push(record(0, &trees, &working, &fit_total, &start_outcomes)?);

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut latent: Vec<f64> = vec![0.0; n];
    for iteration in 1..=config.iterations {
        // Latent draws for probit: z > 0 exactly when y = 1.
        if matches!(engine, Engine::ProbitLatent) {
            for i in 0..n {
                latent[i] = truncated_normal(&normal, fit_total[i], y[i] == 1.0, rng);
            }
        }

        let mut outcomes = Vec::with_capacity(m);
        let mut residual = vec![0.0; n];
        for j in 0..m {
            let target: &[f64] = match engine {
                Engine::BernoulliDirect => y,
                Engine::Gaussian => {
                    for i in 0..n {
                        residual[i] = y[i] - (fit_total[i] - fits[j][i]);
                    }
                    &residual
                }
                Engine::ProbitLatent => {
                    for i in 0..n {
                        residual[i] = latent[i] - (fit_total[i] - fits[j][i]);
                    }
                    &residual
                }
            };
            let outcome =
                topology_update(&mut trees[j], target, x, &working, prior, &proposal_config, rng)?;
            let values = sample_leaf_values(&trees[j], target, x, &working, rng)?;
            trees[j].set_leaf_values(&values);
            for i in 0..n {
                let new_fit = trees[j].evaluate(x.row(i));
                fit_total[i] += new_fit - fits[j][i];
                fits[j][i] = new_fit;
            }
            outcomes.push((outcome.label.to_string(), outcome.accepted));
        }

        if let (Engine::Gaussian, Model::Gaussian(gm)) = (&engine, &working) {
            if gm.sigma_prior().is_some() {
                let drawn = sample_sigma2(&trees, y, x, &working, rng)?;
                match &mut working {
                    Model::Gaussian(gm) => gm.set_sigma2(drawn),
                    Model::Bernoulli(_) => unreachable!(),
                }
            }
        }

        if iteration % config.thinning == 0 || iteration == config.iterations {
            records.push(record(iteration, &trees, &working, &fit_total, &outcomes)?);
        }
    }

    let sigma2 = match (&engine, &working) {
        (Engine::Gaussian, Model::Gaussian(gm)) => Some(gm.sigma2()),
        _ => None,
    };
    Ok(ChainRun {
        records,
        state: ChainState { trees, sigma2, iteration: config.iterations },
    })
}

/// Draws from N(mu, 1) truncated to (0, inf) when `positive`, else to
/// (-inf, 0], by inverse-CDF on the standardized scale. The uniform draw is
/// clamped away from 0 and 1 so extreme fits cannot produce infinities.
fn truncated_normal<R: Rng + ?Sized>(
    normal: &Normal,
    mu: f64,
    positive: bool,
    rng: &mut R,
) -> f64 {
    let boundary = normal.cdf(-mu);
    let u = rng.random::<f64>();
    let p = if positive { boundary + u * (1.0 - boundary) } else { u * boundary };
    let z = mu + normal.inverse_cdf(p.clamp(1e-15, 1.0 - 1e-15));
    // The clamp can push z across 0 for very large |mu|; pin it back to the
    // constrained side.
    if positive {
        z.max(f64::MIN_POSITIVE)
    } else {
        z.min(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::GaussianModel;
    use crate::prior::{LbPriorParams, PriorSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point_data() -> Dataset {
        crate::data::Dataset {
            x: Matrix::from_rows(&[vec![0.0], vec![1.0]]),
            y: vec![-1.0, 1.0],
            names: vec!["x1".into()],
            provenance: crate::data::Provenance {
                source: "test".into(),
                steps: vec![],
                column_ranges: vec![(0.0, 1.0)],
                dropped_rows: 0,
            },
        }
    }

    fn gaussian_model() -> Model {
        Model::Gaussian(GaussianModel::new(1.0, 0.0, 1.0).unwrap())
    }

    #[test]
    fn single_leaf_admits_only_grow() {
        let data = two_point_data();
        let tree = Tree::leaf(0.0);
        let config = ProposalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            match propose(&tree, &data.x, &mut rng, &config) {
                ProposeResult::Proposed(p) => {
                    assert_eq!(p.kind, MoveKind::Grow);
                    assert_eq!(p.candidate.cached_stats().n_leaves, 2);
                }
                other => panic!("expected a GROW proposal, got {other:?}"),
            }
        }
    }

    #[test]
    fn grow_then_prune_round_trips() {
        let data = two_point_data();
        let tree = Tree::leaf(0.0);
        let config = ProposalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ProposeResult::Proposed(p) = propose(&tree, &data.x, &mut rng, &config) else {
            panic!("grow always available")
        };
        let pruned = p
            .candidate
            .apply_move(&MoveDescriptor::prune(p.candidate.root()))
            .unwrap()
            .0;
        assert_eq!(pruned.cached_stats(), tree.cached_stats());
    }

    #[test]
    fn identical_candidate_accepts_with_probability_one() {
        let tree = Tree::leaf(0.0);
        let alpha =
            accept_probability(&tree, &tree, -1.0, -1.0, -5.0, -5.0, -2.0, -2.0).unwrap();
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn impossible_candidate_accepts_with_probability_zero() {
        let tree = Tree::leaf(0.0);
        let alpha = accept_probability(
            &tree,
            &tree,
            -1.0,
            -1.0,
            -5.0,
            -5.0,
            -2.0,
            f64::NEG_INFINITY,
        )
        .unwrap();
        assert_eq!(alpha, 0.0);
        let nan = accept_probability(&tree, &tree, f64::NAN, -1.0, -5.0, -5.0, -2.0, -2.0);
        assert!(nan.is_err());
    }

    #[test]
    fn zero_iterations_keeps_only_start_state() {
        let data = two_point_data();
        let prior = PriorSpec::LossBased(LbPriorParams::new(1.0, 0.62).unwrap());
        let config = ChainConfig { iterations: 0, ..ChainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run =
            run_cart_chain(&data, &gaussian_model(), &prior, &config, 0, &mut rng).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].iteration, 0);
        assert_eq!(run.records[0].trees[0].n_leaves, 1);
    }

    #[test]
    fn traces_are_deterministic_given_seed() {
        let data = two_point_data();
        let prior = PriorSpec::LossBased(LbPriorParams::new(1.0, 0.62).unwrap());
        let config = ChainConfig { iterations: 40, ..ChainConfig::default() };
        let run_once = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            run_cart_chain(&data, &gaussian_model(), &prior, &config, 0, &mut rng).unwrap()
        };
        assert_eq!(run_once().records, run_once().records);
    }

    #[test]
    fn every_visited_tree_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = crate::data::simulate_cart(30, 0.5, &mut rng);
        let prior = PriorSpec::LossBased(LbPriorParams::new(0.5, 0.62).unwrap());
        let config = ChainConfig { iterations: 200, min_obs: 2, ..ChainConfig::default() };
        let run =
            run_cart_chain(&data, &gaussian_model(), &prior, &config, 0, &mut rng).unwrap();
        for tree in &run.state.trees {
            assert!(tree.is_valid(&data.x, 2));
        }
        for record in &run.records {
            assert!(record.trees[0].n_leaves >= 1);
        }
    }

    #[test]
    fn bernoulli_model_rejects_non_binary_response() {
        let mut data = two_point_data();
        data.y = vec![0.0, 0.5];
        let model = Model::Bernoulli(crate::likelihood::BernoulliModel::default());
        let prior = PriorSpec::LossBased(LbPriorParams::new(1.0, 0.62).unwrap());
        let config = ChainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = run_cart_chain(&data, &model, &prior, &config, 0, &mut rng);
        assert!(matches!(err, Err(SamplerError::Likelihood(LikelihoodError::NotBinary(_)))));
    }

    #[test]
    fn truncated_normal_respects_sign_constraint() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mu = 4.0 * (rng.random::<f64>() - 0.5);
            assert!(truncated_normal(&normal, mu, true, &mut rng) > 0.0);
            assert!(truncated_normal(&normal, mu, false, &mut rng) <= 0.0);
        }
    }
}
