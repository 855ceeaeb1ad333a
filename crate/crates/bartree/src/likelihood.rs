//! Conjugate observation models: Gaussian regression and Bernoulli
//! classification with leaf parameters integrated out, plus the posterior
//! samplers for leaf values and the marginal variance.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, Normal};
use statrs::function::beta::ln_beta;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::tree::Tree;

#[derive(Debug, Error, PartialEq)]
pub enum LikelihoodError {
    #[error("sigma2 must be > 0, got {0}")]
    Sigma2NotPositive(f64),
    #[error("leaf-value prior variance must be > 0, got {0}")]
    MuPriorVarNotPositive(f64),
    #[error("inverse-gamma hyperparameters must be > 0, got shape {shape}, scale {scale}")]
    InvGammaNotPositive { shape: f64, scale: f64 },
    #[error("beta hyperparameters must be > 0, got alpha {alpha}, beta {beta}")]
    BetaNotPositive { alpha: f64, beta: f64 },
    #[error("leaf {0} holds no observations; the tree is invalid for this data")]
    EmptyLeaf(usize),
    #[error("response value {0} is not binary")]
    NotBinary(f64),
    #[error("operation requires a Gaussian model with a sigma2 prior")]
    NotGaussianWithPrior,
    #[error("response length {y_len} does not match {n_rows} observations")]
    LengthMismatch { y_len: usize, n_rows: usize },
}

/// Inverse-Gamma hyperparameters (shape, scale) for the marginal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, LikelihoodError> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(LikelihoodError::InvGammaNotPositive { shape, scale });
        }
        Ok(Self { shape, scale })
    }
}

/// Gaussian regression with a Normal prior on each leaf value and an
/// optional Inverse-Gamma prior on the marginal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    sigma2: f64,
    mu_prior_mean: f64,
    mu_prior_var: f64,
    sigma_prior: Option<InvGammaParams>,
}

impl GaussianModel {
    pub fn new(sigma2: f64, mu_prior_mean: f64, mu_prior_var: f64) -> Result<Self, LikelihoodError> {
        if !(sigma2 > 0.0) {
            return Err(LikelihoodError::Sigma2NotPositive(sigma2));
        }
        if !(mu_prior_var > 0.0) {
            return Err(LikelihoodError::MuPriorVarNotPositive(mu_prior_var));
        }
        Ok(Self { sigma2, mu_prior_mean, mu_prior_var, sigma_prior: None })
    }

    pub fn with_sigma_prior(mut self, prior: InvGammaParams) -> Self {
        self.sigma_prior = Some(prior);
        self
    }

    #[inline]
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[inline]
    pub fn mu_prior_mean(&self) -> f64 {
        self.mu_prior_mean
    }

    #[inline]
    pub fn mu_prior_var(&self) -> f64 {
        self.mu_prior_var
    }

    #[inline]
    pub fn sigma_prior(&self) -> Option<InvGammaParams> {
        self.sigma_prior
    }

    pub fn set_sigma2(&mut self, sigma2: f64) {
        assert!(sigma2 > 0.0, "sigma2 must stay positive");
        self.sigma2 = sigma2;
    }
}

/// Bernoulli classification with a conjugate Beta prior on each leaf
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliModel {
    alpha_mu: f64,
    beta_mu: f64,
}

impl BernoulliModel {
    pub fn new(alpha_mu: f64, beta_mu: f64) -> Result<Self, LikelihoodError> {
        if !(alpha_mu > 0.0 && beta_mu > 0.0) {
            return Err(LikelihoodError::BetaNotPositive { alpha: alpha_mu, beta: beta_mu });
        }
        Ok(Self { alpha_mu, beta_mu })
    }

    #[inline]
    pub fn alpha_mu(&self) -> f64 {
        self.alpha_mu
    }

    #[inline]
    pub fn beta_mu(&self) -> f64 {
        self.beta_mu
    }
}

impl Default for BernoulliModel {
    /// Uniform Beta(1, 1) prior on leaf probabilities.
    fn default() -> Self {
        Self { alpha_mu: 1.0, beta_mu: 1.0 }
    }
}

/// Tagged observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Gaussian(GaussianModel),
    Bernoulli(BernoulliModel),
}

impl Model {
    pub fn log_marginal(&self, tree: &Tree, y: &[f64], x: &Matrix) -> Result<f64, LikelihoodError> {
        match self {
            Model::Gaussian(m) => gaussian_log_marginal(tree, y, x, m),
            Model::Bernoulli(m) => bernoulli_log_marginal(tree, y, x, m),
        }
    }
}

/// Per-leaf sufficient statistics: count, sum, and centered sum of squares.
fn leaf_suffstats(tree: &Tree, y: &[f64], x: &Matrix) -> Result<Vec<(f64, f64, f64)>, LikelihoodError> {
    if y.len() != x.n_rows() {
        return Err(LikelihoodError::LengthMismatch { y_len: y.len(), n_rows: x.n_rows() });
    }
    let memberships = tree.leaf_memberships(x);
    let n_leaves = tree.leaf_ids().len();
    let mut count = vec![0f64; n_leaves];
    let mut sum = vec![0f64; n_leaves];
    for (&m, &yi) in memberships.iter().zip(y) {
        count[m] += 1.0;
        sum[m] += yi;
    }
    if let Some(empty) = count.iter().position(|&c| c == 0.0) {
        return Err(LikelihoodError::EmptyLeaf(empty));
    }
    let mut ss = vec![0f64; n_leaves];
    for (&m, &yi) in memberships.iter().zip(y) {
        let d = yi - sum[m] / count[m];
        ss[m] += d * d;
    }
    Ok(count.into_iter().zip(sum).zip(ss).map(|((c, s), q)| (c, s, q)).collect())
}

/// Log marginal likelihood of a Gaussian tree with leaf means integrated
/// out; factorizes over leaves.
pub fn gaussian_log_marginal(
    tree: &Tree,
    y: &[f64],
    x: &Matrix,
    model: &GaussianModel,
) -> Result<f64, LikelihoodError> {
    let sigma2 = model.sigma2;
    let v0 = model.mu_prior_var;
    let m0 = model.mu_prior_mean;
    let mut log_p = 0.0;
    for (n, sum, ss) in leaf_suffstats(tree, y, x)? {
        let ybar = sum / n;
        let shrink_var = sigma2 + n * v0;
        log_p += -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln()
            + 0.5 * (sigma2 / shrink_var).ln()
            - ss / (2.0 * sigma2)
            - n * (ybar - m0) * (ybar - m0) / (2.0 * shrink_var);
    }
    Ok(log_p)
}

fn check_binary(y: &[f64]) -> Result<(), LikelihoodError> {
    match y.iter().find(|v| **v != 0.0 && **v != 1.0) {
        Some(&bad) => Err(LikelihoodError::NotBinary(bad)),
        None => Ok(()),
    }
}

/// Log marginal likelihood of a Bernoulli tree with leaf probabilities
/// integrated out: a Beta-function ratio per leaf (the observations are a
/// fixed ordered sequence, so no binomial coefficient appears).
pub fn bernoulli_log_marginal(
    tree: &Tree,
    y: &[f64],
    x: &Matrix,
    model: &BernoulliModel,
) -> Result<f64, LikelihoodError> {
    check_binary(y)?;
    let (a, b) = (model.alpha_mu, model.beta_mu);
    let mut log_p = 0.0;
    for (n, successes, _) in leaf_suffstats(tree, y, x)? {
        log_p += ln_beta(a + successes, b + n - successes) - ln_beta(a, b);
    }
    Ok(log_p)
}

/// Draws leaf values from their conjugate posteriors, in leaf order.
/// Gaussian leaves get precision-weighted Normal draws; Bernoulli leaves get
/// Beta draws with the per-leaf success counts.
pub fn sample_leaf_values<R: Rng + ?Sized>(
    tree: &Tree,
    y: &[f64],
    x: &Matrix,
    model: &Model,
    rng: &mut R,
) -> Result<Vec<f64>, LikelihoodError> {
    match model {
        Model::Gaussian(m) => {
            let stats = leaf_suffstats(tree, y, x)?;
            Ok(stats
                .into_iter()
                .map(|(n, sum, _)| {
                    let post_var = 1.0 / (1.0 / m.mu_prior_var + n / m.sigma2);
                    let post_mean = post_var * (m.mu_prior_mean / m.mu_prior_var + sum / m.sigma2);
                    Normal::new(post_mean, post_var.sqrt()).expect("positive sd").sample(rng)
                })
                .collect())
        }
        Model::Bernoulli(m) => {
            check_binary(y)?;
            let stats = leaf_suffstats(tree, y, x)?;
            Ok(stats
                .into_iter()
                .map(|(n, s, _)| {
                    BetaDist::new(m.alpha_mu + s, m.beta_mu + n - s)
                        .expect("positive beta parameters")
                        .sample(rng)
                })
                .collect())
        }
    }
}

/// Posterior-mean leaf probabilities (alpha + s) / (alpha + beta + n), used
/// for deterministic classification summaries.
pub fn bernoulli_posterior_mean_probs(
    tree: &Tree,
    y: &[f64],
    x: &Matrix,
    model: &BernoulliModel,
) -> Result<Vec<f64>, LikelihoodError> {
    check_binary(y)?;
    let (a, b) = (model.alpha_mu, model.beta_mu);
    Ok(leaf_suffstats(tree, y, x)?
        .into_iter()
        .map(|(n, s, _)| (a + s) / (a + b + n))
        .collect())
}

/// Draws the marginal variance from its Inverse-Gamma posterior given the
/// current trees and leaf values (the residuals of the full sum-of-trees
/// fit). With no observations this is a draw from the prior.
pub fn sample_sigma2<R: Rng + ?Sized>(
    trees: &[Tree],
    y: &[f64],
    x: &Matrix,
    model: &Model,
    rng: &mut R,
) -> Result<f64, LikelihoodError> {
    let gaussian = match model {
        Model::Gaussian(m) => m,
        Model::Bernoulli(_) => return Err(LikelihoodError::NotGaussianWithPrior),
    };
    let prior = gaussian.sigma_prior.ok_or(LikelihoodError::NotGaussianWithPrior)?;
    if y.len() != x.n_rows() {
        return Err(LikelihoodError::LengthMismatch { y_len: y.len(), n_rows: x.n_rows() });
    }
    let mut rss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let fit: f64 = trees.iter().map(|t| t.evaluate(x.row(i))).sum();
        rss += (yi - fit) * (yi - fit);
    }
    let shape = prior.shape + y.len() as f64 / 2.0;
    let scale = prior.scale + rss / 2.0;
    // If G ~ Gamma(shape, 1) then scale / G ~ InvGamma(shape, scale).
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    Ok(scale / g)
}

/// KL divergence between N(mu1, sigma2) and N(mu2, sigma2).
pub fn gaussian_kl(mu1: f64, mu2: f64, sigma2: f64) -> f64 {
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    (mu1 - mu2) * (mu1 - mu2) / (2.0 * sigma2)
}
