//! Bayesian CART and BART inference with two tree-topology priors: the
//! classic depth-based split prior and a loss-based prior that penalizes
//! leaf count and left-right imbalance in closed form.
//!
//! The crate is organized bottom-up:
//!
//! - [`tree`]: binary trees, the four MCMC moves, incremental topology
//!   statistics, and partition validity against a dataset.
//! - [`prior`]: exact shape counting, both topology priors, and direct
//!   sampling from them.
//! - [`calibrate`]: expected-loss surface and the grid-plus-golden-section
//!   search that picks the loss-based prior's default parameters.
//! - [`likelihood`]: conjugate leaf-integrated marginal likelihoods
//!   (Gaussian and Bernoulli), leaf-value and noise-variance samplers.
//! - [`sampler`]: Metropolis-Hastings topology proposals and the
//!   backfitting chain for tree ensembles.
//! - [`data`]: the block-design simulation and the two clinical-dataset
//!   ingestion pipelines.
//! - [`trace`] and [`experiment`]: JSON-lines chain traces, seeded
//!   multi-chain experiment runs, prior studies, and summaries.

pub mod calibrate;
pub mod data;
pub mod experiment;
pub mod likelihood;
pub mod matrix;
pub mod prior;
pub mod sampler;
pub mod trace;
pub mod tree;

pub use calibrate::{maximize_expected_loss, ExpectedLossSpec, LossMaximum, LossVariant};
pub use data::{load_breast_cancer, load_diabetes, simulate_cart, Dataset, SexFilter};
pub use experiment::{
    prior_study, run_experiment, summarize_trace, ExperimentConfig, ExperimentSummary,
};
pub use likelihood::{BernoulliModel, GaussianModel, Model};
pub use matrix::Matrix;
pub use prior::{ClPriorParams, LbPriorParams, PriorSpec};
pub use sampler::{run_bart_chain, run_cart_chain, ChainConfig, RulePrior};
pub use trace::TraceRecord;
pub use tree::{MoveDescriptor, MoveKind, SplitRule, Tree, TreeStats};
