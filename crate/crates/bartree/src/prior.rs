//! Tree-topology priors: the classic depth-penalty prior and the loss-based
//! prior factorized as leaf-count x imbalance x uniform-over-shapes, plus the
//! exact shape counts behind that factorization.

use num_bigint::BigUint;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::tree::{MoveDescriptor, SplitRule, Tree, TreeStats};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("alpha must lie in (0,1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("beta must be >= 0, got {0}")]
    BetaNegative(f64),
    #[error("omega must be > 0, got {0}")]
    OmegaNotPositive(f64),
    #[error("gamma = 0 makes the imbalance distribution improper")]
    GammaZero,
    #[error("(n_leaves={n_leaves}, delta={delta}) is outside the imbalance support")]
    DeltaOutOfSupport { n_leaves: u32, delta: u32 },
    #[error("max_leaves must be >= 1")]
    MaxLeavesZero,
    #[error("topology sampling exceeded {0} rejected attempts")]
    SamplingStalled(u32),
}

/// Classic prior: a node at depth d splits with probability alpha (1+d)^-beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClPriorParams {
    alpha: f64,
    beta: f64,
}

impl ClPriorParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, PriorError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(PriorError::AlphaOutOfRange(alpha));
        }
        if !(beta >= 0.0) {
            return Err(PriorError::BetaNegative(beta));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Split probability for a node at the given depth.
    pub fn split_probability(&self, depth: u32) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

impl Default for ClPriorParams {
    /// The conventional (0.95, 2) setting.
    fn default() -> Self {
        Self { alpha: 0.95, beta: 2.0 }
    }
}

/// Loss-based prior: pi(T) proportional to exp(-omega n_L - gamma Delta),
/// uniform over tree shapes sharing (n_L, Delta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbPriorParams {
    omega: f64,
    gamma: f64,
}

impl LbPriorParams {
    pub fn new(omega: f64, gamma: f64) -> Result<Self, PriorError> {
        if !(omega > 0.0) {
            return Err(PriorError::OmegaNotPositive(omega));
        }
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(PriorError::GammaZero);
        }
        Ok(Self { omega, gamma })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Tagged choice of tree-topology prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorSpec {
    Classic(ClPriorParams),
    LossBased(LbPriorParams),
}

impl PriorSpec {
    /// Log prior of a tree topology. The classic prior reads node depths off
    /// the tree; the loss-based prior depends on the tree only through its
    /// (n_leaves, delta) statistics.
    pub fn log_prior(&self, tree: &Tree) -> f64 {
        match self {
            PriorSpec::Classic(p) => cl_log_prior(tree, p),
            PriorSpec::LossBased(p) => lb_log_prior(&tree.cached_stats(), p)
                .expect("stats of a real tree are always in the prior support"),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PriorSpec::Classic(p) => format!("cl({}, {})", p.alpha, p.beta),
            PriorSpec::LossBased(p) => format!("lb({}, {})", p.omega, p.gamma),
        }
    }

    /// Family name and parameter pair: ("classic", alpha, beta) or
    /// ("loss-based", omega, gamma).
    pub fn describe(&self) -> (&'static str, f64, f64) {
        match self {
            PriorSpec::Classic(p) => ("classic", p.alpha, p.beta),
            PriorSpec::LossBased(p) => ("loss-based", p.omega, p.gamma),
        }
    }
}

/// Number of binary tree shapes with `n` leaves (1, 1, 2, 5, 14, ...).
///
/// Exact arbitrary-precision integers; the count exceeds f64 range near
/// n = 520 and exceeds u128 well before that.
pub fn catalan(n: u32) -> BigUint {
    assert!(n >= 1, "trees have at least one leaf");
    // Catalan recurrence on the internal-node count k = n - 1:
    // Cat(k) = Cat(k-1) * 2(2k-1) / (k+1), always an exact division.
    let mut c = BigUint::from(1u32);
    for k in 1..n {
        c = c * BigUint::from(2 * (2 * k - 1)) / BigUint::from(k + 1);
    }
    c
}

/// log of `catalan(n)` via log-gamma, for use where the exact integer
/// overflows floating point.
pub fn catalan_ln(n: u32) -> f64 {
    assert!(n >= 1, "trees have at least one leaf");
    let k = (n - 1) as f64;
    ln_gamma(2.0 * k + 1.0) - 2.0 * ln_gamma(k + 1.0) - (k + 1.0).ln()
}

fn delta_in_support(n_leaves: u32, delta: u32) -> bool {
    if n_leaves == 1 {
        return delta == 0;
    }
    delta <= n_leaves - 2 && delta % 2 == n_leaves % 2
}

/// Number of tree shapes with the given leaf count and root imbalance.
///
/// The two subtrees of the root hold (n -/+ delta)/2 leaves; each side is a
/// free binary shape, and delta > 0 contributes a factor 2 for the mirror
/// assignment. The degenerate (1, 0) counts as a single shape.
pub fn count_trees(n_leaves: u32, delta: u32) -> Result<BigUint, PriorError> {
    if !delta_in_support(n_leaves, delta) {
        return Err(PriorError::DeltaOutOfSupport { n_leaves, delta });
    }
    if n_leaves == 1 {
        return Ok(BigUint::from(1u32));
    }
    let small = (n_leaves - delta) / 2;
    let large = (n_leaves + delta) / 2;
    let product = catalan(small) * catalan(large);
    Ok(if delta == 0 { product } else { product * BigUint::from(2u32) })
}

/// log of `count_trees`, computed directly in log space.
pub fn count_trees_ln(n_leaves: u32, delta: u32) -> Result<f64, PriorError> {
    if !delta_in_support(n_leaves, delta) {
        return Err(PriorError::DeltaOutOfSupport { n_leaves, delta });
    }
    if n_leaves == 1 {
        return Ok(0.0);
    }
    let small = (n_leaves - delta) / 2;
    let large = (n_leaves + delta) / 2;
    let two = if delta == 0 { 0.0 } else { std::f64::consts::LN_2 };
    Ok(two + catalan_ln(small) + catalan_ln(large))
}

/// Classic prior log probability of a topology.
pub fn cl_log_prior(tree: &Tree, params: &ClPriorParams) -> f64 {
    let mut log_p = 0.0;
    for id in tree.node_ids() {
        let p_split = params.split_probability(tree.node_depth(id));
        if tree.is_leaf(id) {
            log_p += (-p_split).ln_1p();
        } else {
            log_p += p_split.ln();
        }
    }
    log_p
}

/// ln(1 - e^t) for t < 0.
#[inline]
fn ln1m_exp(t: f64) -> f64 {
    debug_assert!(t < 0.0);
    (-t.exp_m1()).ln()
}

/// Log pmf of the leaf count: a geometric distribution on {1, 2, ...} with
/// success probability p = 1 - e^-omega.
pub fn lb_nl_log_pmf(n_leaves: u32, params: &LbPriorParams) -> f64 {
    assert!(n_leaves >= 1);
    -params.omega * (n_leaves - 1) as f64 + ln1m_exp(-params.omega)
}

/// Log pmf of the imbalance given the leaf count: proportional to
/// e^-(gamma delta) over the parity-constrained support {Delta_min,
/// Delta_min + 2, ..., n - 2}; the single-leaf tree is a point mass at 0.
///
/// The normalizer is summed from the dominant end (smallest delta for
/// gamma > 0, largest for gamma < 0), so evaluation is stable for either
/// sign of gamma and large n.
pub fn lb_delta_log_pmf(delta: u32, n_leaves: u32, params: &LbPriorParams) -> Result<f64, PriorError> {
    if !delta_in_support(n_leaves, delta) {
        return Err(PriorError::DeltaOutOfSupport { n_leaves, delta });
    }
    if n_leaves == 1 {
        return Ok(0.0);
    }
    let gamma = params.gamma;
    let delta_min = (n_leaves % 2) as f64;
    let delta_max = (n_leaves - 2) as f64;
    // Number of support points.
    let m = ((n_leaves - 2) / 2 + 1) as f64;
    let s = 2.0 * gamma.abs();
    let anchor = if gamma > 0.0 { delta_min } else { delta_max };
    let ln_geom = if m == 1.0 { 0.0 } else { ln1m_exp(-s * m) - ln1m_exp(-s) };
    let ln_c = -gamma * anchor + ln_geom;
    Ok(-gamma * delta as f64 - ln_c)
}

/// Log prior of a topology under the loss-based prior; depends on the tree
/// only through (n_leaves, delta).
pub fn lb_log_prior(stats: &TreeStats, params: &LbPriorParams) -> Result<f64, PriorError> {
    Ok(lb_nl_log_pmf(stats.n_leaves, params)
        + lb_delta_log_pmf(stats.delta, stats.n_leaves, params)?
        - count_trees_ln(stats.n_leaves, stats.delta)?)
}

/// Internal shape representation for topology sampling.
enum Shape {
    Leaf,
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    fn leaves(&self) -> u32 {
        match self {
            Shape::Leaf => 1,
            Shape::Split(l, r) => l.leaves() + r.leaves(),
        }
    }

    /// Materializes the shape as a `Tree` with placeholder splitting rules
    /// (topology sampling is rule-free; callers attach no data).
    fn into_tree(self) -> Tree {
        fn build(tree: &mut Tree, node: usize, shape: &Shape) {
            if let Shape::Split(l, r) = shape {
                tree.apply_move_in_place(&MoveDescriptor::grow(node, SplitRule::new(0, 0.5)))
                    .expect("grow on a leaf");
                let (left, right) = tree.children(node).expect("just grown");
                build(tree, left, l);
                build(tree, right, r);
            }
        }
        let mut tree = Tree::leaf(0.0);
        let root = tree.root();
        build(&mut tree, root, &self);
        tree
    }
}

const SAMPLE_RETRY_CAP: u32 = 10_000;

/// Draws a topology from the prior, truncated at `max_leaves` by rejection.
pub fn sample_tree_topology<R: Rng + ?Sized>(
    prior: &PriorSpec,
    rng: &mut R,
    max_leaves: u32,
) -> Result<Tree, PriorError> {
    if max_leaves == 0 {
        return Err(PriorError::MaxLeavesZero);
    }
    match prior {
        PriorSpec::Classic(p) => sample_classic(p, rng, max_leaves),
        PriorSpec::LossBased(p) => sample_loss_based(p, rng, max_leaves),
    }
}

/// Generative node-by-node sampling; an attempt that exceeds the leaf budget
/// is thrown away and restarted.
fn sample_classic<R: Rng + ?Sized>(
    params: &ClPriorParams,
    rng: &mut R,
    max_leaves: u32,
) -> Result<Tree, PriorError> {
    fn gen<R: Rng + ?Sized>(
        params: &ClPriorParams,
        rng: &mut R,
        depth: u32,
        leaves: &mut u32,
        max_leaves: u32,
    ) -> Option<Shape> {
        if rng.random::<f64>() < params.split_probability(depth) {
            // Splitting replaces one pending leaf with two.
            *leaves += 1;
            if *leaves > max_leaves {
                return None;
            }
            let l = gen(params, rng, depth + 1, leaves, max_leaves)?;
            let r = gen(params, rng, depth + 1, leaves, max_leaves)?;
            Some(Shape::Split(Box::new(l), Box::new(r)))
        } else {
            Some(Shape::Leaf)
        }
    }
    for _ in 0..SAMPLE_RETRY_CAP {
        let mut leaves = 1;
        if let Some(shape) = gen(params, rng, 0, &mut leaves, max_leaves) {
            return Ok(shape.into_tree());
        }
    }
    Err(PriorError::SamplingStalled(SAMPLE_RETRY_CAP))
}

/// Exact three-stage sampling: leaf count (geometric), imbalance given the
/// leaf count, then a uniform shape among those sharing (n_L, Delta).
fn sample_loss_based<R: Rng + ?Sized>(
    params: &LbPriorParams,
    rng: &mut R,
    max_leaves: u32,
) -> Result<Tree, PriorError> {
    let p = -(-params.omega).exp_m1();
    let geometric = Geometric::new(p).expect("omega > 0 gives p in (0,1)");
    let mut n = None;
    for _ in 0..SAMPLE_RETRY_CAP {
        let draw = 1 + geometric.sample(rng) as u32;
        if draw <= max_leaves {
            n = Some(draw);
            break;
        }
    }
    let n = n.ok_or(PriorError::SamplingStalled(SAMPLE_RETRY_CAP))?;
    if n == 1 {
        return Ok(Tree::leaf(0.0));
    }
    let delta = sample_delta(n, params.gamma, rng);
    let small = (n - delta) / 2;
    let large = (n + delta) / 2;
    let (n_left, n_right) = if delta == 0 || rng.random::<bool>() {
        (small, large)
    } else {
        (large, small)
    };
    let shape = Shape::Split(
        Box::new(uniform_shape(n_left, rng)),
        Box::new(uniform_shape(n_right, rng)),
    );
    debug_assert_eq!(shape.leaves(), n);
    Ok(shape.into_tree())
}

/// Inverse-cdf draw from the conditional imbalance pmf.
fn sample_delta<R: Rng + ?Sized>(n: u32, gamma: f64, rng: &mut R) -> u32 {
    let delta_min = n % 2;
    let m = (n - 2) / 2 + 1;
    // Normalized weights for delta = delta_min + 2k, anchored at the largest.
    let logits: Vec<f64> = (0..m).map(|k| -2.0 * gamma * k as f64).collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return delta_min + 2 * k as u32;
        }
    }
    delta_min + 2 * (m - 1)
}

/// Uniform draw over all binary shapes with `k` leaves, by recursively
/// splitting the leaf budget with Catalan-product weights.
fn uniform_shape<R: Rng + ?Sized>(k: u32, rng: &mut R) -> Shape {
    if k == 1 {
        return Shape::Leaf;
    }
    let ln_total = catalan_ln(k);
    let weights: Vec<f64> =
        (1..k).map(|i| (catalan_ln(i) + catalan_ln(k - i) - ln_total).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut left = k - 1;
    for (idx, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            left = idx as u32 + 1;
            break;
        }
    }
    Shape::Split(Box::new(uniform_shape(left, rng)), Box::new(uniform_shape(k - left, rng)))
}
