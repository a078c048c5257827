//! Sample-free estimation of the high-probability activation-pattern set.
//!
//! Layer by layer, the per-neuron activation marginals of the pushed-forward
//! input law split neurons into near-deterministic ones (binary entropy below
//! the layer threshold), which get pinned to their likely bit, and free ones,
//! which branch over both bits. Conditioning on each branch prefix yields the
//! next layer's pushforward, so the search expands a prefix tree whose leaves
//! are the estimated support.

use crate::distribution::marginal_active_prob;
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::model::{ActivationPattern, LayerMask, NetworkParams};
use nalgebra::DMatrix;
use std::collections::BTreeSet;

/// Binary entropy in bits; 0 at p in {0, 1}, 1 at p = 1/2.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Per-layer pinning threshold: either an entropy cutoff in bits, or a
/// probability margin delta (neurons with p >= 0.5 + delta pin to 1 and
/// p <= 0.5 - delta pin to 0, which is the entropy cutoff H(0.5 + delta)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerThreshold {
    EntropyBits(f64),
    ProbabilityMargin(f64),
}

impl LayerThreshold {
    /// The equivalent entropy cutoff in bits.
    pub fn entropy_bits(&self) -> Result<f64> {
        match *self {
            LayerThreshold::EntropyBits(tau) => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Error::Domain(format!(
                        "entropy threshold {tau} outside [0, 1] bits"
                    )));
                }
                Ok(tau)
            }
            LayerThreshold::ProbabilityMargin(delta) => {
                if !(delta > 0.0 && delta < 0.5) {
                    return Err(Error::Domain(format!(
                        "probability margin {delta} outside (0, 0.5)"
                    )));
                }
                Ok(binary_entropy(0.5 + delta))
            }
        }
    }
}

/// Thresholds for every hidden layer plus the branching caps.
#[derive(Clone, Debug)]
pub struct ThresholdSpec {
    pub per_layer: Vec<LayerThreshold>,
    /// Maximum free (branching) neurons per layer; lowest-entropy free
    /// neurons get pinned first when the cap binds.
    pub branch_cap: usize,
    /// Hard cap on the total number of patterns in the estimate.
    pub pattern_cap: usize,
}

pub const DEFAULT_BRANCH_CAP: usize = 10;
pub const DEFAULT_PATTERN_CAP: usize = 1 << 16;

impl ThresholdSpec {
    pub fn uniform(threshold: LayerThreshold, n_hidden_layers: usize) -> Self {
        ThresholdSpec {
            per_layer: vec![threshold; n_hidden_layers],
            branch_cap: DEFAULT_BRANCH_CAP,
            pattern_cap: DEFAULT_PATTERN_CAP,
        }
    }

    pub fn uniform_margin(delta: f64, n_hidden_layers: usize) -> Self {
        ThresholdSpec::uniform(LayerThreshold::ProbabilityMargin(delta), n_hidden_layers)
    }

    pub fn with_branch_cap(mut self, cap: usize) -> Self {
        self.branch_cap = cap;
        self
    }

    pub fn with_pattern_cap(mut self, cap: usize) -> Self {
        self.pattern_cap = cap;
        self
    }
}

/// One layer's branch expansion: the marginals it was computed from, which
/// bits were pinned, and the enumerated masks in canonical ascending order.
#[derive(Clone, Debug)]
pub struct LayerExpansion {
    pub marginals: Vec<f64>,
    /// `Some(bit)` for pinned neurons, `None` for free ones.
    pub pinned: Vec<Option<bool>>,
    pub masks: Vec<LayerMask>,
}

impl LayerExpansion {
    pub fn free_count(&self) -> usize {
        self.pinned.iter().filter(|p| p.is_none()).count()
    }
}

/// Expand one layer: pin neurons whose marginal entropy is below `tau_bits`
/// to their rounded bit, enforce `branch_cap` by additionally pinning the
/// lowest-entropy free neurons, and enumerate the rest over {0, 1}.
pub fn get_patterns(
    pushed: &GaussianMixture,
    tau_bits: f64,
    branch_cap: usize,
) -> LayerExpansion {
    expand_layer(&marginal_active_prob(pushed), tau_bits, branch_cap)
}

fn expand_layer(marginals: &[f64], tau_bits: f64, branch_cap: usize) -> LayerExpansion {
    let marginals = marginals.to_vec();
    let width = marginals.len();
    let mut pinned: Vec<Option<bool>> = marginals
        .iter()
        .map(|&p| {
            if binary_entropy(p) < tau_bits {
                Some(p > 0.5)
            } else {
                None
            }
        })
        .collect();

    let mut free: Vec<usize> = (0..width).filter(|&i| pinned[i].is_none()).collect();
    if free.len() > branch_cap {
        // Pin the least-random free neurons until the cap holds; ties break
        // on the neuron index for determinism.
        let mut by_entropy: Vec<usize> = free.clone();
        by_entropy.sort_by(|&a, &b| {
            binary_entropy(marginals[a])
                .partial_cmp(&binary_entropy(marginals[b]))
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in by_entropy.iter().take(free.len() - branch_cap) {
            pinned[i] = Some(marginals[i] > 0.5);
        }
        free = (0..width).filter(|&i| pinned[i].is_none()).collect();
    }

    let mut base = LayerMask::zeros(width);
    for (i, p) in pinned.iter().enumerate() {
        if *p == Some(true) {
            base.set(i, true);
        }
    }
    // Counting over the free indices in ascending neuron order produces masks
    // in canonical ascending order.
    let mut masks = Vec::with_capacity(1 << free.len());
    for combo in 0u64..(1 << free.len()) {
        let mut mask = base.clone();
        for (j, &i) in free.iter().enumerate() {
            if combo >> j & 1 == 1 {
                mask.set(i, true);
            }
        }
        masks.push(mask);
    }
    LayerExpansion {
        marginals,
        pinned,
        masks,
    }
}

/// Estimated support: the patterns plus the per-layer branching bookkeeping.
#[derive(Clone, Debug)]
pub struct SupportEstimate {
    /// Deterministic order: prefix order, then canonical mask order.
    pub patterns: Vec<ActivationPattern>,
    /// Diagonal-approximation mass of each pattern: the product over layers of
    /// the per-neuron bit probabilities along its branch, mixed over
    /// components. A cheap stand-in for the exact PMF when weighting is
    /// needed at scale.
    pub diag_weights: Vec<f64>,
    /// Largest free-neuron count seen at each hidden layer.
    pub free_counts: Vec<usize>,
    /// The entropy thresholds (in bits) that were applied per layer.
    pub thresholds_bits: Vec<f64>,
}

impl SupportEstimate {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Pushforward of one mixture component along a branch prefix, kept in factor
/// form: the preactivation law is N(mean, factor * factor^T). Propagating the
/// factor costs only a width-by-width product per layer, which is what makes
/// wide inputs (images) tractable.
#[derive(Clone)]
struct ComponentState {
    mean: nalgebra::DVector<f64>,
    factor: DMatrix<f64>,
    /// Running diagonal-approximation probability of the branch so far.
    diag_prob: f64,
}

#[derive(Clone)]
struct Branch {
    masks: Vec<LayerMask>,
    states: Vec<ComponentState>,
}

fn branch_marginals(weights: &[f64], states: &[ComponentState]) -> Vec<f64> {
    let width = states[0].mean.len();
    (0..width)
        .map(|j| {
            weights
                .iter()
                .zip(states)
                .map(|(&w, s)| {
                    let sd = s.factor.row(j).norm();
                    let p = if sd > 0.0 {
                        crate::normal::phi(s.mean[j] / sd)
                    } else if s.mean[j] > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    w * p
                })
                .sum()
        })
        .collect()
}

/// Per-component probability of one mask under the diagonal approximation.
fn diag_mask_prob(state: &ComponentState, mask: &LayerMask) -> f64 {
    let mut p = 1.0;
    for j in 0..mask.width() {
        let sd = state.factor.row(j).norm();
        let bit_p = if sd > 0.0 {
            crate::normal::phi(state.mean[j] / sd)
        } else if state.mean[j] > 0.0 {
            1.0
        } else {
            0.0
        };
        p *= if mask.bit(j) { bit_p } else { 1.0 - bit_p };
    }
    p
}

/// Branch-and-bound support estimation: expand layer 1 from the input
/// pushforward, then for every prefix condition the pushforward on the prefix
/// masks and expand the next layer, until all hidden layers are assigned.
pub fn estimate_support(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    thresholds: &ThresholdSpec,
) -> Result<SupportEstimate> {
    if gmm.dim() != net.input_dim() {
        return Err(Error::shape("input mixture dim", net.input_dim(), gmm.dim()));
    }
    let n_hidden = net.depth() - 1;
    if thresholds.per_layer.len() != n_hidden {
        return Err(Error::shape(
            "threshold count",
            n_hidden,
            thresholds.per_layer.len(),
        ));
    }
    let taus: Vec<f64> = thresholds
        .per_layer
        .iter()
        .map(LayerThreshold::entropy_bits)
        .collect::<Result<_>>()?;
    let weights = gmm.weights().to_vec();
    let slope = net.activation().negative_slope();

    // Layer-1 pushforward in factor form.
    let first = net.layers().first().expect("validated depth");
    let root_states: Vec<ComponentState> = gmm
        .components()
        .map(|(_, mean, cov)| {
            let a = crate::mixture::covariance_factor(cov)?;
            Ok(ComponentState {
                mean: &first.weight * mean + &first.bias,
                factor: &first.weight * a,
                diag_prob: 1.0,
            })
        })
        .collect::<Result<_>>()?;

    let marginals = branch_marginals(&weights, &root_states);
    let expansion = expand_layer(&marginals, taus[0], thresholds.branch_cap);
    let mut free_counts = vec![expansion.free_count()];
    let mut branches: Vec<Branch> = expansion
        .masks
        .into_iter()
        .map(|mask| {
            let states = root_states
                .iter()
                .map(|s| ComponentState {
                    mean: s.mean.clone(),
                    factor: s.factor.clone(),
                    diag_prob: diag_mask_prob(s, &mask),
                })
                .collect();
            Branch {
                masks: vec![mask],
                states,
            }
        })
        .collect();
    check_cap(branches.len(), thresholds.pattern_cap, 1)?;

    for layer_idx in 1..n_hidden {
        let layer = &net.layers()[layer_idx];
        let mut max_free = 0;
        let mut next = Vec::with_capacity(branches.len());
        for branch in &branches {
            let mask = branch.masks.last().expect("nonempty prefix");
            // Condition on the prefix: scale masked rows, apply the layer.
            let advanced: Vec<ComponentState> = branch
                .states
                .iter()
                .map(|s| {
                    let mut mean = s.mean.clone();
                    let mut factor = s.factor.clone();
                    for j in 0..mask.width() {
                        let m = if mask.bit(j) { 1.0 } else { slope };
                        mean[j] *= m;
                        factor.row_mut(j).scale_mut(m);
                    }
                    ComponentState {
                        mean: &layer.weight * mean + &layer.bias,
                        factor: &layer.weight * factor,
                        diag_prob: s.diag_prob,
                    }
                })
                .collect();
            let marginals = branch_marginals(&weights, &advanced);
            let expansion = expand_layer(&marginals, taus[layer_idx], thresholds.branch_cap);
            max_free = max_free.max(expansion.free_count());
            for mask in expansion.masks {
                let mut masks = branch.masks.clone();
                masks.push(mask.clone());
                let states = advanced
                    .iter()
                    .map(|s| ComponentState {
                        mean: s.mean.clone(),
                        factor: s.factor.clone(),
                        diag_prob: s.diag_prob * diag_mask_prob(s, &mask),
                    })
                    .collect();
                next.push(Branch { masks, states });
            }
            check_cap(next.len(), thresholds.pattern_cap, layer_idx + 1)?;
        }
        free_counts.push(max_free);
        branches = next;
    }

    let diag_weights = branches
        .iter()
        .map(|b| {
            weights
                .iter()
                .zip(&b.states)
                .map(|(&w, s)| w * s.diag_prob)
                .sum()
        })
        .collect();
    Ok(SupportEstimate {
        patterns: branches
            .into_iter()
            .map(|b| ActivationPattern::from_masks(b.masks))
            .collect(),
        diag_weights,
        free_counts,
        thresholds_bits: taus,
    })
}

fn check_cap(count: usize, cap: usize, layer: usize) -> Result<()> {
    if count > cap {
        return Err(Error::Capacity(format!(
            "support estimate exceeds {cap} patterns while expanding layer {layer}; \
             raise the threshold or lower the branch cap"
        )));
    }
    Ok(())
}

/// Fraction of test inputs whose forward activation pattern is a member of
/// the estimate (exact full-pattern match). Inputs are matrix rows.
pub fn coverage_proportion(
    estimate: &SupportEstimate,
    net: &NetworkParams,
    inputs: &DMatrix<f64>,
) -> Result<f64> {
    if inputs.nrows() == 0 {
        return Ok(0.0);
    }
    if inputs.ncols() != net.input_dim() {
        return Err(Error::shape("coverage inputs", net.input_dim(), inputs.ncols()));
    }
    let member: BTreeSet<&ActivationPattern> = estimate.patterns.iter().collect();
    let mut hits = 0usize;
    for r in 0..inputs.nrows() {
        let x = inputs.row(r).transpose();
        let pass = crate::model::forward(net, &x)?;
        if member.contains(&pass.pattern) {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.nrows() as f64)
}

/// Upper bound on any single pattern's probability from one layer's
/// marginals: min_i max(p_i, 1 - p_i).
pub fn prune_bound(marginals: &[f64]) -> f64 {
    marginals
        .iter()
        .map(|&p| p.max(1.0 - p))
        .fold(1.0, f64::min)
}

/// Upper bound on the probability of one specific layer mask:
/// min over neurons of P(bit_i takes the mask's value).
pub fn pattern_bound(marginals: &[f64], mask: &LayerMask) -> f64 {
    (0..mask.width())
        .map(|i| if mask.bit(i) { marginals[i] } else { 1.0 - marginals[i] })
        .fold(1.0, f64::min)
}
