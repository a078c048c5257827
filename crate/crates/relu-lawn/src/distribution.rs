//! Distribution of the realized affine function and of the network output.
//!
//! Everything here reduces to Gaussian orthant/rectangle probabilities of
//! pushforward laws: the probability of an activation pattern is the orthant
//! mass of the stacked-preactivation Gaussian, the output law is a mixture of
//! truncated Gaussians with one cell per (mixture component, pattern), and the
//! output CDF augments the stack with the output rows and bounds them above.
//!
//! Every (component, pattern) cell integrates with a seed derived from the
//! top-level seed and the cell's canonical index, so results are identical
//! whether cells run serially or in parallel.

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::model::{affine_params, stacked_affine, ActivationPattern, NetworkParams};
use crate::normal::phi;
use crate::orthant::{mvn_rect, orthant_prob, ProbResult, QuadratureConfig};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Which stack a pushforward law covers: hidden preactivations only (depth
/// L-1, the PMF integrand) or hidden plus output rows (depth L, the CDF
/// integrand).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushforwardDepth {
    Hidden,
    Joint,
}

/// Gaussian-mixture law of a stacked preactivation map under one pattern.
#[derive(Clone, Debug)]
pub struct PushforwardLaw {
    pub mixture: GaussianMixture,
    pub depth: PushforwardDepth,
}

/// Push the input mixture through the stacked affine map selected by
/// `pattern`.
pub fn pattern_pushforward(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    pattern: &ActivationPattern,
    depth: PushforwardDepth,
) -> Result<PushforwardLaw> {
    if gmm.dim() != net.input_dim() {
        return Err(Error::shape("input mixture dim", net.input_dim(), gmm.dim()));
    }
    let d = match depth {
        PushforwardDepth::Hidden => net.depth() - 1,
        PushforwardDepth::Joint => net.depth(),
    };
    let stacked = stacked_affine(net, pattern, d)?;
    Ok(PushforwardLaw {
        mixture: gmm.push_affine(&stacked.matrix, &stacked.offset)?,
        depth,
    })
}

/// P(pattern) = sum_k alpha_k * P(stacked pushforward of component k lands in
/// the orthant of `pattern`). Quadrature errors add across components.
pub fn pattern_pmf(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    pattern: &ActivationPattern,
    cfg: &QuadratureConfig,
) -> Result<ProbResult> {
    if !pattern.matches_net(net) {
        return Err(Error::shape(
            "pattern bits",
            net.total_hidden(),
            pattern.total_bits(),
        ));
    }
    let pushed = pattern_pushforward(net, gmm, pattern, PushforwardDepth::Hidden)?;
    let bits = pattern.flat_bits();
    let mut total = ProbResult::zero();
    for (k, (weight, mean, cov)) in pushed.mixture.components().enumerate() {
        let cell_cfg = cfg.with_derived_seed(k as u64);
        let r = orthant_prob(mean, cov, &bits, &cell_cfg)?;
        total.accumulate(weight, &r);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PmfMode {
    Exhaustive,
    SupportRestricted,
}

/// Which patterns to evaluate.
#[derive(Clone, Debug)]
pub enum PatternSet {
    /// Every pattern of the network, refused above `max_bits` hidden neurons.
    Exhaustive { max_bits: usize },
    /// An explicit list (estimated support, user selection, ...).
    Explicit(Vec<ActivationPattern>),
}

impl PatternSet {
    /// Exhaustive enumeration with the default 16-bit cap.
    pub fn exhaustive() -> Self {
        PatternSet::Exhaustive { max_bits: 16 }
    }
}

/// PMF over activation patterns, with the unassigned residual mass.
#[derive(Clone, Debug)]
pub struct PatternPmf {
    pub entries: BTreeMap<ActivationPattern, ProbResult>,
    pub residual_mass: f64,
    pub mode: PmfMode,
}

impl PatternPmf {
    pub fn total_mass(&self) -> f64 {
        self.entries.values().map(|r| r.value).sum()
    }

    /// Linear sum of per-entry standard errors.
    pub fn combined_std_error(&self) -> f64 {
        self.entries.values().map(|r| r.std_error).sum()
    }

    pub fn probability(&self, pattern: &ActivationPattern) -> f64 {
        self.entries.get(pattern).map_or(0.0, |r| r.value)
    }
}

/// Evaluate the PMF over a pattern set. Exhaustive mode walks patterns in
/// canonical order; every pattern gets a seed derived from its position, so
/// the parallel evaluation matches a serial one bit for bit.
pub fn enumerate_pmf(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    set: &PatternSet,
    cfg: &QuadratureConfig,
) -> Result<PatternPmf> {
    let (patterns, mode) = match set {
        PatternSet::Exhaustive { max_bits } => {
            let bits = net.total_hidden();
            if bits > *max_bits {
                return Err(Error::Capacity(format!(
                    "exhaustive enumeration over {bits} hidden bits exceeds the cap of {max_bits}; \
                     restrict to an estimated support instead"
                )));
            }
            (
                ActivationPattern::enumerate_all(&net.hidden_widths()).collect::<Vec<_>>(),
                PmfMode::Exhaustive,
            )
        }
        PatternSet::Explicit(list) => {
            for p in list {
                if !p.matches_net(net) {
                    return Err(Error::shape(
                        "pattern bits",
                        net.total_hidden(),
                        p.total_bits(),
                    ));
                }
            }
            (list.clone(), PmfMode::SupportRestricted)
        }
    };

    let evaluated: Vec<(ActivationPattern, ProbResult)> = patterns
        .into_par_iter()
        .enumerate()
        .map(|(idx, pattern)| {
            let cell_cfg = cfg.with_derived_seed(idx as u64);
            pattern_pmf(net, gmm, &pattern, &cell_cfg).map(|r| (pattern, r))
        })
        .collect::<Result<_>>()?;

    let mut entries = BTreeMap::new();
    for (pattern, r) in evaluated {
        entries.entry(pattern).or_insert(r);
    }
    let total: f64 = entries.values().map(|r| r.value).sum();
    Ok(PatternPmf {
        entries,
        residual_mass: 1.0 - total,
        mode,
    })
}

/// Per-neuron activation probabilities of a pushed layer law, using only the
/// diagonal covariance entries: p_j = sum_k alpha_k Phi(mu_kj / sigma_kj).
/// A neuron with zero variance is deterministic: 1 if its mean is positive,
/// else 0.
pub fn marginal_active_prob(pushed: &GaussianMixture) -> Vec<f64> {
    let dim = pushed.dim();
    (0..dim)
        .map(|j| {
            pushed
                .components()
                .map(|(w, mean, cov)| {
                    let var = cov[(j, j)].max(0.0);
                    let p = if var > 0.0 {
                        phi(mean[j] / var.sqrt())
                    } else if mean[j] > 0.0 {
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

/// P(pattern in support AND output <= point), the truncated-mixture CDF
/// restricted to `support`. One rectangle integral per (component, pattern)
/// cell: hidden rows are sign-constrained by the pattern, output rows are
/// bounded above by `point`.
pub fn output_cdf(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    support: &[ActivationPattern],
    point: &DVector<f64>,
    cfg: &QuadratureConfig,
) -> Result<ProbResult> {
    if point.len() != net.output_dim() {
        return Err(Error::shape("cdf point", net.output_dim(), point.len()));
    }
    let n_out = net.output_dim();
    let k_comps = gmm.len();
    let mut total = ProbResult::zero();
    for (i, pattern) in support.iter().enumerate() {
        if !pattern.matches_net(net) {
            return Err(Error::shape(
                "pattern bits",
                net.total_hidden(),
                pattern.total_bits(),
            ));
        }
        let pushed = pattern_pushforward(net, gmm, pattern, PushforwardDepth::Joint)?;
        let hidden = pattern.total_bits();
        let bits = pattern.flat_bits();
        let mut lower = Vec::with_capacity(hidden + n_out);
        let mut upper = Vec::with_capacity(hidden + n_out);
        for &bit in &bits {
            if bit {
                lower.push(0.0);
                upper.push(f64::INFINITY);
            } else {
                lower.push(f64::NEG_INFINITY);
                upper.push(0.0);
            }
        }
        for j in 0..n_out {
            lower.push(f64::NEG_INFINITY);
            upper.push(point[j]);
        }
        for (k, (weight, mean, cov)) in pushed.mixture.components().enumerate() {
            let cell_cfg = cfg.with_derived_seed((i * k_comps + k) as u64);
            let r = mvn_rect(&lower, &upper, mean, cov, &cell_cfg)?;
            total.accumulate(weight, &r);
        }
    }
    Ok(total)
}

/// One cell of the output law: mixture component `component` restricted to the
/// region of `pattern`, carrying its own Gaussian moments and cell mass.
#[derive(Clone, Debug)]
pub struct TruncatedComponent {
    pub component: usize,
    pub pattern: ActivationPattern,
    /// Output-space mean C_L mu_k + d_L of the untruncated cell Gaussian.
    pub mean: DVector<f64>,
    /// Output-space covariance C_L Sigma_k C_L^T (possibly singular).
    pub covariance: DMatrix<f64>,
    /// alpha_k * P(component k lands in the pattern's region).
    pub mass: ProbResult,
}

/// Decompose the output law over `support` into its truncated-Gaussian cells.
/// Summing cell masses over a pattern reproduces the pattern's PMF value
/// (same integrals, same derived seeds).
pub fn truncated_mixture(
    net: &NetworkParams,
    gmm: &GaussianMixture,
    support: &[ActivationPattern],
    cfg: &QuadratureConfig,
) -> Result<Vec<TruncatedComponent>> {
    let mut cells = Vec::with_capacity(support.len() * gmm.len());
    for (i, pattern) in support.iter().enumerate() {
        let pushed = pattern_pushforward(net, gmm, pattern, PushforwardDepth::Hidden)?;
        let out_map = affine_params(net, pattern, net.depth())?;
        let bits = pattern.flat_bits();
        for (k, (weight, mean, cov)) in pushed.mixture.components().enumerate() {
            let cell_cfg = cfg.with_derived_seed(i as u64).with_derived_seed(k as u64);
            let mut mass = ProbResult::zero();
            mass.accumulate(weight, &orthant_prob(mean, cov, &bits, &cell_cfg)?);
            let out_mean = &out_map.matrix * gmm.mean(k) + &out_map.offset;
            let out_cov = &out_map.matrix * gmm.covariance(k) * out_map.matrix.transpose();
            cells.push(TruncatedComponent {
                component: k,
                pattern: pattern.clone(),
                mean: out_mean,
                covariance: out_cov,
                mass,
            });
        }
    }
    Ok(cells)
}

/// Class-conditional error rates of a scalar-output (binary) head at a
/// decision threshold: mass above the threshold for class 0, mass at or below
/// it for class 1. Exactly two classes, each with its own input law and
/// support.
pub fn tail_rates(
    net: &NetworkParams,
    classes: &[(GaussianMixture, Vec<ActivationPattern>)],
    threshold: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<ProbResult>> {
    if net.output_dim() != 1 {
        return Err(Error::shape("tail rates output dim", 1, net.output_dim()));
    }
    if classes.len() != 2 {
        return Err(Error::Domain(format!(
            "tail rates need exactly 2 classes, got {}",
            classes.len()
        )));
    }
    let mut rates = Vec::with_capacity(2);
    for (c, (gmm, support)) in classes.iter().enumerate() {
        let class_cfg = cfg.with_derived_seed(c as u64);
        let below = output_cdf(
            net,
            gmm,
            support,
            &DVector::from_column_slice(&[threshold]),
            &class_cfg,
        )?;
        let rate = if c == 0 {
            // Wrong side for class 0 is above the threshold; total support
            // mass comes from the same integrals with a vacuous output bound.
            let total = output_cdf(
                net,
                gmm,
                support,
                &DVector::from_column_slice(&[f64::INFINITY]),
                &class_cfg,
            )?;
            ProbResult {
                value: (total.value - below.value).clamp(0.0, 1.0),
                std_error: total.std_error + below.std_error,
                n_points: total.n_points + below.n_points,
            }
        } else {
            below
        };
        rates.push(rate);
    }
    Ok(rates)
}
