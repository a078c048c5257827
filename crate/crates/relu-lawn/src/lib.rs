//! Trained ReLU / Leaky-ReLU feed-forward networks as random affine functions.
//!
//! Under a Gaussian-mixture input law a piecewise-affine network realizes one
//! affine map per activation pattern, so the pattern is a discrete random
//! variable and the output is a mixture of truncated Gaussians. This crate
//! computes those laws:
//!
//! - [`model`]: networks, activation patterns, per-pattern affine maps and
//!   region polytopes.
//! - [`orthant`]: Gaussian rectangle/orthant probabilities with error
//!   estimates, including degenerate-covariance handling.
//! - [`distribution`]: the pattern PMF, the output law as a truncated-Gaussian
//!   mixture, output CDFs, and per-neuron activation marginals.
//! - [`support`]: sample-free branch-and-bound estimation of the
//!   high-probability pattern set.
//! - [`analysis`]: Monte Carlo oracles, comparison metrics, and the
//!   probability-weighted Jacobian singular-value distribution.
//! - [`data`] / [`train`]: moons and IDX ingestion, diagonal-covariance EM,
//!   per-class Gaussian statistics, and a small deterministic MLP trainer.

// Index-based loops over matrix rows/columns are kept where they read better
// than iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod data;
pub mod distribution;
pub mod error;
pub mod io;
pub mod mixture;
pub mod model;
pub mod normal;
pub mod orthant;
pub mod support;
pub mod train;

pub use error::{Error, Result};
pub use mixture::{CovarianceKind, GaussianMixture};
pub use model::{
    affine_params, forward, mask_values, polytope_of, stacked_affine, Activation,
    ActivationPattern, AffineMap, ForwardPass, HalfspaceSystem, Layer, LayerMask, NetworkParams,
    StackedAffine,
};
pub use orthant::{
    mvn_rect, orthant_prob, orthant_prob_diag, reduce_degenerate, DegenerateReduction, ProbResult,
    QuadratureConfig,
};

pub use analysis::{
    jacobian, ks_statistic, ks_weighted, mc_empirical, mc_sample, singular_value_samples,
    sv_bin_edges, sv_distribution, tv_distance, EmpiricalLaw, SvHistogram, SvSource,
};
pub use data::{fit_class_gaussian, fit_gmm_em, load_idx, make_moons, Dataset, EmFit};
pub use distribution::{
    enumerate_pmf, marginal_active_prob, output_cdf, pattern_pmf, pattern_pushforward, tail_rates,
    truncated_mixture, PatternPmf, PatternSet, PmfMode, PushforwardDepth, PushforwardLaw,
    TruncatedComponent,
};
pub use support::{
    binary_entropy, coverage_proportion, estimate_support, get_patterns, pattern_bound,
    prune_bound, LayerExpansion, LayerThreshold, SupportEstimate, ThresholdSpec,
};
pub use train::{accuracy, glorot_init, loss_gradient, train_mlp, LossKind, TrainConfig};
