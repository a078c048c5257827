//! Monte Carlo oracles and derived analyses: empirical pattern/output laws,
//! comparison metrics, and the probability-weighted distribution of Jacobian
//! singular values.

use crate::distribution::{PatternPmf, PmfMode};
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::model::{affine_params, forward, ActivationPattern, NetworkParams};
use crate::orthant::ProbResult;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Empirical law of (pattern, output) from forward-passing i.i.d. samples.
#[derive(Clone, Debug)]
pub struct EmpiricalLaw {
    pub pattern_counts: BTreeMap<ActivationPattern, u64>,
    /// One row of network output per sample.
    pub outputs: DMatrix<f64>,
    pub n: usize,
    /// Seed the samples were drawn with, for provenance.
    pub seed: u64,
}

impl EmpiricalLaw {
    pub fn pattern_frequency(&self, pattern: &ActivationPattern) -> f64 {
        self.pattern_counts
            .get(pattern)
            .map_or(0.0, |&c| c as f64 / self.n as f64)
    }

    /// Empirical CDF of a scalar output head at `point`.
    pub fn ecdf(&self, point: f64) -> f64 {
        assert_eq!(self.outputs.ncols(), 1, "ecdf needs a scalar output head");
        let below = (0..self.n).filter(|&r| self.outputs[(r, 0)] <= point).count();
        below as f64 / self.n as f64
    }

    /// Tallies as a PMF with binomial standard errors.
    pub fn to_pmf(&self) -> PatternPmf {
        let n = self.n as f64;
        let entries = self
            .pattern_counts
            .iter()
            .map(|(pattern, &count)| {
                let p = count as f64 / n;
                (
                    pattern.clone(),
                    ProbResult {
                        value: p,
                        std_error: (p * (1.0 - p) / n).sqrt(),
                        n_points: count,
                    },
                )
            })
            .collect();
        PatternPmf {
            entries,
            residual_mass: 0.0,
            mode: PmfMode::Exhaustive,
        }
    }
}

/// Draw `n` i.i.d. samples (rows) from the mixture: pick a component by
/// weight, then add a factor-transformed standard normal. Deterministic per
/// seed; Cholesky with an eigendecomposition fallback for singular
/// covariances.
pub fn mc_sample(gmm: &GaussianMixture, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let dim = gmm.dim();
    let factors: Vec<DMatrix<f64>> = gmm
        .components()
        .map(|(_, _, cov)| crate::mixture::covariance_factor(cov))
        .collect::<Result<_>>()?;
    let cum_weights: Vec<f64> = gmm
        .weights()
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, dim);
    let mut z = DVector::zeros(dim);
    for r in 0..n {
        let u: f64 = rng.random();
        let k = cum_weights.partition_point(|&c| c < u).min(gmm.len() - 1);
        for i in 0..dim {
            z[i] = rng.sample(StandardNormal);
        }
        let x = gmm.mean(k) + &factors[k] * &z;
        out.row_mut(r).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Forward-pass every sample row, tallying patterns and keeping outputs.
/// `seed` is recorded as provenance of the samples.
pub fn mc_empirical(net: &NetworkParams, samples: &DMatrix<f64>, seed: u64) -> Result<EmpiricalLaw> {
    if samples.ncols() != net.input_dim() {
        return Err(Error::shape("mc samples", net.input_dim(), samples.ncols()));
    }
    let n = samples.nrows();
    let mut counts: BTreeMap<ActivationPattern, u64> = BTreeMap::new();
    let mut outputs = DMatrix::zeros(n, net.output_dim());
    for r in 0..n {
        let x = samples.row(r).transpose();
        let pass = forward(net, &x)?;
        *counts.entry(pass.pattern).or_insert(0) += 1;
        outputs.row_mut(r).copy_from(&pass.output.transpose());
    }
    Ok(EmpiricalLaw {
        pattern_counts: counts,
        outputs,
        n,
        seed,
    })
}

/// Total variation distance between two pattern PMFs over the union of their
/// supports, with each PMF's residual mass assigned to a shared sink symbol.
pub fn tv_distance(a: &PatternPmf, b: &PatternPmf) -> f64 {
    let mut sum = 0.0;
    for (pattern, ra) in &a.entries {
        sum += (ra.value - b.probability(pattern)).abs();
    }
    for (pattern, rb) in &b.entries {
        if !a.entries.contains_key(pattern) {
            sum += rb.value;
        }
    }
    sum += (a.residual_mass - b.residual_mass).abs();
    0.5 * sum
}

/// Supremum gap between a computed CDF curve (points, values) and the
/// empirical CDF of a scalar output law, evaluated on the curve's grid.
pub fn ks_statistic(curve: &[(f64, f64)], law: &EmpiricalLaw) -> f64 {
    curve
        .iter()
        .map(|&(point, value)| (value - law.ecdf(point)).abs())
        .fold(0.0, f64::max)
}

/// Kolmogorov-Smirnov distance between two weighted sample sets, each
/// normalized to total mass 1.
pub fn ks_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let total_a: f64 = a.iter().map(|&(_, w)| w).sum();
    let total_b: f64 = b.iter().map(|&(_, w)| w).sum();
    if total_a <= 0.0 || total_b <= 0.0 {
        return if (total_a <= 0.0) == (total_b <= 0.0) { 0.0 } else { 1.0 };
    }
    let mut sa: Vec<(f64, f64)> = a.to_vec();
    let mut sb: Vec<(f64, f64)> = b.to_vec();
    sa.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    sb.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut ca, mut cb) = (0.0f64, 0.0f64);
    let mut gap = 0.0f64;
    while ia < sa.len() || ib < sb.len() {
        let va = sa.get(ia).map_or(f64::INFINITY, |p| p.0);
        let vb = sb.get(ib).map_or(f64::INFINITY, |p| p.0);
        let v = va.min(vb);
        while ia < sa.len() && sa[ia].0 <= v {
            ca += sa[ia].1;
            ia += 1;
        }
        while ib < sb.len() && sb[ib].0 <= v {
            cb += sb[ib].1;
            ib += 1;
        }
        gap = gap.max((ca / total_a - cb / total_b).abs());
    }
    gap
}

/// Jacobian of the network on the affine piece selected by `pattern`: the
/// matrix part of the depth-L affine map.
pub fn jacobian(net: &NetworkParams, pattern: &ActivationPattern) -> Result<DMatrix<f64>> {
    Ok(affine_params(net, pattern, net.depth())?.matrix)
}

/// Singular values of each pattern's Jacobian, each carrying an equal share
/// of the pattern's weight.
pub fn singular_value_samples(
    net: &NetworkParams,
    patterns: &[ActivationPattern],
    weights: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if patterns.len() != weights.len() {
        return Err(Error::shape("sv weights", patterns.len(), weights.len()));
    }
    let mut samples = Vec::new();
    for (pattern, &w) in patterns.iter().zip(weights) {
        let j = jacobian(net, pattern)?;
        let svs = j.svd(false, false).singular_values;
        let share = w / svs.len() as f64;
        for &s in svs.iter() {
            samples.push((s, share));
        }
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvSource {
    ExactSupport,
    MonteCarlo,
}

/// Histogram of probability-weighted singular values over fixed bin edges.
#[derive(Clone, Debug)]
pub struct SvHistogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    /// 1 minus the total weight supplied (support mass not estimated).
    pub residual: f64,
    pub source: SvSource,
}

/// `count` uniform bins covering [0, 1.05 * max_value].
pub fn sv_bin_edges(max_value: f64, count: usize) -> Vec<f64> {
    let hi = 1.05 * max_value.max(1e-12);
    (0..=count).map(|i| hi * i as f64 / count as f64).collect()
}

/// Histogram the probability-weighted singular values of the patterns'
/// Jacobians over the given edges; out-of-range values clamp into the end
/// bins.
pub fn sv_distribution(
    net: &NetworkParams,
    patterns: &[ActivationPattern],
    weights: &[f64],
    edges: &[f64],
    source: SvSource,
) -> Result<SvHistogram> {
    if edges.len() < 2 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let samples = singular_value_samples(net, patterns, weights)?;
    let mut masses = vec![0.0; edges.len() - 1];
    for (value, w) in &samples {
        let mut bin = match edges.binary_search_by(|e| e.partial_cmp(value).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        bin = bin.min(masses.len() - 1);
        masses[bin] += w;
    }
    let supplied: f64 = weights.iter().sum();
    Ok(SvHistogram {
        edges: edges.to_vec(),
        masses,
        residual: 1.0 - supplied,
        source,
    })
}
