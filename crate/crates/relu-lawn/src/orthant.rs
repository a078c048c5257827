//! Gaussian rectangle and orthant probabilities.
//!
//! The integrator follows the separation-of-variables scheme that is standard
//! for multivariate normal probabilities: factor the covariance with a pivoted
//! Cholesky, reorder variables so that the narrowest conditional intervals are
//! integrated first, transform to the unit cube by sequential conditioning, and
//! average randomized Kronecker point sets over independent shifts to get both
//! the estimate and a standard error.
//!
//! Rank-deficient covariances are handled inside the factorization: once the
//! remaining conditional variances vanish, the leftover rows become indicator
//! constraints on the already-sampled variables (the "generalized Cholesky"
//! route). Coordinate-level degeneracy can also be stripped up front with
//! [`reduce_degenerate`], which is what [`orthant_prob`] does.

use crate::error::{Error, Result};
use crate::normal::{phi, phi_inv, truncated_normal_mean};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A probability estimate with its quadrature error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbResult {
    /// Estimated probability, clamped to [0, 1].
    pub value: f64,
    /// Standard error across the randomized shifts (0 for exact paths).
    pub std_error: f64,
    /// Total integration points spent.
    pub n_points: u64,
}

impl ProbResult {
    pub fn exact(value: f64) -> Self {
        ProbResult {
            value,
            std_error: 0.0,
            n_points: 0,
        }
    }

    /// Accumulate `weight * other` into `self`, adding errors linearly
    /// (conservative for positively dependent cells).
    pub fn accumulate(&mut self, weight: f64, other: &ProbResult) {
        self.value += weight * other.value;
        self.std_error += weight * other.std_error;
        self.n_points += other.n_points;
    }

    pub fn zero() -> Self {
        ProbResult::exact(0.0)
    }
}

/// Quadrature settings. Defaults target roughly 1e-3 accuracy at the
/// dimensions a desk-scale experiment needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Points per randomized shift.
    pub sample_budget: usize,
    /// Independent randomizations; at least 2 so an error estimate exists.
    pub n_shifts: usize,
    /// Base seed; every derived stream is a pure function of it.
    pub seed: u64,
    /// Relative eigenvalue / pivot cutoff for degenerate directions.
    pub rank_tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            sample_budget: 8192,
            n_shifts: 8,
            seed: 0,
            rank_tolerance: 1e-10,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_budget < 1 {
            return Err(Error::Domain("sample_budget must be >= 1".into()));
        }
        if self.n_shifts < 2 {
            return Err(Error::Domain(
                "n_shifts must be >= 2 to estimate a standard error".into(),
            ));
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::Domain("rank_tolerance must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Same configuration with a seed derived for a sub-computation, so that
    /// parallel cells stay independent of scheduling.
    pub fn with_derived_seed(&self, stream: u64) -> Self {
        QuadratureConfig {
            seed: derive_seed(self.seed, stream),
            ..*self
        }
    }
}

/// SplitMix64 finalizer: cheap, well-mixed seed derivation by counter.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of stripping near-deterministic directions out of a Gaussian.
///
/// Coordinates whose projected variance vanishes are pinned at their mean;
/// `fixed_signs` records the orthant bit each pinned coordinate resolves to
/// (mean > 0 maps to bit 1, anything else to bit 0). The remaining
/// coordinates form the full-variance subproblem.
#[derive(Clone, Debug)]
pub struct DegenerateReduction {
    /// n x r factor: X has the law of mean + transform * Z, Z standard normal.
    pub transform: DMatrix<f64>,
    /// Indices of coordinates that keep randomness.
    pub kept_coords: Vec<usize>,
    pub reduced_mean: DVector<f64>,
    pub reduced_cov: DMatrix<f64>,
    /// Per original coordinate: `Some(bit)` when deterministic, else `None`.
    pub fixed_signs: Vec<Option<bool>>,
}

/// Eigendecompose `sigma`, drop directions below `rank_tolerance` relative to
/// the largest eigenvalue, and report which coordinates become deterministic.
pub fn reduce_degenerate(
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rank_tolerance: f64,
) -> Result<DegenerateReduction> {
    let n = mean.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::shape("reduce_degenerate covariance", n, sigma.nrows()));
    }
    let eig = sigma.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let neg_floor = rank_tolerance * lambda_max + 1e-30;
    for &l in eig.eigenvalues.iter() {
        if l < -neg_floor {
            return Err(Error::Domain(format!(
                "covariance is not positive semidefinite: eigenvalue {l} below {}",
                -neg_floor
            )));
        }
    }
    let cut = rank_tolerance * lambda_max;
    let kept_dirs: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > cut).collect();
    let rank = kept_dirs.len();
    let mut transform = DMatrix::zeros(n, rank);
    for (col, &j) in kept_dirs.iter().enumerate() {
        let scale = eig.eigenvalues[j].sqrt();
        transform
            .column_mut(col)
            .copy_from(&(eig.eigenvectors.column(j) * scale));
    }
    let projected = &transform * transform.transpose();
    let mut fixed_signs = vec![None; n];
    let mut kept_coords = Vec::new();
    for i in 0..n {
        if projected[(i, i)] <= cut {
            fixed_signs[i] = Some(mean[i] > 0.0);
        } else {
            kept_coords.push(i);
        }
    }
    let reduced_mean = DVector::from_fn(kept_coords.len(), |i, _| mean[kept_coords[i]]);
    let mut reduced_cov = DMatrix::zeros(kept_coords.len(), kept_coords.len());
    for (i, &ci) in kept_coords.iter().enumerate() {
        for (j, &cj) in kept_coords.iter().enumerate() {
            reduced_cov[(i, j)] = projected[(ci, cj)];
        }
    }
    Ok(DegenerateReduction {
        transform,
        kept_coords,
        reduced_mean,
        reduced_cov,
        fixed_signs,
    })
}

/// A rectangle problem after centering, pivoting, and factorization.
struct PreparedRect {
    /// Centered bounds in pivot order.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Row i of the factor; rows past `rank` only carry `rank` coefficients.
    factor: Vec<Vec<f64>>,
    /// Conditional standard deviations of the first `rank` rows.
    sd: Vec<f64>,
    rank: usize,
}

fn prepare_rect(
    lower: &[f64],
    upper: &[f64],
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rank_tolerance: f64,
) -> Result<PreparedRect> {
    let n = mean.len();
    let mut a: Vec<f64> = (0..n).map(|i| lower[i] - mean[i]).collect();
    let mut b: Vec<f64> = (0..n).map(|i| upper[i] - mean[i]).collect();
    let mut sig = sigma.clone();
    let scale = (0..n)
        .fold(0.0f64, |m, i| m.max(sig[(i, i)].abs()))
        .max(1e-300);
    let tol = rank_tolerance * scale;

    let mut factor = vec![vec![0.0f64; n]; n];
    let mut sd = vec![0.0f64; n];
    let mut y_star = vec![0.0f64; n];
    let mut rank = n;
    // Residual variances of a PSD matrix only go negative through rounding,
    // which stays orders of magnitude above the machine-level noise a genuine
    // indefinite matrix produces.
    let indefinite = -1e-6 * scale;

    for i in 0..n {
        // Select the remaining variable with the narrowest conditional
        // interval, estimated at the conditional means of the earlier ones.
        let mut best: Option<usize> = None;
        let mut best_width = f64::INFINITY;
        for j in i..n {
            let mut v = sig[(j, j)];
            for k in 0..i {
                v -= factor[j][k] * factor[j][k];
            }
            if v < indefinite {
                return Err(Error::Domain(format!(
                    "covariance is not positive semidefinite: conditional variance {v}"
                )));
            }
            if v <= tol {
                continue;
            }
            let s = v.sqrt();
            let mut ct = 0.0;
            for k in 0..i {
                ct += factor[j][k] * y_star[k];
            }
            let width = phi((b[j] - ct) / s) - phi((a[j] - ct) / s);
            if width < best_width {
                best_width = width;
                best = Some(j);
            }
        }
        let Some(j) = best else {
            rank = i;
            break;
        };
        if j != i {
            a.swap(i, j);
            b.swap(i, j);
            factor.swap(i, j);
            sig.swap_rows(i, j);
            sig.swap_columns(i, j);
        }
        let mut v = sig[(i, i)];
        for k in 0..i {
            v -= factor[i][k] * factor[i][k];
        }
        let s = v.max(0.0).sqrt();
        sd[i] = s;
        factor[i][i] = s;
        for r in i + 1..n {
            let mut c = sig[(r, i)];
            for k in 0..i {
                c -= factor[i][k] * factor[r][k];
            }
            factor[r][i] = c / s;
        }
        let mut ct = 0.0;
        for k in 0..i {
            ct += factor[i][k] * y_star[k];
        }
        y_star[i] = truncated_normal_mean((a[i] - ct) / s, (b[i] - ct) / s);
    }

    Ok(PreparedRect {
        lower: a,
        upper: b,
        factor,
        sd,
        rank,
    })
}

/// First `n` primes, used as the Kronecker sequence generators.
fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut cand = 2u64;
    while primes.len() < n {
        if primes.iter().all(|&p| !cand.is_multiple_of(p)) {
            primes.push(cand);
        }
        cand += 1;
    }
    primes
}

const T_CLAMP: f64 = 1e-16;

fn integrate_rect(p: &PreparedRect, cfg: &QuadratureConfig) -> ProbResult {
    let n = p.lower.len();
    let rank = p.rank;

    // Fully deterministic: every row is an indicator at the mean.
    if rank == 0 {
        let inside = (0..n).all(|i| p.lower[i] < 0.0 && p.upper[i] >= 0.0);
        return ProbResult::exact(if inside { 1.0 } else { 0.0 });
    }

    let d0 = phi(p.lower[0] / p.sd[0]);
    let e0 = phi(p.upper[0] / p.sd[0]);

    // The first variable integrates in closed form; sampled dimensions are
    // the remaining ones, plus the last random variable when indicator rows
    // still depend on it.
    let qdims = if rank == n { rank - 1 } else { rank };
    if qdims == 0 {
        return ProbResult::exact((e0 - d0).max(0.0));
    }

    let generators: Vec<f64> = first_primes(qdims)
        .into_iter()
        .map(|q| (q as f64).sqrt())
        .collect();

    let budget = cfg.sample_budget;
    let mut shift_means = Vec::with_capacity(cfg.n_shifts);
    let mut w = vec![0.0f64; qdims];
    let mut y = vec![0.0f64; rank];

    for shift in 0..cfg.n_shifts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, shift as u64));
        let delta: Vec<f64> = (0..qdims).map(|_| rng.random::<f64>()).collect();
        let mut mean_f = 0.0;
        for k in 1..=budget {
            for j in 0..qdims {
                let t = (k as f64) * generators[j] + delta[j];
                w[j] = (2.0 * t.fract() - 1.0).abs();
            }
            let mut f = (e0 - d0).max(0.0);
            let mut prev_d = d0;
            let mut prev_e = e0;
            for i in 1..rank {
                if f <= 0.0 {
                    f = 0.0;
                    break;
                }
                let t = (prev_d + w[i - 1] * (prev_e - prev_d)).clamp(T_CLAMP, 1.0 - T_CLAMP);
                y[i - 1] = phi_inv(t);
                let row = &p.factor[i];
                let mut ct = 0.0;
                for k2 in 0..i {
                    ct += row[k2] * y[k2];
                }
                let d = phi((p.lower[i] - ct) / p.sd[i]);
                let e = phi((p.upper[i] - ct) / p.sd[i]);
                f *= (e - d).max(0.0);
                prev_d = d;
                prev_e = e;
            }
            if rank < n && f > 0.0 {
                let t = (prev_d + w[rank - 1] * (prev_e - prev_d)).clamp(T_CLAMP, 1.0 - T_CLAMP);
                y[rank - 1] = phi_inv(t);
                for row_idx in rank..n {
                    let row = &p.factor[row_idx];
                    let mut ct = 0.0;
                    for k2 in 0..rank {
                        ct += row[k2] * y[k2];
                    }
                    if !(ct > p.lower[row_idx] && ct <= p.upper[row_idx]) {
                        f = 0.0;
                        break;
                    }
                }
            }
            mean_f += (f - mean_f) / (k as f64);
        }
        shift_means.push(mean_f);
    }

    let s = cfg.n_shifts as f64;
    let mean: f64 = shift_means.iter().sum::<f64>() / s;
    let var: f64 = shift_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (s - 1.0);
    ProbResult {
        value: mean.clamp(0.0, 1.0),
        std_error: (var / s).sqrt(),
        n_points: (budget * cfg.n_shifts) as u64,
    }
}

/// Estimate P(lower <= X <= upper) for X ~ N(mean, sigma).
///
/// Bounds may be infinite. `sigma` may be rank deficient; directions without
/// variance turn into indicator constraints. Deterministic for a fixed
/// `cfg.seed` regardless of parallelism in the caller.
pub fn mvn_rect(
    lower: &[f64],
    upper: &[f64],
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cfg: &QuadratureConfig,
) -> Result<ProbResult> {
    cfg.validate()?;
    let n = mean.len();
    if lower.len() != n {
        return Err(Error::shape("mvn_rect lower bound", n, lower.len()));
    }
    if upper.len() != n {
        return Err(Error::shape("mvn_rect upper bound", n, upper.len()));
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::shape("mvn_rect covariance", n, sigma.nrows()));
    }
    if n == 0 {
        return Ok(ProbResult::exact(1.0));
    }
    for i in 0..n {
        if lower[i].is_nan() || upper[i].is_nan() {
            return Err(Error::Domain(format!("bound {i} is NaN")));
        }
        if lower[i] >= upper[i] {
            return Err(Error::Domain(format!(
                "empty box: lower[{i}] = {} >= upper[{i}] = {}",
                lower[i], upper[i]
            )));
        }
    }

    if n == 1 {
        let v = sigma[(0, 0)];
        if v < -cfg.rank_tolerance * v.abs().max(1e-300) {
            return Err(Error::Domain(format!("negative variance {v}")));
        }
        let s = v.max(0.0).sqrt();
        if s == 0.0 {
            let inside = lower[0] < mean[0] && mean[0] <= upper[0];
            return Ok(ProbResult::exact(if inside { 1.0 } else { 0.0 }));
        }
        let value = (phi((upper[0] - mean[0]) / s) - phi((lower[0] - mean[0]) / s)).max(0.0);
        return Ok(ProbResult::exact(value));
    }

    let prepared = prepare_rect(lower, upper, mean, sigma, cfg.rank_tolerance)?;
    Ok(integrate_rect(&prepared, cfg))
}

/// P(X lands in the orthant with signs `bits`), X ~ N(mean, sigma).
///
/// Computed by sign-flipping to the all-positive orthant and integrating over
/// [0, inf)^n, with deterministic directions stripped first: a pinned
/// coordinate inconsistent with its requested bit makes the probability
/// exactly 0.
pub fn orthant_prob(
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    bits: &[bool],
    cfg: &QuadratureConfig,
) -> Result<ProbResult> {
    cfg.validate()?;
    let n = mean.len();
    if bits.len() != n {
        return Err(Error::shape("orthant bits", n, bits.len()));
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::shape("orthant covariance", n, sigma.nrows()));
    }
    // Strip deterministic coordinates first; their bit is decided by the sign
    // of the mean (zero resolves to bit 0), and any mismatch with the request
    // makes the probability exactly 0.
    let red = reduce_degenerate(mean, sigma, cfg.rank_tolerance)?;
    for (i, fixed) in red.fixed_signs.iter().enumerate() {
        if let Some(bit) = fixed {
            if *bit != bits[i] {
                return Ok(ProbResult::zero());
            }
        }
    }
    let m = red.kept_coords.len();
    if m == 0 {
        return Ok(ProbResult::exact(1.0));
    }
    // Sign-flip the remaining coordinates to the all-positive orthant; the
    // boundary is measure zero there.
    let sign = |i: usize| if bits[red.kept_coords[i]] { 1.0 } else { -1.0 };
    let flipped_mean = DVector::from_fn(m, |i, _| sign(i) * red.reduced_mean[i]);
    let flipped_sigma = DMatrix::from_fn(m, m, |i, j| sign(i) * sign(j) * red.reduced_cov[(i, j)]);
    let lower = vec![0.0; m];
    let upper = vec![f64::INFINITY; m];
    mvn_rect(&lower, &upper, &flipped_mean, &flipped_sigma, cfg)
}

/// Exact orthant probability for independent coordinates: the product of
/// per-coordinate normal CDFs. No quadrature error.
pub fn orthant_prob_diag(
    mean: &DVector<f64>,
    sigma_diag: &DVector<f64>,
    bits: &[bool],
) -> Result<f64> {
    let n = mean.len();
    if sigma_diag.len() != n {
        return Err(Error::shape("diagonal sigma", n, sigma_diag.len()));
    }
    if bits.len() != n {
        return Err(Error::shape("orthant bits", n, bits.len()));
    }
    let mut value = 1.0;
    for i in 0..n {
        let sd = sigma_diag[i];
        if sd <= 0.0 {
            return Err(Error::Domain(format!(
                "diagonal standard deviation {sd} at coordinate {i} must be positive"
            )));
        }
        let s = if bits[i] { 1.0 } else { -1.0 };
        value *= phi(s * mean[i] / sd);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn default_cfg(seed: u64) -> QuadratureConfig {
        QuadratureConfig {
            seed,
            ..QuadratureConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            n_shifts: 1,
            ..QuadratureConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig {
            sample_budget: 0,
            ..QuadratureConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig {
            rank_tolerance: 0.0,
            ..QuadratureConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rect_diagonal_factorizes() {
        let mean = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0, 0.25]));
        let lower = [-1.0, -2.0, f64::NEG_INFINITY];
        let upper = [1.0, f64::INFINITY, 2.5];
        let r = mvn_rect(&lower, &upper, &mean, &sigma, &default_cfg(11)).unwrap();
        let expect: f64 = [
            phi((1.0 - 0.5) / 1.0) - phi((-1.0 - 0.5) / 1.0),
            1.0 - phi((-2.0 + 1.0) / 2.0),
            phi((2.5 - 2.0) / 0.5),
        ]
        .iter()
        .product();
        assert!(
            (r.value - expect).abs() <= (3.0 * r.std_error).max(1e-6),
            "{} vs {expect} (se {})",
            r.value,
            r.std_error
        );
    }

    #[test]
    fn bivariate_orthant_closed_form() {
        // P(X > 0, Y > 0) = 1/4 + asin(rho) / (2 pi) for standard normals.
        for &rho in &[-0.9, -0.5, 0.0, 0.5, 0.9] {
            let mean = DVector::zeros(2);
            let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            let lower = [0.0, 0.0];
            let upper = [f64::INFINITY, f64::INFINITY];
            let r = mvn_rect(&lower, &upper, &mean, &sigma, &default_cfg(5)).unwrap();
            let expect = 0.25 + rho.asin() / (2.0 * PI);
            assert!(
                (r.value - expect).abs() < 1e-4,
                "rho {rho}: {} vs {expect}",
                r.value
            );
        }
    }

    /// Brute-force Simpson grid for the positive orthant of an exchangeable
    /// 3-d Gaussian; independent of the quadrature path.
    fn orthant3_grid_oracle(rho: f64) -> f64 {
        let n = 201;
        let hi = 8.0;
        let h = hi / (n - 1) as f64;
        let det = 1.0 + 2.0 * rho.powi(3) - 3.0 * rho * rho;
        // Inverse of the exchangeable correlation matrix.
        let a = (1.0 - rho * rho) / det;
        let b = (rho * rho - rho) / det;
        let norm = 1.0 / ((2.0 * PI).powf(1.5) * det.sqrt());
        let weight = |i: usize| -> f64 {
            if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut sum = 0.0;
        for i in 0..n {
            let x = i as f64 * h;
            for j in 0..n {
                let y = j as f64 * h;
                for k in 0..n {
                    let z = k as f64 * h;
                    let quad = a * (x * x + y * y + z * z) + 2.0 * b * (x * y + x * z + y * z);
                    sum += weight(i) * weight(j) * weight(k) * (-0.5 * quad).exp();
                }
            }
        }
        sum * norm * (h / 3.0).powi(3)
    }

    #[test]
    fn exchangeable_3d_matches_grid_oracle() {
        let rho: f64 = 0.3;
        let oracle = orthant3_grid_oracle(rho);
        // The exchangeable case also has the closed form 1/8 + 3 asin(rho)/(4 pi),
        // which pins the grid oracle itself.
        let closed = 0.125 + 3.0 * rho.asin() / (4.0 * PI);
        assert!(
            (oracle - closed).abs() < 5e-5,
            "grid oracle drifted: {oracle} vs {closed}"
        );
        let mean = DVector::zeros(3);
        let sigma = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { rho });
        let r = orthant_prob(&mean, &sigma, &[true, true, true], &default_cfg(3)).unwrap();
        assert!(
            (r.value - oracle).abs() < 5e-4,
            "{} vs {oracle} (se {})",
            r.value,
            r.std_error
        );
    }

    #[test]
    fn standard_orthants_are_quarters() {
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        for bits in [[false, false], [false, true], [true, false], [true, true]] {
            let r = orthant_prob(&mean, &sigma, &bits, &default_cfg(1)).unwrap();
            assert!(
                (r.value - 0.25).abs() < 1e-3,
                "bits {bits:?}: {} (se {})",
                r.value,
                r.std_error
            );
        }
    }

    #[test]
    fn orthant_sign_symmetry() {
        let mean = DVector::from_column_slice(&[0.4, -0.7, 0.2]);
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3, -0.2, 0.3, 2.0, 0.4, -0.2, 0.4, 0.5],
        );
        let bits = [true, false, true];
        let flipped: Vec<bool> = bits.iter().map(|b| !b).collect();
        let neg_mean = -mean.clone();
        let a = orthant_prob(&mean, &sigma, &bits, &default_cfg(9)).unwrap();
        let b = orthant_prob(&neg_mean, &sigma, &flipped, &default_cfg(10)).unwrap();
        let tol = 3.0 * (a.std_error + b.std_error) + 1e-9;
        assert!((a.value - b.value).abs() <= tol, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn diag_engine_exact_and_cross_checked() {
        let mean = DVector::from_column_slice(&[0.0, 0.0]);
        let sd = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(
            (orthant_prob_diag(&mean, &sd, &[true, true]).unwrap() - 0.25).abs() < 1e-15
        );

        let mean = DVector::from_column_slice(&[1.0]);
        let sd = DVector::from_column_slice(&[1.0]);
        let p = orthant_prob_diag(&mean, &sd, &[true]).unwrap();
        assert!((p - phi(1.0)).abs() < 1e-15);

        // Cross-engine agreement on a genuinely diagonal covariance.
        let mean = DVector::from_column_slice(&[0.3, -0.5, 1.1]);
        let sd = DVector::from_column_slice(&[1.0, 0.5, 2.0]);
        let sigma = DMatrix::from_diagonal(&sd.map(|v| v * v));
        let bits = [true, false, true];
        let exact = orthant_prob_diag(&mean, &sd, &bits).unwrap();
        let quad = orthant_prob(&mean, &sigma, &bits, &default_cfg(2)).unwrap();
        assert!(
            (quad.value - exact).abs() <= (3.0 * quad.std_error).max(1e-6),
            "{} vs {exact}",
            quad.value
        );

        assert!(orthant_prob_diag(&mean, &DVector::from_column_slice(&[1.0, 0.0, 1.0]), &bits)
            .is_err());
    }

    #[test]
    fn point_mass_reductions() {
        let mean = DVector::from_column_slice(&[1.0, -1.0]);
        let sigma = DMatrix::zeros(2, 2);
        let cfg = default_cfg(0);
        let consistent = orthant_prob(&mean, &sigma, &[true, false], &cfg).unwrap();
        assert_eq!(consistent.value, 1.0);
        assert_eq!(consistent.std_error, 0.0);
        let inconsistent = orthant_prob(&mean, &sigma, &[false, false], &cfg).unwrap();
        assert_eq!(inconsistent.value, 0.0);
        // Zero mean on a pinned coordinate resolves to bit 0.
        let boundary_mean = DVector::from_column_slice(&[0.0, -1.0]);
        let zero_ok = orthant_prob(&boundary_mean, &sigma, &[false, false], &cfg).unwrap();
        assert_eq!(zero_ok.value, 1.0);
        let zero_bad = orthant_prob(&boundary_mean, &sigma, &[true, false], &cfg).unwrap();
        assert_eq!(zero_bad.value, 0.0);
    }

    #[test]
    fn rank_one_reduction_matches_univariate_oracle() {
        // X = mu + a Z with Z scalar: each orthant constraint is an interval
        // in Z, so the probability is the normal mass of the intersection.
        let dir = DVector::from_column_slice(&[0.8, -0.6]);
        let sigma = &dir * dir.transpose();
        let mean = DVector::from_column_slice(&[0.5, 0.3]);
        for bits in [[true, false], [true, true], [false, false], [false, true]] {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for i in 0..2 {
                let (c, m) = (dir[i], mean[i]);
                // bit 1: m + c z > 0; bit 0: m + c z <= 0.
                if bits[i] {
                    if c > 0.0 {
                        lo = lo.max(-m / c);
                    } else {
                        hi = hi.min(-m / c);
                    }
                } else if c > 0.0 {
                    hi = hi.min(-m / c);
                } else {
                    lo = lo.max(-m / c);
                }
            }
            let oracle = (phi(hi) - phi(lo)).max(0.0);
            let cfg = QuadratureConfig {
                sample_budget: 1 << 20,
                seed: 17,
                ..QuadratureConfig::default()
            };
            let r = orthant_prob(&mean, &sigma, &bits, &cfg).unwrap();
            assert!(
                (r.value - oracle).abs() < 1e-6,
                "bits {bits:?}: {} vs {oracle} (se {})",
                r.value,
                r.std_error
            );
        }
    }

    #[test]
    fn partition_of_unity_dim_four() {
        // Random-ish PSD covariance; all 16 orthants must cover everything.
        let root = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.2, -0.3, 0.1, //
                0.0, 0.8, 0.4, -0.2, //
                0.5, 0.0, 1.2, 0.3, //
                -0.1, 0.6, 0.0, 0.7,
            ],
        );
        let sigma = &root * root.transpose();
        let mean = DVector::from_column_slice(&[0.2, -0.1, 0.4, 0.0]);
        let mut total = 0.0;
        let mut err = 0.0;
        for idx in 0..16u32 {
            let bits: Vec<bool> = (0..4).map(|i| idx >> i & 1 == 1).collect();
            let r = orthant_prob(&mean, &sigma, &bits, &default_cfg(100 + idx as u64)).unwrap();
            total += r.value;
            err += r.std_error;
        }
        assert!(
            (total - 1.0).abs() < (3.0 * err).max(1e-3),
            "total {total}, err {err}"
        );
    }

    #[test]
    fn determinism_per_seed() {
        let mean = DVector::from_column_slice(&[0.1, -0.2, 0.3]);
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.0],
        );
        let cfg = default_cfg(77);
        let a = orthant_prob(&mean, &sigma, &[true, true, false], &cfg).unwrap();
        let b = orthant_prob(&mean, &sigma, &[true, true, false], &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let other = orthant_prob(
            &mean,
            &sigma,
            &[true, true, false],
            &default_cfg(78),
        )
        .unwrap();
        assert_ne!(a.value.to_bits(), other.value.to_bits());
    }

    #[test]
    fn domain_errors() {
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        let cfg = default_cfg(0);
        // Empty box.
        assert!(matches!(
            mvn_rect(&[1.0, 0.0], &[0.0, 1.0], &mean, &sigma, &cfg),
            Err(Error::Domain(_))
        ));
        // Indefinite covariance.
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            mvn_rect(
                &[0.0, 0.0],
                &[f64::INFINITY, f64::INFINITY],
                &mean,
                &indef,
                &cfg
            ),
            Err(Error::Domain(_))
        ));
        assert!(reduce_degenerate(&mean, &indef, 1e-10).is_err());
    }

    #[test]
    fn derived_seeds_are_spread_out() {
        let a = derive_seed(0, 0);
        let b = derive_seed(0, 1);
        let c = derive_seed(1, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }
}
