//! Gaussian mixture inputs and their affine pushforwards.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

/// Mixture of multivariate Gaussians: the input law, and (after an affine
/// pushforward) the law of any stack of preactivations.
///
/// Covariances are stored as full matrices regardless of `kind`; `Diagonal`
/// additionally asserts the off-diagonal entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    kind: CovarianceKind,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        kind: CovarianceKind,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len()
        {
            return Err(Error::Model(format!(
                "mixture needs matching component counts, got {} weights / {} means / {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        for (k, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != dim {
                return Err(Error::shape(format!("component {k} mean"), dim, mean.len()));
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::shape(format!("component {k} covariance"), dim, cov.nrows()));
            }
            if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("component {k} has non-finite entries")));
            }
            let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..dim {
                for j in 0..i {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale.max(1e-300) {
                        return Err(Error::Model(format!(
                            "component {k} covariance is not symmetric at ({i},{j})"
                        )));
                    }
                }
            }
            if kind == CovarianceKind::Diagonal {
                for i in 0..dim {
                    for j in 0..dim {
                        if i != j && cov[(i, j)] != 0.0 {
                            return Err(Error::Model(format!(
                                "component {k} declared diagonal but has off-diagonal entry at ({i},{j})"
                            )));
                        }
                    }
                }
            }
            if !psd_within(cov, 1e-10) {
                return Err(Error::Model(format!(
                    "component {k} covariance is not positive semidefinite"
                )));
            }
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!(
                "mixing weights must be positive and sum to 1, got sum {total}"
            )));
        }
        Ok(GaussianMixture {
            weights,
            means,
            covariances,
            kind,
        })
    }

    /// Single-component mixture.
    pub fn single(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        GaussianMixture::new(vec![1.0], vec![mean], vec![covariance], CovarianceKind::Full)
    }

    /// Single isotropic component N(mean, variance * I).
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let dim = mean.len();
        GaussianMixture::new(
            vec![1.0],
            vec![mean],
            vec![DMatrix::identity(dim, dim) * variance],
            CovarianceKind::Diagonal,
        )
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.means[k]
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        &self.covariances[k]
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, &DVector<f64>, &DMatrix<f64>)> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((&w, m), c)| (w, m, c))
    }

    /// Pushforward through x -> C x + d. The image covariances are symmetrized
    /// to absorb floating-point asymmetry; they are PSD by construction and may
    /// be rank deficient, so no eigenvalue validation is repeated here.
    pub fn push_affine(&self, matrix: &DMatrix<f64>, offset: &DVector<f64>) -> Result<Self> {
        if matrix.ncols() != self.dim() {
            return Err(Error::shape("pushforward input dim", self.dim(), matrix.ncols()));
        }
        if matrix.nrows() != offset.len() {
            return Err(Error::shape("pushforward offset", matrix.nrows(), offset.len()));
        }
        let means = self.means.iter().map(|m| matrix * m + offset).collect();
        let covariances = self
            .covariances
            .iter()
            .map(|c| {
                let mut out = matrix * c * matrix.transpose();
                symmetrize(&mut out);
                out
            })
            .collect();
        Ok(GaussianMixture {
            weights: self.weights.clone(),
            means,
            covariances,
            kind: CovarianceKind::Full,
        })
    }
}

/// A factor A with A A^T = cov: Cholesky when positive definite, otherwise
/// eigenvectors scaled by the square roots of the clamped eigenvalues.
pub(crate) fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    for &l in eig.eigenvalues.iter() {
        if l < -1e-8 * lambda_max.max(1e-300) {
            return Err(Error::Domain(format!(
                "covariance is not positive semidefinite: eigenvalue {l}"
            )));
        }
    }
    let mut factor = eig.eigenvectors;
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cheap PSD check: Cholesky of cov + tol*scale*I succeeds iff the smallest
/// eigenvalue is above -tol*scale.
fn psd_within(cov: &DMatrix<f64>, tol: f64) -> bool {
    let n = cov.nrows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(cov[(i, i)].abs())).max(1e-300);
    let shifted = cov + DMatrix::identity(n, n) * (tol * scale);
    shifted.cholesky().is_some()
}
