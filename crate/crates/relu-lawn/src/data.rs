//! Data provisioning: the moons generator, diagonal-covariance EM, per-class
//! Gaussian statistics, and IDX (MNIST-format) ingestion.

use crate::error::{Error, Result};
use crate::mixture::{CovarianceKind, GaussianMixture};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::path::Path;

/// Labeled inputs: one sample per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape("dataset labels", inputs.nrows(), labels.len()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("dataset has non-finite inputs".into()));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Rows with the given label.
    pub fn class_subset(&self, label: usize) -> Dataset {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| self.labels[r] == label).collect();
        let mut inputs = DMatrix::zeros(rows.len(), self.dim());
        for (i, &r) in rows.iter().enumerate() {
            inputs.row_mut(i).copy_from(&self.inputs.row(r));
        }
        Dataset {
            inputs,
            labels: vec![label; rows.len()],
        }
    }

    /// Deterministic shuffled split into (train, test) with the given train
    /// fraction.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let take = |rows: &[usize]| {
            let mut inputs = DMatrix::zeros(rows.len(), self.dim());
            let mut labels = Vec::with_capacity(rows.len());
            for (i, &r) in rows.iter().enumerate() {
                inputs.row_mut(i).copy_from(&self.inputs.row(r));
                labels.push(self.labels[r]);
            }
            Dataset { inputs, labels }
        };
        (take(&order[..n_train]), take(&order[n_train..]))
    }
}

/// Two interleaved unit half-circles plus isotropic Gaussian noise, the
/// standard two-class moons construction. `n` must be even; the classes get
/// n/2 points each.
pub fn make_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Domain(format!("moons needs an even sample count, got {n}")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = DMatrix::zeros(n, 2);
    let mut labels = vec![0usize; n];
    for i in 0..half {
        let t = PI * i as f64 / (half - 1).max(1) as f64;
        inputs[(i, 0)] = t.cos();
        inputs[(i, 1)] = t.sin();
        inputs[(half + i, 0)] = 1.0 - t.cos();
        inputs[(half + i, 1)] = 0.5 - t.sin();
        labels[half + i] = 1;
    }
    if noise_std > 0.0 {
        for r in 0..n {
            for c in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                inputs[(r, c)] += noise_std * z;
            }
        }
    }
    Dataset::new(inputs, labels)
}

/// EM fit of a diagonal-covariance Gaussian mixture.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Log-likelihood after every iteration; nondecreasing.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub const EM_DEFAULT_MAX_ITERS: usize = 200;
pub const EM_DEFAULT_TOL: f64 = 1e-6;

/// Expectation-maximization for a K-component diagonal-covariance mixture,
/// seeded k-means++ style. Variances are floored at 1e-6 of the per-coordinate
/// data variance; a component that collapses is reseeded from the worst-fit
/// point.
pub fn fit_gmm_em(
    data: &DMatrix<f64>,
    k: usize,
    kind: CovarianceKind,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<EmFit> {
    if kind != CovarianceKind::Diagonal {
        return Err(Error::Domain(
            "only diagonal-covariance EM is supported".into(),
        ));
    }
    let n = data.nrows();
    let d = data.ncols();
    if k == 0 || n < k * (d + 1) {
        return Err(Error::Domain(format!(
            "EM needs at least K(d+1) = {} samples for K = {k}, got {n}",
            k * (d + 1)
        )));
    }

    // Per-coordinate data variance (population convention) for floors and
    // reseeding.
    let data_mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
    let data_var = DVector::from_fn(d, |j, _| {
        data.column(j).iter().map(|v| (v - data_mean[j]).powi(2)).sum::<f64>() / n as f64
    });
    let floor = DVector::from_fn(d, |j, _| (1e-6 * data_var[j]).max(1e-12));

    // k-means++ style seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    while centers.len() < k {
        let dists: Vec<f64> = (0..n)
            .map(|r| {
                centers
                    .iter()
                    .map(|&c| (data.row(r) - data.row(c)).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            centers.push(rng.random_range(0..n));
            continue;
        }
        let mut u: f64 = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (r, &dist) in dists.iter().enumerate() {
            u -= dist;
            if u <= 0.0 {
                pick = r;
                break;
            }
        }
        centers.push(pick);
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<DVector<f64>> = centers
        .iter()
        .map(|&c| data.row(c).transpose())
        .collect();
    let mut vars: Vec<DVector<f64>> = vec![data_var.map(|v| v.max(1e-12)); k];

    let mut history = Vec::new();
    let mut resp = DMatrix::zeros(n, k);
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..max_iters {
        iters += 1;
        // E step in log space.
        let mut ll = 0.0;
        let mut point_ll = vec![0.0f64; n];
        for r in 0..n {
            let mut logp = vec![0.0f64; k];
            for c in 0..k {
                let mut acc = weights[c].ln();
                for j in 0..d {
                    let v = vars[c][j];
                    let diff = data[(r, j)] - means[c][j];
                    acc += -0.5 * ((2.0 * PI * v).ln() + diff * diff / v);
                }
                logp[c] = acc;
            }
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logp.iter().map(|l| (l - m).exp()).sum();
            let log_norm = m + sum_exp.ln();
            ll += log_norm;
            point_ll[r] = log_norm;
            for c in 0..k {
                resp[(r, c)] = (logp[c] - log_norm).exp();
            }
        }
        history.push(ll);

        // M step.
        for c in 0..k {
            let rc: f64 = (0..n).map(|r| resp[(r, c)]).sum();
            if rc < 1e-9 {
                // Collapsed component: reseed from the worst-fit point.
                let worst = (0..n)
                    .min_by(|&a, &b| point_ll[a].partial_cmp(&point_ll[b]).unwrap())
                    .unwrap();
                means[c] = data.row(worst).transpose();
                vars[c] = data_var.map(|v| v.max(1e-12));
                weights[c] = 1.0 / n as f64;
                continue;
            }
            weights[c] = rc / n as f64;
            let mut mean = DVector::zeros(d);
            for r in 0..n {
                mean += data.row(r).transpose() * resp[(r, c)];
            }
            mean /= rc;
            let mut var = DVector::zeros(d);
            for r in 0..n {
                for j in 0..d {
                    let diff = data[(r, j)] - mean[j];
                    var[j] += resp[(r, c)] * diff * diff;
                }
            }
            var /= rc;
            for j in 0..d {
                var[j] = var[j].max(floor[j]);
            }
            means[c] = mean;
            vars[c] = var;
        }
        let total_w: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total_w;
        }

        if history.len() >= 2 {
            let gain = history[history.len() - 1] - history[history.len() - 2];
            if gain.abs() < tol {
                converged = true;
                break;
            }
        }
    }

    let covariances: Vec<DMatrix<f64>> = vars.iter().map(DMatrix::from_diagonal).collect();
    let mixture = GaussianMixture::new(weights, means, covariances, CovarianceKind::Diagonal)?;
    Ok(EmFit {
        mixture,
        log_likelihood: history,
        iterations: iters,
        converged,
    })
}

/// Sample mean and covariance (divisor n-1) of the rows, with a diagonal
/// ridge of 1e-6 * trace/d for positive semidefiniteness.
pub fn fit_class_gaussian(data: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = data.nrows();
    let d = data.ncols();
    if n < 2 {
        return Err(Error::Domain(format!(
            "class Gaussian needs at least 2 samples, got {n}"
        )));
    }
    let mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..n {
        let diff = data.row(r).transpose() - &mean;
        cov.syger(1.0, &diff, &diff, 1.0);
    }
    cov /= (n - 1) as f64;
    // syger fills the lower triangle only.
    for i in 0..d {
        for j in i + 1..d {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let ridge = 1e-6 * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.offset as u64,
                message: format!("truncated file while reading {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..self.offset + 4].try_into().unwrap());
        self.offset += 4;
        Ok(v)
    }

    fn bytes(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.bytes.len() as u64,
                message: format!("truncated file: {what} needs {len} bytes from offset {}", self.offset),
            });
        }
        let s = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(s)
    }
}

/// Load an IDX image/label file pair (big-endian, magic 0x803 / 0x801).
/// Pixels are scaled to [0, 1] and images flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let mut img = IdxReader { bytes: &image_bytes, offset: 0 };
    let magic = img.u32("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = img.u32("image count")? as usize;
    let rows = img.u32("row count")? as usize;
    let cols = img.u32("column count")? as usize;
    let pixels = img.bytes(count * rows * cols, "pixel data")?;

    let mut lab = IdxReader { bytes: &label_bytes, offset: 0 };
    let magic = lab.u32("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let label_count = lab.u32("label count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("label count {label_count} does not match image count {count}"),
        });
    }
    let labels_raw = lab.bytes(count, "label data")?;

    let dim = rows * cols;
    let mut inputs = DMatrix::zeros(count, dim);
    for i in 0..count {
        for p in 0..dim {
            inputs[(i, p)] = pixels[i * dim + p] as f64 / 255.0;
        }
    }
    Dataset::new(inputs, labels_raw.iter().map(|&b| b as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_noiseless_lie_on_arcs() {
        let data = make_moons(200, 0.0, 1).unwrap();
        for r in 0..data.len() {
            let (x, y) = (data.inputs[(r, 0)], data.inputs[(r, 1)]);
            let on_arc = if data.labels[r] == 0 {
                (x * x + y * y - 1.0).abs() < 1e-12 && y >= -1e-12
            } else {
                let (ux, uy) = (x - 1.0, y - 0.5);
                (ux * ux + uy * uy - 1.0).abs() < 1e-12 && uy <= 1e-12
            };
            assert!(on_arc, "row {r}: ({x}, {y})");
        }
    }

    #[test]
    fn moons_counts_and_determinism() {
        let data = make_moons(1000, 0.2, 7).unwrap();
        assert_eq!(data.len(), 1000);
        assert_eq!(data.labels.iter().filter(|&&l| l == 0).count(), 500);
        assert_eq!(data.labels.iter().filter(|&&l| l == 1).count(), 500);
        let again = make_moons(1000, 0.2, 7).unwrap();
        assert_eq!(data.inputs, again.inputs);
        assert!(make_moons(999, 0.2, 7).is_err());
    }

    #[test]
    fn moons_noise_variance_moment_check() {
        // Compare against the noiseless manifold: residual variance per
        // coordinate should be close to noise_std^2.
        let n = 100_000;
        let clean = make_moons(n, 0.0, 3).unwrap();
        let noisy = make_moons(n, 0.2, 3).unwrap();
        for c in 0..2 {
            let var: f64 = (0..n)
                .map(|r| (noisy.inputs[(r, c)] - clean.inputs[(r, c)]).powi(2))
                .sum::<f64>()
                / n as f64;
            assert!((var - 0.04).abs() < 0.004, "col {c}: {var}");
        }
    }

    #[test]
    fn em_single_component_is_sample_moments() {
        let data = make_moons(400, 0.3, 11).unwrap().inputs;
        let n = data.nrows() as f64;
        let fit = fit_gmm_em(&data, 1, CovarianceKind::Diagonal, 0, 50, 1e-9).unwrap();
        let mean = DVector::from_fn(2, |j, _| data.column(j).sum() / n);
        for j in 0..2 {
            assert!((fit.mixture.mean(0)[j] - mean[j]).abs() < 1e-9);
            let var: f64 = data.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            assert!((fit.mixture.covariance(0)[(j, j)] - var).abs() < 1e-9 * var);
        }
    }

    #[test]
    fn em_recovers_separated_mixture() {
        // Two well-separated blobs.
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut data = DMatrix::zeros(n, 2);
        for r in 0..n {
            let (cx, cy) = if r % 2 == 0 { (-3.0, 0.0) } else { (3.0, 1.0) };
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            data[(r, 0)] = cx + 0.5 * zx;
            data[(r, 1)] = cy + 0.5 * zy;
        }
        let fit = fit_gmm_em(&data, 2, CovarianceKind::Diagonal, 3, 200, 1e-9).unwrap();
        let mut means: Vec<_> = (0..2).map(|k| fit.mixture.mean(k)[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 3.0).abs() < 0.05, "{means:?}");
        assert!((means[1] - 3.0).abs() < 0.05, "{means:?}");
        for (w, _, _) in fit.mixture.components() {
            assert!((w - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let data = make_moons(600, 0.25, 5).unwrap().inputs;
        let fit = fit_gmm_em(&data, 3, CovarianceKind::Diagonal, 9, 100, 1e-10).unwrap();
        for pair in fit.log_likelihood.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8 * pair[0].abs(),
                "log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn em_rejects_full_covariance_and_tiny_data() {
        let data = DMatrix::zeros(10, 2);
        assert!(fit_gmm_em(&data, 1, CovarianceKind::Full, 0, 10, 1e-6).is_err());
        assert!(fit_gmm_em(&data, 4, CovarianceKind::Diagonal, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn class_gaussian_two_points_and_ridge() {
        let data = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        let (mean, cov) = fit_class_gaussian(&data).unwrap();
        assert_eq!(mean, DVector::from_column_slice(&[1.0, 1.0]));
        assert!(cov.clone().cholesky().is_some() || cov.symmetric_eigen().eigenvalues.min() >= 0.0);

        // Constant data: covariance is the ridge only.
        let flat = DMatrix::from_element(5, 3, 2.5);
        let (_, cov) = fit_class_gaussian(&flat).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cov[(i, j)], 0.0);
                }
            }
        }
    }

    fn write_idx_pair(
        dir: &Path,
        prefix: &str,
        images: &[[u8; 4]],
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img_path = dir.join(format!("{prefix}-images.idx"));
        let lab_path = dir.join(format!("{prefix}-labels.idx"));
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        std::fs::write(&img_path, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        std::fs::write(&lab_path, lab).unwrap();
        (img_path, lab_path)
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), "a", &[[0, 51, 102, 255], [255, 0, 255, 0]], &[3, 7]);
        let data = load_idx(&img, &lab).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.inputs[(0, 0)], 0.0);
        assert_eq!(data.inputs[(0, 1)], 0.2);
        assert_eq!(data.inputs[(0, 3)], 1.0);
        assert_eq!(data.labels, vec![3, 7]);

        // Truncated pixel payload: no partial dataset.
        let bytes = std::fs::read(&img).unwrap();
        let cut = dir.path().join("cut.idx");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        match load_idx(&cut, &lab) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("truncated")),
            other => panic!("expected parse error, got {other:?}"),
        }

        // Bad magic.
        let mut bad = bytes.clone();
        bad[3] = 0x99;
        let bad_path = dir.path().join("bad.idx");
        std::fs::write(&bad_path, &bad).unwrap();
        assert!(matches!(load_idx(&bad_path, &lab), Err(Error::Parse { .. })));

        // Count mismatch.
        let (img2, _) = write_idx_pair(dir.path(), "b", &[[1, 2, 3, 4]], &[1]);
        assert!(matches!(load_idx(&img2, &lab), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_and_class_subset() {
        let data = make_moons(100, 0.1, 2).unwrap();
        let (train, test) = data.split(0.8, 5);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let zeros = data.class_subset(0);
        assert_eq!(zeros.len(), 50);
        assert!(zeros.labels.iter().all(|&l| l == 0));
    }
}
