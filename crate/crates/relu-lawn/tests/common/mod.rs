//! Shared fixtures for the integration suites: the trained moons pipeline,
//! an image-shaped multi-class dataset with a trained classifier, and small
//! random-problem generators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use relu_lawn::data::{make_moons, Dataset};
use relu_lawn::model::{Activation, Layer, NetworkParams};
use relu_lawn::train::{glorot_init, train_mlp, LossKind, TrainConfig};
use std::sync::OnceLock;

/// Moons pipeline: 1000 samples, noise 0.2, 80/20 split, L = 4 net with
/// hidden widths 4,4,4 trained with Adam (batch 64, lr 1e-2, 20 epochs).
pub struct MoonsFixture {
    pub net: NetworkParams,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn moons() -> &'static MoonsFixture {
    static CELL: OnceLock<MoonsFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = make_moons(1000, 0.2, 5).unwrap();
        let (train, test) = data.split(0.8, 5);
        let init = glorot_init(&[2, 4, 4, 4, 1], Activation::Relu, 0).unwrap();
        let cfg = TrainConfig::new(1e-2, 64, 20, 7, LossKind::BinaryCrossEntropyLogit);
        let net = train_mlp(init, &train, &cfg).unwrap();
        MoonsFixture { net, train, test }
    })
}

/// Deterministic 10-class image-shaped dataset (28x28 inputs in [0, 1]):
/// smooth per-class prototypes with correlated intensity jitter and pixel
/// noise. Stands in for a digits corpus where no real image files exist.
/// The prototypes are fixed; `seed` only drives the sampling noise, so two
/// calls draw from the same population.
pub fn synthetic_digits(per_class: usize, seed: u64) -> Dataset {
    let side = 28usize;
    let dim = side * side;
    let classes = 10usize;

    // Prototypes: a few Gaussian bumps per class.
    let mut prototypes = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD1617 + c as u64);
        let mut proto = vec![0.0f64; dim];
        let bumps = 3 + (c % 3);
        for _ in 0..bumps {
            let cx = rng.random_range(6.0..22.0);
            let cy = rng.random_range(6.0..22.0);
            let s = rng.random_range(2.0..4.5);
            let amp = rng.random_range(0.6..1.0);
            for y in 0..side {
                for x in 0..side {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    proto[y * side + x] += amp * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
        let max = proto.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
        for v in &mut proto {
            *v = (*v / max).min(1.0);
        }
        prototypes.push(proto);
    }

    let n = per_class * classes;
    let mut inputs = DMatrix::zeros(n, dim);
    let mut labels = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A3);
    for (c, proto) in prototypes.iter().enumerate() {
        for i in 0..per_class {
            let r = c * per_class + i;
            labels[r] = c;
            let gain: f64 = 1.0 + 0.25 * rng.sample::<f64, _>(StandardNormal);
            for (p, &base) in proto.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                inputs[(r, p)] = (base * gain + 0.15 * z).clamp(0.0, 1.0);
            }
        }
    }
    Dataset::new(inputs, labels).unwrap()
}

/// Image-shaped pipeline: L = 4 classifier with hidden widths 16,16,16
/// trained with Adam (batch 128, lr 1e-3, 10 epochs) on `synthetic_digits`.
pub struct DigitsFixture {
    pub net: NetworkParams,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn digits() -> &'static DigitsFixture {
    static CELL: OnceLock<DigitsFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let train = synthetic_digits(300, 11);
        let test = synthetic_digits(40, 12);
        let init = glorot_init(&[784, 16, 16, 16, 10], Activation::Relu, 1).unwrap();
        let cfg = TrainConfig::new(1e-3, 128, 10, 3, LossKind::SoftmaxCrossEntropy);
        let net = train_mlp(init, &train, &cfg).unwrap();
        DigitsFixture { net, train, test }
    })
}

pub fn random_net(rng: &mut ChaCha8Rng, dims: &[usize], activation: Activation) -> NetworkParams {
    let layers = dims
        .windows(2)
        .map(|w| {
            Layer::new(
                DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(w[1], |_, _| rng.random_range(-0.5..0.5)),
            )
            .unwrap()
        })
        .collect();
    NetworkParams::new(layers, activation).unwrap()
}

/// Random PSD covariance R R^T with entries of moderate scale.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let root = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &root * root.transpose()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-half_width..half_width))
}
