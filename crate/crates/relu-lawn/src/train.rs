//! A small deterministic MLP trainer: manual backprop through the
//! affine/ReLU graph, minibatch Adam, fixed shuffle order per seed.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Activation, Layer, NetworkParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-layer (weight, bias) gradients.
pub type LayerGradients = Vec<(DMatrix<f64>, DVector<f64>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Scalar logit, targets in {0, 1}.
    BinaryCrossEntropyLogit,
    /// One logit per class.
    SoftmaxCrossEntropy,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, batch_size: usize, epochs: usize, seed: u64, loss: LossKind) -> Self {
        TrainConfig {
            learning_rate,
            batch_size,
            epochs,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::Domain(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization: weights in +-sqrt(6 / (fan_in + fan_out)),
/// biases zero.
pub fn glorot_init(dims: &[usize], activation: Activation, seed: u64) -> Result<NetworkParams> {
    if dims.len() < 3 {
        return Err(Error::Model(format!(
            "need input, at least one hidden, and output widths; got {} entries",
            dims.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer::new(
                DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
                DVector::zeros(fan_out),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(layers, activation)
}

/// Mean loss and parameter gradients over a batch (inputs as rows).
/// Exposed so the analytic gradient can be checked against finite
/// differences.
pub fn loss_gradient(
    net: &NetworkParams,
    inputs: &DMatrix<f64>,
    labels: &[usize],
    loss: LossKind,
) -> Result<(f64, LayerGradients)> {
    let b = inputs.nrows();
    if b == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::shape("batch labels", b, labels.len()));
    }
    if inputs.ncols() != net.input_dim() {
        return Err(Error::shape("batch inputs", net.input_dim(), inputs.ncols()));
    }
    let depth = net.depth();
    let slope = net.activation().negative_slope();

    // Forward, batched: columns are samples.
    let mut activations: Vec<DMatrix<f64>> = Vec::with_capacity(depth + 1);
    let mut preacts: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    activations.push(inputs.transpose());
    for (l, layer) in net.layers().iter().enumerate() {
        let mut h = &layer.weight * activations.last().unwrap();
        for mut col in h.column_iter_mut() {
            col += &layer.bias;
        }
        preacts.push(h.clone());
        if l + 1 < depth {
            activations.push(h.map(|v| if v > 0.0 { v } else { slope * v }));
        } else {
            activations.push(h);
        }
    }

    let logits = activations.last().unwrap();
    let n_out = net.output_dim();
    let inv_b = 1.0 / b as f64;

    // Loss and dL/dlogits, both averaged over the batch.
    let mut delta = DMatrix::zeros(n_out, b);
    let mut total_loss = 0.0;
    match loss {
        LossKind::BinaryCrossEntropyLogit => {
            if n_out != 1 {
                return Err(Error::shape("binary logit head", 1, n_out));
            }
            for s in 0..b {
                let z = logits[(0, s)];
                let t = labels[s] as f64;
                if labels[s] > 1 {
                    return Err(Error::Domain(format!(
                        "binary loss saw label {} at row {s}",
                        labels[s]
                    )));
                }
                // softplus(z) - t z, stable form.
                total_loss += z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
                let sig = 1.0 / (1.0 + (-z).exp());
                delta[(0, s)] = (sig - t) * inv_b;
            }
        }
        LossKind::SoftmaxCrossEntropy => {
            for s in 0..b {
                let t = labels[s];
                if t >= n_out {
                    return Err(Error::Domain(format!(
                        "label {t} out of range for {n_out} logits at row {s}"
                    )));
                }
                let col = logits.column(s);
                let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = col.iter().map(|v| (v - m).exp()).sum();
                let log_z = m + sum_exp.ln();
                total_loss += log_z - col[t];
                for j in 0..n_out {
                    let p = (col[j] - log_z).exp();
                    delta[(j, s)] = (p - if j == t { 1.0 } else { 0.0 }) * inv_b;
                }
            }
        }
    }
    let mean_loss = total_loss * inv_b;
    if !mean_loss.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }

    // Backward.
    let mut grads: LayerGradients = Vec::with_capacity(depth);
    let mut cur = delta;
    for l in (0..depth).rev() {
        let grad_w = &cur * activations[l].transpose();
        let grad_b = DVector::from_fn(cur.nrows(), |i, _| cur.row(i).sum());
        grads.push((grad_w, grad_b));
        if l > 0 {
            let mut back = net.layers()[l].weight.transpose() * &cur;
            let h = &preacts[l - 1];
            for c in 0..back.ncols() {
                for r in 0..back.nrows() {
                    if h[(r, c)] <= 0.0 {
                        back[(r, c)] *= slope;
                    }
                }
            }
            cur = back;
        }
    }
    grads.reverse();
    Ok((mean_loss, grads))
}

/// Minibatch Adam on the configured loss. Deterministic per `cfg.seed`
/// (fixed shuffle order); zero epochs returns the initialization unchanged.
pub fn train_mlp(init: NetworkParams, data: &Dataset, cfg: &TrainConfig) -> Result<NetworkParams> {
    cfg.validate()?;
    if data.dim() != init.input_dim() {
        return Err(Error::shape("training data", init.input_dim(), data.dim()));
    }
    if data.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let depth = init.depth();
    let activation = init.activation();
    let mut layers: Vec<Layer> = init.layers().to_vec();

    let mut m: Vec<(DMatrix<f64>, DVector<f64>)> = layers
        .iter()
        .map(|l| (DMatrix::zeros(l.weight.nrows(), l.weight.ncols()), DVector::zeros(l.bias.len())))
        .collect();
    let mut v = m.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut batch = DMatrix::zeros(chunk.len(), data.dim());
            let mut labels = Vec::with_capacity(chunk.len());
            for (i, &r) in chunk.iter().enumerate() {
                batch.row_mut(i).copy_from(&data.inputs.row(r));
                labels.push(data.labels[r]);
            }
            let net = NetworkParams::new(layers.clone(), activation)?;
            let (loss, grads) = loss_gradient(&net, &batch, &labels, cfg.loss)
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { step },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }

            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for l in 0..depth {
                let (gw, gb) = &grads[l];
                let (mw, mb) = &mut m[l];
                let (vw, vb) = &mut v[l];
                *mw = &*mw * cfg.beta1 + gw * (1.0 - cfg.beta1);
                *mb = &*mb * cfg.beta1 + gb * (1.0 - cfg.beta1);
                *vw = &*vw * cfg.beta2 + gw.component_mul(gw) * (1.0 - cfg.beta2);
                *vb = &*vb * cfg.beta2 + gb.component_mul(gb) * (1.0 - cfg.beta2);
                let layer = &mut layers[l];
                for i in 0..layer.weight.nrows() {
                    for j in 0..layer.weight.ncols() {
                        let mh = mw[(i, j)] / bc1;
                        let vh = vw[(i, j)] / bc2;
                        layer.weight[(i, j)] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                    }
                    let mh = mb[i] / bc1;
                    let vh = vb[i] / bc2;
                    layer.bias[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                }
            }
        }
    }
    NetworkParams::new(layers, activation)
}

/// Fraction of rows whose predicted class matches the label. Binary heads
/// threshold the logit at 0; wider heads take the argmax.
pub fn accuracy(net: &NetworkParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for r in 0..data.len() {
        let x = data.inputs.row(r).transpose();
        let y = crate::model::forward(net, &x)?.output;
        let predicted = if y.len() == 1 {
            usize::from(y[0] > 0.0)
        } else {
            y.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        };
        if predicted == data.labels[r] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
