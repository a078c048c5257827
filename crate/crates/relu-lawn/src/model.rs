//! Networks, activation patterns, and the deterministic affine geometry the
//! probabilistic modules are built on.
//!
//! A feed-forward net with ReLU-family activations is piecewise affine: the
//! binary pattern of which hidden neurons fire selects an affine map, and the
//! set of inputs sharing a pattern is a convex polytope. This module provides
//! the pattern/mask bookkeeping, the per-pattern affine recursion, the stacked
//! input-to-preactivation map, and the polytope form of a pattern's region.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Activation nonlinearity applied at every hidden layer.
///
/// `LeakyRelu(0.0)` is accepted and must behave bit-identically to `Relu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    /// Multiplier applied to inactive (preactivation <= 0) neurons.
    pub fn negative_slope(&self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(gamma) => *gamma,
        }
    }
}

/// One affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::shape("layer bias length", weight.nrows(), bias.len()));
        }
        Ok(Layer { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// A trained feed-forward network: L >= 2 affine layers with the activation
/// applied between them (layers 1..L-1 are hidden, layer L is the output).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    activation: Activation,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Model(format!(
                "a network needs at least 2 layers (one nonlinearity), got {}",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::shape(
                    format!("layer {} input width", i + 2),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            let finite = layer.weight.iter().all(|v| v.is_finite())
                && layer.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Model(format!("layer {} has non-finite entries", i + 1)));
            }
        }
        if let Activation::LeakyRelu(gamma) = activation {
            if !gamma.is_finite() || gamma < 0.0 {
                return Err(Error::Model(format!(
                    "leaky relu slope must be finite and >= 0, got {gamma}"
                )));
            }
        }
        Ok(NetworkParams { layers, activation })
    }

    /// Number of affine layers L.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths of the hidden layers n_1 .. n_{L-1}.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .collect()
    }

    /// Total number of hidden neurons (= bits in an activation pattern).
    pub fn total_hidden(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Bit mask over one layer's neurons, packed into 64-bit words.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct LayerMask {
    width: usize,
    words: Vec<u64>,
}

impl LayerMask {
    pub fn zeros(width: usize) -> Self {
        LayerMask {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut mask = LayerMask::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                mask.set(i, true);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.width);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.width);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn bools(&self) -> Vec<bool> {
        (0..self.width).map(|i| self.bit(i)).collect()
    }

    /// Numeric comparison of the packed little-endian bit string.
    fn cmp_value(&self, other: &Self) -> std::cmp::Ordering {
        self.width
            .cmp(&other.width)
            .then_with(|| self.words.iter().rev().cmp(other.words.iter().rev()))
    }
}

impl PartialOrd for LayerMask {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LayerMask {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cmp_value(other)
    }
}

/// Concatenated per-layer activation masks: the discrete random variable whose
/// law this crate computes.
///
/// The canonical order is numeric on the layer-major bit string read
/// little-endian (layer 1, neuron 0 is the least significant bit), which also
/// defines the decimal label used in reports.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ActivationPattern {
    layers: Vec<LayerMask>,
}

impl ActivationPattern {
    pub fn from_masks(layers: Vec<LayerMask>) -> Self {
        ActivationPattern { layers }
    }

    pub fn from_bits(bits: &[Vec<bool>]) -> Self {
        ActivationPattern {
            layers: bits.iter().map(|b| LayerMask::from_bools(b)).collect(),
        }
    }

    /// Pattern with the given flat little-endian index over the given widths.
    pub fn from_index(widths: &[usize], index: u128) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut pos = 0;
        for &w in widths {
            let mut mask = LayerMask::zeros(w);
            for i in 0..w {
                if pos < 128 && index >> pos & 1 == 1 {
                    mask.set(i, true);
                }
                pos += 1;
            }
            layers.push(mask);
        }
        ActivationPattern { layers }
    }

    /// All patterns over the given widths in canonical (ascending) order.
    ///
    /// Callers must cap `widths` so the total bit count stays enumerable.
    pub fn enumerate_all(widths: &[usize]) -> impl Iterator<Item = ActivationPattern> + '_ {
        let total: usize = widths.iter().sum();
        assert!(total < 64, "exhaustive enumeration over {total} bits");
        (0..(1u128 << total)).map(move |i| ActivationPattern::from_index(widths, i))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerMask {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMask::width).collect()
    }

    pub fn total_bits(&self) -> usize {
        self.layers.iter().map(LayerMask::width).sum()
    }

    /// Flat layer-major bit sequence.
    pub fn flat_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.total_bits());
        for layer in &self.layers {
            bits.extend(layer.bools());
        }
        bits
    }

    /// Integer value of the flat bit string (little-endian). `None` when the
    /// pattern has more than 128 bits; the label is for reporting only.
    pub fn decimal_label(&self) -> Option<u128> {
        if self.total_bits() > 128 {
            return None;
        }
        let mut value = 0u128;
        for (i, bit) in self.flat_bits().into_iter().enumerate() {
            if bit {
                value |= 1 << i;
            }
        }
        Some(value)
    }

    /// Flat bit string, e.g. "0110".
    pub fn bit_string(&self) -> String {
        self.flat_bits()
            .into_iter()
            .map(|b| if b { '1' } else { '0' })
            .collect()
    }

    /// Parse a flat bit string against the given layer widths.
    pub fn parse_bit_string(s: &str, widths: &[usize]) -> Result<Self> {
        let total: usize = widths.iter().sum();
        if s.len() != total {
            return Err(Error::shape("pattern bit string length", total, s.len()));
        }
        let mut bits = Vec::with_capacity(total);
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => {
                    return Err(Error::Parse {
                        offset: i as u64,
                        message: format!("invalid pattern character '{c}'"),
                    })
                }
            }
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut pos = 0;
        for &w in widths {
            layers.push(LayerMask::from_bools(&bits[pos..pos + w]));
            pos += w;
        }
        Ok(ActivationPattern { layers })
    }

    /// Whether the per-layer widths match the network's hidden widths.
    pub fn matches_net(&self, net: &NetworkParams) -> bool {
        self.layer_widths() == net.hidden_widths()
    }

    /// Copy with one flat bit flipped.
    pub fn with_flipped_bit(&self, flat_index: usize) -> Self {
        let mut out = self.clone();
        let mut pos = flat_index;
        for layer in &mut out.layers {
            if pos < layer.width() {
                let old = layer.bit(pos);
                layer.set(pos, !old);
                return out;
            }
            pos -= layer.width();
        }
        panic!("flat bit index {flat_index} out of range");
    }

    /// First `n` layers of the pattern.
    pub fn prefix(&self, n: usize) -> Self {
        ActivationPattern {
            layers: self.layers[..n].to_vec(),
        }
    }
}

impl PartialOrd for ActivationPattern {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ActivationPattern {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.layers
            .len()
            .cmp(&other.layers.len())
            .then_with(|| self.layers.iter().rev().cmp(other.layers.iter().rev()))
    }
}

/// Affine map x -> matrix * x + offset.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
}

/// Block-stacked affine map sending an input to the preactivations of layers
/// 1..depth, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedAffine {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub depth: usize,
    /// Row count of each stacked block.
    pub block_widths: Vec<usize>,
}

/// Halfspace system {x : (A x + b)_i > 0 where strict, (A x + b)_i <= 0 otherwise}.
#[derive(Clone, Debug)]
pub struct HalfspaceSystem {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
    pub strict: Vec<bool>,
}

impl HalfspaceSystem {
    /// Membership test: every row constraint holds with its strictness flag.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        if x.len() != self.normals.ncols() {
            return Err(Error::shape("halfspace input", self.normals.ncols(), x.len()));
        }
        let values = &self.normals * x + &self.offsets;
        Ok(values
            .iter()
            .zip(&self.strict)
            .all(|(&v, &strict)| if strict { v > 0.0 } else { v <= 0.0 }))
    }
}

/// Per-layer diagonal multipliers encoded by a pattern: active bits map to 1,
/// inactive bits to the activation's negative slope.
pub fn mask_values(activation: Activation, pattern: &ActivationPattern) -> Vec<DVector<f64>> {
    let slope = activation.negative_slope();
    pattern
        .layers()
        .iter()
        .map(|mask| DVector::from_fn(mask.width(), |i, _| if mask.bit(i) { 1.0 } else { slope }))
        .collect()
}

/// Result of a forward pass: output, induced pattern, and every preactivation
/// h_1 .. h_L for diagnostics.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub output: DVector<f64>,
    pub pattern: ActivationPattern,
    pub preactivations: Vec<DVector<f64>>,
}

/// Evaluate the network, recording the activation pattern. A preactivation of
/// exactly zero counts as inactive (bit 0), matching the strict "> 0" mask.
pub fn forward(net: &NetworkParams, x: &DVector<f64>) -> Result<ForwardPass> {
    if x.len() != net.input_dim() {
        return Err(Error::shape("forward input", net.input_dim(), x.len()));
    }
    let slope = net.activation().negative_slope();
    let mut masks = Vec::with_capacity(net.depth() - 1);
    let mut preacts = Vec::with_capacity(net.depth());
    let mut activated = x.clone();
    for (i, layer) in net.layers().iter().enumerate() {
        let h = &layer.weight * &activated + &layer.bias;
        preacts.push(h.clone());
        if i + 1 < net.depth() {
            masks.push(LayerMask::from_bools(
                &h.iter().map(|&v| v > 0.0).collect::<Vec<_>>(),
            ));
            activated = h.map(|v| if v > 0.0 { v } else { slope * v });
        } else {
            activated = h;
        }
    }
    Ok(ForwardPass {
        output: activated,
        pattern: ActivationPattern::from_masks(masks),
        preactivations: preacts,
    })
}

fn check_pattern_prefix(net: &NetworkParams, pattern: &ActivationPattern, need: usize) -> Result<()> {
    let widths = net.hidden_widths();
    if pattern.num_layers() < need {
        return Err(Error::shape("pattern layer count", need, pattern.num_layers()));
    }
    for (i, w) in widths.iter().take(need).enumerate() {
        if pattern.layer(i).width() != *w {
            return Err(Error::shape(format!("pattern layer {} width", i + 1), *w, pattern.layer(i).width()));
        }
    }
    Ok(())
}

/// Affine map (C_P, d_P) the network applies up to layer `depth` under the
/// masks of `pattern`: C_1 = W_1, d_1 = b_1, then
/// C_l = W_l diag[m] C_{l-1} and d_l = W_l diag[m] d_{l-1} + b_l with m the
/// multiplier vector of layer l-1.
pub fn affine_params(
    net: &NetworkParams,
    pattern: &ActivationPattern,
    depth: usize,
) -> Result<AffineMap> {
    if depth == 0 || depth > net.depth() {
        return Err(Error::Index {
            context: "affine_params depth".into(),
            index: depth,
            bound: net.depth(),
        });
    }
    check_pattern_prefix(net, pattern, depth - 1)?;
    let slope = net.activation().negative_slope();
    let mut matrix = net.layers()[0].weight.clone();
    let mut offset = net.layers()[0].bias.clone();
    for l in 1..depth {
        let mask = pattern.layer(l - 1);
        for i in 0..mask.width() {
            let m = if mask.bit(i) { 1.0 } else { slope };
            matrix.row_mut(i).scale_mut(m);
            offset[i] *= m;
        }
        let layer = &net.layers()[l];
        matrix = &layer.weight * matrix;
        offset = &layer.weight * offset + &layer.bias;
    }
    Ok(AffineMap { matrix, offset })
}

/// Stack the affine maps of depths 1..depth into one block map from the input
/// to all preactivations up to `depth`.
pub fn stacked_affine(
    net: &NetworkParams,
    pattern: &ActivationPattern,
    depth: usize,
) -> Result<StackedAffine> {
    if depth == 0 || depth > net.depth() {
        return Err(Error::Index {
            context: "stacked_affine depth".into(),
            index: depth,
            bound: net.depth(),
        });
    }
    check_pattern_prefix(net, pattern, depth - 1)?;
    let slope = net.activation().negative_slope();
    let n0 = net.input_dim();
    let widths: Vec<usize> = net.layers()[..depth].iter().map(Layer::out_dim).collect();
    let total: usize = widths.iter().sum();
    let mut matrix = DMatrix::zeros(total, n0);
    let mut offset = DVector::zeros(total);

    let mut cur_m = net.layers()[0].weight.clone();
    let mut cur_d = net.layers()[0].bias.clone();
    let mut row = 0;
    for l in 0..depth {
        if l > 0 {
            let mask = pattern.layer(l - 1);
            for i in 0..mask.width() {
                let m = if mask.bit(i) { 1.0 } else { slope };
                cur_m.row_mut(i).scale_mut(m);
                cur_d[i] *= m;
            }
            let layer = &net.layers()[l];
            cur_m = &layer.weight * cur_m;
            cur_d = &layer.weight * cur_d + &layer.bias;
        }
        matrix.rows_mut(row, widths[l]).copy_from(&cur_m);
        offset.rows_mut(row, widths[l]).copy_from(&cur_d);
        row += widths[l];
    }
    Ok(StackedAffine {
        matrix,
        offset,
        depth,
        block_widths: widths,
    })
}

/// Convex polytope of inputs inducing `pattern`: one halfspace per hidden
/// neuron, row i of the depth L-1 stack constrained > 0 where the bit is set
/// and <= 0 otherwise.
pub fn polytope_of(net: &NetworkParams, pattern: &ActivationPattern) -> Result<HalfspaceSystem> {
    if !pattern.matches_net(net) {
        return Err(Error::shape(
            "polytope pattern bits",
            net.total_hidden(),
            pattern.total_bits(),
        ));
    }
    let stacked = stacked_affine(net, pattern, net.depth() - 1)?;
    Ok(HalfspaceSystem {
        normals: stacked.matrix,
        offsets: stacked.offset,
        strict: pattern.flat_bits(),
    })
}
