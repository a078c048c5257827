//! JSON serialization of networks and mixtures.
//!
//! Network files: `{"activation": "relu" | {"leaky_relu": gamma},
//! "layers": [{"weight": [[...]], "bias": [...]}, ...]}` with row-major
//! weights. Mixture files: `{"weights": [...], "means": [[...]],
//! "covariances": [[[...]]], "kind": "full" | "diagonal"}`. Unknown fields
//! and unknown activation tags are rejected.

use crate::error::{Error, Result};
use crate::mixture::{CovarianceKind, GaussianMixture};
use crate::model::{Activation, Layer, NetworkParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    activation: Activation,
    layers: Vec<LayerFile>,
}

pub fn network_to_json(net: &NetworkParams) -> Result<String> {
    let file = NetworkFile {
        activation: net.activation(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weight: (0..l.weight.nrows())
                    .map(|i| l.weight.row(i).iter().cloned().collect())
                    .collect(),
                bias: l.bias.iter().cloned().collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn network_from_json(text: &str) -> Result<NetworkParams> {
    let file: NetworkFile = serde_json::from_str(text)?;
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let rows = l.weight.len();
            let cols = l.weight.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 {
                return Err(Error::Model(format!("layer {} has an empty weight", i + 1)));
            }
            for (r, row) in l.weight.iter().enumerate() {
                if row.len() != cols {
                    return Err(Error::shape(
                        format!("layer {} weight row {r}", i + 1),
                        cols,
                        row.len(),
                    ));
                }
            }
            Layer::new(
                DMatrix::from_fn(rows, cols, |r, c| l.weight[r][c]),
                DVector::from_vec(l.bias),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(layers, file.activation)
}

pub fn save_network(net: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, network_to_json(net)?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<NetworkParams> {
    network_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    kind: CovarianceKind,
}

pub fn mixture_to_json(gmm: &GaussianMixture) -> Result<String> {
    let file = MixtureFile {
        weights: gmm.weights().to_vec(),
        means: (0..gmm.len())
            .map(|k| gmm.mean(k).iter().cloned().collect())
            .collect(),
        covariances: (0..gmm.len())
            .map(|k| {
                let c = gmm.covariance(k);
                (0..c.nrows())
                    .map(|i| c.row(i).iter().cloned().collect())
                    .collect()
            })
            .collect(),
        kind: gmm.kind(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn mixture_from_json(text: &str) -> Result<GaussianMixture> {
    let file: MixtureFile = serde_json::from_str(text)?;
    let means = file.means.into_iter().map(DVector::from_vec).collect();
    let covariances = file
        .covariances
        .into_iter()
        .enumerate()
        .map(|(k, rows)| {
            let n = rows.len();
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::shape(
                        format!("component {k} covariance row {i}"),
                        n,
                        row.len(),
                    ));
                }
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(file.weights, means, covariances, file.kind)
}

pub fn save_mixture(gmm: &GaussianMixture, path: &Path) -> Result<()> {
    std::fs::write(path, mixture_to_json(gmm)?)?;
    Ok(())
}

pub fn load_mixture(path: &Path) -> Result<GaussianMixture> {
    mixture_from_json(&std::fs::read_to_string(path)?)
}
