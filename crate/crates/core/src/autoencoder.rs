//! Small fully connected autoencoder trained by full-batch gradient descent.
//!
//! The latent code feeds the proximity score and the reconstruction error
//! feeds data-manifold closeness. Inputs are min-max normalized per component
//! with statistics captured from the training set and stored in the model.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::RngStream;
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer, `weights` row-major with shape `out x inp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize, activation: Activation) -> Self {
        Self { inp, out, activation, weights: vec![0.0; inp * out], biases: vec![0.0; out] }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.weights[o * self.inp..(o + 1) * self.inp];
                let z = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                self.activation.apply(z)
            })
            .collect()
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { hidden: 16, latent: 4, epochs: 20_000, lr: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpAutoencoder {
    pub layers: Vec<Dense>,
    /// Number of leading layers that make up the encoder.
    pub encoder_layers: usize,
    pub norm_min: Vec<f64>,
    pub norm_max: Vec<f64>,
}

/// Per-epoch training losses (mean squared reconstruction error per sample).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderReport {
    pub loss_history: Vec<f64>,
    pub final_mse: f64,
}

impl MlpAutoencoder {
    /// `input -> hidden -> latent -> hidden -> input`, tanh on hidden layers,
    /// identity on the output, Xavier-uniform initial weights.
    pub fn new(input: usize, hidden: usize, latent: usize, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        let shapes = [
            (input, hidden, Activation::Tanh),
            (hidden, latent, Activation::Tanh),
            (latent, hidden, Activation::Tanh),
            (hidden, input, Activation::Identity),
        ];
        let layers = shapes
            .iter()
            .map(|&(i, o, act)| {
                let mut d = Dense::zeros(i, o, act);
                let limit = (6.0 / (i + o) as f64).sqrt();
                for w in &mut d.weights {
                    *w = rng.random_range(-limit..limit);
                }
                d
            })
            .collect();
        Self { layers, encoder_layers: 2, norm_min: vec![0.0; input], norm_max: vec![1.0; input] }
    }

    /// Linear network whose every layer is the identity map.
    pub fn identity(dim: usize) -> Self {
        let layers = (0..4)
            .map(|_| {
                let mut d = Dense::zeros(dim, dim, Activation::Identity);
                for i in 0..dim {
                    d.weights[i * dim + i] = 1.0;
                }
                d
            })
            .collect();
        Self { layers, encoder_layers: 2, norm_min: vec![0.0; dim], norm_max: vec![1.0; dim] }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inp
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[self.encoder_layers - 1].out
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::FeatureLength { got: x.len(), expected: self.input_dim() });
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.norm_min.iter().zip(&self.norm_max))
            .map(|(v, (lo, hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    (v - lo) / span
                } else {
                    v - lo
                }
            })
            .collect()
    }

    fn fit_normalization(&mut self, data: &[Vec<f64>]) {
        let dim = self.input_dim();
        self.norm_min = (0..dim).map(|j| data.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min)).collect();
        self.norm_max = (0..dim).map(|j| data.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    }

    /// Activations of every layer for an already normalized input.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }

    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_len(features)?;
        let mut h = self.normalize(features);
        for layer in &self.layers[..self.encoder_layers] {
            h = layer.forward(&h);
        }
        Ok(h)
    }

    /// Reconstruction in normalized feature space.
    pub fn reconstruct(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_len(features)?;
        Ok(self.forward_all(&self.normalize(features)).pop().expect("output layer"))
    }

    /// Squared Euclidean reconstruction error in normalized feature space.
    pub fn reconstruction_error(&self, features: &[f64]) -> Result<f64> {
        let x = self.normalize(features);
        let y = self.reconstruct(features)?;
        Ok(sq_dist(&x, &y))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    /// Mean over samples of the squared reconstruction error, on inputs that
    /// are already normalized.
    pub fn batch_loss(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|x| sq_dist(x, self.forward_all(x).last().expect("output"))).sum::<f64>() / data.len() as f64
    }

    /// Loss and its gradient with respect to [`Self::params`], by backpropagation.
    pub fn loss_and_gradient(&self, data: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let n = data.len() as f64;
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inp, l.out, l.activation)).collect();
        let mut loss = 0.0;
        for x in data {
            let acts = self.forward_all(x);
            let out = acts.last().expect("output");
            loss += sq_dist(x, out);
            // d(loss_i / n) / d(output)
            let mut delta: Vec<f64> = out.iter().zip(x).map(|(y, t)| 2.0 * (y - t) / n).collect();
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let y = &acts[li + 1];
                let input = &acts[li];
                for (d, yo) in delta.iter_mut().zip(y) {
                    *d *= layer.activation.derivative_from_output(*yo);
                }
                let g = &mut grads[li];
                for (o, &d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inp..(o + 1) * layer.inp];
                    for (gw, v) in row.iter_mut().zip(input) {
                        *gw += d * v;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inp];
                    for (row, &d) in layer.weights.chunks_exact(layer.inp).zip(&delta) {
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for g in grads {
            flat.extend(g.weights);
            flat.extend(g.biases);
        }
        (loss / n, flat)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.layers.is_empty() || model.encoder_layers == 0 || model.encoder_layers > model.layers.len() {
            return Err(Error::Invalid("autoencoder file has an inconsistent layer layout".into()));
        }
        Ok(model)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fit normalization on `dataset`, then run `cfg.epochs` full-batch gradient
/// descent steps on the mean squared reconstruction error.
pub fn train_autoencoder(dataset: &[Vec<f64>], cfg: &AutoencoderConfig) -> Result<(MlpAutoencoder, AutoencoderReport)> {
    let first = dataset.first().ok_or(Error::NoData("autoencoder training set is empty"))?;
    let dim = first.len();
    if let Some(bad) = dataset.iter().find(|x| x.len() != dim) {
        return Err(Error::FeatureLength { got: bad.len(), expected: dim });
    }
    if cfg.hidden == 0 || cfg.latent == 0 {
        return Err(config_err("autoencoder layer widths must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(config_err("autoencoder learning rate must be positive"));
    }
    let mut model = MlpAutoencoder::new(dim, cfg.hidden, cfg.latent, RngStream::new(cfg.seed, 0xAE));
    model.fit_normalization(dataset);
    let data: Vec<Vec<f64>> = dataset.iter().map(|x| model.normalize(x)).collect();
    let (model, history) = descend(model, &data, cfg.epochs, cfg.lr);
    let final_mse = model.batch_loss(&data);
    Ok((model, AutoencoderReport { loss_history: history, final_mse }))
}

/// Plain gradient descent on normalized data; returns the loss before each step.
pub fn descend(mut model: MlpAutoencoder, data: &[Vec<f64>], epochs: usize, lr: f64) -> (MlpAutoencoder, Vec<f64>) {
    let mut history = Vec::with_capacity(epochs);
    let mut params = model.params();
    for _ in 0..epochs {
        let (loss, grad) = model.loss_and_gradient(data);
        history.push(loss);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        model.set_params(&params);
    }
    (model, history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_network_reconstructs_exactly() {
        let m = MlpAutoencoder::identity(9);
        let x = [4.0, 0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        assert_eq!(m.reconstruction_error(&x).unwrap(), 0.0);
        assert_eq!(m.encode(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let mut m = MlpAutoencoder::new(9, 16, 4, RngStream::new(1, 1));
        m.set_params(&vec![0.0; m.n_params()]);
        let z = m.encode(&[3.0, 1.0, 4.0, 1.0, 0.0, 2.0, 0.0, 3.0, 1.0]).unwrap();
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let m = MlpAutoencoder::new(9, 16, 4, RngStream::new(1, 1));
        assert!(matches!(m.encode(&[1.0; 8]), Err(Error::FeatureLength { got: 8, expected: 9 })));
        assert!(m.reconstruction_error(&[1.0; 10]).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let m = MlpAutoencoder::new(9, 16, 4, RngStream::new(3, 0));
        let x = [1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 2.0, 3.0, 0.0];
        let a = m.encode(&x).unwrap();
        assert_eq!(a, m.encode(&x).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn memorizes_a_single_point() {
        let x = vec![4.0, 0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let data = vec![x.clone(); 10];
        let (m, report) = train_autoencoder(&data, &AutoencoderConfig::default()).unwrap();
        assert!(report.final_mse < 1e-4, "mse {}", report.final_mse);
        assert!(m.reconstruction_error(&x).unwrap() < 1e-4);
    }

    #[test]
    fn training_is_seeded() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| (0..9).map(|j| ((i * 7 + j * 3) % 5) as f64).collect()).collect();
        let cfg = AutoencoderConfig { epochs: 50, seed: 9, ..Default::default() };
        let (a, _) = train_autoencoder(&data, &cfg).unwrap();
        let (b, _) = train_autoencoder(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(train_autoencoder(&[], &AutoencoderConfig::default()), Err(Error::NoData(_))));
    }

    #[test]
    fn model_file_round_trip() {
        let m = MlpAutoencoder::new(9, 16, 4, RngStream::new(2, 2));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ae.json");
        m.write(&p).unwrap();
        assert_eq!(MlpAutoencoder::read(&p).unwrap(), m);
    }
}
