//! A small multilayer perceptron whose output is projected onto the unit sphere.
//!
//! Layers are dense `y = x W + b` with `W` stored as `fan_in x fan_out`. Hidden layers
//! apply the configured activation; the last layer is linear and followed by L2
//! normalization, so every output row is a unit vector.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objective::normalize_backward_into;
use crate::par;
use crate::sphere::{norm, MIN_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Input width first, embedding width last.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        NetworkConfig {
            layer_widths,
            activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least an input and an output width".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.embedding_dim() < 2 {
            return Err(Error::InvalidConfig("embedding width must be >= 2".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Parameter-shaped tensors: gradients, or optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// All entries, layer by layer: weights row-major, then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    fn congruent(&self, net: &Network) -> bool {
        self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.dim() == b.dim())
    }
}

/// Activations saved by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer; the last entry is the pre-normalization `z`.
    pre: Vec<Array2<f64>>,
    /// `||z||` per row.
    norms: Vec<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.norms.len()
    }

    /// Pre-normalization activations of the output layer.
    pub fn pre_normalization(&self) -> &Array2<f64> {
        self.pre.last().unwrap()
    }
}

/// Xavier/Glorot uniform initialization with zero biases.
pub fn init_network(config: NetworkConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in config.layer_widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
            rng.random_range(-bound..=bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(Network {
        config,
        weights,
        biases,
    })
}

impl Network {
    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(config: NetworkConfig, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_widths.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidConfig(format!(
                "expected {layers} layers, got {} weight and {} bias tensors",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in config.layer_widths.windows(2).enumerate() {
            if weights[l].dim() != (pair[0], pair[1]) || biases[l].len() != pair[1] {
                return Err(Error::InvalidConfig(format!("layer {l} has inconsistent shape")));
            }
        }
        let net = Network {
            config,
            weights,
            biases,
        };
        if net
            .weights
            .iter()
            .flatten()
            .chain(net.biases.iter().flatten())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>() + self.biases.iter().map(Array1::len).sum::<usize>()
    }

    /// All parameters in [`Gradients::flatten`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: self.parameter_count(),
            });
        }
        let mut it = values.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut()
                .chain(b.iter_mut())
                .zip(&mut it)
                .for_each(|(dst, &src)| *dst = src);
        }
        Ok(())
    }

    /// Runs the batch (one sample per row) through the network.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.ncols() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: batch.ncols(),
            });
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut current = batch.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = current.dot(w) + b;
            inputs.push(current);
            current = if l < last {
                let act = self.config.activation;
                z.mapv(|x| act.apply(x))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let mut norms = Vec::with_capacity(current.nrows());
        for mut row in current.rows_mut() {
            let n = norm(row.as_slice().expect("owned rows are contiguous"));
            if !(n >= MIN_NORM) || !n.is_finite() {
                return Err(Error::ZeroNorm { norm: n });
            }
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        Ok((current, ForwardCache { inputs, pre, norms }))
    }

    /// Forward pass without a cache, split into chunks that run in parallel.
    pub fn embed(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 256;
        let n = features.nrows();
        let chunks = n.div_ceil(CHUNK);
        let parts = par::map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            self.forward(features.slice(ndarray::s![lo..hi, ..])).map(|(e, _)| e)
        });
        let mut out = Array2::zeros((n, self.config.embedding_dim()));
        for (c, part) in parts.into_iter().enumerate() {
            let part = part?;
            let lo = c * CHUNK;
            out.slice_mut(ndarray::s![lo..lo + part.nrows(), ..]).assign(&part);
        }
        Ok(out)
    }

    /// Parameter gradients given `d loss / d embeddings`.
    pub fn backward(&self, cache: &ForwardCache, grad_embeddings: ArrayView2<'_, f64>) -> Result<Gradients> {
        let n = cache.batch_size();
        let p = self.config.embedding_dim();
        if cache.inputs.len() != self.num_layers() || cache.pre.len() != self.num_layers() {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network has {}",
                cache.inputs.len(),
                self.num_layers()
            )));
        }
        for (l, (input, w)) in cache.inputs.iter().zip(&self.weights).enumerate() {
            if input.ncols() != w.nrows() || cache.pre[l].ncols() != w.ncols() || input.nrows() != n {
                return Err(Error::StaleCache(format!("layer {l} shape differs from the network")));
            }
        }
        if grad_embeddings.dim() != (n, p) {
            return Err(Error::StaleCache(format!(
                "gradient shape {:?} does not match cached batch ({n}, {p})",
                grad_embeddings.dim()
            )));
        }

        let z = cache.pre_normalization();
        let mut delta = Array2::zeros((n, p));
        for i in 0..n {
            let zi = z.row(i);
            let gi = grad_embeddings.row(i);
            let zi = zi.as_slice().expect("owned rows are contiguous");
            let gi = gi.to_vec();
            let mut out = vec![0.0; p];
            normalize_backward_into(zi, cache.norms[i], &gi, &mut out);
            delta.row_mut(i).iter_mut().zip(out).for_each(|(d, v)| *d = v);
        }

        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.num_layers()).rev() {
            grads.weights[l] = cache.inputs[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                let act = self.config.activation;
                upstream.zip_mut_with(&cache.pre[l - 1], |g, &pre| *g *= act.derivative(pre));
                delta = upstream;
            }
        }
        Ok(grads)
    }
}

/// SGD with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl OptimizerState {
    pub fn new(net: &Network, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_like(net),
        })
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut Gradients {
        &mut self.velocity
    }
}

/// `v <- momentum v + g; theta <- theta - lr v`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if !grads.congruent(net) || !opt.velocity.congruent(net) {
        return Err(Error::DimensionMismatch {
            expected: net.parameter_count(),
            got: grads.flatten().len(),
        });
    }
    let (lr, m) = (opt.learning_rate, opt.momentum);
    for l in 0..net.num_layers() {
        let v = &mut opt.velocity.weights[l];
        v.zip_mut_with(&grads.weights[l], |v, &g| *v = m * *v + g);
        net.weights[l].zip_mut_with(v, |w, &v| *w -= lr * v);
        let v = &mut opt.velocity.biases[l];
        v.zip_mut_with(&grads.biases[l], |v, &g| *v = m * *v + g);
        net.biases[l].zip_mut_with(v, |b, &v| *b -= lr * v);
    }
    Ok(())
}
