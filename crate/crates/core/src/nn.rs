//! Dense layers and splittable sequential networks.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Activation, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `y = act(x · Wᵀ + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::dim("dense layer", weights.shape(), bias.shape()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> u64 {
        (self.out_dim() * self.in_dim() + self.out_dim()) as u64
    }

    /// Multiply-accumulates per input row. Bias and activation are free.
    pub fn mac_count(&self) -> u64 {
        (self.out_dim() * self.in_dim()) as u64
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = autograd::transpose(&self.weights)?;
        let z = autograd::add_bias(&autograd::matmul(x, &wt)?, &self.bias)?;
        Ok(autograd::activation(&z, self.activation))
    }
}

/// Per-row multiply-accumulate tally filled in by instrumented forwards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounter {
    pub macs: u64,
}

/// Dimension chain plus one activation per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let arch = Self { dims, activations };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("architecture needs an input dimension".into()));
        }
        if let Some(i) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("dimension {i} is zero")));
        }
        if self.activations.len() + 1 != self.dims.len() {
            return Err(Error::Config(format!(
                "{} dims need {} activations, got {}",
                self.dims.len(),
                self.dims.len() - 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.activations.len()
    }

    /// The dense autoencoder used throughout: 64→32→16→32→64, tanh hidden
    /// layers, linear output.
    pub fn default_autoencoder() -> Self {
        Self {
            dims: vec![64, 32, 16, 32, 64],
            activations: vec![
                Activation::Tanh,
                Activation::Tanh,
                Activation::Tanh,
                Activation::None,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    UniformXavier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn xavier(seed: u64) -> Self {
        Self {
            scheme: InitScheme::UniformXavier,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            layers: Vec::new(),
        }
    }

    /// Xavier-uniform weights from a ChaCha8 stream, zero biases.
    pub fn init(arch: &Architecture, spec: InitSpec) -> Result<Self> {
        arch.validate()?;
        let InitScheme::UniformXavier = spec.scheme;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::with_capacity(arch.layer_count());
        for (k, &act) in arch.activations.iter().enumerate() {
            let (fan_in, fan_out) = (arch.dims[k], arch.dims[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Config(format!("xavier bound for layer {k}: {e}")))?;
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            layers.push(DenseLayer {
                weights: Tensor::new(vec![fan_out, fan_in], w)?,
                bias: Tensor::zeros(&[fan_out]),
                activation: act,
            });
        }
        Ok(Self {
            input_dim: arch.dims[0],
            layers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.weights.shape().len() != 2 || layer.bias.shape() != [layer.out_dim()] {
                return Err(Error::dim("dense layer", layer.weights.shape(), layer.bias.shape()));
            }
            if layer.in_dim() != width {
                return Err(Error::Config(format!(
                    "layer {k} expects width {} but receives {width}",
                    layer.in_dim()
                )));
            }
            width = layer.out_dim();
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, DenseLayer::out_dim)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn architecture(&self) -> Architecture {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(DenseLayer::out_dim));
        Architecture {
            dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(DenseLayer::mac_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::dim("network forward", x.shape(), &[x.rows(), self.input_dim]));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Forward pass that also charges `rows · mac_count` to `counter`.
    pub fn forward_counted(&self, x: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
        let out = self.forward(x)?;
        counter.macs += x.rows() as u64 * self.mac_count();
        Ok(out)
    }

    /// Splits into layers `[0, i)` and `[i, len)`.
    pub fn split_at(&self, i: usize) -> Result<(Network, Network)> {
        if i > self.layers.len() {
            return Err(Error::Index {
                index: i,
                max: self.layers.len(),
            });
        }
        let prefix = Network {
            input_dim: self.input_dim,
            layers: self.layers[..i].to_vec(),
        };
        let suffix = Network {
            input_dim: prefix.output_dim(),
            layers: self.layers[i..].to_vec(),
        };
        Ok((prefix, suffix))
    }

    /// `other` applied after `self`.
    pub fn concat(&self, other: &Network) -> Result<Network> {
        if other.input_dim != self.output_dim() {
            return Err(Error::dim("concat", &[self.output_dim()], &[other.input_dim]));
        }
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Ok(Network {
            input_dim: self.input_dim,
            layers,
        })
    }

    /// Registers every weight and bias as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundNetwork {
        BoundNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(&l.weights), g.param(&l.bias)))
                .collect(),
        }
    }

    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundNetwork, x: Var) -> Result<Var> {
        self.check_input(g.value(x))?;
        let mut h = x;
        for (layer, &(w, b)) in self.layers.iter().zip(&bound.layers) {
            let wt = g.transpose(w)?;
            let z = g.matmul(h, wt)?;
            let z = g.add_bias(z, b)?;
            h = g.activation(z, layer.activation);
        }
        Ok(h)
    }

    /// Weights and biases in layer order, named `{prefix}.{k}.weight|bias`.
    pub fn named_params_mut<'a>(
        &'a mut self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (String, &'a mut Tensor)> + 'a {
        self.layers.iter_mut().enumerate().flat_map(move |(k, l)| {
            [
                (format!("{prefix}.{k}.weight"), &mut l.weights),
                (format!("{prefix}.{k}.bias"), &mut l.bias),
            ]
        })
    }
}

/// Graph handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    layers: Vec<(Var, Var)>,
}

impl BoundNetwork {
    /// Copies the graph gradients into the network's parameter tensors.
    pub fn store_grads(&self, g: &Graph, net: &mut Network) {
        for (layer, &(w, b)) in net.layers.iter_mut().zip(&self.layers) {
            store(g, w, &mut layer.weights);
            store(g, b, &mut layer.bias);
        }
    }
}

pub(crate) fn store(g: &Graph, v: Var, t: &mut Tensor) {
    match g.grad(v) {
        Some(grad) => t.set_grad(grad.to_vec()),
        None => t.set_grad(vec![0.0; t.numel()]),
    }
}
