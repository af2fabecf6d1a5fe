use serde::{Deserialize, Serialize};

use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    /// Applies the activation to one row of pre-activations in place.
    pub(crate) fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A fully connected layer computing `σ(x · Wᵀ + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape(
                0,
                format!(
                    "bias length {} does not match {} output units",
                    bias.len(),
                    weights.rows()
                ),
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor2::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    #[inline]
    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn output_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    /// True when both layers have the same widths and activation.
    pub fn same_shape(&self, other: &DenseLayer) -> bool {
        self.weights.shape() == other.weights.shape() && self.activation == other.activation
    }

    fn pre_activation(&self, input: &Tensor2) -> Tensor2 {
        let mut z = Tensor2::zeros(input.rows(), self.output_width());
        for i in 0..input.rows() {
            let x = input.row(i);
            for (j, zj) in z.row_mut(i).iter_mut().enumerate() {
                *zj = dot(x, self.weights.row(j)) + self.bias[j];
            }
        }
        z
    }
}

/// Width and activation of one layer, as declared in an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input_dim, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::Config(format!("layer {i} has zero width")));
            }
            if l.activation == Activation::Softmax && i != last {
                return Err(Error::Config(format!(
                    "softmax is only allowed on the final layer (found on layer {i})"
                )));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer.
    pub fn fans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins = std::iter::once(self.input_dim).chain(self.layers.iter().map(|l| l.width));
        ins.zip(self.layers.iter().map(|l| l.width))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    /// Checks that concrete layers realize this architecture.
    pub fn check_layers(&self, layers: &[DenseLayer]) -> Result<()> {
        if layers.len() != self.layers.len() {
            return Err(Error::Assembly(format!(
                "expected {} layers, got {}",
                self.layers.len(),
                layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), (spec, layer))) in
            self.fans().zip(self.layers.iter().zip(layers)).enumerate()
        {
            if layer.weights.shape() != (fan_out, fan_in)
                || layer.bias.len() != fan_out
                || layer.activation != spec.activation
            {
                return Err(Error::Assembly(format!(
                    "layer {i} is {}x{} {:?}, expected {fan_out}x{fan_in} {:?}",
                    layer.weights.rows(),
                    layer.weights.cols(),
                    layer.activation,
                    spec.activation
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer values recorded by [`forward`] for use in backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l + 1]` is layer `l`'s output.
    pub activations: Vec<Tensor2>,
    pub pre_activations: Vec<Tensor2>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor2 {
        self.activations
            .last()
            .expect("cache always holds the input")
    }
}

fn check_input(layers: &[DenseLayer], batch: &Tensor2) -> Result<()> {
    let mut width = batch.cols();
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_width() != width {
            return Err(Error::shape(
                i,
                format!(
                    "layer expects {} inputs but receives {width}",
                    layer.input_width()
                ),
            ));
        }
        if layer.bias.len() != layer.output_width() {
            return Err(Error::shape(i, "bias length differs from output width"));
        }
        if layer.activation == Activation::Softmax && i + 1 != layers.len() {
            return Err(Error::shape(i, "softmax only permitted on the final layer"));
        }
        width = layer.output_width();
    }
    Ok(())
}

/// Runs the batch through every layer, keeping intermediates.
pub fn forward(layers: &[DenseLayer], batch: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
    check_input(layers, batch)?;
    let mut activations = Vec::with_capacity(layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(layers.len());
    activations.push(batch.clone());
    for layer in layers {
        let z = layer.pre_activation(activations.last().unwrap());
        let mut a = z.clone();
        for r in 0..a.rows() {
            layer.activation.apply_row(a.row_mut(r));
        }
        pre_activations.push(z);
        activations.push(a);
    }
    let output = activations.last().unwrap().clone();
    Ok((
        output,
        ForwardCache {
            activations,
            pre_activations,
        },
    ))
}

/// Forward pass without the cache.
pub fn predict(layers: &[DenseLayer], batch: &Tensor2) -> Result<Tensor2> {
    check_input(layers, batch)?;
    let mut current = batch.clone();
    for layer in layers {
        let mut z = layer.pre_activation(&current);
        for r in 0..z.rows() {
            layer.activation.apply_row(z.row_mut(r));
        }
        current = z;
    }
    Ok(current)
}
