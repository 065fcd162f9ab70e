//! Feed-forward networks with hand-written reverse-mode gradients.
//!
//! A layer computes `post = activation(input · W + b)` with `W` stored as
//! `fan_in × fan_out`. Batches are rows.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// d(post)/d(pre), using whichever of the two is cheaper.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
            Activation::Softplus => 1.0 / (1.0 + (-pre).exp()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Stack of dense layers. An empty stack is the identity map on `input_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Per-layer pre- and post-activations from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    input: DenseMatrix,
    pre: Vec<DenseMatrix>,
    post: Vec<DenseMatrix>,
}

impl Trace {
    pub fn input(&self) -> &DenseMatrix {
        &self.input
    }

    pub fn output(&self) -> &DenseMatrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn pre_activations(&self) -> &[DenseMatrix] {
        &self.pre
    }

    pub fn layer_count(&self) -> usize {
        self.post.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

impl MlpNet {
    /// Network over `dims = [in, h1, ..., out]`; hidden layers use `hidden`,
    /// the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self {
            input_dim: dims[0],
            layers,
        })
    }

    pub fn identity(width: usize) -> Self {
        Self {
            input_dim: width,
            layers: Vec::new(),
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("from_layers needs at least one layer"))?;
        let input_dim = first.fan_in();
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::config("bias length must equal fan-out"));
            }
        }
        Ok(Self { input_dim, layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::fan_out)
    }

    /// Widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn forward(&self, input: &DenseMatrix) -> Result<Trace> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(input);
            let mut z = x.view().dot(&layer.weights);
            z += &layer.bias;
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(DenseMatrix::from_array(z));
            post.push(DenseMatrix::from_array(a));
        }
        Ok(Trace {
            input: input.clone(),
            pre,
            post,
        })
    }

    /// Forward pass keeping only the output.
    pub fn predict(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.view().dot(&layer.weights);
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = DenseMatrix::from_array(z);
        }
        Ok(x)
    }

    /// Reverse pass. Returns parameter gradients and the gradient with respect
    /// to the network input.
    pub fn backward(
        &self,
        trace: &Trace,
        output_grad: &DenseMatrix,
    ) -> Result<(MlpGrads, DenseMatrix)> {
        if trace.layer_count() != self.layers.len() {
            return Err(Error::Usage(format!(
                "trace has {} layers, network has {}",
                trace.layer_count(),
                self.layers.len()
            )));
        }
        if output_grad.shape() != trace.output().shape() {
            return Err(Error::config(format!(
                "output gradient is {:?}, network output is {:?}",
                output_grad.shape(),
                trace.output().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.array().clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = trace.pre[i].array();
            let post = trace.post[i].array();
            if layer.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(pre)
                    .and(post)
                    .for_each(|d, &z, &a| *d *= layer.activation.derivative(z, a));
            }
            let x = if i == 0 {
                trace.input.array()
            } else {
                trace.post[i - 1].array()
            };
            let gw = x.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights.t());
            grads.push(LayerGrads {
                weights: gw,
                bias: gb,
            });
            delta = next;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, DenseMatrix::from_array(delta)))
    }

    fn check_input(&self, input: &DenseMatrix) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::config(format!(
                "network expects {} input columns, got {}",
                self.input_dim,
                input.cols()
            )));
        }
        Ok(())
    }
}

impl Parameters for MlpNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.dim(), (1, l.bias.len())])
            .collect()
    }
}

impl Parameters for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.dim(), (1, l.bias.len())])
            .collect()
    }
}
