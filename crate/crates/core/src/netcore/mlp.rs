use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Mish,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Mish => "mish",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "mish" => Ok(Activation::Mish),
            other => Err(NetError::UnknownActivation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(NetError::DimensionMismatch {
                context: "dense layer bias",
                expected: weights.nrows(),
                found: bias.len(),
            });
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(NetError::NonFinite {
                context: "dense layer parameters",
            });
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(out_dim, |_| rng.random_range(-bound..bound));
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Returns `(pre_activation, output)` for a `[batch, in]` input.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if input.ncols() != self.in_dim() {
            return Err(NetError::DimensionMismatch {
                context: "dense layer input",
                expected: self.in_dim(),
                found: input.ncols(),
            });
        }
        let mut pre = input.dot(&self.weights.t());
        pre += &self.bias;
        let act = self.activation;
        let post = match act {
            Activation::Identity => pre.clone(),
            _ => pre.mapv(|v| act.apply(v)),
        };
        Ok((pre, post))
    }

    /// Backpropagates `out_grad` (gradient w.r.t. this layer's output).
    /// Returns the parameter gradient and the gradient w.r.t. the input.
    pub fn backward_batch(
        &self,
        input: ArrayView2<f64>,
        pre: ArrayView2<f64>,
        out_grad: ArrayView2<f64>,
    ) -> (LayerGrad, Array2<f64>) {
        let act = self.activation;
        let delta = match act {
            Activation::Identity => out_grad.to_owned(),
            _ => {
                let mut d = out_grad.to_owned();
                d.zip_mut_with(&pre, |g, &p| *g *= act.derivative(p));
                d
            }
        };
        let weights = delta.t().dot(&input);
        let bias = delta.sum_axis(Axis(0));
        let input_grad = delta.dot(&self.weights);
        (LayerGrad { weights, bias }, input_grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input fed to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl MlpParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NetError::DimensionMismatch {
                    context: "layer chain",
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Builds a network with layer widths `dims` (`dims[0]` is the input),
    /// `hidden` activation on every layer but the last.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init_uniform(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<ForwardTrace> {
        if input.ncols() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                found: input.ncols(),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite { context: "mlp input" });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        for layer in &self.layers {
            let (z, a) = layer.forward_batch(current.view())?;
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: current,
        })
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                found: input.ncols(),
            });
        }
        let mut current = input.to_owned();
        for layer in &self.layers {
            current = layer.forward_batch(current.view())?.1;
        }
        Ok(current)
    }

    /// Gradients of a scalar loss given `d loss / d output` for every row.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if output_grad.dim() != trace.output.dim() {
            return Err(NetError::DimensionMismatch {
                context: "mlp output gradient",
                expected: trace.output.len(),
                found: output_grad.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, down) =
                layer.backward_batch(trace.inputs[i].view(), trace.pre[i].view(), upstream.view());
            grads.push(g);
            upstream = down;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }

    pub fn zeros_like_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

impl ParamSet for MlpParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
        }
    }
}

impl ParamSet for MlpGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    if !input.iter().all(|v| v.is_finite()) {
        return Err(NetError::NonFinite { context: "mlp input" });
    }
    Ok(params.forward_batch(x)?.into_raw_vec_and_offset().0)
}

/// Single-sample backward pass. Returns parameter gradients and the input
/// gradient.
pub fn mlp_backward(
    params: &MlpParams,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    if output_grad.len() != params.output_dim() {
        return Err(NetError::DimensionMismatch {
            context: "mlp output gradient",
            expected: params.output_dim(),
            found: output_grad.len(),
        });
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let trace = params.forward_trace(x)?;
    let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
    let (grads, input_grad) = params.backward(&trace, g)?;
    Ok((grads, input_grad.into_raw_vec_and_offset().0))
}
