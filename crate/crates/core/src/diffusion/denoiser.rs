use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::NoiseSchedule;
use crate::dataset::{CHUNK_DIM, OBS_DIM};
use crate::netcore::{
    Activation, DenseLayer, LayerGrad, MlpGrads, MlpParams, NetError, ParamSet,
};

pub const STEP_EMBED_DIM: usize = 32;
pub const K_EMBED_DIM: usize = 32;
pub const HIDDEN_WIDTH: usize = 256;
pub const HIDDEN_LAYERS: usize = 3;
pub const DENOISER_INPUT_DIM: usize = CHUNK_DIM + OBS_DIM + STEP_EMBED_DIM + K_EMBED_DIM;

const X_COLS: std::ops::Range<usize> = 0..CHUNK_DIM;
const OBS_COLS: std::ops::Range<usize> = CHUNK_DIM..CHUNK_DIM + OBS_DIM;
const STEP_COLS: std::ops::Range<usize> =
    CHUNK_DIM + OBS_DIM..CHUNK_DIM + OBS_DIM + STEP_EMBED_DIM;
const K_COLS: std::ops::Range<usize> = CHUNK_DIM + OBS_DIM + STEP_EMBED_DIM..DENOISER_INPUT_DIM;

/// Timestep conditioning for one denoiser call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepCondition {
    /// Normalized step feature `s_t / s_mean`.
    Active(f64),
    /// The learned null token.
    Null,
}

impl StepCondition {
    /// Input row of the step-embedding layer: `[s, 0]` or `[0, 1]`.
    pub fn embedding_input(self) -> [f64; 2] {
        match self {
            StepCondition::Active(s) => [s, 0.0],
            StepCondition::Null => [0.0, 1.0],
        }
    }
}

pub fn null_condition(_cond: StepCondition) -> StepCondition {
    StepCondition::Null
}

/// Sinusoidal features of the diffusion step `k`.
pub fn k_embedding(k: usize) -> [f64; K_EMBED_DIM] {
    let half = K_EMBED_DIM / 2;
    let mut out = [0.0; K_EMBED_DIM];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = k as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Anything that predicts the noise in a batch of noisy chunks.
pub trait NoisePredictor {
    /// `x`: `[B, CHUNK_DIM]` noisy chunks; `obs`: `[B, OBS_DIM]` normalized
    /// windows. Returns `[B, CHUNK_DIM]`.
    fn predict_noise(
        &self,
        x: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        cond: &[StepCondition],
        k: &[usize],
    ) -> Result<Array2<f64>, NetError>;
}

/// Fixed per-step mixing of the network output `F` with its noisy input:
/// `ε̂ = √(1 − ᾱ_k)·x_k + √ᾱ_k·F`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSkip {
    c_skip: Vec<f64>,
    c_out: Vec<f64>,
}

impl OutputSkip {
    pub fn from_schedule(schedule: &NoiseSchedule) -> Self {
        let (c_skip, c_out) = schedule
            .alpha_bars
            .iter()
            .map(|ab| ((1.0 - ab).sqrt(), ab.sqrt()))
            .unzip();
        Self { c_skip, c_out }
    }

    fn coeffs(&self, k: usize) -> Result<(f64, f64), NetError> {
        match (self.c_skip.get(k), self.c_out.get(k)) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(NetError::DimensionMismatch {
                context: "output skip step",
                expected: self.c_skip.len(),
                found: k,
            }),
        }
    }

    fn apply(&self, x: ArrayView2<f64>, f: &mut Array2<f64>, k: &[usize]) -> Result<(), NetError> {
        for ((mut row, x_row), &ki) in f.outer_iter_mut().zip(x.outer_iter()).zip(k) {
            let (a, b) = self.coeffs(ki)?;
            row.zip_mut_with(&x_row, |v, &xi| *v = a * xi + b * *v);
        }
        Ok(())
    }
}

/// Shared conditional/unconditional denoiser: a linear step embedding and an
/// MLP over `[noisy chunk | observation | step embedding | k features]`,
/// optionally mixed with its noisy input through an [`OutputSkip`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub step_embed: DenseLayer,
    pub net: MlpParams,
    pub skip: Option<OutputSkip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub step_embed: LayerGrad,
    pub net: MlpGrads,
}

/// Intermediate values of a [`PolicyParams`] forward pass.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    embed_input: Array2<f64>,
    embed_pre: Array2<f64>,
    net: crate::netcore::ForwardTrace,
    k: Vec<usize>,
    output: Array2<f64>,
}

impl PolicyTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl PolicyParams {
    /// Fan-in uniform initialisation. The step-embedding column that reads
    /// `s` starts at zero so a network trained only on null tokens ignores
    /// `s` exactly.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut step_embed =
            DenseLayer::init_uniform(2, STEP_EMBED_DIM, Activation::Identity, rng);
        step_embed.weights.column_mut(0).fill(0.0);
        let mut dims = vec![DENOISER_INPUT_DIM];
        dims.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
        dims.push(CHUNK_DIM);
        let net = MlpParams::init(&dims, Activation::Mish, Activation::Identity, rng);
        Self {
            step_embed,
            net,
            skip: None,
        }
    }

    pub fn with_skip(self, schedule: &NoiseSchedule) -> Self {
        Self {
            skip: Some(OutputSkip::from_schedule(schedule)),
            ..self
        }
    }

    fn check_shapes(&self) -> Result<(), NetError> {
        let checks = [
            ("step embedding input", 2, self.step_embed.in_dim()),
            ("step embedding output", STEP_EMBED_DIM, self.step_embed.out_dim()),
            ("denoiser input", DENOISER_INPUT_DIM, self.net.input_dim()),
            ("denoiser output", CHUNK_DIM, self.net.output_dim()),
        ];
        for (context, expected, found) in checks {
            if expected != found {
                return Err(NetError::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Returns `(embedding input, embedding pre-activation, network input)`.
    fn assemble(
        &self,
        x: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        cond: &[StepCondition],
        k: &[usize],
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>), NetError> {
        self.check_shapes()?;
        let b = x.nrows();
        for (context, expected, found) in [
            ("noisy chunk width", CHUNK_DIM, x.ncols()),
            ("observation width", OBS_DIM, obs.ncols()),
            ("observation rows", b, obs.nrows()),
            ("condition count", b, cond.len()),
            ("diffusion step count", b, k.len()),
        ] {
            if expected != found {
                return Err(NetError::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        let embed_input =
            Array2::from_shape_fn((b, 2), |(i, j)| cond[i].embedding_input()[j]);
        let (embed_pre, embed_out) = self.step_embed.forward_batch(embed_input.view())?;
        let mut input = Array2::zeros((b, DENOISER_INPUT_DIM));
        input.slice_mut(s![.., X_COLS]).assign(&x);
        input.slice_mut(s![.., OBS_COLS]).assign(&obs);
        input.slice_mut(s![.., STEP_COLS]).assign(&embed_out);
        for (mut row, &ki) in input.slice_mut(s![.., K_COLS]).outer_iter_mut().zip(k) {
            row.assign(&ndarray::ArrayView1::from(&k_embedding(ki)));
        }
        Ok((embed_input, embed_pre, input))
    }

    pub fn forward_trace(
        &self,
        x: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        cond: &[StepCondition],
        k: &[usize],
    ) -> Result<PolicyTrace, NetError> {
        let (embed_input, embed_pre, input) = self.assemble(x, obs, cond, k)?;
        let net = self.net.forward_trace(input.view())?;
        let mut output = net.output.clone();
        if let Some(skip) = &self.skip {
            skip.apply(x, &mut output, k)?;
        }
        Ok(PolicyTrace {
            embed_input,
            embed_pre,
            net,
            k: k.to_vec(),
            output,
        })
    }

    pub fn backward(
        &self,
        trace: &PolicyTrace,
        output_grad: ArrayView2<f64>,
    ) -> Result<PolicyGrads, NetError> {
        let mut scaled = output_grad.to_owned();
        if let Some(skip) = &self.skip {
            for (mut row, &ki) in scaled.outer_iter_mut().zip(&trace.k) {
                let (_, b) = skip.coeffs(ki)?;
                row.mapv_inplace(|g| b * g);
            }
        }
        let (net, input_grad) = self.net.backward(&trace.net, scaled.view())?;
        let embed_grad = input_grad.slice(s![.., STEP_COLS]);
        let (step_embed, _) = self.step_embed.backward_batch(
            trace.embed_input.view(),
            trace.embed_pre.view(),
            embed_grad,
        );
        Ok(PolicyGrads { step_embed, net })
    }
}

impl NoisePredictor for PolicyParams {
    fn predict_noise(
        &self,
        x: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        cond: &[StepCondition],
        k: &[usize],
    ) -> Result<Array2<f64>, NetError> {
        let (_, _, input) = self.assemble(x, obs, cond, k)?;
        let mut out = self.net.forward_batch(input.view())?;
        if let Some(skip) = &self.skip {
            skip.apply(x, &mut out, k)?;
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite {
                context: "noise prediction",
            });
        }
        Ok(out)
    }
}

impl ParamSet for PolicyParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.step_embed.weights.as_slice().expect("standard layout"),
            self.step_embed.bias.as_slice().expect("contiguous"),
        ];
        out.extend(self.net.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.step_embed.weights.as_slice_mut().expect("standard layout"),
            self.step_embed.bias.as_slice_mut().expect("contiguous"),
        ];
        out.extend(self.net.slices_mut());
        out
    }
}

impl ParamSet for PolicyGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.step_embed.weights.as_slice().expect("standard layout"),
            self.step_embed.bias.as_slice().expect("contiguous"),
        ];
        out.extend(self.net.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.step_embed.weights.as_slice_mut().expect("standard layout"),
            self.step_embed.bias.as_slice_mut().expect("contiguous"),
        ];
        out.extend(self.net.slices_mut());
        out
    }
}

/// Rows of `rows` stacked into a `[rows.len(), D]` matrix.
pub fn stack_rows<const D: usize>(rows: &[[f64; D]]) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), D), flat).expect("row-major shape")
}
