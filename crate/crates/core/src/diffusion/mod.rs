//! Noise schedule, forward diffusion, the noise-prediction loss, DDPM and
//! DDIM reverse steps, and classifier-free guidance with a sigmoid schedule
//! over the environment step count.

mod denoiser;
mod guidance;
mod loss;
mod policy;
mod sampler;
mod schedule;

pub use denoiser::{
    k_embedding, null_condition, stack_rows, NoisePredictor, OutputSkip, PolicyGrads, PolicyParams,
    PolicyTrace, StepCondition, DENOISER_INPUT_DIM, HIDDEN_LAYERS, HIDDEN_WIDTH, K_EMBED_DIM,
    STEP_EMBED_DIM,
};
pub use guidance::{
    cfg_combine, lambda_at, GuidanceConfig, DEFAULT_LAMBDA_MAX, DEFAULT_S_T0_FRACTION,
};
pub use loss::{ddpm_loss, ddpm_loss_value, LossBatch};
pub use policy::Policy;
pub use sampler::{
    ddim_step, ddpm_reverse_step, ddpm_reverse_update, sample_normalized, DdimPlan,
    SampleMode, SampleOutput, SampleRequest, DEFAULT_INFERENCE_STEPS,
};
pub use schedule::{
    forward_diffuse, make_noise_schedule, NoiseSchedule, ReverseCoeffs, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_STEPS,
};

use thiserror::Error;

use crate::netcore::NetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: K={steps}, beta {beta_start}..{beta_end}")]
    InvalidSchedule {
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
    #[error("diffusion step {k} outside 1..={steps}")]
    StepOutOfRange { k: usize, steps: usize },
    #[error("DDIM step must decrease: {k} -> {k_prev}")]
    StepOrder { k: usize, k_prev: usize },
    #[error("alpha_bar at step {k} is not positive")]
    DegenerateAlphaBar { k: usize },
    #[error("invalid DDIM plan: {inference_steps} steps over {train_steps}")]
    InvalidPlan {
        inference_steps: usize,
        train_steps: usize,
    },
    #[error("invalid guidance: lambda_max={lambda_max}, s_t0={s_t0}")]
    InvalidGuidance { lambda_max: f64, s_t0: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("sampled chunk is not finite")]
    NonFiniteSample,
    #[error(transparent)]
    Net(#[from] NetError),
}
