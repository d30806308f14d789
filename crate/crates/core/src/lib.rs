//! Sampler-side guidance for latent diffusion.
//!
//! * [`guidance`] combines frequency-decoupled guidance, per-sample std
//!   rescaling and zero-projection into a two-branch step.
//! * [`controller`] switches between those branches with an EMA of the
//!   guidance signal's high-frequency share and a hysteresis band.
//! * [`qsilk`] holds the per-step quantile clamp and the late-schedule
//!   edge/depth-gated micro-detail injection.
//! * [`sampler`] drives all of it through a deterministic Euler loop over
//!   analytic predictors so the stack can be exercised without a model.
//!
//! The guidance rule only consumes a `(cond, uncond)` prediction pair, so it
//! is indifferent to whether those are noise or velocity predictions.

pub mod controller;
pub mod error;
pub mod guidance;
pub mod parallel;
pub mod qsilk;
pub mod sampler;
pub mod tensor;

pub use controller::{hf_ratio, hf_ratio_per_sample, next_mode, ControllerState, Mode};
pub use error::{Error, Result};
pub use guidance::{
    apply_mask, fdg_reweight, rescale_to_std, rescale_to_std_with, zero_project, zeresfdg_step,
    FdgBands, GuidanceConfig, GuidedOutput, Projection, StepDiagnostics,
};
pub use qsilk::{alpha_ramp, micro_detail_inject, quantile_clamp, ClampStats, DepthMap, QSilkConfig, Ramp};
pub use sampler::{predict_pair, run, RunOutput, SigmaSchedule, StepTrace, ToyModel};
pub use tensor::{Element, GaussianKernel, Shape4, Tensor4};
