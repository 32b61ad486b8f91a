//! DDPM machinery over fixed-horizon state windows.
//!
//! Windows are handled in normalized state space. The anchor row (first row
//! for forward models, last row for backward models) is held at the clean
//! anchor state during noising and after every reverse step, so the
//! denoiser only conditions on the scalar target return.

mod denoiser;
mod loss;
mod meta;
mod sampler;
mod schedule;
mod window;

pub use denoiser::{time_embedding, CondInput, Denoiser, EpsModel, Target, TIME_EMBED_DIM};
pub use loss::{
    denoise_loss, draw_plans, loss_from_predictions, loss_with_plans, noisy_batch, train_denoiser, DiffusionTrainConfig,
    LossOutput, NoisePlan, TrainExample,
};
pub use meta::{normalize_return, ModelMeta, ReturnRange, MODEL_META_SCHEMA};
pub use sampler::{cfg_noise, sample, sample_batch, GenCondition, SampleOptions, Sampler};
pub use schedule::{noise_forward, NoiseSchedule, ScheduleConfig};
pub use window::{AnchorPos, StateWindow};
