//! Bidirectional trajectory diffusion for offline reinforcement learning.
//!
//! The crate trains a forward and a backward conditional diffusion model over
//! fixed-horizon state windows, stitches their samples at shared anchor
//! states, labels the stitched state sequences with actions and rewards using
//! an inverse dynamics model and a reward model, and filters the result with
//! an isolation forest and a greedy return ranking. The augmented data is
//! evaluated on small deterministic MDPs with simple offline learners.
//!
//! Module map:
//!
//! - [`nn`]: tensors, MLPs with analytic backprop, Adam/SGD.
//! - [`envs`]: toy MDPs, scripted behavior policies, offline datasets.
//! - [`diffusion`]: noise schedule, CFG denoiser, loss, anchor-fixed sampler.
//! - [`bidir`]: forward/backward model pair, anchors, stitching.
//! - [`completion`]: inverse dynamics and reward models.
//! - [`filters`]: isolation forest and the two-stage trajectory filter.
//! - [`eval`]: dynamic error, L2 distance, offline learners, experiments.

pub mod bidir;
pub mod completion;
pub mod diffusion;
pub mod envs;
mod error;
pub mod eval;
pub mod filters;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
