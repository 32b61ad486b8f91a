//! Forward/backward model pairs, anchor selection and stitching.
//!
//! A forward model generates `s_t .. s_{t+H-1}` from an anchor `s_t`; a
//! backward model generates `s_{t-H+1} .. s_t` into it. Joining the two at
//! the shared anchor yields a `2H-1` state trajectory.

mod anchors;
mod generate;
mod io;
mod pair;
mod stitch;
mod windows;

pub use anchors::{pick_anchors, quantile, Anchor, AnchorConfig};
pub use generate::{generate_batch, GenConfig, GenMode, GenOutput};
pub use io::{load_generated, save_generated, GenFile, GenRecord, GEN_SCHEMA};
pub use pair::{train_pair, BiModelPair, DirectionalModel, PairConfig};
pub use stitch::{stitch, StitchedStateTraj};
pub use windows::{extract_windows, training_examples, WindowRecord};
