//! Deterministic toy MDPs, scripted behavior policies and offline datasets.
//!
//! Both environments are laid out so that two behavior policies cover
//! disjoint halves of the state space and meet only in a narrow corridor:
//! mode A runs from the start region into the corridor, mode B runs from the
//! corridor to the goal. No single episode crosses end to end.

mod dataset;
mod io;
mod policies;
mod returns;
mod spec;

pub use dataset::{NormStats, OfflineDataset, Source, Trajectory, Transition};
pub use io::{load_dataset, save_dataset, DATASET_SCHEMA};
pub use policies::{collect, sample_init, BehaviorPolicy, GoalSeeking, Policy, POLICY_IDS};
pub use returns::{window_return, Direction};
pub use spec::{Dynamics, InitDist, Layout, MdpSpec, Region, RewardFn, Wall, ENV_NAMES};
pub(crate) use spec::l2;
