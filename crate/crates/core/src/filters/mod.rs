//! Two-stage filtering of generated trajectories: keep the most
//! in-distribution ones under an isolation forest fitted on dataset states,
//! then keep the highest-return ones among those.

mod forest;
mod select;

pub use forest::{average_path_length, harmonic, ForestConfig, IsolationForest, IsolationTree, Node};
pub use select::{
    greedy_filter, greedy_select, ood_filter, ood_select, run_filters, trajectory_score, FilterConfig, FilterReport,
    FilterRow,
};
