//! Trajectory quality metrics, offline learners, policy evaluation and the
//! end-to-end augmentation experiment.

mod experiment;
mod learners;
mod metrics;
mod rollout;

pub use experiment::{
    augment, cell_metrics, collect_dataset, complete_generated, eval_seed, evaluate_cells, filter_cell, generate_cell,
    generate_cells, learner_seed, run_experiment, train_and_evaluate, train_completion, train_diffusion, write_csv,
    AugmentMode, CellData, CellResult, DatasetConfig, ExperimentConfig, ExperimentReport, StageFailure, SummaryRow,
};
pub use learners::{
    action_mse, actor_loss, bc_loss, critic_loss, new_actor, new_critic, q_scale, td_targets, train_policy, Algorithm,
    LearnerBatch, LearnerConfig, PolicyParams, POLICY_SCHEMA,
};
pub use metrics::{dynamic_error, l2_distance, mean, median, metric_rows, MetricReport, MetricRow};
pub use rollout::{evaluate_from, evaluate_policy, seam_crossing_starts, EvalResult};
