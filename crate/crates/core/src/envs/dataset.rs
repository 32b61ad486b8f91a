use serde::{Deserialize, Serialize};

use super::MdpSpec;
use crate::{Error, Result};

const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub source: Source,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Number of states, `len() + 1` for a non-empty trajectory.
    pub fn num_states(&self) -> usize {
        if self.transitions.is_empty() {
            0
        } else {
            self.transitions.len() + 1
        }
    }

    /// `s_0, …, s_n` where `s_n` is the last transition's successor.
    pub fn states(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.transitions.iter().map(|t| t.s.as_slice()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(&last.s_next);
        }
        out
    }

    pub fn state(&self, i: usize) -> &[f64] {
        if i < self.transitions.len() {
            &self.transitions[i].s
        } else {
            &self.transitions[i - 1].s_next
        }
    }

    pub fn reward_sum(&self) -> f64 {
        self.transitions.iter().map(|t| t.r).sum()
    }

    /// Index of the first transition whose successor is not the next
    /// transition's state.
    pub fn chain_break(&self) -> Option<usize> {
        self.transitions
            .windows(2)
            .position(|w| w[0].s_next != w[1].s)
    }

    /// Index of the first transition that `spec.step` does not reproduce.
    pub fn dynamics_violation(&self, spec: &MdpSpec) -> Option<usize> {
        self.transitions
            .iter()
            .position(|t| spec.step(&t.s, &t.a).0 != t.s_next)
    }
}

/// Per-dimension z-score statistics shared by every learned component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for row in rows.clone() {
        n += 1;
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m).powi(2);
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl NormStats {
    /// Statistics over every stored state (each transition's `s` plus each
    /// trajectory's final successor), action and reward.
    pub fn compute(trajectories: &[Trajectory], state_dim: usize, action_dim: usize) -> Self {
        let states = trajectories.iter().flat_map(|t| t.states());
        let (state_mean, state_std) = mean_std(states, state_dim);
        let actions = trajectories
            .iter()
            .flat_map(|t| t.transitions.iter().map(|tr| tr.a.as_slice()));
        let (action_mean, action_std) = mean_std(actions, action_dim);
        let rewards: Vec<[f64; 1]> = trajectories
            .iter()
            .flat_map(|t| t.transitions.iter().map(|tr| [tr.r]))
            .collect();
        let (rm, rs) = mean_std(rewards.iter().map(|r| r.as_slice()), 1);
        Self {
            state_mean,
            state_std,
            action_mean,
            action_std,
            reward_mean: rm[0],
            reward_std: rs[0],
        }
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.state_mean.iter().zip(&self.state_std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    pub fn denormalize_state(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.state_mean.iter().zip(&self.state_std))
            .map(|(x, (m, sd))| x * sd + m)
            .collect()
    }

    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_mean.iter().zip(&self.action_std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    pub fn denormalize_action(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.action_mean.iter().zip(&self.action_std))
            .map(|(x, (m, sd))| x * sd + m)
            .collect()
    }

    pub fn normalize_reward(&self, r: f64) -> f64 {
        (r - self.reward_mean) / self.reward_std
    }

    pub fn denormalize_reward(&self, z: f64) -> f64 {
        z * self.reward_std + self.reward_mean
    }

    /// SHA-256 of the canonical JSON encoding, used to tie model artifacts
    /// to the dataset they were trained on.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("stats serialize");
        hex::encode(Sha256::digest(json))
    }
}

/// A set of trajectories from one environment plus their normalization
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub trajectories: Vec<Trajectory>,
    pub stats: NormStats,
}

impl OfflineDataset {
    pub fn new(env: &str, state_dim: usize, action_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if let Some(j) = t.chain_break() {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {i} is not chained at transition {j}"
                )));
            }
            for tr in &t.transitions {
                if tr.s.len() != state_dim || tr.s_next.len() != state_dim || tr.a.len() != action_dim {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory {i} has a transition with the wrong dimensions"
                    )));
                }
            }
        }
        let stats = NormStats::compute(&trajectories, state_dim, action_dim);
        Ok(Self {
            env: env.to_string(),
            state_dim,
            action_dim,
            trajectories,
            stats,
        })
    }

    pub fn empty(spec: &MdpSpec) -> Self {
        Self::new(&spec.name, spec.state_dim, spec.action_dim, Vec::new()).expect("empty dataset is valid")
    }

    /// Number of trajectories.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    /// Union of both trajectory sets with statistics recomputed.
    pub fn merged(&self, other: &OfflineDataset) -> Result<Self> {
        if self.env != other.env {
            return Err(Error::InvalidArgument(format!(
                "cannot merge datasets from `{}` and `{}`",
                self.env, other.env
            )));
        }
        let mut trajectories = self.trajectories.clone();
        trajectories.extend(other.trajectories.iter().cloned());
        Self::new(&self.env, self.state_dim, self.action_dim, trajectories)
    }
}
