use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForestConfig, IsolationForest};
use crate::envs::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub forest: ForestConfig,
    /// Trajectories kept by the OOD stage; defaults to `⌈0.5·N̂⌉`.
    pub c_ood: Option<usize>,
    /// Trajectories kept by the greedy stage; defaults to `⌈0.25·N̂⌉`.
    pub c_greedy: Option<usize>,
    /// Score every state including the last one. When false, the final
    /// state is left out of the trajectory score.
    pub include_last_state: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            c_ood: None,
            c_greedy: None,
            include_last_state: true,
        }
    }
}

impl FilterConfig {
    /// `(C_ood, C_greedy)` for `n` candidates, clamped to `n`.
    pub fn capacities(&self, n: usize) -> Result<(usize, usize)> {
        let c_ood = self.c_ood.unwrap_or((n as f64 * 0.5).ceil() as usize);
        let c_greedy = self.c_greedy.unwrap_or((n as f64 * 0.25).ceil() as usize);
        if self.c_ood == Some(0) || self.c_greedy == Some(0) {
            return Err(Error::InvalidArgument("filter capacities must be positive".into()));
        }
        if c_greedy > c_ood {
            return Err(Error::InvalidArgument(format!("C_greedy ({c_greedy}) exceeds C_ood ({c_ood})")));
        }
        Ok((c_ood.min(n), c_greedy.min(n)))
    }
}

/// `d(τ) = Σ_i d(s_i)` over the trajectory's states.
pub fn trajectory_score(forest: &IsolationForest, traj: &Trajectory, include_last: bool) -> f64 {
    let states = traj.states();
    let n = if include_last { states.len() } else { states.len().saturating_sub(1) };
    states[..n].iter().map(|s| forest.score(s)).sum()
}

fn select_by(keys: &[f64], c: usize, descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        let o = keys[a].total_cmp(&keys[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut kept: Vec<usize> = order.into_iter().take(c).collect();
    kept.sort_unstable();
    kept
}

/// Indices of the `c` smallest scores, ties to the earlier index, returned
/// in input order.
pub fn ood_select(scores: &[f64], c: usize) -> Vec<usize> {
    select_by(scores, c, false)
}

/// Indices of the `c` largest reward sums, ties to the earlier index,
/// returned in input order.
pub fn greedy_select(sums: &[f64], c: usize) -> Vec<usize> {
    select_by(sums, c, true)
}

pub fn ood_filter(forest: &IsolationForest, trajs: &[Trajectory], c_ood: usize, include_last: bool) -> Vec<Trajectory> {
    let scores: Vec<f64> = trajs.iter().map(|t| trajectory_score(forest, t, include_last)).collect();
    ood_select(&scores, c_ood).into_iter().map(|i| trajs[i].clone()).collect()
}

pub fn greedy_filter(trajs: &[Trajectory], c_greedy: usize) -> Vec<Trajectory> {
    let sums: Vec<f64> = trajs.iter().map(|t| t.reward_sum()).collect();
    greedy_select(&sums, c_greedy).into_iter().map(|i| trajs[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub index: usize,
    pub ood_score: f64,
    pub reward_sum: f64,
    pub passed_ood: bool,
    pub passed_greedy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub rows: Vec<FilterRow>,
    /// Indices surviving both stages, in input order.
    pub kept: Vec<usize>,
    pub c_ood: usize,
    pub c_greedy: usize,
}

impl FilterReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// OOD stage followed by the greedy stage on its survivors.
pub fn run_filters(forest: &IsolationForest, trajs: &[Trajectory], config: &FilterConfig) -> Result<FilterReport> {
    let (c_ood, c_greedy) = config.capacities(trajs.len())?;
    let scores: Vec<f64> = trajs
        .iter()
        .map(|t| trajectory_score(forest, t, config.include_last_state))
        .collect();
    let sums: Vec<f64> = trajs.iter().map(|t| t.reward_sum()).collect();
    let ood = ood_select(&scores, c_ood);
    let survivor_sums: Vec<f64> = ood.iter().map(|&i| sums[i]).collect();
    let kept: Vec<usize> = greedy_select(&survivor_sums, c_greedy).into_iter().map(|j| ood[j]).collect();
    let rows = (0..trajs.len())
        .map(|i| FilterRow {
            index: i,
            ood_score: scores[i],
            reward_sum: sums[i],
            passed_ood: ood.binary_search(&i).is_ok(),
            passed_greedy: kept.binary_search(&i).is_ok(),
        })
        .collect();
    Ok(FilterReport {
        rows,
        kept,
        c_ood,
        c_greedy,
    })
}
