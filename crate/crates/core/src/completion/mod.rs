//! Inverse dynamics and reward models that turn stitched state sequences
//! into full `(s, a, r, s')` trajectories.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidir::StitchedStateTraj;
use crate::envs::{MdpSpec, NormStats, OfflineDataset, Source, Trajectory, Transition};
use crate::nn::{fit_mse, Activation, FitConfig, Mlp, Tensor};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Labels a state pair with the action that connects them.
pub trait ActionLabeler: Sync {
    /// One action per row of `(s, s')` pairs, in raw units.
    fn actions(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<Vec<f64>>>;
}

/// Labels a state-action pair with its reward.
pub trait RewardLabeler: Sync {
    fn rewards(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>>;
}

/// `f_ψ(s, s') → a`. Inputs are `[z(s), z(s') − z(s)]` with `z` the
/// dataset z-score; the output is a z-scored action.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamics {
    pub net: Mlp,
    pub stats: NormStats,
}

/// `r_φ(s, a) → r`. Inputs are `[z(s), z(a)]`; the output is a z-scored
/// reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub net: Mlp,
    pub stats: NormStats,
}

fn idm_row(stats: &NormStats, s: &[f64], s_next: &[f64]) -> Vec<f64> {
    let z = stats.normalize_state(s);
    let zn = stats.normalize_state(s_next);
    let delta: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
    [z, delta].concat()
}

fn rm_row(stats: &NormStats, s: &[f64], a: &[f64]) -> Vec<f64> {
    [stats.normalize_state(s), stats.normalize_action(a)].concat()
}

fn check_pairs(pairs: &[(&[f64], &[f64])], left: usize, right: usize) -> Result<()> {
    for (a, b) in pairs {
        if a.len() != left || b.len() != right {
            return Err(Error::shape("labeler input", &[left, right], &[a.len(), b.len()]));
        }
    }
    Ok(())
}

impl ActionLabeler for InverseDynamics {
    fn actions(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<Vec<f64>>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.stats.state_mean.len();
        check_pairs(pairs, dim, dim)?;
        let rows: Vec<Vec<f64>> = pairs.iter().map(|(s, n)| idm_row(&self.stats, s, n)).collect();
        let out = self.net.forward(&Tensor::from_rows(&rows)?)?;
        Ok((0..out.rows()).map(|i| self.stats.denormalize_action(out.row(i))).collect())
    }
}

impl RewardLabeler for RewardModel {
    fn rewards(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        check_pairs(pairs, self.stats.state_mean.len(), self.stats.action_mean.len())?;
        let rows: Vec<Vec<f64>> = pairs.iter().map(|(s, a)| rm_row(&self.stats, s, a)).collect();
        let out = self.net.forward(&Tensor::from_rows(&rows)?)?;
        Ok(out.values().iter().map(|z| self.stats.denormalize_reward(*z)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub hidden: Vec<usize>,
    pub fit: FitConfig,
    /// Fraction of transitions held out for the reported errors.
    pub holdout_fraction: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            fit: FitConfig::default(),
            holdout_fraction: 0.1,
        }
    }
}

/// Held-out errors in raw units, next to the error of predicting the
/// held-out label mean (the label variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub train_size: usize,
    pub holdout_size: usize,
    pub idm_mse: f64,
    pub idm_baseline_mse: f64,
    pub rm_mse: f64,
    pub rm_baseline_mse: f64,
    pub idm_losses: Vec<f64>,
    pub rm_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionModels {
    pub idm: InverseDynamics,
    pub rm: RewardModel,
    pub report: CompletionReport,
}

/// Mean over rows and dimensions of the squared deviation from the
/// per-dimension mean.
pub fn label_variance(labels: &[Vec<f64>]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let dim = labels[0].len();
    let n = labels.len() as f64;
    let mut total = 0.0;
    for j in 0..dim {
        let mean = labels.iter().map(|r| r[j]).sum::<f64>() / n;
        total += labels.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>();
    }
    total / (n * dim as f64)
}

fn mse_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n: usize = a.iter().map(|r| r.len()).sum();
    let s: f64 = a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2))).sum();
    s / n.max(1) as f64
}

/// Splits the dataset's transitions into train/hold-out sets with a seeded
/// shuffle, then fits both models with separate optimizers.
pub fn train_models(dataset: &OfflineDataset, config: &CompletionConfig, seed: u64) -> Result<CompletionModels> {
    let all: Vec<&Transition> = dataset.transitions().collect();
    if all.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_from_seed(derive_seed(seed, "completion/split")));
    }
    let n_hold = if all.len() >= 2 {
        ((all.len() as f64 * config.holdout_fraction).round() as usize).clamp(1, all.len() - 1)
    } else {
        0
    };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train: Vec<&Transition> = train_idx.iter().map(|&i| all[i]).collect();
    let hold: Vec<&Transition> = if hold_idx.is_empty() {
        train.clone()
    } else {
        hold_idx.iter().map(|&i| all[i]).collect()
    };
    let stats = &dataset.stats;

    let idm_x = Tensor::from_rows(&train.iter().map(|t| idm_row(stats, &t.s, &t.s_next)).collect::<Vec<_>>())?;
    let idm_y = Tensor::from_rows(&train.iter().map(|t| stats.normalize_action(&t.a)).collect::<Vec<_>>())?;
    let rm_x = Tensor::from_rows(&train.iter().map(|t| rm_row(stats, &t.s, &t.a)).collect::<Vec<_>>())?;
    let rm_y = Tensor::from_rows(&train.iter().map(|t| vec![stats.normalize_reward(t.r)]).collect::<Vec<_>>())?;

    let sizes = |input: usize, output: usize| {
        let mut s = vec![input];
        s.extend_from_slice(&config.hidden);
        s.push(output);
        s
    };
    let (ds, da) = (dataset.state_dim, dataset.action_dim);
    let fit = |x: &Tensor, y: &Tensor, input: usize, output: usize, label: &str| -> Result<(Mlp, Vec<f64>)> {
        let mut net = Mlp::new(
            &sizes(input, output),
            Activation::Silu,
            Activation::Identity,
            derive_seed(seed, &format!("{label}/init")),
        )?;
        let losses = fit_mse(&mut net, x, y, &config.fit, derive_seed(seed, &format!("{label}/fit")))?;
        Ok((net, losses))
    };
    let (idm, rm) = rayon::join(
        || fit(&idm_x, &idm_y, 2 * ds, da, "idm"),
        || fit(&rm_x, &rm_y, ds + da, 1, "rm"),
    );
    let (idm_net, idm_losses) = idm?;
    let (rm_net, rm_losses) = rm?;
    let idm = InverseDynamics {
        net: idm_net,
        stats: stats.clone(),
    };
    let rm = RewardModel {
        net: rm_net,
        stats: stats.clone(),
    };

    let pairs: Vec<(&[f64], &[f64])> = hold.iter().map(|t| (t.s.as_slice(), t.s_next.as_slice())).collect();
    let actions: Vec<Vec<f64>> = hold.iter().map(|t| t.a.clone()).collect();
    let idm_mse = mse_rows(&idm.actions(&pairs)?, &actions);
    let pairs: Vec<(&[f64], &[f64])> = hold.iter().map(|t| (t.s.as_slice(), t.a.as_slice())).collect();
    let rewards: Vec<Vec<f64>> = hold.iter().map(|t| vec![t.r]).collect();
    let predicted: Vec<Vec<f64>> = rm.rewards(&pairs)?.into_iter().map(|r| vec![r]).collect();
    let rm_mse = mse_rows(&predicted, &rewards);
    let report = CompletionReport {
        train_size: train.len(),
        holdout_size: hold_idx.len(),
        idm_mse,
        idm_baseline_mse: label_variance(&actions),
        rm_mse,
        rm_baseline_mse: label_variance(&rewards),
        idm_losses,
        rm_losses,
    };
    log::info!(
        "completion models: idm held-out mse {:.3e} (baseline {:.3e}), rm {:.3e} (baseline {:.3e})",
        report.idm_mse,
        report.idm_baseline_mse,
        report.rm_mse,
        report.rm_baseline_mse
    );
    Ok(CompletionModels { idm, rm, report })
}

/// Labels consecutive stitched states with IDM actions (clipped to the
/// action box) and RM rewards. The anchor keeps its exact value.
pub fn complete<I: ActionLabeler + ?Sized, R: RewardLabeler + ?Sized>(
    traj: &StitchedStateTraj,
    idm: &I,
    rm: &R,
    spec: &MdpSpec,
    episode_id: u64,
) -> Result<Trajectory> {
    let states = &traj.states;
    if states.iter().any(|s| s.len() != spec.state_dim) {
        return Err(Error::InvalidArgument("stitched state has the wrong dimension".into()));
    }
    let pairs: Vec<(&[f64], &[f64])> = states.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())).collect();
    let actions: Vec<Vec<f64>> = idm.actions(&pairs)?.iter().map(|a| spec.clip_action(a)).collect();
    let sa: Vec<(&[f64], &[f64])> = states.iter().zip(&actions).map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
    let rewards = rm.rewards(&sa)?;
    let transitions = actions
        .into_iter()
        .zip(rewards)
        .enumerate()
        .map(|(i, (a, r))| Transition {
            s: states[i].clone(),
            a,
            r,
            s_next: states[i + 1].clone(),
            done: false,
        })
        .collect();
    Ok(Trajectory {
        episode_id,
        source: Source::Generated,
        transitions,
    })
}

/// Completes every trajectory in parallel; `episode_id` is the position in
/// the input.
pub fn complete_all<I: ActionLabeler + ?Sized, R: RewardLabeler + ?Sized>(
    trajs: &[StitchedStateTraj],
    idm: &I,
    rm: &R,
    spec: &MdpSpec,
) -> Result<Vec<Trajectory>> {
    trajs
        .par_iter()
        .enumerate()
        .map(|(i, t)| complete(t, idm, rm, spec, i as u64))
        .collect()
}

impl CompletionModels {
    /// Writes `idm.model.json`, `rm.model.json`, `stats.json` and
    /// `report.json`; returns the paths written.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let paths = [
            dir.join("idm.model.json"),
            dir.join("rm.model.json"),
            dir.join("stats.json"),
            dir.join("report.json"),
        ];
        self.idm.net.save_json(&paths[0])?;
        self.rm.net.save_json(&paths[1])?;
        std::fs::write(&paths[2], serde_json::to_vec_pretty(&self.idm.stats)?)?;
        std::fs::write(&paths[3], serde_json::to_vec_pretty(&self.report)?)?;
        Ok(paths.to_vec())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stats: NormStats = serde_json::from_slice(&std::fs::read(dir.join("stats.json"))?)?;
        let report = serde_json::from_slice(&std::fs::read(dir.join("report.json"))?)?;
        Ok(Self {
            idm: InverseDynamics {
                net: Mlp::load_json(dir.join("idm.model.json"))?,
                stats: stats.clone(),
            },
            rm: RewardModel {
                net: Mlp::load_json(dir.join("rm.model.json"))?,
                stats,
            },
            report,
        })
    }
}
