use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{extract_windows, training_examples};
use crate::diffusion::{
    train_denoiser, Denoiser, DiffusionTrainConfig, ModelMeta, NoiseSchedule, ScheduleConfig, MODEL_META_SCHEMA,
};
use crate::envs::{Direction, NormStats, OfflineDataset};
use crate::nn::Mlp;
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// States per directional window; stitched trajectories hold `2H − 1`.
    pub horizon: usize,
    pub schedule: ScheduleConfig,
    pub train: DiffusionTrainConfig,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            schedule: ScheduleConfig::default(),
            train: DiffusionTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalModel {
    pub denoiser: Denoiser,
    pub meta: ModelMeta,
}

/// Forward and backward denoisers trained on the same dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BiModelPair {
    pub forward: DirectionalModel,
    pub backward: DirectionalModel,
    pub schedule: NoiseSchedule,
    pub stats: NormStats,
}

fn train_direction(
    dataset: &OfflineDataset,
    gamma: f64,
    config: &PairConfig,
    schedule: &NoiseSchedule,
    direction: Direction,
    seed: u64,
) -> Result<DirectionalModel> {
    let windows = extract_windows(dataset, config.horizon, gamma, direction)?;
    let (examples, return_range) = training_examples(&windows, &dataset.stats, direction)?;
    let seed = derive_seed(seed, &format!("denoiser/{}", direction.as_str()));
    let (denoiser, epoch_losses) = train_denoiser(&examples, schedule, direction, &config.train, seed)?;
    log::info!(
        "{} denoiser: {} windows, final epoch loss {:.5}",
        direction.as_str(),
        examples.len(),
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(DirectionalModel {
        denoiser,
        meta: ModelMeta {
            schema: MODEL_META_SCHEMA.to_string(),
            direction,
            horizon: config.horizon,
            state_dim: dataset.state_dim,
            schedule: config.schedule,
            target: config.train.target,
            stats_hash: dataset.stats.digest(),
            return_range,
            epoch_losses,
        },
    })
}

/// Trains both directions (concurrently) on every window of the dataset.
pub fn train_pair(dataset: &OfflineDataset, gamma: f64, config: &PairConfig, seed: u64) -> Result<BiModelPair> {
    let schedule = NoiseSchedule::from_config(&config.schedule)?;
    let (forward, backward) = rayon::join(
        || train_direction(dataset, gamma, config, &schedule, Direction::Forward, seed),
        || train_direction(dataset, gamma, config, &schedule, Direction::Backward, seed),
    );
    Ok(BiModelPair {
        forward: forward?,
        backward: backward?,
        schedule,
        stats: dataset.stats.clone(),
    })
}

impl BiModelPair {
    pub fn horizon(&self) -> usize {
        self.forward.meta.horizon
    }

    pub fn model(&self, direction: Direction) -> &DirectionalModel {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Writes `{forward,backward}.model.json`, `{forward,backward}.meta.json`
    /// and `stats.json` into `dir`; returns the paths written.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for m in [&self.forward, &self.backward] {
            let name = m.meta.direction.as_str();
            let p = dir.join(format!("{name}.model.json"));
            m.denoiser.net.save_json(&p)?;
            paths.push(p);
            let p = dir.join(format!("{name}.meta.json"));
            m.meta.save_json(&p)?;
            paths.push(p);
        }
        let p = dir.join("stats.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&self.stats)?)?;
        paths.push(p);
        Ok(paths)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stats: NormStats = serde_json::from_slice(&std::fs::read(dir.join("stats.json"))?)?;
        let load = |direction: Direction| -> Result<DirectionalModel> {
            let name = direction.as_str();
            let meta = ModelMeta::load_json(dir.join(format!("{name}.meta.json")))?;
            let schedule = NoiseSchedule::from_config(&meta.schedule)?;
            if meta.direction != direction {
                return Err(Error::InvalidArgument(format!("{name}.meta.json describes a {} model", meta.direction.as_str())));
            }
            if meta.stats_hash != stats.digest() {
                return Err(Error::InvalidArgument(format!(
                    "{name} model was trained with different normalization statistics"
                )));
            }
            let net = Mlp::load_json(dir.join(format!("{name}.model.json")))?;
            let denoiser = Denoiser::from_net(net, direction, meta.horizon, meta.state_dim, meta.target, &schedule)?;
            Ok(DirectionalModel { denoiser, meta })
        };
        let forward = load(Direction::Forward)?;
        let backward = load(Direction::Backward)?;
        if forward.meta.horizon != backward.meta.horizon || forward.meta.schedule != backward.meta.schedule {
            return Err(Error::InvalidArgument("forward and backward models disagree on horizon or schedule".into()));
        }
        let schedule = NoiseSchedule::from_config(&forward.meta.schedule)?;
        Ok(Self {
            forward,
            backward,
            schedule,
            stats,
        })
    }
}
