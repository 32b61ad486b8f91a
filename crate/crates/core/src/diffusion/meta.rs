use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScheduleConfig, Target};
use crate::envs::Direction;
use crate::{Error, Result};

pub const MODEL_META_SCHEMA: &str = "diffusion-meta-v1";

/// Observed range of window returns, used to map returns to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnRange {
    pub min: f64,
    pub max: f64,
}

impl ReturnRange {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("return values"));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    pub fn normalize(&self, r: f64) -> f64 {
        normalize_return(r, self)
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.max > self.min {
            self.min + (z + 1.0) * 0.5 * (self.max - self.min)
        } else {
            self.min
        }
    }
}

/// Min-max map of `r` onto [-1, 1]; a degenerate range maps to 0.
pub fn normalize_return(r: f64, range: &ReturnRange) -> f64 {
    if range.max > range.min {
        2.0 * (r - range.min) / (range.max - range.min) - 1.0
    } else {
        0.0
    }
}

/// Sidecar record stored next to a denoiser checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub schema: String,
    pub direction: Direction,
    pub horizon: usize,
    pub state_dim: usize,
    pub schedule: ScheduleConfig,
    pub target: Target,
    pub stats_hash: String,
    pub return_range: ReturnRange,
    pub epoch_losses: Vec<f64>,
}

impl ModelMeta {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let schema = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if schema != MODEL_META_SCHEMA {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: schema.to_string(),
                expected: MODEL_META_SCHEMA,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_range_maps_to_unit_interval() {
        let r = ReturnRange::of(&[2.0, -2.0, 1.0]).unwrap();
        assert_eq!(r.normalize(-2.0), -1.0);
        assert_eq!(r.normalize(2.0), 1.0);
        assert_eq!(r.normalize(0.0), 0.0);
        assert_eq!(r.denormalize(0.5), 1.0);
        let flat = ReturnRange { min: 3.0, max: 3.0 };
        assert_eq!(flat.normalize(10.0), 0.0);
    }

    #[test]
    fn meta_round_trips() {
        let m = ModelMeta {
            schema: MODEL_META_SCHEMA.into(),
            direction: Direction::Backward,
            horizon: 5,
            state_dim: 2,
            schedule: ScheduleConfig::default(),
            target: Target::Sample,
            stats_hash: "ab".into(),
            return_range: ReturnRange { min: -1.5, max: 0.1 },
            epoch_losses: vec![0.9, 0.1 + 0.2],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save_json(&p).unwrap();
        assert_eq!(ModelMeta::load_json(&p).unwrap(), m);
        std::fs::write(&p, "{\"schema\":\"x\"}").unwrap();
        assert!(matches!(ModelMeta::load_json(&p), Err(Error::Version { .. })));
    }
}
