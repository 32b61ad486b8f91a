use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::extract_windows;
use crate::envs::{Direction, OfflineDataset, Region};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Number of anchors `N̂`.
    pub count: usize,
    /// Quantile of observed window returns used as the target (type-7
    /// linear interpolation between order statistics).
    pub quantile: f64,
    /// Restrict anchors to states inside the layout corridor.
    pub corridor_only: bool,
    /// Restrict anchors to states with at least `H − 1` predecessors in
    /// their own trajectory.
    pub require_history: bool,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            count: 256,
            quantile: 0.9,
            corridor_only: false,
            require_history: false,
        }
    }
}

/// A dataset state to generate through, with raw target returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub traj: usize,
    pub index: usize,
    pub state: Vec<f64>,
    pub forward_return: f64,
    pub backward_return: f64,
}

/// Type-7 sample quantile: `x[⌊h⌋] + (h − ⌊h⌋)(x[⌊h⌋+1] − x[⌊h⌋])` with
/// `h = (n − 1)q` over the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let v = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
    Ok(v.clamp(sorted[0], sorted[sorted.len() - 1]))
}

/// Draws `config.count` anchors uniformly (with replacement) over the
/// eligible dataset states. Targets are the configured quantile of the
/// forward and backward window returns, chosen independently.
pub fn pick_anchors(
    dataset: &OfflineDataset,
    horizon: usize,
    gamma: f64,
    config: &AnchorConfig,
    corridor: Option<&Region>,
    rng: &mut Rng,
) -> Result<Vec<Anchor>> {
    if dataset.num_transitions() == 0 {
        return Err(Error::Empty("dataset"));
    }
    if config.count == 0 {
        return Ok(Vec::new());
    }
    let fwd: Vec<f64> = extract_windows(dataset, horizon, gamma, Direction::Forward)?
        .iter()
        .map(|w| w.ret)
        .collect();
    let bwd: Vec<f64> = extract_windows(dataset, horizon, gamma, Direction::Backward)?
        .iter()
        .map(|w| w.ret)
        .collect();
    let forward_return = quantile(&fwd, config.quantile)?;
    let backward_return = quantile(&bwd, config.quantile)?;

    let mut eligible = Vec::new();
    for (ti, t) in dataset.trajectories.iter().enumerate() {
        for (i, s) in t.states().into_iter().enumerate() {
            if config.corridor_only && !corridor.is_some_and(|c| c.contains(s)) {
                continue;
            }
            if config.require_history && i + 1 < horizon {
                continue;
            }
            eligible.push((ti, i));
        }
    }
    if eligible.is_empty() {
        return Err(Error::Empty("eligible anchor states"));
    }
    Ok((0..config.count)
        .map(|_| {
            let (traj, index) = eligible[rng.random_range(0..eligible.len())];
            Anchor {
                traj,
                index,
                state: dataset.trajectories[traj].state(index).to_vec(),
                forward_return,
                backward_return,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect, MdpSpec};
    use crate::rng::rng_from_seed;

    #[test]
    fn quantile_rule() {
        let v = [3.0, 0.0, 2.0, 1.0];
        assert_eq!(quantile(&v, 0.5).unwrap(), 1.5);
        assert_eq!(quantile(&v, 1.0).unwrap(), 3.0);
        assert_eq!(quantile(&v, 0.0).unwrap(), 0.0);
        assert!((quantile(&v, 0.9).unwrap() - 2.7).abs() < 1e-12);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn zero_count_gives_no_anchors() {
        let spec = MdpSpec::named("chain-1d").unwrap();
        let d = collect(&spec, "modes-ab", 4, 0).unwrap();
        let cfg = AnchorConfig { count: 0, ..Default::default() };
        assert!(pick_anchors(&d, 4, 0.99, &cfg, None, &mut rng_from_seed(0)).unwrap().is_empty());
    }

    #[test]
    fn max_quantile_targets_max_returns() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 6, 2).unwrap();
        let cfg = AnchorConfig { count: 5, quantile: 1.0, ..Default::default() };
        let a = pick_anchors(&d, 4, 0.99, &cfg, None, &mut rng_from_seed(1)).unwrap();
        let max = |dir| {
            extract_windows(&d, 4, 0.99, dir)
                .unwrap()
                .iter()
                .map(|w| w.ret)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert_eq!(a.len(), 5);
        for x in &a {
            assert_eq!(x.forward_return, max(Direction::Forward));
            assert_eq!(x.backward_return, max(Direction::Backward));
            assert_eq!(x.state, d.trajectories[x.traj].state(x.index));
        }
    }

    #[test]
    fn corridor_and_history_restrictions() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 10, 4).unwrap();
        let cfg = AnchorConfig {
            count: 200,
            corridor_only: true,
            require_history: true,
            ..Default::default()
        };
        let a = pick_anchors(&d, 5, 0.99, &cfg, Some(&spec.layout.corridor), &mut rng_from_seed(2)).unwrap();
        assert!(a.iter().all(|x| spec.layout.corridor.contains(&x.state) && x.index >= 4));
        let bad = Region::new(vec![5.0, 5.0], vec![6.0, 6.0]);
        assert!(pick_anchors(&d, 5, 0.99, &cfg, Some(&bad), &mut rng_from_seed(2)).is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = MdpSpec::named("chain-1d").unwrap();
        let d = OfflineDataset::empty(&spec);
        assert!(pick_anchors(&d, 2, 0.9, &AnchorConfig::default(), None, &mut rng_from_seed(0)).is_err());
    }
}
