use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{l2, MdpSpec, OfflineDataset, Trajectory};
use crate::{Error, Result};

/// `Σ_t ‖ŝ_{t+1} − step(ŝ_t, â_t)‖` over the trajectory's transitions.
pub fn dynamic_error(traj: &Trajectory, spec: &MdpSpec) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("dynamic error needs at least two states".into()));
    }
    Ok(traj
        .transitions
        .iter()
        .map(|t| l2(&t.s_next, &spec.step(&t.s, &t.a).0))
        .sum())
}

/// Smallest `Σ_t ‖ŝ_t − s_t‖` over every contiguous window of dataset
/// states with the same length as `states`.
pub fn l2_distance<S: AsRef<[f64]>>(states: &[S], dataset: &OfflineDataset) -> Result<f64> {
    let n = states.len();
    if n == 0 {
        return Err(Error::InvalidArgument("l2 distance needs a non-empty state sequence".into()));
    }
    let mut best = f64::INFINITY;
    for traj in &dataset.trajectories {
        let ds = traj.states();
        if ds.len() < n {
            continue;
        }
        for start in 0..=ds.len() - n {
            let mut d = 0.0;
            for (a, b) in states.iter().zip(&ds[start..start + n]) {
                d += l2(a.as_ref(), b);
                if d >= best {
                    break;
                }
            }
            best = best.min(d);
        }
    }
    if best.is_infinite() {
        return Err(Error::InvalidArgument(format!("dataset has no window of {n} states")));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mode: String,
    pub seed: usize,
    pub index: usize,
    pub states: usize,
    pub e_dyn: f64,
    pub e_l2d: f64,
}

/// Per-trajectory metrics for one generation mode plus aggregates. The
/// aggregates are `None` when there are no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: String,
    pub rows: Vec<MetricRow>,
    pub mean_e_dyn: Option<f64>,
    pub median_e_dyn: Option<f64>,
    pub mean_e_l2d: Option<f64>,
    pub median_e_l2d: Option<f64>,
    /// Trajectories without an equal-length dataset window.
    pub skipped: usize,
}

/// Midpoint median; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One row per trajectory, tagged with `mode` and `seed`. Trajectories
/// longer than every dataset trajectory have no E_L2D and are left out;
/// the second value counts them.
pub fn metric_rows(
    mode: &str,
    seed: usize,
    trajs: &[Trajectory],
    dataset: &OfflineDataset,
    spec: &MdpSpec,
) -> Result<(Vec<MetricRow>, usize)> {
    let longest = dataset.trajectories.iter().map(|t| t.num_states()).max().unwrap_or(0);
    let rows = trajs
        .par_iter()
        .enumerate()
        .filter(|(_, t)| t.num_states() <= longest)
        .map(|(i, t)| {
            Ok(MetricRow {
                mode: mode.to_string(),
                seed,
                index: i,
                states: t.num_states(),
                e_dyn: dynamic_error(t, spec)?,
                e_l2d: l2_distance(&t.states(), dataset)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = trajs.len() - rows.len();
    Ok((rows, skipped))
}

impl MetricReport {
    pub fn compute(mode: &str, trajs: &[Trajectory], dataset: &OfflineDataset, spec: &MdpSpec) -> Result<Self> {
        let (rows, skipped) = metric_rows(mode, 0, trajs, dataset, spec)?;
        Ok(Self::from_rows(mode, rows, skipped))
    }

    pub fn from_rows(mode: &str, rows: Vec<MetricRow>, skipped: usize) -> Self {
        let dyn_: Vec<f64> = rows.iter().map(|r| r.e_dyn).collect();
        let l2d: Vec<f64> = rows.iter().map(|r| r.e_l2d).collect();
        let agg = |f: fn(&[f64]) -> f64, v: &[f64]| (!v.is_empty()).then(|| f(v));
        Self {
            mode: mode.to_string(),
            mean_e_dyn: agg(mean, &dyn_),
            median_e_dyn: agg(median, &dyn_),
            mean_e_l2d: agg(mean, &l2d),
            median_e_l2d: agg(median, &l2d),
            rows,
            skipped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect, Source, Transition};

    #[test]
    fn empty_report_round_trips() {
        let r = MetricReport::from_rows("bidirectional", Vec::new(), 3);
        assert_eq!(r.median_e_l2d, None);
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn original_trajectories_score_zero() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 8, 0).unwrap();
        for t in &d.trajectories {
            assert_eq!(dynamic_error(t, &spec).unwrap(), 0.0);
            assert_eq!(l2_distance(&t.states(), &d).unwrap(), 0.0);
        }
    }

    #[test]
    fn offset_successor() {
        let spec = MdpSpec::named("point-reach-open").unwrap();
        let t = Trajectory {
            episode_id: 0,
            source: Source::Generated,
            transitions: vec![Transition {
                s: vec![0.2, 0.2],
                a: vec![0.05, 0.0],
                r: 0.0,
                s_next: vec![0.35, 0.2],
                done: false,
            }],
        };
        assert!((dynamic_error(&t, &spec).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_from_single_window() {
        let spec = MdpSpec::named("point-reach-open").unwrap();
        let d = collect(&spec, "goal-seeking", 1, 3).unwrap();
        let states: Vec<Vec<f64>> = d.trajectories[0].states()[..4].iter().map(|s| vec![s[0] + 1.0, s[1]]).collect();
        let one = OfflineDataset::new(&spec.name, 2, 2, vec![{
            let mut t = d.trajectories[0].clone();
            t.transitions.truncate(3);
            t
        }])
        .unwrap();
        assert!((l2_distance(&states, &one).unwrap() - 4.0).abs() < 1e-12);
        assert!(l2_distance(&vec![vec![0.0, 0.0]; 5], &one).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
