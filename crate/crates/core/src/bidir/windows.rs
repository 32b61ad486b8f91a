use crate::diffusion::{AnchorPos, ReturnRange, StateWindow, TrainExample};
use crate::envs::{window_return, Direction, NormStats, OfflineDataset};
use crate::{Error, Result};

/// One H-state window cut from a dataset trajectory, in raw state space.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub traj: usize,
    /// Index of the anchor state within its trajectory.
    pub anchor: usize,
    pub states: Vec<Vec<f64>>,
    pub ret: f64,
}

/// All `L − H + 1` windows per trajectory of `L` states. Forward windows
/// are anchored at their first state, backward windows at their last.
pub fn extract_windows(
    dataset: &OfflineDataset,
    horizon: usize,
    gamma: f64,
    direction: Direction,
) -> Result<Vec<WindowRecord>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        let states = traj.states();
        if states.len() < horizon {
            continue;
        }
        for start in 0..=states.len() - horizon {
            let anchor = match direction {
                Direction::Forward => start,
                Direction::Backward => start + horizon - 1,
            };
            out.push(WindowRecord {
                traj: ti,
                anchor,
                states: states[start..start + horizon].iter().map(|s| s.to_vec()).collect(),
                ret: window_return(traj, anchor, horizon, gamma, direction)?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("windows of the requested horizon"));
    }
    Ok(out)
}

/// Normalized training examples plus the return range used to normalize.
pub fn training_examples(
    windows: &[WindowRecord],
    stats: &NormStats,
    direction: Direction,
) -> Result<(Vec<TrainExample>, ReturnRange)> {
    let returns: Vec<f64> = windows.iter().map(|w| w.ret).collect();
    let range = ReturnRange::of(&returns)?;
    let anchor = AnchorPos::from(direction);
    let examples = windows
        .iter()
        .map(|w| {
            let rows: Vec<Vec<f64>> = w.states.iter().map(|s| stats.normalize_state(s)).collect();
            Ok(TrainExample {
                window: StateWindow::from_rows(&rows, anchor)?,
                ret: range.normalize(w.ret),
            })
        })
        .collect::<Result<_>>()?;
    Ok((examples, range))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Source, Trajectory, Transition};

    pub(crate) fn line_dataset(lengths: &[usize]) -> OfflineDataset {
        let trajectories = lengths
            .iter()
            .enumerate()
            .map(|(e, &n)| Trajectory {
                episode_id: e as u64,
                source: Source::Original,
                transitions: (0..n - 1)
                    .map(|i| Transition {
                        s: vec![i as f64 + 100.0 * e as f64],
                        a: vec![1.0],
                        r: i as f64,
                        s_next: vec![i as f64 + 1.0 + 100.0 * e as f64],
                        done: false,
                    })
                    .collect(),
            })
            .collect();
        OfflineDataset::new("chain-1d", 1, 1, trajectories).unwrap()
    }

    #[test]
    fn single_horizon_length_trajectory_gives_one_window_each_way() {
        let d = line_dataset(&[4]);
        assert_eq!(extract_windows(&d, 4, 0.9, Direction::Forward).unwrap().len(), 1);
        assert_eq!(extract_windows(&d, 4, 0.9, Direction::Backward).unwrap().len(), 1);
    }

    #[test]
    fn sliding_window_counts() {
        let d = line_dataset(&[10, 7, 3]);
        for dir in [Direction::Forward, Direction::Backward] {
            let w = extract_windows(&d, 4, 0.9, dir).unwrap();
            assert_eq!(w.len(), (10 - 4 + 1) + (7 - 4 + 1));
        }
        assert!(matches!(extract_windows(&d, 11, 0.9, Direction::Forward), Err(Error::Empty(_))));
    }

    #[test]
    fn forward_and_backward_windows_share_states() {
        // Five states s0..s4, H = 3: the forward window starting at s_t and
        // the backward window ending at s_{t+2} hold the same states, with
        // the anchor at opposite ends.
        let d = line_dataset(&[5]);
        let f = extract_windows(&d, 3, 1.0, Direction::Forward).unwrap();
        let b = extract_windows(&d, 3, 1.0, Direction::Backward).unwrap();
        assert_eq!(f.len(), 3);
        for (fw, bw) in f.iter().zip(&b) {
            assert_eq!(fw.states, bw.states);
            assert_eq!(bw.anchor, fw.anchor + 2);
            assert_eq!(fw.states[0], vec![fw.anchor as f64]);
            assert_eq!(bw.states[2], vec![bw.anchor as f64]);
        }
        // Rewards r_i = i: forward from 1 covers r1, r2; backward into 3
        // covers r2 (discount 1) and r1.
        assert_eq!(f[1].ret, 3.0);
        assert_eq!(b[1].ret, 3.0);
    }

    #[test]
    fn examples_are_normalized() {
        let d = line_dataset(&[6]);
        let w = extract_windows(&d, 3, 0.9, Direction::Backward).unwrap();
        let (ex, range) = training_examples(&w, &d.stats, Direction::Backward).unwrap();
        assert_eq!(ex.len(), 4);
        assert!(ex.iter().all(|e| (-1.0..=1.0).contains(&e.ret)));
        assert_eq!(ex[0].window.anchor(), AnchorPos::Last);
        assert_eq!(range.min, w[0].ret);
        let back = d.stats.denormalize_state(ex[2].window.row(1));
        assert!((back[0] - w[2].states[1][0]).abs() < 1e-12);
    }
}
