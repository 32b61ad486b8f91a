use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::{Error, Result};

/// Temporal direction of a diffusion model or window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Window `s_t .. s_{t+H-1}` anchored at its first state.
    Forward,
    /// Window `s_{t-H+1} .. s_t` anchored at its last state.
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Discounted return of the `horizon`-state window anchored at state index
/// `t`. A window of H states spans H−1 rewards:
///
/// - forward: `Σ_{i=t}^{t+H-2} γ^{i-t} r_i`
/// - backward: `Σ_{i=t-H+1}^{t-1} γ^{t-1-i} r_i`
pub fn window_return(traj: &Trajectory, t: usize, horizon: usize, gamma: f64, direction: Direction) -> Result<f64> {
    let n_states = traj.num_states();
    if horizon == 0 {
        return Err(Error::OutOfRange("window horizon must be at least 1".into()));
    }
    let rewards: Vec<f64> = traj.transitions.iter().map(|tr| tr.r).collect();
    match direction {
        Direction::Forward => {
            if t + horizon > n_states {
                return Err(Error::OutOfRange(format!(
                    "forward window at {t} with horizon {horizon} exceeds {n_states} states"
                )));
            }
            Ok((t..t + horizon - 1)
                .map(|i| gamma.powi((i - t) as i32) * rewards[i])
                .sum())
        }
        Direction::Backward => {
            if t >= n_states || t + 1 < horizon {
                return Err(Error::OutOfRange(format!(
                    "backward window ending at {t} with horizon {horizon} outside {n_states} states"
                )));
            }
            Ok((t + 1 - horizon..t)
                .map(|i| gamma.powi((t - 1 - i) as i32) * rewards[i])
                .sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Source, Transition};

    fn traj(rewards: &[f64]) -> Trajectory {
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                s: vec![i as f64],
                a: vec![1.0],
                r,
                s_next: vec![i as f64 + 1.0],
                done: false,
            })
            .collect();
        Trajectory {
            episode_id: 0,
            source: Source::Original,
            transitions,
        }
    }

    #[test]
    fn zero_rewards_give_zero() {
        let tr = traj(&[0.0; 6]);
        assert_eq!(window_return(&tr, 1, 4, 0.9, Direction::Forward).unwrap(), 0.0);
        assert_eq!(window_return(&tr, 5, 4, 0.9, Direction::Backward).unwrap(), 0.0);
    }

    #[test]
    fn two_state_window_is_one_reward() {
        let tr = traj(&[1.0, 5.0]);
        assert_eq!(window_return(&tr, 0, 2, 0.9, Direction::Forward).unwrap(), 1.0);
        assert_eq!(window_return(&tr, 1, 2, 0.9, Direction::Backward).unwrap(), 1.0);
    }

    #[test]
    fn hand_sums() {
        let tr = traj(&[1.0, 1.0, 1.0, 7.0]);
        let f = window_return(&tr, 0, 4, 0.9, Direction::Forward).unwrap();
        assert!((f - 2.71).abs() < 1e-12);
        // Backward from state 3 over rewards r_0..r_2, nearest reward undiscounted.
        let tr = traj(&[3.0, 2.0, 1.0]);
        let b = window_return(&tr, 3, 4, 0.5, Direction::Backward).unwrap();
        assert!((b - (1.0 + 0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_windows() {
        let tr = traj(&[1.0, 1.0]);
        assert!(window_return(&tr, 1, 3, 0.9, Direction::Forward).is_err());
        assert!(window_return(&tr, 1, 3, 0.9, Direction::Backward).is_err());
        assert!(window_return(&tr, 3, 1, 0.9, Direction::Backward).is_err());
        assert_eq!(window_return(&tr, 2, 1, 0.9, Direction::Forward).unwrap(), 0.0);
    }
}
