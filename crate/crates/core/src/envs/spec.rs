use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned closed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Region {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        assert_eq!(low.len(), high.len());
        Self { low, high }
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(&x, (&lo, &hi))| x >= lo && x <= hi)
    }

    pub fn clip(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
            .collect()
    }
}

/// Vertical wall at `x` spanning the full height except the open gap
/// `[gap_low, gap_high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x: f64,
    pub gap_low: f64,
    pub gap_high: f64,
}

impl Wall {
    /// True when the straight move `from → to` crosses the wall line outside
    /// the gap. Points with `x >= self.x` are on the right-hand side.
    pub fn blocks(&self, from: &[f64], to: &[f64]) -> bool {
        let left_before = from[0] < self.x;
        let left_after = to[0] < self.x;
        if left_before == left_after {
            return false;
        }
        let t = (self.x - from[0]) / (to[0] - from[0]);
        let y = from[1] + t * (to[1] - from[1]);
        y < self.gap_low || y > self.gap_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dynamics {
    /// `s' = clip(s + gain·a)`; a move crossing the wall leaves `s` unchanged.
    Integrator { gain: f64, wall: Option<Wall> },
    /// `s' = clip(s + round(a))` on integer cells.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardFn {
    /// `r(s, a) = −‖s − goal‖`.
    NegGoalDistance,
    /// `r(s, a) = ‖s − goal‖ − ‖s' − goal‖`.
    Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitDist {
    UniformBox { region: Region },
    /// Uniform over integer cells in `[low, high]` (one dimension).
    UniformCells { low: i64, high: i64 },
}

/// The named regions that make the offline data "disconnected": mode A
/// only visits `mode_a` and `corridor`, mode B only `corridor` and `mode_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub start: Region,
    pub corridor: Region,
    pub mode_a: Region,
    pub mode_b: Region,
    /// Grid pitch used when matching corridor states across modes.
    pub snap: f64,
}

/// A deterministic MDP `⟨S, A, P, r, γ, ρ₀⟩` with a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dynamics: Dynamics,
    pub reward: RewardFn,
    pub gamma: f64,
    pub init: InitDist,
    pub horizon: usize,
    pub state_box: Region,
    pub action_box: Region,
    pub goal: Vec<f64>,
    pub goal_tolerance: f64,
    pub layout: Layout,
}

pub const ENV_NAMES: &[&str] = &["point-reach", "point-reach-open", "chain-1d"];

fn point_reach(name: &str, wall: Option<Wall>) -> MdpSpec {
    MdpSpec {
        name: name.to_string(),
        state_dim: 2,
        action_dim: 2,
        dynamics: Dynamics::Integrator { gain: 1.0, wall },
        reward: RewardFn::NegGoalDistance,
        gamma: 0.99,
        init: InitDist::UniformBox {
            region: Region::new(vec![0.05, 0.2], vec![0.2, 0.8]),
        },
        horizon: 50,
        state_box: Region::new(vec![0.0, 0.0], vec![1.0, 1.0]),
        action_box: Region::new(vec![-0.1, -0.1], vec![0.1, 0.1]),
        goal: vec![0.9, 0.5],
        goal_tolerance: 0.05,
        layout: Layout {
            start: Region::new(vec![0.05, 0.2], vec![0.2, 0.8]),
            corridor: Region::new(vec![0.45, 0.4], vec![0.55, 0.6]),
            mode_a: Region::new(vec![0.0, 0.0], vec![0.45, 1.0]),
            mode_b: Region::new(vec![0.55, 0.0], vec![1.0, 1.0]),
            snap: 0.1,
        },
    }
}

fn chain_1d() -> MdpSpec {
    MdpSpec {
        name: "chain-1d".to_string(),
        state_dim: 1,
        action_dim: 1,
        dynamics: Dynamics::Chain,
        reward: RewardFn::Progress,
        gamma: 0.99,
        init: InitDist::UniformCells { low: 0, high: 3 },
        horizon: 40,
        state_box: Region::new(vec![0.0], vec![19.0]),
        action_box: Region::new(vec![-1.0], vec![1.0]),
        goal: vec![19.0],
        goal_tolerance: 0.5,
        layout: Layout {
            start: Region::new(vec![0.0], vec![3.0]),
            corridor: Region::new(vec![9.0], vec![10.0]),
            mode_a: Region::new(vec![0.0], vec![8.5]),
            mode_b: Region::new(vec![10.5], vec![19.0]),
            snap: 1.0,
        },
    }
}

impl MdpSpec {
    /// Looks up a registered environment.
    pub fn named(name: &str) -> Result<MdpSpec> {
        match name {
            "point-reach" => Ok(point_reach(
                name,
                Some(Wall {
                    x: 0.5,
                    gap_low: 0.4,
                    gap_high: 0.6,
                }),
            )),
            "point-reach-open" => Ok(point_reach(name, None)),
            "chain-1d" => Ok(chain_1d()),
            other => Err(Error::Unknown {
                kind: "environment",
                name: other.to_string(),
            }),
        }
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        self.action_box.clip(a)
    }

    pub fn goal_distance(&self, s: &[f64]) -> f64 {
        l2(s, &self.goal)
    }

    pub fn is_success(&self, s: &[f64]) -> bool {
        self.goal_distance(s) < self.goal_tolerance
    }

    /// Deterministic transition. States and actions outside their boxes are
    /// clipped first.
    pub fn step(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
        let s = self.state_box.clip(s);
        let a = self.clip_action(a);
        let next = match &self.dynamics {
            Dynamics::Integrator { gain, wall } => {
                let moved: Vec<f64> = s.iter().zip(&a).map(|(x, u)| x + gain * u).collect();
                let candidate = self.state_box.clip(&moved);
                match wall {
                    Some(w) if w.blocks(&s, &candidate) => s.clone(),
                    _ => candidate,
                }
            }
            Dynamics::Chain => {
                let moved: Vec<f64> = s.iter().zip(&a).map(|(x, u)| x + u.round()).collect();
                self.state_box.clip(&moved)
            }
        };
        let r = match self.reward {
            RewardFn::NegGoalDistance => -self.goal_distance(&s),
            RewardFn::Progress => self.goal_distance(&s) - self.goal_distance(&next),
        };
        (next, r)
    }

    /// Rounds every coordinate to the layout grid.
    pub fn snap(&self, s: &[f64]) -> Vec<i64> {
        s.iter().map(|x| (x / self.layout.snap).round() as i64).collect()
    }
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
