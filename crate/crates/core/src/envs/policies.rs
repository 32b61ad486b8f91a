use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Dynamics, InitDist, MdpSpec, OfflineDataset, Source, Trajectory, Transition, Wall};
use crate::rng::{derive_indexed, rng_from_seed, Rng};
use crate::{Error, Result};

pub const POLICY_IDS: &[&str] = &["mode-a", "mode-b", "modes-ab", "random-walk", "goal-seeking"];

/// A deterministic state-feedback controller.
pub trait Policy {
    fn act(&self, s: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> Policy for F {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        self(s)
    }
}

/// Scripted controller that heads for the goal at full speed, routing
/// through the wall gap when the goal is on the other side.
#[derive(Debug, Clone)]
pub struct GoalSeeking {
    spec: MdpSpec,
}

impl GoalSeeking {
    pub fn new(spec: &MdpSpec) -> Self {
        Self { spec: spec.clone() }
    }

    fn waypoint(&self, s: &[f64]) -> Vec<f64> {
        let goal = &self.spec.goal;
        if let Dynamics::Integrator { wall: Some(w), .. } = &self.spec.dynamics {
            if (s[0] < w.x) != (goal[0] < w.x) {
                let gap_y = 0.5 * (w.gap_low + w.gap_high);
                let side = if s[0] < w.x { -1.0 } else { 1.0 };
                let lined_up = (s[1] - gap_y).abs() < 0.25 * (w.gap_high - w.gap_low);
                if lined_up && (s[0] - w.x).abs() <= 0.06 {
                    return vec![w.x - side * 0.06, gap_y];
                }
                return vec![w.x + side * 0.05, gap_y];
            }
        }
        goal.clone()
    }
}

impl Policy for GoalSeeking {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        match self.spec.dynamics {
            Dynamics::Chain => vec![(self.spec.goal[0] - s[0]).signum()],
            Dynamics::Integrator { gain, .. } => {
                let target = self.waypoint(s);
                let delta: Vec<f64> = target.iter().zip(s).map(|(t, x)| (t - x) / gain).collect();
                self.spec.clip_action(&delta)
            }
        }
    }
}

/// Stochastic scripted behavior used to collect offline data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorPolicy {
    /// Start region → corridor, never past it.
    ModeA,
    /// Corridor → goal, never back past it.
    ModeB,
    RandomWalk,
    GoalSeeking,
}

impl BehaviorPolicy {
    pub fn parse(id: &str) -> Result<Vec<BehaviorPolicy>> {
        Ok(match id {
            "mode-a" => vec![BehaviorPolicy::ModeA],
            "mode-b" => vec![BehaviorPolicy::ModeB],
            "modes-ab" => vec![BehaviorPolicy::ModeA, BehaviorPolicy::ModeB],
            "random-walk" => vec![BehaviorPolicy::RandomWalk],
            "goal-seeking" => vec![BehaviorPolicy::GoalSeeking],
            other => {
                return Err(Error::Unknown {
                    kind: "behavior policy",
                    name: other.to_string(),
                })
            }
        })
    }

    pub fn run_episode(self, spec: &MdpSpec, episode_id: u64, rng: &mut Rng) -> Trajectory {
        let transitions = match spec.dynamics {
            Dynamics::Chain => self.chain_episode(spec, rng),
            Dynamics::Integrator { wall, .. } => self.point_episode(spec, wall, rng),
        };
        Trajectory {
            episode_id,
            source: Source::Original,
            transitions,
        }
    }

    fn chain_episode(self, spec: &MdpSpec, rng: &mut Rng) -> Vec<Transition> {
        let lo = spec.layout.corridor.low[0];
        let hi = spec.layout.corridor.high[0];
        let goal = spec.goal[0];
        let mut s = match self {
            BehaviorPolicy::ModeA => sample_init(spec, rng),
            BehaviorPolicy::ModeB => vec![rng.random_range(lo as i64..=hi as i64) as f64],
            BehaviorPolicy::RandomWalk => vec![rng.random_range(0..=goal as i64) as f64],
            BehaviorPolicy::GoalSeeking => sample_init(spec, rng),
        };
        let mut out = Vec::new();
        let mut turned = false;
        for _ in 0..spec.horizon {
            let a = match self {
                // Walk up to the far end of the corridor, step back once, stop.
                BehaviorPolicy::ModeA => {
                    if turned {
                        break;
                    }
                    if s[0] >= hi {
                        turned = true;
                        -1.0
                    } else {
                        1.0
                    }
                }
                BehaviorPolicy::ModeB | BehaviorPolicy::GoalSeeking => {
                    if spec.is_success(&s) {
                        break;
                    }
                    1.0
                }
                BehaviorPolicy::RandomWalk => rng.random_range(-1i64..=1) as f64,
            };
            let (next, r) = spec.step(&s, &[a]);
            let done = spec.is_success(&next);
            out.push(Transition {
                s: s.clone(),
                a: vec![a],
                r,
                s_next: next.clone(),
                done,
            });
            s = next;
        }
        out
    }

    fn point_episode(self, spec: &MdpSpec, wall: Option<Wall>, rng: &mut Rng) -> Vec<Transition> {
        const SPEED: f64 = 0.035;
        let noise = Normal::new(0.0, 0.004).expect("valid sigma");
        let corridor = &spec.layout.corridor;
        let mid_x = wall.map_or(0.5 * (corridor.low[0] + corridor.high[0]), |w| w.x);
        let mid_y = 0.5 * (corridor.low[1] + corridor.high[1]);
        let a_target = [mid_x - 0.03, mid_y];
        let mut s = match self {
            BehaviorPolicy::ModeA | BehaviorPolicy::GoalSeeking => sample_init(spec, rng),
            BehaviorPolicy::ModeB => vec![
                rng.random_range(mid_x..mid_x + 0.04),
                rng.random_range(mid_y - 0.05..mid_y + 0.05),
            ],
            BehaviorPolicy::RandomWalk => vec![rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
        };
        let toward = |s: &[f64], target: &[f64]| -> Vec<f64> {
            let d: Vec<f64> = target.iter().zip(s).map(|(t, x)| t - x).collect();
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let k = if n > 0.0 { SPEED.min(n) / n } else { 0.0 };
            d.iter().map(|v| v * k).collect()
        };
        let goal_seeking = GoalSeeking::new(spec);
        let mut out = Vec::new();
        for _ in 0..spec.horizon {
            let mut a = match self {
                BehaviorPolicy::ModeA => {
                    if super::l2(&s, &a_target) < 0.01 {
                        break;
                    }
                    toward(&s, &a_target)
                }
                BehaviorPolicy::ModeB => {
                    if spec.is_success(&s) {
                        break;
                    }
                    toward(&s, &spec.goal)
                }
                BehaviorPolicy::GoalSeeking => {
                    if spec.is_success(&s) {
                        break;
                    }
                    goal_seeking.act(&s)
                }
                BehaviorPolicy::RandomWalk => vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            };
            if matches!(self, BehaviorPolicy::ModeA | BehaviorPolicy::ModeB) {
                for v in a.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
            let mut a = spec.clip_action(&a);
            match self {
                // Keep each mode on its own side of the wall line.
                BehaviorPolicy::ModeA if s[0] + a[0] > mid_x - 0.01 => a[0] = mid_x - 0.01 - s[0],
                BehaviorPolicy::ModeB if s[0] + a[0] < mid_x => a[0] = mid_x - s[0],
                BehaviorPolicy::RandomWalk => {
                    for (v, x) in a.iter_mut().zip(&s) {
                        if !(0.05..=0.95).contains(&(x + *v)) {
                            *v = -*v;
                        }
                    }
                }
                _ => {}
            }
            let (next, r) = spec.step(&s, &a);
            let done = spec.is_success(&next);
            out.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: next.clone(),
                done,
            });
            s = next;
        }
        out
    }
}

pub fn sample_init(spec: &MdpSpec, rng: &mut Rng) -> Vec<f64> {
    match &spec.init {
        InitDist::UniformBox { region } => region
            .low
            .iter()
            .zip(&region.high)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect(),
        InitDist::UniformCells { low, high } => vec![rng.random_range(*low..=*high) as f64],
    }
}

/// Rolls out `episodes` episodes of the named behavior policy. With
/// `modes-ab`, even episodes run mode A and odd episodes mode B. Each
/// episode draws from its own stream derived from `(seed, episode index)`.
pub fn collect(spec: &MdpSpec, policy_id: &str, episodes: usize, seed: u64) -> Result<OfflineDataset> {
    let policies = BehaviorPolicy::parse(policy_id)?;
    let trajectories = (0..episodes)
        .map(|i| {
            let mut rng = rng_from_seed(derive_indexed(seed, "episode", i as u64));
            policies[i % policies.len()].run_episode(spec, i as u64, &mut rng)
        })
        .filter(|t| !t.is_empty())
        .collect();
    OfflineDataset::new(&spec.name, spec.state_dim, spec.action_dim, trajectories)
}
