use serde::{Deserialize, Serialize};

use crate::envs::{sample_init, MdpSpec, Policy};
use crate::rng::{derive_indexed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
}

/// Start states drawn from the layout's start region. Reaching the goal
/// from any of them requires crossing the corridor between the two
/// behavior modes.
pub fn seam_crossing_starts(spec: &MdpSpec, episodes: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..episodes)
        .map(|i| {
            let mut rng = rng_from_seed(derive_indexed(seed, "eval-start", i as u64));
            sample_init(spec, &mut rng)
        })
        .collect()
}

/// Deterministic rollouts of at most `spec.horizon` steps from each start.
/// An episode succeeds, and stops, once a state is within the goal
/// tolerance. Returns are undiscounted.
pub fn evaluate_from<P: Policy + ?Sized>(policy: &P, spec: &MdpSpec, starts: &[Vec<f64>]) -> EvalResult {
    let mut returns = Vec::with_capacity(starts.len());
    let mut successes = Vec::with_capacity(starts.len());
    for start in starts {
        let mut s = start.clone();
        let mut ret = 0.0;
        let mut ok = spec.is_success(&s);
        for _ in 0..spec.horizon {
            if ok {
                break;
            }
            let a = policy.act(&s);
            let (next, r) = spec.step(&s, &a);
            ret += r;
            s = next;
            ok = spec.is_success(&s);
        }
        returns.push(ret);
        successes.push(ok);
    }
    let n = starts.len().max(1) as f64;
    EvalResult {
        mean_return: returns.iter().sum::<f64>() / n,
        success_rate: successes.iter().filter(|&&x| x).count() as f64 / n,
        returns,
        successes,
    }
}

pub fn evaluate_policy<P: Policy + ?Sized>(policy: &P, spec: &MdpSpec, episodes: usize, seed: u64) -> EvalResult {
    evaluate_from(policy, spec, &seam_crossing_starts(spec, episodes, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GoalSeeking;

    #[test]
    fn zero_action_never_succeeds() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let zero = |_: &[f64]| vec![0.0, 0.0];
        let r = evaluate_policy(&zero, &spec, 10, 0);
        assert_eq!(r.success_rate, 0.0);
        assert!(r.mean_return < 0.0);
    }

    #[test]
    fn scripted_controller_always_succeeds_without_wall() {
        let spec = MdpSpec::named("point-reach-open").unwrap();
        let r = evaluate_policy(&GoalSeeking::new(&spec), &spec, 20, 1);
        assert_eq!(r.success_rate, 1.0);
        let again = evaluate_policy(&GoalSeeking::new(&spec), &spec, 20, 1);
        assert_eq!(r, again);
    }

    #[test]
    fn chain_walker_succeeds() {
        let spec = MdpSpec::named("chain-1d").unwrap();
        let up = |_: &[f64]| vec![1.0];
        let r = evaluate_policy(&up, &spec, 8, 2);
        assert_eq!(r.success_rate, 1.0);
    }
}
