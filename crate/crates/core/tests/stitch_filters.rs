use bitraj_core::bidir::stitch;
use bitraj_core::diffusion::{AnchorPos, StateWindow};
use bitraj_core::envs::{Source, Trajectory, Transition};
use bitraj_core::filters::{
    greedy_select, ood_select, run_filters, trajectory_score, FilterConfig, ForestConfig, IsolationForest,
};
use bitraj_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn window_with_anchor(h: usize, dim: usize, values: Vec<f64>, anchor: AnchorPos, s_t: &[f64]) -> StateWindow {
    let mut w = StateWindow::new(h, dim, values, anchor).unwrap();
    w.set_anchor_row(s_t);
    w
}

/// Selection by repeated minimum extraction; ties go to the earlier index.
fn selection_oracle(keys: &[f64], c: usize, largest: bool) -> Vec<usize> {
    let mut left: Vec<usize> = (0..keys.len()).collect();
    let mut picked = Vec::new();
    for _ in 0..c.min(keys.len()) {
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (keys[left[j]], keys[left[best]]);
            if (largest && a > b) || (!largest && a < b) {
                best = j;
            }
        }
        picked.push(left.remove(best));
    }
    picked.sort_unstable();
    picked
}

fn traj(states: &[Vec<f64>], rewards: &[f64]) -> Trajectory {
    Trajectory {
        episode_id: 0,
        source: Source::Generated,
        transitions: states
            .windows(2)
            .zip(rewards)
            .map(|(w, &r)| Transition {
                s: w[0].clone(),
                a: vec![0.0; w[0].len()],
                r,
                s_next: w[1].clone(),
                done: false,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn stitching_joins_at_the_anchor(
        h in prop::sample::select(vec![1usize, 2, 4, 8]),
        dim in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = rng_from_seed(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let s_t = draw(dim);
        let xb = window_with_anchor(h, dim, draw(h * dim), AnchorPos::Last, &s_t);
        let xf = window_with_anchor(h, dim, draw(h * dim), AnchorPos::First, &s_t);
        let out = stitch(&xb, &s_t, &xf).unwrap();
        prop_assert_eq!(out.len(), 2 * h - 1);
        prop_assert_eq!(out.anchor_index, h - 1);
        prop_assert_eq!(out.anchor(), &s_t[..]);
        for i in 0..h - 1 {
            prop_assert_eq!(&out.states[i][..], xb.row(i));
        }
        for i in 1..h {
            prop_assert_eq!(&out.states[h - 1 + i][..], xf.row(i));
        }
    }

    #[test]
    fn selections_match_the_oracle(keys in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5, 2.0, 3.25]), 0..40), c in 0usize..45) {
        prop_assert_eq!(ood_select(&keys, c), selection_oracle(&keys, c, false));
        prop_assert_eq!(greedy_select(&keys, c), selection_oracle(&keys, c, true));
    }

    #[test]
    fn two_stage_filter_keeps_c_greedy_of_the_ood_survivors(
        n in 1usize..30,
        c_ood in 1usize..30,
        c_greedy in 1usize..30,
        seed in 0u64..1000,
    ) {
        prop_assume!(c_greedy <= c_ood);
        let mut rng = rng_from_seed(seed);
        let points: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let forest = IsolationForest::fit(&points, &ForestConfig { n_trees: 20, subsample: 32 }, &mut rng).unwrap();
        let trajs: Vec<Trajectory> = (0..n)
            .map(|_| {
                let states: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
                let rewards: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                traj(&states, &rewards)
            })
            .collect();
        let cfg = FilterConfig { c_ood: Some(c_ood), c_greedy: Some(c_greedy), ..Default::default() };
        let report = run_filters(&forest, &trajs, &cfg).unwrap();
        let scores: Vec<f64> = trajs.iter().map(|t| trajectory_score(&forest, t, true)).collect();
        let ood = selection_oracle(&scores, c_ood, false);
        let sums: Vec<f64> = ood.iter().map(|&i| trajs[i].reward_sum()).collect();
        let mut kept: Vec<usize> = selection_oracle(&sums, c_greedy, true).into_iter().map(|j| ood[j]).collect();
        kept.sort_unstable();
        prop_assert_eq!(report.kept.len(), c_greedy.min(n));
        prop_assert_eq!(&report.kept, &kept);
        for r in &report.rows {
            prop_assert!(!r.passed_greedy || r.passed_ood);
        }
    }
}

#[test]
fn stitching_rejects_a_mismatched_anchor() {
    let s_t = [1.0, 2.0];
    let xb = window_with_anchor(3, 2, vec![0.0; 6], AnchorPos::Last, &s_t);
    let xf = window_with_anchor(3, 2, vec![0.0; 6], AnchorPos::First, &[1.0, 2.0 + 1e-12]);
    assert!(stitch(&xb, &s_t, &xf).is_err());
}

#[test]
fn a_far_trajectory_never_survives_the_ood_stage() {
    for seed in 0..10 {
        let mut rng = rng_from_seed(seed);
        let points: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let forest = IsolationForest::fit(&points, &ForestConfig::default(), &mut rng).unwrap();
        let mut trajs: Vec<Trajectory> = (0..16)
            .map(|_| {
                let states: Vec<Vec<f64>> =
                    (0..7).map(|_| vec![rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)]).collect();
                traj(&states, &[0.0; 6])
            })
            .collect();
        let far: Vec<Vec<f64>> = (0..7).map(|i| vec![6.0 + 0.1 * i as f64, -6.0]).collect();
        let planted = rng.random_range(0..16);
        trajs[planted] = traj(&far, &[10.0; 6]);
        let cfg = FilterConfig { c_ood: Some(15), c_greedy: Some(15), ..Default::default() };
        let report = run_filters(&forest, &trajs, &cfg).unwrap();
        assert!(!report.kept.contains(&planted), "seed {seed}");
        assert_eq!(report.kept.len(), 15);
    }
}
