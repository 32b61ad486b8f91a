use bitraj_core::bidir::{train_pair, PairConfig};
use bitraj_core::diffusion::{
    cfg_noise, noise_forward, AnchorPos, CondInput, Denoiser, EpsModel, NoiseSchedule, ScheduleConfig, StateWindow,
    Target,
};
use bitraj_core::envs::{Direction, OfflineDataset, Source, Trajectory, Transition};
use bitraj_core::nn::Tensor;
use bitraj_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn schedule() -> NoiseSchedule {
    NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap()
}

fn window(h: usize, dim: usize, values: Vec<f64>, anchor: AnchorPos) -> StateWindow {
    StateWindow::new(h, dim, values, anchor).unwrap()
}

proptest! {
    #[test]
    fn linear_schedules_are_monotone(steps in 1usize..200, start in 1e-5f64..0.01, span in 0.0f64..0.5) {
        let s = NoiseSchedule::from_config(&ScheduleConfig { steps, beta_start: start, beta_end: start + span }).unwrap();
        for k in 1..steps {
            prop_assert!(s.beta(k + 1) >= s.beta(k));
            prop_assert!(s.alpha_bar(k + 1) < s.alpha_bar(k));
        }
        prop_assert!(s.alpha_bar(1) > 0.0 && s.alpha_bar(1) < 1.0);
    }

    #[test]
    fn noising_is_the_closed_form_and_keeps_the_anchor(
        h in 1usize..6,
        dim in 1usize..4,
        k in 1usize..=100,
        first in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let s = schedule();
        let mut rng = rng_from_seed(seed);
        let n = h * dim;
        let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let anchor = if first { AnchorPos::First } else { AnchorPos::Last };
        let w = window(h, dim, x0.clone(), anchor);
        let xk = noise_forward(&s, &w, k, &eps).unwrap();
        let ab = s.alpha_bar(k);
        let a = anchor.index(h);
        for i in 0..h {
            for d in 0..dim {
                let j = i * dim + d;
                if i == a {
                    prop_assert_eq!(xk.values()[j], x0[j]);
                } else {
                    let expect = ab.sqrt() * x0[j] + (1.0 - ab).sqrt() * eps[j];
                    prop_assert!((xk.values()[j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn guidance_is_the_convex_combination(omega in 0.0f64..=1.0, seed in 0u64..50) {
        let s = schedule();
        let model = Denoiser::new(Direction::Forward, 3, 2, &[8], Target::Sample, &s, seed).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|i| ((i as f64 + seed as f64) * 0.41).sin()).collect()).unwrap();
        let steps = [3, 71];
        let conds = [CondInput::returns(0.2), CondInput::returns(-0.9)];
        let c = model.predict(&x, &steps, &conds).unwrap();
        let u = model.predict(&x, &steps, &[CondInput::null(); 2]).unwrap();
        let g = cfg_noise(&model, &x, &steps, &conds, omega, false).unwrap();
        for ((g, c), u) in g.values().iter().zip(c.values()).zip(u.values()) {
            prop_assert!((g - (omega * c + (1.0 - omega) * u)).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_marginals_match_the_closed_form() {
    let s = schedule();
    let x0 = window(2, 2, vec![0.0, 0.0, 1.5, -2.0], AnchorPos::First);
    let n = 20_000;
    let mut rng = rng_from_seed(9);
    for k in [5, 25, 60] {
        let (mut m, mut m2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let eps: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xk = noise_forward(&s, &x0, k, &eps).unwrap();
            for d in 0..2 {
                m[d] += xk.values()[2 + d];
                m2[d] += xk.values()[2 + d].powi(2);
            }
        }
        let ab = s.alpha_bar(k);
        for d in 0..2 {
            let mean = m[d] / n as f64;
            let var = m2[d] / n as f64 - mean * mean;
            let mu = ab.sqrt() * x0.values()[2 + d];
            assert!((mean - mu).abs() <= 0.05 * mu.abs().max((1.0 - ab).sqrt()), "k={k} mean {mean} vs {mu}");
            assert!((var - (1.0 - ab)).abs() <= 0.05 * (1.0 - ab), "k={k} var {var}");
        }
    }
}

/// One trajectory of exactly `H` states gives one training window per
/// direction; both models drive their loss below 1e-3.
#[test]
fn single_window_dataset_is_overfit() {
    let h = 4;
    let states: Vec<Vec<f64>> = (0..h).map(|i| vec![0.1 * i as f64, 1.0 - 0.2 * i as f64]).collect();
    let transitions = states
        .windows(2)
        .map(|w| Transition {
            s: w[0].clone(),
            a: vec![w[1][0] - w[0][0], w[1][1] - w[0][1]],
            r: -1.0,
            s_next: w[1].clone(),
            done: false,
        })
        .collect();
    let traj = Trajectory {
        episode_id: 0,
        source: Source::Original,
        transitions,
    };
    let data = OfflineDataset::new("point-reach", 2, 2, vec![traj]).unwrap();
    let mut cfg = PairConfig {
        horizon: h,
        ..Default::default()
    };
    cfg.train.hidden = vec![64, 64];
    cfg.train.steps = 1500;
    cfg.train.batch_size = 32;
    let pair = train_pair(&data, 0.99, &cfg, 0).unwrap();
    for model in [&pair.forward, &pair.backward] {
        let losses = &model.meta.epoch_losses;
        let tail = &losses[losses.len().saturating_sub(50)..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean < 1e-3, "{:?}: final loss {mean}", model.meta.direction);
    }
}
