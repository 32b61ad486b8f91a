use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stitch, Anchor, BiModelPair, StitchedStateTraj};
use crate::diffusion::{GenCondition, SampleOptions, Sampler, StateWindow};
use crate::envs::{Direction, OfflineDataset};
use crate::rng::{derive_indexed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMode {
    /// Backward and forward halves both generated and stitched.
    Bidirectional,
    /// Forward half generated; the backward half is the anchor's true
    /// history in the dataset, or absent when it has fewer than `H − 1`
    /// predecessors.
    ForwardOnly,
    /// Mirror image of `ForwardOnly`.
    BackwardOnly,
}

impl GenMode {
    pub const ALL: [GenMode; 3] = [GenMode::Bidirectional, GenMode::ForwardOnly, GenMode::BackwardOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::Bidirectional => "bidirectional",
            GenMode::ForwardOnly => "forward-only",
            GenMode::BackwardOnly => "backward-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Unknown {
            kind: "generation mode",
            name: s.to_string(),
        })
    }

    fn uses(self, direction: Direction) -> bool {
        !matches!(
            (self, direction),
            (GenMode::ForwardOnly, Direction::Backward) | (GenMode::BackwardOnly, Direction::Forward)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// CFG weight `ω`.
    pub guidance: f64,
    pub cfg_extrapolate: bool,
    /// Anchors per sampling batch. Results do not depend on the number of
    /// worker threads.
    pub chunk_size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            guidance: 0.8,
            cfg_extrapolate: false,
            chunk_size: 32,
        }
    }
}

#[derive(Debug)]
pub struct GenOutput {
    pub index: usize,
    pub anchor: Anchor,
    pub result: Result<StitchedStateTraj>,
}

fn sample_direction(
    pair: &BiModelPair,
    starts: &[&[f64]],
    target: impl Fn(usize) -> f64,
    offset: usize,
    direction: Direction,
    label: &str,
    config: &GenConfig,
    seed: u64,
) -> Vec<Result<StateWindow>> {
    let model = pair.model(direction);
    let conds: Vec<GenCondition> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| GenCondition {
            anchor: s.to_vec(),
            target_return: model.meta.return_range.normalize(target(i)),
            direction,
            guidance: config.guidance,
            null: false,
        })
        .collect();
    let mut rngs: Vec<_> = (0..starts.len())
        .map(|i| rng_from_seed(derive_indexed(seed, label, (offset + i) as u64)))
        .collect();
    let options = SampleOptions {
        cfg_extrapolate: config.cfg_extrapolate,
    };
    Sampler::for_denoiser(&model.denoiser, &pair.schedule, &pair.stats, options).sample_batch(&conds, &mut rngs)
}

fn true_states(dataset: &OfflineDataset, anchor: &Anchor, from: isize, to: isize) -> Option<Vec<Vec<f64>>> {
    let traj = dataset.trajectories.get(anchor.traj)?;
    let (lo, hi) = (anchor.index as isize + from, anchor.index as isize + to);
    if lo < 0 || hi >= traj.num_states() as isize {
        return None;
    }
    Some((lo..=hi).map(|i| traj.state(i as usize).to_vec()).collect())
}

fn assemble(
    mode: GenMode,
    horizon: usize,
    dataset: &OfflineDataset,
    anchor: &Anchor,
    xb: Option<Result<StateWindow>>,
    xf: Option<Result<StateWindow>>,
) -> Result<StitchedStateTraj> {
    let h = horizon as isize;
    match mode {
        GenMode::Bidirectional => stitch(&xb.expect("backward sampled")?, &anchor.state, &xf.expect("forward sampled")?),
        GenMode::ForwardOnly => {
            let xf = xf.expect("forward sampled")?;
            if xf.anchor_row() != anchor.state.as_slice() {
                return Err(Error::AnchorMismatch);
            }
            let mut states = true_states(dataset, anchor, 1 - h, -1).unwrap_or_default();
            let anchor_index = states.len();
            states.push(anchor.state.clone());
            states.extend(xf.rows().skip(1).map(|r| r.to_vec()));
            Ok(StitchedStateTraj { states, anchor_index })
        }
        GenMode::BackwardOnly => {
            let xb = xb.expect("backward sampled")?;
            if xb.anchor_row() != anchor.state.as_slice() {
                return Err(Error::AnchorMismatch);
            }
            let mut states: Vec<Vec<f64>> = xb.rows().take(horizon - 1).map(|r| r.to_vec()).collect();
            let anchor_index = states.len();
            states.push(anchor.state.clone());
            states.extend(true_states(dataset, anchor, 1, h - 1).unwrap_or_default());
            Ok(StitchedStateTraj { states, anchor_index })
        }
    }
}

/// Generates one stitched trajectory per anchor. Anchor `i` samples its
/// forward half from the stream `(seed, "generate/forward", i)` and its
/// backward half from `(seed, "generate/backward", i)`, so the forward
/// half is shared between modes under the same seed. Failures are reported
/// per anchor.
pub fn generate_batch(
    pair: &BiModelPair,
    dataset: &OfflineDataset,
    anchors: &[Anchor],
    mode: GenMode,
    config: &GenConfig,
    seed: u64,
) -> Vec<GenOutput> {
    let chunk = config.chunk_size.max(1);
    let h = pair.horizon();
    anchors
        .par_chunks(chunk)
        .enumerate()
        .flat_map_iter(|(c, part)| {
            let offset = c * chunk;
            let sample = |d: Direction| {
                let target = |i: usize| match d {
                    Direction::Forward => part[i].forward_return,
                    Direction::Backward => part[i].backward_return,
                };
                let starts: Vec<&[f64]> = part.iter().map(|a| a.state.as_slice()).collect();
                let label = format!("generate/{}", d.as_str());
                sample_direction(pair, &starts, target, offset, d, &label, config, seed).into_iter()
            };
            let mut fwd = mode.uses(Direction::Forward).then(|| sample(Direction::Forward));
            let mut bwd = mode.uses(Direction::Backward).then(|| sample(Direction::Backward));
            part.iter()
                .enumerate()
                .map(|(i, anchor)| {
                    let xf = fwd.as_mut().map(|it| it.next().expect("one window per anchor"));
                    let xb = bwd.as_mut().map(|it| it.next().expect("one window per anchor"));
                    GenOutput {
                        index: offset + i,
                        anchor: anchor.clone(),
                        result: assemble(mode, h, dataset, anchor, xb, xf),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidir::{pick_anchors, train_pair, AnchorConfig, PairConfig};
    use crate::diffusion::{DiffusionTrainConfig, ScheduleConfig};
    use crate::envs::{collect, MdpSpec};
    use crate::rng::rng_from_seed;

    fn setup() -> (OfflineDataset, BiModelPair, Vec<Anchor>) {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 6, 0).unwrap();
        let cfg = PairConfig {
            horizon: 4,
            schedule: ScheduleConfig {
                steps: 12,
                beta_start: 1e-3,
                beta_end: 0.3,
            },
            train: DiffusionTrainConfig {
                hidden: vec![16],
                steps: 30,
                batch_size: 16,
                ..Default::default()
            },
        };
        let pair = train_pair(&d, spec.gamma, &cfg, 1).unwrap();
        let anchors = pick_anchors(
            &d,
            4,
            spec.gamma,
            &AnchorConfig { count: 23, ..Default::default() },
            None,
            &mut rng_from_seed(3),
        )
        .unwrap();
        (d, pair, anchors)
    }

    fn trajs(out: Vec<GenOutput>) -> Vec<StitchedStateTraj> {
        out.into_iter().map(|o| o.result.unwrap()).collect()
    }

    #[test]
    fn counts_lengths_and_determinism() {
        let (d, pair, anchors) = setup();
        let cfg = GenConfig { chunk_size: 5, ..Default::default() };
        assert!(generate_batch(&pair, &d, &[], GenMode::Bidirectional, &cfg, 0).is_empty());
        let a = trajs(generate_batch(&pair, &d, &anchors, GenMode::Bidirectional, &cfg, 9));
        let b = trajs(generate_batch(&pair, &d, &anchors, GenMode::Bidirectional, &cfg, 9));
        assert_eq!(a.len(), anchors.len());
        assert_eq!(a, b);
        for (t, anchor) in a.iter().zip(&anchors) {
            assert_eq!(t.len(), 7);
            assert_eq!(t.anchor_index, 3);
            assert_eq!(t.anchor(), anchor.state.as_slice());
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let (d, pair, anchors) = setup();
        let cfg = GenConfig { chunk_size: 4, ..Default::default() };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| trajs(generate_batch(&pair, &d, &anchors, GenMode::Bidirectional, &cfg, 2)));
        let b = trajs(generate_batch(&pair, &d, &anchors, GenMode::Bidirectional, &cfg, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn forward_only_keeps_the_generated_future() {
        let (d, pair, anchors) = setup();
        let cfg = GenConfig::default();
        let bi = trajs(generate_batch(&pair, &d, &anchors, GenMode::Bidirectional, &cfg, 4));
        let fo = trajs(generate_batch(&pair, &d, &anchors, GenMode::ForwardOnly, &cfg, 4));
        for ((b, f), anchor) in bi.iter().zip(&fo).zip(&anchors) {
            assert_eq!(&b.states[b.anchor_index..], &f.states[f.anchor_index..]);
            if anchor.index >= 3 {
                assert_eq!(f.len(), 7);
                assert_eq!(f.anchor_index, 3);
                let traj = &d.trajectories[anchor.traj];
                for j in 0..3 {
                    assert_eq!(f.states[j], traj.state(anchor.index - 3 + j));
                }
            } else {
                assert_eq!(f.len(), 4);
                assert_eq!(f.anchor_index, 0);
            }
        }
        let bo = trajs(generate_batch(&pair, &d, &anchors, GenMode::BackwardOnly, &cfg, 4));
        for (b, o) in bi.iter().zip(&bo) {
            assert_eq!(&b.states[..=b.anchor_index], &o.states[..=o.anchor_index]);
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in GenMode::ALL {
            assert_eq!(GenMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(GenMode::parse("sideways").is_err());
    }
}
