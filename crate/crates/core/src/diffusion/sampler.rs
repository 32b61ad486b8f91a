use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnchorPos, CondInput, Denoiser, EpsModel, NoiseSchedule, StateWindow};
use crate::envs::{Direction, NormStats};
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

/// What to generate: a window through `anchor` (raw state space) whose
/// return should be near `target_return` (normalized to [-1, 1]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenCondition {
    pub anchor: Vec<f64>,
    pub target_return: f64,
    pub direction: Direction,
    pub guidance: f64,
    /// Sample unconditionally regardless of `target_return`.
    #[serde(default)]
    pub null: bool,
}

impl GenCondition {
    fn input(&self) -> CondInput {
        if self.null {
            CondInput::null()
        } else {
            CondInput::returns(self.target_return)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Use `(1+ω)·ε_c − ω·ε_u` instead of `ω·ε_c + (1−ω)·ε_u`.
    pub cfg_extrapolate: bool,
}

fn check_guidance(omega: f64, extrapolate: bool) -> Result<()> {
    let ok = if extrapolate { omega.is_finite() && omega >= 0.0 } else { (0.0..=1.0).contains(&omega) };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("guidance weight {omega} out of range")))
    }
}

fn combine(c: &[f64], u: &[f64], w: f64, extrapolate: bool, out: &mut [f64]) {
    for ((o, c), u) in out.iter_mut().zip(c).zip(u) {
        *o = if extrapolate { (1.0 + w) * c - w * u } else { w * c + (1.0 - w) * u };
    }
}

/// Guided noise estimate for a batch. `conds` are the conditional slots;
/// the unconditional pass uses the null token for every row.
pub fn cfg_noise<M: EpsModel + ?Sized>(
    model: &M,
    x: &Tensor,
    steps: &[usize],
    conds: &[CondInput],
    omega: f64,
    extrapolate: bool,
) -> Result<Tensor> {
    check_guidance(omega, extrapolate)?;
    cfg_rows(model, x, steps, conds, &vec![omega; x.rows()], extrapolate)
}

fn cfg_rows<M: EpsModel + ?Sized>(
    model: &M,
    x: &Tensor,
    steps: &[usize],
    conds: &[CondInput],
    omegas: &[f64],
    extrapolate: bool,
) -> Result<Tensor> {
    let cond = model.predict(x, steps, conds)?;
    let uncond = model.predict(x, steps, &vec![CondInput::null(); x.rows()])?;
    let mut out = Tensor::zeros(x.shape().to_vec());
    for (i, w) in omegas.iter().enumerate() {
        combine(cond.row(i), uncond.row(i), *w, extrapolate, out.row_mut(i));
    }
    Ok(out)
}

/// Anchor-fixed reverse-process sampler for one direction.
pub struct Sampler<'a, M: EpsModel + ?Sized> {
    pub model: &'a M,
    pub schedule: &'a NoiseSchedule,
    pub stats: &'a NormStats,
    pub horizon: usize,
    pub direction: Direction,
    pub options: SampleOptions,
}

impl<'a> Sampler<'a, Denoiser> {
    pub fn for_denoiser(model: &'a Denoiser, schedule: &'a NoiseSchedule, stats: &'a NormStats, options: SampleOptions) -> Self {
        Self {
            model,
            schedule,
            stats,
            horizon: model.horizon,
            direction: model.direction,
            options,
        }
    }
}

impl<M: EpsModel + ?Sized> Sampler<'_, M> {
    fn dim(&self) -> usize {
        self.stats.state_mean.len()
    }

    fn validate(&self, cond: &GenCondition) -> Result<()> {
        if cond.direction != self.direction {
            return Err(Error::InvalidArgument(format!(
                "{} condition given to a {} model",
                cond.direction.as_str(),
                self.direction.as_str()
            )));
        }
        if cond.anchor.len() != self.dim() {
            return Err(Error::shape("GenCondition anchor", &[self.dim()], &[cond.anchor.len()]));
        }
        if !cond.anchor.iter().all(|x| x.is_finite()) || !cond.target_return.is_finite() {
            return Err(Error::NonFinite { context: "GenCondition".into() });
        }
        check_guidance(cond.guidance, self.options.cfg_extrapolate)
    }

    pub fn sample(&self, cond: &GenCondition, rng: &mut Rng) -> Result<StateWindow> {
        self.sample_batch(std::slice::from_ref(cond), std::slice::from_mut(rng))
            .pop()
            .expect("one result per condition")
    }

    /// Samples one window per condition, each drawing only from its own rng.
    /// A failing item does not affect the others.
    pub fn sample_batch(&self, conds: &[GenCondition], rngs: &mut [Rng]) -> Vec<Result<StateWindow>> {
        assert_eq!(conds.len(), rngs.len(), "one rng per condition");
        let (h, dim) = (self.horizon, self.dim());
        let width = h * dim;
        let anchor: AnchorPos = self.direction.into();
        let a = anchor.index(h);

        let mut status: Vec<Option<Error>> = conds.iter().map(|c| self.validate(c).err()).collect();
        let anchors: Vec<Vec<f64>> = conds.iter().map(|c| self.stats.normalize_state(&c.anchor)).collect();
        let mut x = Tensor::zeros(vec![conds.len(), width]);
        for (i, rng) in rngs.iter_mut().enumerate() {
            if status[i].is_some() {
                continue;
            }
            let row = x.row_mut(i);
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            row[a * dim..(a + 1) * dim].copy_from_slice(&anchors[i]);
        }

        let live: Vec<usize> = (0..conds.len()).filter(|&i| status[i].is_none()).collect();
        let mut live = live;
        for k in (1..=self.schedule.steps()).rev() {
            if live.is_empty() {
                break;
            }
            let eps = match self.guided(&x, &live, conds, k) {
                Ok(e) => e,
                Err(_) => {
                    // Isolate the rows that fail on their own.
                    let mut rows = Vec::with_capacity(live.len());
                    for &i in &live {
                        rows.push(self.guided(&x, &[i], conds, k).ok());
                    }
                    let mut kept = Vec::new();
                    let mut parts = Vec::new();
                    for (&i, r) in live.iter().zip(rows) {
                        match r {
                            Some(e) => {
                                kept.push(i);
                                parts.extend_from_slice(e.values());
                            }
                            None => status[i] = Some(Error::SamplerDiverged { step: k }),
                        }
                    }
                    live = kept;
                    Tensor::matrix(live.len(), width, parts).expect("row count matches")
                }
            };
            let beta = self.schedule.beta(k);
            let coef = beta / (1.0 - self.schedule.alpha_bar(k)).sqrt();
            let scale = 1.0 / self.schedule.alpha(k).sqrt();
            let sigma = beta.sqrt();
            let mut still = Vec::with_capacity(live.len());
            for (j, &i) in live.iter().enumerate() {
                let e = eps.row(j);
                let rng = &mut rngs[i];
                let row = x.row_mut(i);
                for (v, e) in row.iter_mut().zip(e) {
                    *v = (*v - coef * e) * scale;
                }
                if k > 1 {
                    for v in row.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v += sigma * z;
                    }
                }
                row[a * dim..(a + 1) * dim].copy_from_slice(&anchors[i]);
                if row.iter().all(|v| v.is_finite()) {
                    still.push(i);
                } else {
                    status[i] = Some(Error::SamplerDiverged { step: k });
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            live = still;
        }

        conds
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if let Some(e) = status[i].take() {
                    return Err(e);
                }
                let mut values = Vec::with_capacity(width);
                for r in 0..h {
                    values.extend(self.stats.denormalize_state(&x.row(i)[r * dim..(r + 1) * dim]));
                }
                let mut w = StateWindow::new(h, dim, values, anchor)?;
                w.set_anchor_row(&c.anchor);
                Ok(w)
            })
            .collect()
    }

    fn guided(&self, x: &Tensor, rows: &[usize], conds: &[GenCondition], k: usize) -> Result<Tensor> {
        let sub = Tensor::from_rows(&rows.iter().map(|&i| x.row(i)).collect::<Vec<_>>())?;
        let steps = vec![k; rows.len()];
        let slots: Vec<CondInput> = rows.iter().map(|&i| conds[i].input()).collect();
        let omegas: Vec<f64> = rows.iter().map(|&i| conds[i].guidance).collect();
        cfg_rows(self.model, &sub, &steps, &slots, &omegas, self.options.cfg_extrapolate)
    }
}

/// Samples one window from a trained denoiser.
pub fn sample(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    stats: &NormStats,
    cond: &GenCondition,
    options: SampleOptions,
    rng: &mut Rng,
) -> Result<StateWindow> {
    Sampler::for_denoiser(model, schedule, stats, options).sample(cond, rng)
}

/// Samples one window per condition with per-item rngs.
pub fn sample_batch(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    stats: &NormStats,
    conds: &[GenCondition],
    options: SampleOptions,
    rngs: &mut [Rng],
) -> Vec<Result<StateWindow>> {
    Sampler::for_denoiser(model, schedule, stats, options).sample_batch(conds, rngs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{noise_forward, ScheduleConfig, Target};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap()
    }
    use crate::rng::rng_from_seed;

    fn unit_stats(dim: usize) -> NormStats {
        NormStats {
            state_mean: vec![0.0; dim],
            state_std: vec![1.0; dim],
            action_mean: vec![0.0; 1],
            action_std: vec![1.0; 1],
            reward_mean: 0.0,
            reward_std: 1.0,
        }
    }

    fn stub(c: f64, u: f64) -> impl Fn(&Tensor, &[usize], &[CondInput]) -> Result<Tensor> + Sync {
        move |x: &Tensor, _: &[usize], conds: &[CondInput]| {
            let mut out = Tensor::zeros(x.shape().to_vec());
            for (i, cond) in conds.iter().enumerate() {
                out.row_mut(i).iter_mut().for_each(|v| *v = if cond.null { u } else { c });
            }
            Ok(out)
        }
    }

    #[test]
    fn guidance_boundaries_are_exact() {
        let model = Denoiser::new(Direction::Forward, 3, 2, &[16], Target::Sample, &sched(), 4).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let steps = [5, 60];
        let conds = [CondInput::returns(0.3), CondInput::returns(-0.8)];
        let cond = model.predict(&x, &steps, &conds).unwrap();
        let uncond = model.predict(&x, &steps, &[CondInput::null(); 2]).unwrap();
        assert_eq!(cfg_noise(&model, &x, &steps, &conds, 0.0, false).unwrap(), uncond);
        assert_eq!(cfg_noise(&model, &x, &steps, &conds, 1.0, false).unwrap(), cond);
        assert_eq!(cfg_noise(&model, &x, &steps, &conds, 0.0, true).unwrap(), cond);
    }

    #[test]
    fn half_guidance_averages_stub_outputs() {
        let m = stub(2.0, -1.0);
        let x = Tensor::zeros(vec![1, 4]);
        let e = cfg_noise(&m, &x, &[1], &[CondInput::returns(0.0)], 0.5, false).unwrap();
        assert!(e.values().iter().all(|v| *v == 0.5));
        let e = cfg_noise(&m, &x, &[1], &[CondInput::returns(0.0)], 0.5, true).unwrap();
        assert!(e.values().iter().all(|v| *v == 3.5));
        assert!(cfg_noise(&m, &x, &[1], &[CondInput::returns(0.0)], 1.5, false).is_err());
    }

    fn cond(anchor: Vec<f64>, direction: Direction) -> GenCondition {
        GenCondition {
            anchor,
            target_return: 0.4,
            direction,
            guidance: 0.8,
            null: false,
        }
    }

    #[test]
    fn anchor_is_exact_and_sampling_is_deterministic() {
        let schedule = NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap();
        let stats = NormStats {
            state_mean: vec![0.3, -2.0],
            state_std: vec![0.7, 3.0],
            ..unit_stats(2)
        };
        for dir in [Direction::Forward, Direction::Backward] {
            let model = Denoiser::new(dir, 4, 2, &[16], Target::Sample, &schedule, 11).unwrap();
            let c = cond(vec![0.123456789, 7.0 / 3.0], dir);
            let a = sample(&model, &schedule, &stats, &c, SampleOptions::default(), &mut rng_from_seed(3)).unwrap();
            let b = sample(&model, &schedule, &stats, &c, SampleOptions::default(), &mut rng_from_seed(3)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.anchor_row(), c.anchor.as_slice());
            assert_eq!(a.anchor_index(), if dir == Direction::Forward { 0 } else { 3 });
        }
    }

    #[test]
    fn batch_items_match_individual_samples() {
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.3).unwrap();
        let stats = unit_stats(1);
        let model = Denoiser::new(Direction::Forward, 3, 1, &[8], Target::Epsilon, &schedule, 2).unwrap();
        let conds: Vec<_> = (0..3).map(|i| cond(vec![i as f64], Direction::Forward)).collect();
        let mut rngs: Vec<_> = (0..3).map(rng_from_seed).collect();
        let batch = sample_batch(&model, &schedule, &stats, &conds, SampleOptions::default(), &mut rngs);
        for (i, b) in batch.into_iter().enumerate() {
            let one = sample(&model, &schedule, &stats, &conds[i], SampleOptions::default(), &mut rng_from_seed(i as u64));
            let (b, one) = (b.unwrap(), one.unwrap());
            for (x, y) in b.values().iter().zip(one.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direction_mismatch_is_rejected() {
        let schedule = NoiseSchedule::linear(5, 1e-4, 0.3).unwrap();
        let model = Denoiser::new(Direction::Forward, 2, 1, &[4], Target::Sample, &schedule, 0).unwrap();
        let r = sample(
            &model,
            &schedule,
            &unit_stats(1),
            &cond(vec![0.0], Direction::Backward),
            SampleOptions::default(),
            &mut rng_from_seed(0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn diverging_item_reports_its_step_without_poisoning_others() {
        let schedule = NoiseSchedule::linear(10, 1e-4, 0.3).unwrap();
        let stats = unit_stats(1);
        // Rows whose anchor is negative get an infinite noise estimate.
        let model = |x: &Tensor, _: &[usize], _: &[CondInput]| -> Result<Tensor> {
            let mut out = Tensor::zeros(x.shape().to_vec());
            for i in 0..x.rows() {
                if x.row(i)[0] < 0.0 {
                    out.row_mut(i)[1] = f64::INFINITY;
                }
            }
            Ok(out)
        };
        let sampler = Sampler {
            model: &model,
            schedule: &schedule,
            stats: &stats,
            horizon: 2,
            direction: Direction::Forward,
            options: SampleOptions::default(),
        };
        let conds = [cond(vec![1.0], Direction::Forward), cond(vec![-1.0], Direction::Forward)];
        let mut rngs = [rng_from_seed(0), rng_from_seed(1)];
        let out = sampler.sample_batch(&conds, &mut rngs);
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::SamplerDiverged { step: 10 })));
    }

    #[test]
    fn oracle_denoiser_recovers_single_datapoint() {
        // With ε̂ = (x_k − √ᾱ_k·x0)/√(1−ᾱ_k) every reverse mean passes through
        // the posterior of the single datapoint, and the final step lands on it.
        let schedule = NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap();
        let stats = NormStats {
            state_mean: vec![0.5, 0.5],
            state_std: vec![0.2, 0.3],
            ..unit_stats(2)
        };
        let raw = [[0.2, 0.6], [0.25, 0.62], [0.31, 0.65], [0.36, 0.66]];
        let x0: Vec<f64> = raw.iter().flat_map(|s| stats.normalize_state(s)).collect();
        let oracle = |x: &Tensor, steps: &[usize], _: &[CondInput]| -> Result<Tensor> {
            let mut out = Tensor::zeros(x.shape().to_vec());
            for i in 0..x.rows() {
                let ab = schedule.alpha_bar(steps[i]);
                for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                    *o = (x.row(i)[j] - ab.sqrt() * x0[j]) / (1.0 - ab).sqrt();
                }
            }
            Ok(out)
        };
        let sampler = Sampler {
            model: &oracle,
            schedule: &schedule,
            stats: &stats,
            horizon: 4,
            direction: Direction::Forward,
            options: SampleOptions::default(),
        };
        for seed in 0..5 {
            let w = sampler
                .sample(&cond(raw[0].to_vec(), Direction::Forward), &mut rng_from_seed(seed))
                .unwrap();
            for (r, s) in w.rows().zip(&raw) {
                for (a, b) in r.iter().zip(s) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
        }
        // The oracle is consistent with the forward process it inverts.
        let w0 = StateWindow::new(4, 2, x0.clone(), AnchorPos::First).unwrap();
        let eps: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let xk = noise_forward(&schedule, &w0, 30, &eps).unwrap();
        let pred = oracle(&Tensor::matrix(1, 8, xk.values().to_vec()).unwrap(), &[30], &[CondInput::null()]).unwrap();
        for j in 2..8 {
            assert!((pred.values()[j] - eps[j]).abs() < 1e-9);
        }
    }
}
