use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{noise_forward, AnchorPos, CondInput, Denoiser, NoiseSchedule, StateWindow, Target};
use crate::envs::Direction;
use crate::nn::{cosine_lr, Gradients, Optimizer, OptimizerConfig, Tensor};
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

/// A clean normalized window and its normalized target return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub window: StateWindow,
    pub ret: f64,
}

/// The random choices behind one loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub k: usize,
    pub null: bool,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
}

/// Draws, per item and in this order: `k ~ U{1..K}`, a uniform `u` with
/// `null = u < p`, then `window_len` standard normals.
pub fn draw_plans(n: usize, window_len: usize, schedule: &NoiseSchedule, p: f64, rng: &mut Rng) -> Result<Vec<NoisePlan>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1]")));
    }
    Ok((0..n)
        .map(|_| {
            let k = rng.random_range(1..=schedule.steps());
            let null = rng.random::<f64>() < p;
            let eps = (0..window_len).map(|_| StandardNormal.sample(rng)).collect();
            NoisePlan { k, null, eps }
        })
        .collect())
}

/// Noisy inputs, steps and condition slots for a planned batch.
pub fn noisy_batch(
    schedule: &NoiseSchedule,
    batch: &[TrainExample],
    plans: &[NoisePlan],
) -> Result<(Tensor, Vec<usize>, Vec<CondInput>)> {
    let first = batch.first().ok_or(Error::Empty("training batch"))?;
    if plans.len() != batch.len() {
        return Err(Error::shape("noisy_batch plans", &[batch.len()], &[plans.len()]));
    }
    let width = first.window.values().len();
    let mut values = Vec::with_capacity(batch.len() * width);
    for (ex, plan) in batch.iter().zip(plans) {
        if ex.window.horizon() != first.window.horizon()
            || ex.window.dim() != first.window.dim()
            || ex.window.anchor() != first.window.anchor()
        {
            return Err(Error::InvalidArgument("batch windows differ in shape or anchor".into()));
        }
        values.extend_from_slice(noise_forward(schedule, &ex.window, plan.k, &plan.eps)?.values());
    }
    let steps = plans.iter().map(|p| p.k).collect();
    let conds = batch
        .iter()
        .zip(plans)
        .map(|(ex, p)| if p.null { CondInput::null() } else { CondInput::returns(ex.ret) })
        .collect();
    Ok((Tensor::matrix(batch.len(), width, values)?, steps, conds))
}

/// Mean squared noise error over non-anchor entries and its gradient with
/// respect to the predictions.
pub fn loss_from_predictions(
    pred: &Tensor,
    plans: &[NoisePlan],
    horizon: usize,
    dim: usize,
    anchor: AnchorPos,
) -> Result<(f64, Tensor)> {
    let width = horizon * dim;
    if pred.rows() != plans.len() || pred.cols() != width {
        return Err(Error::shape("loss_from_predictions", &[plans.len(), width], pred.shape()));
    }
    let a = anchor.index(horizon);
    let count = plans.len() * (horizon - 1) * dim;
    let mut upstream = Tensor::zeros(vec![plans.len(), width]);
    if count == 0 {
        return Ok((0.0, upstream));
    }
    let mut sum = 0.0;
    for (i, plan) in plans.iter().enumerate() {
        let (p, g) = (pred.row(i), upstream.row_mut(i));
        for j in 0..width {
            if j / dim == a {
                continue;
            }
            let d = p[j] - plan.eps[j];
            sum += d * d;
            g[j] = 2.0 * d / count as f64;
        }
    }
    Ok((sum / count as f64, upstream))
}

/// Loss and parameter gradients for a batch under fixed noise plans.
pub fn loss_with_plans(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    batch: &[TrainExample],
    plans: &[NoisePlan],
) -> Result<LossOutput> {
    let (x, steps, conds) = noisy_batch(schedule, batch, plans)?;
    let first = &batch[0].window;
    if first.horizon() != model.horizon || first.dim() != model.state_dim || first.anchor() != model.anchor() {
        return Err(Error::InvalidArgument("batch windows do not match the denoiser".into()));
    }
    let input = model.encode(&x, &steps, &conds)?;
    let trace = model.net.forward_trace(&input)?;
    let mut pred = trace.output().clone();
    model.output_to_eps(&x, &steps, &mut pred);
    let (loss, mut upstream) = loss_from_predictions(&pred, plans, model.horizon, model.state_dim, model.anchor())?;
    model.eps_grad_to_output(&steps, &mut upstream);
    let grads = model.net.backward_trace(&trace, &upstream)?.grads;
    Ok(LossOutput { loss, grads })
}

/// Condition-dropout denoising loss on a batch with fresh noise from `rng`.
pub fn denoise_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    batch: &[TrainExample],
    p: f64,
    rng: &mut Rng,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let plans = draw_plans(batch.len(), model.window_len(), schedule, p, rng)?;
    loss_with_plans(model, schedule, batch, &plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub hidden: Vec<usize>,
    pub target: Target,
    /// Total gradient steps.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    pub final_lr_ratio: f64,
    /// Probability of replacing the condition with the null token.
    pub cond_dropout: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            target: Target::default(),
            steps: 3000,
            batch_size: 128,
            lr: 1e-3,
            final_lr_ratio: 0.1,
            cond_dropout: 0.25,
            grad_clip: 1.0,
        }
    }
}

/// Trains a fresh denoiser and returns it with the mean loss of every
/// epoch (one pass worth of examples; the last epoch may be partial).
pub fn train_denoiser(
    examples: &[TrainExample],
    schedule: &NoiseSchedule,
    direction: Direction,
    config: &DiffusionTrainConfig,
    seed: u64,
) -> Result<(Denoiser, Vec<f64>)> {
    let first = examples.first().ok_or(Error::Empty("training windows"))?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = Denoiser::new(
        direction,
        first.window.horizon(),
        first.window.dim(),
        &config.hidden,
        config.target,
        schedule,
        seed,
    )?;
    if first.window.anchor() != model.anchor() {
        return Err(Error::InvalidArgument(format!(
            "{} model needs windows anchored at the {:?} state",
            direction.as_str(),
            model.anchor()
        )));
    }
    let mut opt = Optimizer::new(&model.net, OptimizerConfig { lr: config.lr, ..Default::default() });
    let mut rng = rng_from_seed(seed ^ 0x5eed_d1ff);
    let steps_per_epoch = examples.len().div_ceil(config.batch_size).max(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut epoch_losses = Vec::new();
    let mut acc = (0.0, 0usize);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        opt.set_lr(cosine_lr(config.lr, config.final_lr_ratio, step, config.steps));
        let mut out = denoise_loss(&model, schedule, &batch, config.cond_dropout, &mut rng)?;
        if config.grad_clip > 0.0 {
            out.grads.clip_norm(config.grad_clip);
        }
        opt.step(&mut model.net, &out.grads);
        acc.0 += out.loss;
        acc.1 += 1;
        if acc.1 == steps_per_epoch || step + 1 == config.steps {
            epoch_losses.push(acc.0 / acc.1 as f64);
            log::debug!("{} denoiser epoch {}: loss {:.6}", direction.as_str(), epoch_losses.len(), acc.0 / acc.1 as f64);
            acc = (0.0, 0);
        }
    }
    Ok((model, epoch_losses))
}
