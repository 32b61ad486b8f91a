use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Mlp, Optimizer, OptimizerConfig, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Minibatch Adam settings shared by the supervised models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub final_lr_ratio: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 256,
            lr: 1e-3,
            final_lr_ratio: 0.05,
            grad_clip: 0.0,
        }
    }
}

/// Cosine decay from `lr` at step 0 to `lr·final_ratio` at the last step.
pub fn cosine_lr(lr: f64, final_ratio: f64, step: usize, total: usize) -> f64 {
    let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 1.0 };
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    lr * (final_ratio + (1.0 - final_ratio) * cosine)
}

/// Per-element mean squared error and its gradient.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", target.shape(), pred.shape()));
    }
    let n = pred.len().max(1) as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut sum = 0.0;
    for ((g, p), t) in grad.values_mut().iter_mut().zip(pred.values()).zip(target.values()) {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let cols = x.cols();
    let mut values = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        values.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), cols, values).expect("gathered shape")
}

/// Fits `net` to `y ≈ net(x)` by minibatch MSE. Rows are visited in
/// reshuffled passes; returns the mean loss of each pass.
pub fn fit_mse(net: &mut Mlp, x: &Tensor, y: &Tensor, config: &FitConfig, seed: u64) -> Result<Vec<f64>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("regression inputs"));
    }
    if y.rows() != n || x.cols() != net.input_dim() || y.cols() != net.output_dim() {
        return Err(Error::shape(
            "fit_mse",
            &[n, net.input_dim(), n, net.output_dim()],
            &[x.rows(), x.cols(), y.rows(), y.cols()],
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut opt = Optimizer::new(net, OptimizerConfig { lr: config.lr, ..Default::default() });
    let mut rng = rng_from_seed(seed);
    let batch = config.batch_size.min(n);
    let per_pass = n.div_ceil(batch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut losses = Vec::new();
    let mut acc = (0.0, 0usize);
    let mut idx = Vec::with_capacity(batch);
    for step in 0..config.steps {
        idx.clear();
        while idx.len() < batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (xb, yb) = (gather(x, &idx), gather(y, &idx));
        let trace = net.forward_trace(&xb)?;
        let (loss, upstream) = mse(trace.output(), &yb)?;
        let mut grads = net.backward_trace(&trace, &upstream)?.grads;
        if config.grad_clip > 0.0 {
            grads.clip_norm(config.grad_clip);
        }
        opt.set_lr(cosine_lr(config.lr, config.final_lr_ratio, step, config.steps));
        opt.step(net, &grads);
        acc.0 += loss;
        acc.1 += 1;
        if acc.1 == per_pass || step + 1 == config.steps {
            losses.push(acc.0 / acc.1 as f64);
            acc = (0.0, 0);
        }
    }
    Ok(losses)
}
