use serde::{Deserialize, Serialize};

use super::{AnchorPos, NoiseSchedule};
use crate::envs::Direction;
use crate::nn::{Activation, Backward, Mlp, Tensor};
use crate::{Error, Result};

pub const TIME_EMBED_DIM: usize = 32;

/// The two-value condition slot: target return and the null bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondInput {
    pub ret: f64,
    pub null: bool,
}

impl CondInput {
    pub fn returns(ret: f64) -> Self {
        Self { ret, null: false }
    }

    pub fn null() -> Self {
        Self { ret: 0.0, null: true }
    }

    fn slot(&self) -> [f64; 2] {
        if self.null {
            [0.0, 1.0]
        } else {
            [self.ret, 0.0]
        }
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((k as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((k as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// Anything that predicts the noise in a batch of noisy windows.
///
/// `x` is `[n, H·dim]` in normalized space; `steps` and `conds` have one
/// entry per row. The output has the shape of `x`.
pub trait EpsModel: Sync {
    fn predict(&self, x: &Tensor, steps: &[usize], conds: &[CondInput]) -> Result<Tensor>;
}

impl<F> EpsModel for F
where
    F: Fn(&Tensor, &[usize], &[CondInput]) -> Result<Tensor> + Sync,
{
    fn predict(&self, x: &Tensor, steps: &[usize], conds: &[CondInput]) -> Result<Tensor> {
        self(x, steps, conds)
    }
}

/// What the network output represents. Either way the model is used and
/// trained through its implied noise estimate `ε̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The network predicts `ε` directly.
    Epsilon,
    /// The network predicts the clean window `x̂_0`, and
    /// `ε̂ = (x_k − √ᾱ_k·x̂_0)/√(1−ᾱ_k)`.
    #[default]
    Sample,
}

/// MLP noise predictor over flattened windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub net: Mlp,
    pub direction: Direction,
    pub horizon: usize,
    pub state_dim: usize,
    pub target: Target,
    schedule: NoiseSchedule,
}

impl Denoiser {
    pub fn new(
        direction: Direction,
        horizon: usize,
        state_dim: usize,
        hidden: &[usize],
        target: Target,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        if horizon == 0 || state_dim == 0 {
            return Err(Error::InvalidArgument("denoiser needs positive horizon and state dimension".into()));
        }
        let width = horizon * state_dim;
        let mut sizes = vec![width + TIME_EMBED_DIM + 2];
        sizes.extend_from_slice(hidden);
        sizes.push(width);
        let net = Mlp::new(&sizes, Activation::Silu, Activation::Identity, seed)?;
        Ok(Self {
            net,
            direction,
            horizon,
            state_dim,
            target,
            schedule: schedule.clone(),
        })
    }

    pub fn from_net(
        net: Mlp,
        direction: Direction,
        horizon: usize,
        state_dim: usize,
        target: Target,
        schedule: &NoiseSchedule,
    ) -> Result<Self> {
        let width = horizon * state_dim;
        if net.input_dim() != width + TIME_EMBED_DIM + 2 || net.output_dim() != width {
            return Err(Error::shape(
                "Denoiser::from_net",
                &[width + TIME_EMBED_DIM + 2, width],
                &[net.input_dim(), net.output_dim()],
            ));
        }
        Ok(Self {
            net,
            direction,
            horizon,
            state_dim,
            target,
            schedule: schedule.clone(),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn anchor(&self) -> AnchorPos {
        self.direction.into()
    }

    pub fn window_len(&self) -> usize {
        self.horizon * self.state_dim
    }

    /// Builds the network input `[x, emb(k), R, null]` row by row.
    pub fn encode(&self, x: &Tensor, steps: &[usize], conds: &[CondInput]) -> Result<Tensor> {
        let width = self.window_len();
        let n = x.rows();
        if x.cols() != width || steps.len() != n || conds.len() != n {
            return Err(Error::shape(
                "Denoiser::encode",
                &[n, width, n, n],
                &[x.rows(), x.cols(), steps.len(), conds.len()],
            ));
        }
        if let Some(k) = steps.iter().find(|&&k| k == 0 || k > self.schedule.steps()) {
            return Err(Error::OutOfRange(format!(
                "diffusion step {k} outside 1..={}",
                self.schedule.steps()
            )));
        }
        let cols = width + TIME_EMBED_DIM + 2;
        let mut values = Vec::with_capacity(n * cols);
        for i in 0..n {
            values.extend_from_slice(x.row(i));
            values.extend(time_embedding(steps[i], TIME_EMBED_DIM));
            values.extend(conds[i].slot());
        }
        Tensor::matrix(n, cols, values)
    }

    /// Maps raw network outputs to noise estimates in place.
    pub fn output_to_eps(&self, x: &Tensor, steps: &[usize], out: &mut Tensor) {
        if self.target == Target::Epsilon {
            return;
        }
        for (i, &k) in steps.iter().enumerate() {
            let ab = self.schedule.alpha_bar(k);
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            for (o, xv) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                *o = (xv - a * *o) / b;
            }
        }
    }

    /// Chain rule through [`Self::output_to_eps`]: gradient with respect to
    /// `ε̂` becomes gradient with respect to the raw output.
    pub fn eps_grad_to_output(&self, steps: &[usize], grad: &mut Tensor) {
        if self.target == Target::Epsilon {
            return;
        }
        for (i, &k) in steps.iter().enumerate() {
            let ab = self.schedule.alpha_bar(k);
            let f = -(ab / (1.0 - ab)).sqrt();
            grad.row_mut(i).iter_mut().for_each(|g| *g *= f);
        }
    }

    /// Parameter gradients of `Σ upstream ⊙ ε̂(x, k, y)`.
    pub fn backward(&self, x: &Tensor, steps: &[usize], conds: &[CondInput], upstream: &Tensor) -> Result<Backward> {
        let input = self.encode(x, steps, conds)?;
        let mut g = upstream.clone();
        self.eps_grad_to_output(steps, &mut g);
        self.net.backward(&input, &g)
    }
}

impl EpsModel for Denoiser {
    fn predict(&self, x: &Tensor, steps: &[usize], conds: &[CondInput]) -> Result<Tensor> {
        let input = self.encode(x, steps, conds)?;
        let mut out = self.net.forward(&input)?;
        self.output_to_eps(x, steps, &mut out);
        if !out.is_finite() {
            return Err(Error::NonFinite { context: "denoiser noise estimate".into() });
        }
        Ok(out)
    }
}
