use serde::{Deserialize, Serialize};

use super::StateWindow;
use crate::{Error, Result};

/// Linear β schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // β_K = 0.2 keeps ᾱ_K ≈ 2e-5 at K = 100, i.e. x_K is essentially
        // standard normal.
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.2,
        }
    }
}

/// `{β_k}` for `k = 1..=K` with `α_k = 1 − β_k` and `ᾱ_k = Π_{j≤k} α_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("noise schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside [0, 1)")));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("betas must be non-decreasing".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("noise schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    /// Number of diffusion steps `K`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_k`, 1-based.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        1.0 - self.betas[k - 1]
    }

    /// `ᾱ_k`, 1-based; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::OutOfRange(format!(
                "diffusion step {k} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Closed-form forward noising `x_k = √ᾱ_k·x_0 + √(1−ᾱ_k)·ε`, followed by
/// resetting the anchor row to its clean value.
pub fn noise_forward(schedule: &NoiseSchedule, x0: &StateWindow, k: usize, eps: &[f64]) -> Result<StateWindow> {
    schedule.check_step(k)?;
    if eps.len() != x0.values().len() {
        return Err(Error::shape("noise_forward eps", &[x0.values().len()], &[eps.len()]));
    }
    let ab = schedule.alpha_bar(k);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut xk = x0.clone();
    for (x, (c, e)) in xk.values_mut().iter_mut().zip(x0.values().iter().zip(eps)) {
        *x = signal * c + noise * e;
    }
    xk.set_anchor_row(x0.anchor_row());
    Ok(xk)
}
