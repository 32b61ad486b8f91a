use serde::{Deserialize, Serialize};

use super::{Dense, Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent, `θ ← θ − lr·g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default)]
    pub kind: OptimizerKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            kind: OptimizerKind::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN or infinity; parameters and state untouched.
    Skipped,
}

/// Optimizer state: moment accumulators shaped like the network it trains.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Dense>,
    second: Vec<Dense>,
    step: u64,
}

impl Optimizer {
    pub fn new(net: &Mlp, config: OptimizerConfig) -> Self {
        let zeros = net.zero_grads().layers;
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> StepOutcome {
        assert_eq!(grads.layers.len(), net.layers().len(), "gradients not aligned with parameters");
        if !grads.is_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step + 1);
            return StepOutcome::Skipped;
        }
        self.step += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.params_mut().zip(grads.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let moments = self.first.iter_mut().zip(self.second.iter_mut()).flat_map(|(m, v)| {
                    let Dense { weight: mw, bias: mb } = m;
                    let Dense { weight: vw, bias: vb } = v;
                    mw.values_mut()
                        .iter_mut()
                        .zip(vw.values_mut().iter_mut())
                        .chain(mb.values_mut().iter_mut().zip(vb.values_mut().iter_mut()))
                });
                for ((p, g), (m, v)) in net.params_mut().zip(grads.values()).zip(moments) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Tensor};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                weight: Tensor::matrix(1, 1, vec![w]).unwrap(),
                bias: Tensor::vector(vec![0.0]),
            }],
            Activation::Identity,
            Activation::Identity,
            0,
        )
        .unwrap()
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![Dense {
                weight: Tensor::matrix(1, 1, vec![g]).unwrap(),
                bias: Tensor::vector(vec![0.0]),
            }],
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::new(&net, OptimizerConfig { lr: 0.1, kind: OptimizerKind::Sgd });
        assert_eq!(opt.step(&mut net, &grad(2.0)), StepOutcome::Applied);
        assert!((net.layers()[0].weight.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_counts_step() {
        let mut net = Mlp::new(&[3, 4, 2], Activation::Silu, Activation::Identity, 5).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::new(&net, OptimizerConfig::default());
        let zero = net.zero_grads();
        opt.step(&mut net, &zero);
        assert_eq!(net, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::new(&net, OptimizerConfig::default());
        assert_eq!(opt.step(&mut net, &grad(f64::NAN)), StepOutcome::Skipped);
        assert_eq!(net.layers()[0].weight.values()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        // loss(w) = Σ (w_i - target_i)^2 over all parameters of a small net.
        let mut net = Mlp::new(&[2, 3, 1], Activation::Silu, Activation::Identity, 11).unwrap();
        let target: Vec<f64> = (0..net.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |n: &Mlp| -> f64 { n.params().zip(&target).map(|(p, t)| (p - t).powi(2)).sum() };
        let mut opt = Optimizer::new(&net, OptimizerConfig { lr: 0.01, kind: OptimizerKind::default() });
        let mut history = vec![loss(&net)];
        for _ in 0..200 {
            let mut g = net.zero_grads();
            let flat: Vec<f64> = net.params().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            for (dst, src) in g.layers.iter_mut().flat_map(|l| {
                let Dense { weight, bias } = l;
                weight.values_mut().iter_mut().chain(bias.values_mut().iter_mut())
            }).zip(flat) {
                *dst = src;
            }
            opt.step(&mut net, &g);
            history.push(loss(&net));
        }
        // Monotone after a short warmup while the moment estimates settle.
        for w in history[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(history.last().unwrap() < &(history[0] * 0.05));
    }

    #[test]
    fn small_learning_rate_moves_parameters_proportionally() {
        let net0 = Mlp::new(&[2, 3, 1], Activation::Silu, Activation::Identity, 3).unwrap();
        let x = Tensor::vector(vec![0.4, -0.9]);
        let run = |lr: f64| -> f64 {
            let mut net = net0.clone();
            let mut opt = Optimizer::new(&net, OptimizerConfig { lr, kind: OptimizerKind::Sgd });
            for _ in 0..10 {
                let y = net.forward(&x).unwrap().values()[0];
                let b = net.backward(&x, &Tensor::vector(vec![2.0 * (y - 1.0)])).unwrap();
                opt.step(&mut net, &b.grads);
            }
            net.params().zip(net0.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let d1 = run(1e-6);
        let d2 = run(2e-6);
        assert!((d2 / d1 - 2.0).abs() < 1e-3, "displacement ratio {}", d2 / d1);
    }
}
