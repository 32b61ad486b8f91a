//! Offline learners: behavior cloning and a small TD3+BC.
//!
//! Both share the actor: `u = tanh(net(z(s)))` mapped affinely onto the
//! action box, so every output lies inside the box. Action targets are
//! expressed in the same `[-1, 1]` coordinates.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{MdpSpec, NormStats, OfflineDataset, Policy};
use crate::nn::{
    cosine_lr, fit_mse, mse, Activation, FitConfig, Gradients, Mlp, MlpCheckpoint, Optimizer, OptimizerConfig, Tensor,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const POLICY_SCHEMA: &str = "policy-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "bc")]
    Bc,
    #[serde(rename = "td3bc-lite")]
    Td3BcLite,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Bc, Algorithm::Td3BcLite];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Td3BcLite => "td3bc-lite",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == id)
            .ok_or_else(|| Error::Unknown {
                kind: "learner",
                name: id.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub final_lr_ratio: f64,
    /// Weight of the behavior-cloning term in the TD3+BC actor loss.
    pub alpha: f64,
    /// Weight of the `−λQ` term; zero reduces the actor update to BC.
    pub q_weight: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Critic updates per actor update.
    pub policy_delay: usize,
    /// Target-policy smoothing noise and its clip, in `[-1, 1]` action units.
    pub target_noise: f64,
    pub noise_clip: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            steps: 2000,
            batch_size: 256,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            final_lr_ratio: 0.1,
            alpha: 1.0,
            q_weight: 1.0,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
        }
    }
}

/// A trained deterministic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub algorithm: Algorithm,
    pub config: LearnerConfig,
    pub actor: Mlp,
    pub critic: Option<Mlp>,
    pub stats: NormStats,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    schema: String,
    algorithm: Algorithm,
    config: LearnerConfig,
    actor: MlpCheckpoint,
    critic: Option<MlpCheckpoint>,
    stats: NormStats,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

/// Maps between raw actions and `[-1, 1]` box coordinates.
#[derive(Debug, Clone, PartialEq)]
struct ActionBox {
    mid: Vec<f64>,
    half: Vec<f64>,
}

impl ActionBox {
    fn new(low: &[f64], high: &[f64]) -> Self {
        Self {
            mid: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }

    fn to_unit(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(x, (m, h))| if *h > 0.0 { ((x - m) / h).clamp(-1.0, 1.0) } else { 0.0 })
            .collect()
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(x, (m, h))| m + h * x)
            .collect()
    }
}

impl PolicyParams {
    fn action_box(&self) -> ActionBox {
        ActionBox::new(&self.action_low, &self.action_high)
    }

    /// Actions for a batch of raw states.
    pub fn act_batch<S: AsRef<[f64]>>(&self, states: &[S]) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<Vec<f64>> = states.iter().map(|s| self.stats.normalize_state(s.as_ref())).collect();
        let out = self.actor.forward(&Tensor::from_rows(&rows)?)?;
        let b = self.action_box();
        Ok((0..out.rows()).map(|i| b.from_unit(out.row(i))).collect())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = PolicyFile {
            schema: POLICY_SCHEMA.to_string(),
            algorithm: self.algorithm,
            config: self.config.clone(),
            actor: MlpCheckpoint::from(&self.actor),
            critic: self.critic.as_ref().map(MlpCheckpoint::from),
            stats: self.stats.clone(),
            action_low: self.action_low.clone(),
            action_high: self.action_high.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let schema = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if schema != POLICY_SCHEMA {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: schema.to_string(),
                expected: POLICY_SCHEMA,
            });
        }
        let f: PolicyFile = serde_json::from_value(raw)?;
        Ok(Self {
            algorithm: f.algorithm,
            config: f.config,
            actor: f.actor.into_mlp()?,
            critic: f.critic.map(MlpCheckpoint::into_mlp).transpose()?,
            stats: f.stats,
            action_low: f.action_low,
            action_high: f.action_high,
        })
    }
}

impl Policy for PolicyParams {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        self.act_batch(&[s]).expect("state matches the policy's input width").remove(0)
    }
}

/// Tensors for one offline dataset in learner coordinates.
#[derive(Debug, Clone)]
pub struct LearnerBatch {
    /// z-scored states.
    pub z: Tensor,
    /// Actions in `[-1, 1]` box coordinates.
    pub u: Tensor,
    pub r: Vec<f64>,
    pub z_next: Tensor,
    pub done: Vec<bool>,
}

impl LearnerBatch {
    pub fn from_dataset(dataset: &OfflineDataset, spec: &MdpSpec) -> Result<Self> {
        let b = ActionBox::new(&spec.action_box.low, &spec.action_box.high);
        let st = &dataset.stats;
        let mut z = Vec::new();
        let mut u = Vec::new();
        let mut r = Vec::new();
        let mut zn = Vec::new();
        let mut done = Vec::new();
        for t in dataset.transitions() {
            z.push(st.normalize_state(&t.s));
            u.push(b.to_unit(&t.a));
            r.push(t.r);
            zn.push(st.normalize_state(&t.s_next));
            done.push(t.done);
        }
        if z.is_empty() {
            return Err(Error::Empty("learner dataset"));
        }
        Ok(Self {
            z: Tensor::from_rows(&z)?,
            u: Tensor::from_rows(&u)?,
            r,
            z_next: Tensor::from_rows(&zn)?,
            done,
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> LearnerBatch {
        let rows = |t: &Tensor| {
            let v: Vec<&[f64]> = idx.iter().map(|&i| t.row(i)).collect();
            Tensor::from_rows(&v).expect("gathered rows")
        };
        LearnerBatch {
            z: rows(&self.z),
            u: rows(&self.u),
            r: idx.iter().map(|&i| self.r[i]).collect(),
            z_next: rows(&self.z_next),
            done: idx.iter().map(|&i| self.done[i]).collect(),
        }
    }
}

pub fn new_actor(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let sizes = [&[state_dim][..], hidden, &[action_dim]].concat();
    Mlp::new(&sizes, Activation::Silu, Activation::Tanh, seed)
}

pub fn new_critic(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let sizes = [&[state_dim + action_dim][..], hidden, &[1]].concat();
    Mlp::new(&sizes, Activation::Silu, Activation::Identity, seed)
}

/// Behavior-cloning loss `mean ‖π(z) − u‖²` and its parameter gradients.
pub fn bc_loss(actor: &Mlp, z: &Tensor, u: &Tensor) -> Result<(f64, Gradients)> {
    let trace = actor.forward_trace(z)?;
    let (loss, up) = mse(trace.output(), u)?;
    Ok((loss, actor.backward_trace(&trace, &up)?.grads))
}

/// TD target `r + γ(1 − done)·Q'(z', u')`.
pub fn td_targets(critic_target: &Mlp, batch: &LearnerBatch, next_u: &Tensor, gamma: f64) -> Result<Tensor> {
    let q = critic_target.forward(&Tensor::hcat(&[&batch.z_next, next_u])?)?;
    let y = (0..batch.len())
        .map(|i| batch.r[i] + if batch.done[i] { 0.0 } else { gamma * q.values()[i] })
        .collect();
    Tensor::matrix(batch.len(), 1, y)
}

/// Critic regression `mean (Q(z, u) − y)²` against fixed targets.
pub fn critic_loss(critic: &Mlp, batch: &LearnerBatch, targets: &Tensor) -> Result<(f64, Gradients)> {
    let input = Tensor::hcat(&[&batch.z, &batch.u])?;
    let trace = critic.forward_trace(&input)?;
    let (loss, up) = mse(trace.output(), targets)?;
    Ok((loss, critic.backward_trace(&trace, &up)?.grads))
}

/// `λ = 1 / mean |Q|`, treated as a constant by the actor update.
pub fn q_scale(q: &Tensor) -> f64 {
    let m = q.values().iter().map(|x| x.abs()).sum::<f64>() / q.len().max(1) as f64;
    1.0 / m.max(1e-6)
}

/// TD3+BC actor loss `−q_weight·λ·mean Q(z, π(z)) + α·mean ‖π(z) − u‖²`
/// with gradients for the actor only. `lambda = None` computes `λ` from
/// the current batch; passing a value holds it fixed.
pub fn actor_loss(
    actor: &Mlp,
    critic: &Mlp,
    z: &Tensor,
    u: &Tensor,
    alpha: f64,
    q_weight: f64,
    lambda: Option<f64>,
) -> Result<(f64, Gradients)> {
    let trace = actor.forward_trace(z)?;
    let pi = trace.output();
    let (bc, mut up) = mse(pi, u)?;
    up.values_mut().iter_mut().for_each(|g| *g *= alpha);
    let mut loss = alpha * bc;
    if q_weight != 0.0 {
        let input = Tensor::hcat(&[z, pi])?;
        let ctrace = critic.forward_trace(&input)?;
        let q = ctrace.output();
        let lam = lambda.unwrap_or_else(|| q_scale(q));
        let n = q.len() as f64;
        loss -= q_weight * lam * q.values().iter().sum::<f64>() / n;
        let cup = Tensor::filled(q.shape().to_vec(), -q_weight * lam / n);
        let dq = critic.backward_trace(&ctrace, &cup)?.input_grad;
        let dz = z.cols();
        for i in 0..up.rows() {
            let row = &dq.row(i)[dz..];
            for (g, d) in up.row_mut(i).iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    Ok((loss, actor.backward_trace(&trace, &up)?.grads))
}

/// Trains a policy on every transition of `dataset`.
pub fn train_policy(
    dataset: &OfflineDataset,
    spec: &MdpSpec,
    algorithm: Algorithm,
    config: &LearnerConfig,
    seed: u64,
) -> Result<PolicyParams> {
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("learner steps and batch size must be positive".into()));
    }
    let data = LearnerBatch::from_dataset(dataset, spec)?;
    let mut actor = new_actor(spec.state_dim, spec.action_dim, &config.hidden, derive_seed(seed, "actor"))?;
    let critic = match algorithm {
        Algorithm::Bc => {
            let fit = FitConfig {
                steps: config.steps,
                batch_size: config.batch_size,
                lr: config.actor_lr,
                final_lr_ratio: config.final_lr_ratio,
                grad_clip: 0.0,
            };
            fit_mse(&mut actor, &data.z, &data.u, &fit, derive_seed(seed, "batches"))?;
            None
        }
        Algorithm::Td3BcLite => Some(train_td3bc(&mut actor, &data, spec, config, seed)?),
    };
    Ok(PolicyParams {
        algorithm,
        config: config.clone(),
        actor,
        critic,
        stats: dataset.stats.clone(),
        action_low: spec.action_box.low.clone(),
        action_high: spec.action_box.high.clone(),
    })
}

fn train_td3bc(actor: &mut Mlp, data: &LearnerBatch, spec: &MdpSpec, cfg: &LearnerConfig, seed: u64) -> Result<Mlp> {
    let mut critic = new_critic(spec.state_dim, spec.action_dim, &cfg.hidden, derive_seed(seed, "critic"))?;
    let mut actor_t = actor.clone();
    let mut critic_t = critic.clone();
    let mut aopt = Optimizer::new(actor, OptimizerConfig { lr: cfg.actor_lr, ..Default::default() });
    let mut copt = Optimizer::new(&critic, OptimizerConfig { lr: cfg.critic_lr, ..Default::default() });
    let mut rng = rng_from_seed(derive_seed(seed, "batches"));
    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let delay = cfg.policy_delay.max(1);
    let mut idx = vec![0usize; bs];
    for step in 0..cfg.steps {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        let batch = data.gather(&idx);

        let mut next_u = actor_t.forward(&batch.z_next)?;
        for v in next_u.values_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + (cfg.target_noise * e).clamp(-cfg.noise_clip, cfg.noise_clip)).clamp(-1.0, 1.0);
        }
        let y = td_targets(&critic_t, &batch, &next_u, cfg.gamma)?;
        let (_, cg) = critic_loss(&critic, &batch, &y)?;
        copt.set_lr(cosine_lr(cfg.critic_lr, cfg.final_lr_ratio, step, cfg.steps));
        copt.step(&mut critic, &cg);

        if step % delay == 0 {
            let (_, ag) = actor_loss(actor, &critic, &batch.z, &batch.u, cfg.alpha, cfg.q_weight, None)?;
            aopt.set_lr(cosine_lr(cfg.actor_lr, cfg.final_lr_ratio, step, cfg.steps));
            aopt.step(actor, &ag);
            actor_t.soft_update(actor, cfg.tau);
            critic_t.soft_update(&critic, cfg.tau);
        }
    }
    if !actor.params().all(|p| p.is_finite()) {
        return Err(Error::NonFinite {
            context: "TD3+BC actor parameters".into(),
        });
    }
    Ok(critic)
}

/// Mean squared error between the policy's actions and `dataset`'s
/// actions, in raw action units.
pub fn action_mse(policy: &PolicyParams, dataset: &OfflineDataset) -> Result<f64> {
    let states: Vec<&[f64]> = dataset.transitions().map(|t| t.s.as_slice()).collect();
    if states.is_empty() {
        return Err(Error::Empty("action mse dataset"));
    }
    let acts = policy.act_batch(&states)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, t) in acts.iter().zip(dataset.transitions()) {
        for (x, y) in a.iter().zip(&t.a) {
            sum += (x - y).powi(2);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::collect;
    use crate::nn::gradcheck::{central_difference, relative_error};

    fn random_batch(seed: u64, n: usize, ds: usize, da: usize) -> LearnerBatch {
        let mut rng = rng_from_seed(seed);
        let mut t = |rows: usize, cols: usize, scale: f64| {
            let v = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            Tensor::matrix(rows, cols, v).unwrap()
        };
        let z = t(n, ds, 1.5);
        let u = t(n, da, 0.9);
        let zn = t(n, ds, 1.5);
        let r = t(n, 1, 1.0).into_values();
        LearnerBatch {
            z,
            u,
            r,
            z_next: zn,
            done: (0..n).map(|i| i % 3 == 0).collect(),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let b = random_batch(seed, 6, 2, 2);
            let actor = new_actor(2, 2, &[5], seed).unwrap();
            let critic = new_critic(2, 2, &[5], seed + 100).unwrap();

            let (_, g) = bc_loss(&actor, &b.z, &b.u).unwrap();
            let fd = central_difference(&actor, 1e-5, |a| bc_loss(a, &b.z, &b.u).unwrap().0);
            assert!(relative_error(&g.to_vec(), &fd) < 1e-5, "bc seed {seed}");

            let y = td_targets(&critic, &b, &b.u, 0.9).unwrap();
            let (_, g) = critic_loss(&critic, &b, &y).unwrap();
            let fd = central_difference(&critic, 1e-5, |c| critic_loss(c, &b, &y).unwrap().0);
            assert!(relative_error(&g.to_vec(), &fd) < 1e-5, "critic seed {seed}");

            let lam = 0.7;
            let (_, g) = actor_loss(&actor, &critic, &b.z, &b.u, 2.0, 1.0, Some(lam)).unwrap();
            let fd = central_difference(&actor, 1e-5, |a| {
                actor_loss(a, &critic, &b.z, &b.u, 2.0, 1.0, Some(lam)).unwrap().0
            });
            assert!(relative_error(&g.to_vec(), &fd) < 1e-5, "actor seed {seed}");
        }
    }

    #[test]
    fn zero_q_weight_is_scaled_bc() {
        let b = random_batch(4, 8, 2, 2);
        let actor = new_actor(2, 2, &[6], 1).unwrap();
        let critic = new_critic(2, 2, &[6], 2).unwrap();
        let (l1, g1) = bc_loss(&actor, &b.z, &b.u).unwrap();
        let (l2, g2) = actor_loss(&actor, &critic, &b.z, &b.u, 1.0, 0.0, None).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1.to_vec(), g2.to_vec());
    }

    #[test]
    fn actions_stay_in_box() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 6, 0).unwrap();
        let cfg = LearnerConfig {
            steps: 50,
            hidden: vec![16],
            ..Default::default()
        };
        let p = train_policy(&d, &spec, Algorithm::Td3BcLite, &cfg, 0).unwrap();
        for i in 0..50 {
            let s = [i as f64 / 49.0 * 3.0 - 1.0, 0.3];
            assert!(spec.action_box.contains(&p.act(&s)));
        }
    }

    fn scripted(seed: u64, episodes: usize) -> (MdpSpec, OfflineDataset) {
        let spec = MdpSpec::named("point-reach-open").unwrap();
        (spec.clone(), collect(&spec, "goal-seeking", episodes, seed).unwrap())
    }

    #[test]
    fn bc_recovers_scripted_policy() {
        let (spec, train) = scripted(0, 30);
        let (_, held) = scripted(1, 10);
        let cfg = LearnerConfig {
            hidden: vec![64, 64],
            ..Default::default()
        };
        let p = train_policy(&train, &spec, Algorithm::Bc, &cfg, 3).unwrap();
        let err = action_mse(&p, &held).unwrap();
        assert!(err < 1e-3, "held-out action mse {err}");
    }

    #[test]
    fn td3bc_without_critic_term_behaves_as_bc() {
        let (spec, train) = scripted(0, 30);
        let (_, held) = scripted(1, 10);
        let cfg = LearnerConfig {
            hidden: vec![64, 64],
            q_weight: 0.0,
            // Same number of actor updates as the BC run.
            policy_delay: 1,
            ..Default::default()
        };
        let bc = action_mse(&train_policy(&train, &spec, Algorithm::Bc, &cfg, 3).unwrap(), &held).unwrap();
        let td = action_mse(&train_policy(&train, &spec, Algorithm::Td3BcLite, &cfg, 3).unwrap(), &held).unwrap();
        assert!(td <= 2.0 * bc.max(1e-6), "td3bc {td} vs bc {bc}");
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let spec = MdpSpec::named("chain-1d").unwrap();
        let d = collect(&spec, "modes-ab", 8, 2).unwrap();
        let cfg = LearnerConfig {
            steps: 100,
            hidden: vec![16, 16],
            ..Default::default()
        };
        for alg in Algorithm::ALL {
            let a = train_policy(&d, &spec, alg, &cfg, 9).unwrap();
            let b = train_policy(&d, &spec, alg, &cfg, 9).unwrap();
            assert_eq!(a, b);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("policy.json");
            a.save_json(&p).unwrap();
            assert_eq!(PolicyParams::load_json(&p).unwrap(), a);
        }
        let empty = OfflineDataset::empty(&spec);
        assert_eq!(
            train_policy(&d.merged(&empty).unwrap(), &spec, Algorithm::Bc, &cfg, 9).unwrap(),
            train_policy(&d, &spec, Algorithm::Bc, &cfg, 9).unwrap()
        );
        assert!(train_policy(&empty, &spec, Algorithm::Bc, &cfg, 0).is_err());
        assert!(Algorithm::parse("iql").is_err());
        assert_eq!(Algorithm::parse("td3bc-lite").unwrap(), Algorithm::Td3BcLite);
    }
}
