//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! optionally auto-tuned entropy temperature.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{policy, Adam, NetInput, NetSpec, TwoBranchNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub image: Option<Vec<f32>>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub next_image: Option<Vec<f32>>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::BufferUnderfilled {
                size: self.items.len(),
                batch,
            });
        }
        Ok((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// Column-stacked view of sampled transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f32>,
    pub images: Option<Vec<f32>>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub next_images: Option<Vec<f32>>,
    pub dones: Vec<f32>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let with_images = first.image.is_some();
        let mut b = Batch {
            size: ts.len(),
            obs: Vec::with_capacity(ts.len() * first.obs.len()),
            images: with_images.then(Vec::new),
            actions: Vec::with_capacity(ts.len() * first.action.len()),
            rewards: Vec::with_capacity(ts.len()),
            next_obs: Vec::with_capacity(ts.len() * first.obs.len()),
            next_images: with_images.then(Vec::new),
            dones: Vec::with_capacity(ts.len()),
        };
        for t in ts {
            if t.obs.len() != first.obs.len()
                || t.next_obs.len() != first.obs.len()
                || t.action.len() != first.action.len()
                || t.image.is_some() != with_images
                || t.next_image.is_some() != with_images
            {
                return Err(Error::ShapeMismatch {
                    context: "transition",
                    expected: vec![first.obs.len(), first.action.len()],
                    actual: vec![t.obs.len(), t.action.len()],
                });
            }
            b.obs.extend_from_slice(&t.obs);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
            if let (Some(img), Some(dst)) = (&t.image, b.images.as_mut()) {
                dst.extend_from_slice(img);
            }
            if let (Some(img), Some(dst)) = (&t.next_image, b.next_images.as_mut()) {
                dst.extend_from_slice(img);
            }
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub alpha_init: f64,
    pub tau: f64,
    pub auto_alpha: bool,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub buffer_capacity: usize,
    /// Environment steps with uniformly random actions before learning.
    pub warmup_steps: u64,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            batch_size: 256,
            actor_lr: 1e-5,
            critic_lr: 1e-5,
            alpha_lr: 1e-5,
            alpha_init: 0.2,
            tau: 0.005,
            auto_alpha: true,
            target_entropy: None,
            buffer_capacity: 300_000,
            warmup_steps: 1_000,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the buffer".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.alpha_init >= 0.0) {
            return Err(Error::Config("alpha_init must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub update: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Mean of −log π over the batch.
    pub entropy: f64,
    pub mean_q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sac {
    pub config: SacConfig,
    pub action_dim: usize,
    pub actor: TwoBranchNet<f32>,
    pub q1: TwoBranchNet<f32>,
    pub q2: TwoBranchNet<f32>,
    pub q1_target: TwoBranchNet<f32>,
    pub q2_target: TwoBranchNet<f32>,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    log_alpha: f64,
    updates: u64,
}

/// Critic architecture for a given actor architecture: the action is
/// appended to the scalar input and the head emits one value. An actor
/// without scalar inputs gets an action branch shaped like its visual tail.
pub fn critic_spec(actor: &NetSpec, action_dim: usize) -> NetSpec {
    let scalar_hidden = match (&actor.visual, actor.scalar_inputs) {
        (Some(v), 0) => v.hidden.clone(),
        _ => actor.scalar_hidden.clone(),
    };
    NetSpec {
        scalar_inputs: actor.scalar_inputs + action_dim,
        scalar_hidden,
        outputs: 1,
        ..actor.clone()
    }
}

fn join_obs_action(obs: &[f32], obs_dim: usize, actions: &[f32], action_dim: usize, batch: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(batch * (obs_dim + action_dim));
    for b in 0..batch {
        out.extend_from_slice(&obs[b * obs_dim..(b + 1) * obs_dim]);
        out.extend_from_slice(&actions[b * action_dim..(b + 1) * action_dim]);
    }
    out
}

fn gaussian_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl Sac {
    /// `actor_spec.outputs` must be twice `action_dim` (means and log-stds).
    pub fn new<R: Rng + ?Sized>(config: SacConfig, actor_spec: NetSpec, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if actor_spec.outputs != 2 * action_dim {
            return Err(Error::InvalidArgument(format!(
                "actor emits {} values, expected {}",
                actor_spec.outputs,
                2 * action_dim
            )));
        }
        let cspec = critic_spec(&actor_spec, action_dim);
        let actor = TwoBranchNet::new(actor_spec, 0.01, rng)?;
        let q1 = TwoBranchNet::new(cspec.clone(), 1.0, rng)?;
        let q2 = TwoBranchNet::new(cspec, 1.0, rng)?;
        Ok(Self {
            actor_opt: Adam::new(config.actor_lr),
            q1_opt: Adam::new(config.critic_lr),
            q2_opt: Adam::new(config.critic_lr),
            alpha_opt: Adam::new(config.alpha_lr),
            log_alpha: config.alpha_init.max(f64::MIN_POSITIVE).ln(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            actor,
            action_dim,
            config,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        if self.config.alpha_init == 0.0 && !self.config.auto_alpha {
            0.0
        } else {
            self.log_alpha.exp()
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    fn obs_dim(&self) -> usize {
        self.actor.spec.scalar_inputs
    }

    /// Action in `[-1, 1]^n` for one observation.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f32], image: Option<&[f32]>, mode: ActMode, rng: &mut R) -> Result<Vec<f32>> {
        let head = self.actor.infer(NetInput {
            scalars: obs,
            image,
            batch: 1,
        })?;
        let a = match mode {
            ActMode::Deterministic => policy::mean_action(&head, self.action_dim)?,
            ActMode::Stochastic => {
                let noise = gaussian_noise(rng, self.action_dim);
                policy::sample(&head, self.action_dim, &noise)?.0
            }
        };
        Ok(a.into_iter().map(|v| v as f32).collect())
    }

    /// Bootstrapped critic targets `r + γ(1−done)(min Q'(s', a') − α log π(a'|s'))`.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let b = batch.size;
        let head = self.actor.infer(NetInput {
            scalars: &batch.next_obs,
            image: batch.next_images.as_deref(),
            batch: b,
        })?;
        let noise = gaussian_noise(rng, b * self.action_dim);
        let (next_a, next_logp, _) = policy::sample(&head, self.action_dim, &noise)?;
        let next_a: Vec<f32> = next_a.into_iter().map(|v| v as f32).collect();
        let joined = join_obs_action(&batch.next_obs, self.obs_dim(), &next_a, self.action_dim, b);
        let input = NetInput {
            scalars: &joined,
            image: batch.next_images.as_deref(),
            batch: b,
        };
        let t1 = self.q1_target.infer(input)?;
        let t2 = self.q2_target.infer(input)?;
        let alpha = self.alpha();
        Ok((0..b)
            .map(|i| {
                let soft = (t1[i].min(t2[i]) as f64) - alpha * next_logp[i];
                batch.rewards[i] as f64 + self.config.gamma * (1.0 - batch.dones[i] as f64) * soft
            })
            .collect())
    }

    /// One critic regression step towards `targets`. Returns the mean of
    /// the two critics' mean squared errors before the step.
    pub fn critic_step(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let b = batch.size;
        let joined = join_obs_action(&batch.obs, self.obs_dim(), &batch.actions, self.action_dim, b);
        let input = NetInput {
            scalars: &joined,
            image: batch.images.as_deref(),
            batch: b,
        };
        let mut total = 0.0;
        for (q, opt) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)] {
            q.zero_grad();
            let pred = q.forward(input)?;
            let mut loss = 0.0;
            let grad: Vec<f32> = pred
                .iter()
                .zip(targets)
                .map(|(p, y)| {
                    let e = *p as f64 - y;
                    loss += e * e;
                    (2.0 * e / b as f64) as f32
                })
                .collect();
            loss /= b as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    component: "critic",
                    update: self.updates,
                    diagnostics: format!("targets range {:?}", finite_range(targets)),
                });
            }
            q.backward(&grad)?;
            opt.step(q.params_mut())?;
            q.clear_cache();
            total += loss;
        }
        Ok(0.5 * total)
    }

    /// Full update: critics, actor, temperature, then target smoothing.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport> {
        let b = batch.size;
        let targets = self.critic_targets(batch, rng)?;
        let critic_loss = self.critic_step(batch, &targets)?;

        // Actor.
        let alpha = self.alpha();
        self.actor.zero_grad();
        let head = self.actor.forward(NetInput {
            scalars: &batch.obs,
            image: batch.images.as_deref(),
            batch: b,
        })?;
        let noise = gaussian_noise(rng, b * self.action_dim);
        let (act, logp, cache) = policy::sample(&head, self.action_dim, &noise)?;
        let act32: Vec<f32> = act.iter().map(|v| *v as f32).collect();
        let joined = join_obs_action(&batch.obs, self.obs_dim(), &act32, self.action_dim, b);
        let input = NetInput {
            scalars: &joined,
            image: batch.images.as_deref(),
            batch: b,
        };
        let v1 = self.q1.forward(input)?;
        let v2 = self.q2.forward(input)?;
        let mut g1 = vec![0f32; b];
        let mut g2 = vec![0f32; b];
        let mut actor_loss = 0.0;
        let mut mean_q = 0.0;
        for i in 0..b {
            let q = v1[i].min(v2[i]) as f64;
            mean_q += q;
            actor_loss += alpha * logp[i] - q;
            // dL/dQ = −1/B routed to the smaller critic
            if v1[i] <= v2[i] {
                g1[i] = -1.0 / b as f32;
            } else {
                g2[i] = -1.0 / b as f32;
            }
        }
        actor_loss /= b as f64;
        mean_q /= b as f64;
        if !actor_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                component: "actor",
                update: self.updates,
                diagnostics: format!("alpha {alpha}, mean q {mean_q}"),
            });
        }
        let in1 = self.q1.backward(&g1)?;
        let in2 = self.q2.backward(&g2)?;
        self.q1.zero_grad();
        self.q2.zero_grad();
        self.q1.clear_cache();
        self.q2.clear_cache();
        let width = self.obs_dim() + self.action_dim;
        let mut grad_a = vec![0f64; b * self.action_dim];
        for i in 0..b {
            for k in 0..self.action_dim {
                let c = i * width + self.obs_dim() + k;
                grad_a[i * self.action_dim + k] = (in1[c] + in2[c]) as f64;
            }
        }
        let grad_logp = vec![alpha / b as f64; b];
        let ghead: Vec<f32> = policy::backward(&cache, &grad_a, &grad_logp)?;
        self.actor.backward(&ghead)?;
        self.actor_opt.step(self.actor.params_mut())?;
        self.actor.clear_cache();

        // Temperature.
        let entropy = -logp.iter().sum::<f64>() / b as f64;
        let alpha_loss = -self.log_alpha * (-entropy + self.target_entropy());
        if self.config.auto_alpha {
            let grad = -(-entropy + self.target_entropy());
            self.alpha_opt.step_scalar(&mut self.log_alpha, grad);
        }

        self.q1_target.soft_update(&self.q1, self.config.tau)?;
        self.q2_target.soft_update(&self.q2, self.config.tau)?;
        self.updates += 1;
        Ok(LossReport {
            update: self.updates,
            critic_loss,
            actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy,
            mean_q,
        })
    }
}

fn finite_range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            obs: vec![i as f32],
            image: None,
            action: vec![0.0],
            reward: i as f32,
            next_obs: vec![i as f32],
            next_image: None,
            done: false,
        }
    }

    fn small(gamma: f64) -> (Sac, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NetSpec {
            scalar_inputs: 2,
            scalar_hidden: vec![16, 16],
            visual: None,
            outputs: 2,
            activation: Activation::Relu,
        };
        let cfg = SacConfig {
            gamma,
            batch_size: 4,
            buffer_capacity: 16,
            ..Default::default()
        };
        (Sac::new(cfg, spec, 1, &mut rng).unwrap(), rng)
    }

    fn batch(done: bool) -> Batch {
        let ts: Vec<Transition> = (0..4)
            .map(|i| Transition {
                obs: vec![i as f32 * 0.1, 1.0],
                image: None,
                action: vec![0.2],
                reward: 1.0 + i as f32,
                next_obs: vec![0.5, -1.0],
                next_image: None,
                done,
            })
            .collect();
        Batch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..4 {
            buf.push(t(i));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f32> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_entry_sample() {
        let mut buf = ReplayBuffer::new(5);
        buf.push(t(7));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(buf.sample(&mut rng, 1).unwrap()[0], &t(7));
        assert!(matches!(buf.sample(&mut rng, 2), Err(Error::BufferUnderfilled { .. })));
    }

    #[test]
    fn terminal_target_is_reward() {
        let (sac, mut rng) = small(0.995);
        let y = sac.critic_targets(&batch(true), &mut rng).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let (sac, mut rng) = small(0.0);
        let y = sac.critic_targets(&batch(false), &mut rng).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn targets_start_equal_to_critics() {
        let (sac, _) = small(0.9);
        assert_eq!(sac.q1.named_params(), sac.q1_target.named_params());
        assert_eq!(sac.q2.named_params(), sac.q2_target.named_params());
    }

    #[test]
    fn deterministic_act_repeats() {
        let (sac, mut rng) = small(0.9);
        let a = sac.act(&[0.3, -0.2], None, ActMode::Deterministic, &mut rng).unwrap();
        let b = sac.act(&[0.3, -0.2], None, ActMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
