#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mucking_core::nn::{Activation, NetSpec};
use mucking_core::sac::{ActMode, Batch, ReplayBuffer, Sac, SacConfig, Transition};

pub const BANDIT_PEAK: f32 = 0.5;

pub fn bandit_reward(a: f32) -> f32 {
    1.0 - 4.0 * (a - BANDIT_PEAK).powi(2)
}

fn tiny_spec(inputs: usize, outputs: usize) -> NetSpec {
    NetSpec {
        scalar_inputs: inputs,
        scalar_hidden: vec![32, 32],
        visual: None,
        outputs,
        activation: Activation::Relu,
    }
}

pub struct BanditRun {
    pub action: f32,
    pub updates: u64,
}

/// One-step continuous bandit: constant observation, reward peaked at
/// [`BANDIT_PEAK`]. Stops as soon as the deterministic action has stayed
/// within 0.05 of the peak for five consecutive checks.
pub fn bandit(seed: u64, max_updates: u64) -> BanditRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig {
        gamma: 0.0,
        batch_size: 64,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        alpha_lr: 1e-3,
        buffer_capacity: 10_000,
        warmup_steps: 0,
        ..SacConfig::default()
    };
    let mut sac = Sac::new(cfg, tiny_spec(1, 2), 1, &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(10_000);
    let obs = vec![1.0f32];
    let mut streak = 0;
    loop {
        let a = sac.act(&obs, None, ActMode::Stochastic, &mut rng).unwrap();
        buf.push(Transition {
            obs: obs.clone(),
            image: None,
            action: a.clone(),
            reward: bandit_reward(a[0]),
            next_obs: obs.clone(),
            next_image: None,
            done: true,
        });
        if buf.len() < 64 {
            continue;
        }
        let batch = Batch::from_transitions(&buf.sample(&mut rng, 64).unwrap()).unwrap();
        sac.update(&batch, &mut rng).unwrap();
        let det = sac.act(&obs, None, ActMode::Deterministic, &mut rng).unwrap()[0];
        if sac.updates() % 100 == 0 {
            streak = if (det - BANDIT_PEAK).abs() < 0.05 { streak + 1 } else { 0 };
        }
        if streak >= 5 || sac.updates() >= max_updates {
            return BanditRun {
                action: det,
                updates: sac.updates(),
            };
        }
    }
}

/// Critic loss before the first and after the last of `steps` regression
/// steps on one fixed batch with frozen targets.
pub fn fixed_batch_critic(seed: u64, steps: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig {
        critic_lr: 1e-3,
        batch_size: 64,
        ..SacConfig::default()
    };
    let mut sac = Sac::new(cfg, tiny_spec(6, 4), 2, &mut rng).unwrap();
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
    let ts: Vec<Transition> = (0..64)
        .map(|i| Transition {
            obs: v(6),
            image: None,
            action: v(2),
            reward: v(1)[0],
            next_obs: v(6),
            next_image: None,
            done: i % 7 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = ts.iter().collect();
    let batch = Batch::from_transitions(&refs).unwrap();
    let targets = sac.critic_targets(&batch, &mut rng).unwrap();
    let first = sac.critic_step(&batch, &targets).unwrap();
    for _ in 1..steps {
        sac.critic_step(&batch, &targets).unwrap();
    }
    let last = sac.critic_step(&batch, &targets).unwrap();
    (first, last)
}
