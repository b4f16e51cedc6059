//! Tanh-squashed diagonal Gaussian over a network head laid out as
//! `[mean (n), log_std (n)]` per sample.

use super::Real;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Quantities kept from sampling that the backward pass needs.
#[derive(Clone, Debug, Default)]
pub struct SampleCache {
    pub action_dim: usize,
    pub batch: usize,
    pub actions: Vec<f64>,
    pub noise: Vec<f64>,
    pub std: Vec<f64>,
    clamped: Vec<bool>,
}

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn split<T: Real>(head: &[T], action_dim: usize, batch: usize) -> Result<()> {
    if head.len() != 2 * action_dim * batch {
        return Err(Error::ShapeMismatch {
            context: "policy head",
            expected: vec![batch, 2 * action_dim],
            actual: vec![head.len()],
        });
    }
    Ok(())
}

/// Reparameterized sample `a = tanh(μ + σ·ξ)` using the given standard
/// normal `noise`. Returns the actions, per-sample log-probabilities and
/// the cache for [`backward`].
pub fn sample<T: Real>(head: &[T], action_dim: usize, noise: &[f64]) -> Result<(Vec<f64>, Vec<f64>, SampleCache)> {
    let batch = noise.len() / action_dim.max(1);
    split(head, action_dim, batch)?;
    let mut cache = SampleCache {
        action_dim,
        batch,
        actions: Vec::with_capacity(batch * action_dim),
        noise: noise.to_vec(),
        std: Vec::with_capacity(batch * action_dim),
        clamped: Vec::with_capacity(batch * action_dim),
    };
    let mut log_probs = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &head[b * 2 * action_dim..(b + 1) * 2 * action_dim];
        let mut lp = 0.0;
        for i in 0..action_dim {
            let mu = row[i].as_f64();
            let raw = row[action_dim + i].as_f64();
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sigma = ls.exp();
            let xi = noise[b * action_dim + i];
            let u = mu + sigma * xi;
            let a = u.tanh();
            lp += -0.5 * xi * xi - ls - HALF_LOG_TWO_PI - log_one_minus_tanh_sq(u);
            cache.actions.push(a);
            cache.std.push(sigma);
            cache.clamped.push(raw != ls);
        }
        log_probs.push(lp);
    }
    let actions = cache.actions.clone();
    Ok((actions, log_probs, cache))
}

/// Gradient with respect to the head outputs, given upstream gradients
/// on actions (`[batch, n]`) and on log-probabilities (`[batch]`).
pub fn backward<T: Real>(cache: &SampleCache, grad_actions: &[f64], grad_log_probs: &[f64]) -> Result<Vec<T>> {
    let (n, batch) = (cache.action_dim, cache.batch);
    if grad_actions.len() != n * batch || grad_log_probs.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "policy gradient",
            expected: vec![batch, n],
            actual: vec![grad_actions.len(), grad_log_probs.len()],
        });
    }
    let mut out = vec![T::zero(); 2 * n * batch];
    for b in 0..batch {
        let gl = grad_log_probs[b];
        for i in 0..n {
            let k = b * n + i;
            let a = cache.actions[k];
            let du = grad_actions[k] * (1.0 - a * a) + gl * 2.0 * a;
            let dls = if cache.clamped[k] {
                0.0
            } else {
                du * cache.std[k] * cache.noise[k] - gl
            };
            out[b * 2 * n + i] = T::of(du);
            out[b * 2 * n + n + i] = T::of(dls);
        }
    }
    Ok(out)
}

/// Deterministic action `tanh(μ)`.
pub fn mean_action<T: Real>(head: &[T], action_dim: usize) -> Result<Vec<f64>> {
    let batch = head.len() / (2 * action_dim).max(1);
    split(head, action_dim, batch)?;
    Ok(head
        .chunks_exact(2 * action_dim)
        .flat_map(|row| row[..action_dim].iter().map(|m| m.as_f64().tanh()))
        .collect())
}
