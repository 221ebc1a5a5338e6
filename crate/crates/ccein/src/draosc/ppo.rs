//! Proximal policy optimization: generalized advantage estimation, the
//! clipped surrogate objective, and the minibatch update loop.
//!
//! The update treats one rollout as a flat batch of [`Transition`]s that may
//! span several episodes (`done` marks boundaries). Per update:
//!
//! 1. [`gae`] turns rewards and value predictions into advantages and
//!    returns, resetting at episode boundaries and bootstrapping the tail.
//! 2. Advantages are normalized once over the whole batch.
//! 3. For `epochs` passes the batch is reshuffled and split into
//!    minibatches; each minibatch gets one Adam step on
//!    `clip_loss + value_coef * (V - R)^2 - entropy_coef * H`.
//!
//! Everything is driven by an explicit RNG stream, so a training run is a
//! pure function of `(config, seed)`.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use super::policy::{PolicyNet, ACTION_HEADS};
use crate::nn::Adam;

/// One controller decision and what came of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: [usize; ACTION_HEADS],
    /// Log probability of `action` under the policy that sampled it.
    pub logp: f64,
    /// Value prediction at the decision point.
    pub value: f64,
    pub reward: f64,
    /// True when this step ends an episode.
    pub done: bool,
}

fn default_gamma() -> f64 {
    0.99
}
fn default_lambda() -> f64 {
    0.95
}
fn default_clip() -> f64 {
    0.2
}
fn default_entropy_coef() -> f64 {
    0.01
}
fn default_value_coef() -> f64 {
    0.5
}
fn default_learning_rate() -> f64 {
    3e-4
}
fn default_epochs() -> usize {
    4
}
fn default_minibatch_size() -> usize {
    64
}
fn default_max_grad_norm() -> f64 {
    0.5
}

/// Optimization hyper-parameters (the `[ppo]` section of run configs).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Clip radius of the surrogate ratio.
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_entropy_coef")]
    pub entropy_coef: f64,
    #[serde(default = "default_value_coef")]
    pub value_coef: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_minibatch_size")]
    pub minibatch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    #[serde(default = "default_max_grad_norm")]
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: default_gamma(),
            lambda: default_lambda(),
            clip: default_clip(),
            entropy_coef: default_entropy_coef(),
            value_coef: default_value_coef(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            minibatch_size: default_minibatch_size(),
            max_grad_norm: default_max_grad_norm(),
        }
    }
}

// --------------------------------------------------------------------- gae

/// Generalized advantage estimation over a (possibly multi-episode) batch.
///
/// `bootstrap_value` is the critic's estimate for the state *after* the last
/// transition; it only matters when the batch was cut mid-episode (the last
/// step is not `done`). Returns `(advantages, returns)` with
/// `returns[t] = advantages[t] + value[t]`.
pub fn gae(
    transitions: &[Transition],
    gamma: f64,
    lambda: f64,
    bootstrap_value: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = transitions.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let tr = &transitions[t];
        let nonterminal = if tr.done { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { transitions[t + 1].value } else { bootstrap_value };
        let delta = tr.reward + gamma * next_value * nonterminal - tr.value;
        acc = delta + gamma * lambda * nonterminal * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(transitions).map(|(a, tr)| a + tr.value).collect();
    (advantages, returns)
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// A constant batch comes back as all zeros rather than dividing by zero.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    if advantages.is_empty() {
        return Vec::new();
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

// ------------------------------------------------------------------ update

/// Averages of one [`ppo_update`] call, over all minibatch steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_fraction: f64,
    /// Mean of `logp_old - logp_new`, a cheap KL estimate.
    pub approx_kl: f64,
}

/// Loss terms of one minibatch evaluation (means over its samples).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinibatchEval {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl MinibatchEval {
    /// The scalar the gradient actually descends.
    pub fn total_loss(&self, cfg: &PpoConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

/// Evaluates the PPO objective on `indices` into the batch and accumulates
/// its gradient into `grad` (which is zeroed first). Exposed separately from
/// [`ppo_update`] so tests can pin the loss surface and finite-difference
/// the gradient.
pub fn minibatch_grad(
    net: &PolicyNet,
    batch: &[Transition],
    indices: &[usize],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    grad: &mut [f64],
) -> MinibatchEval {
    assert!(!indices.is_empty(), "empty minibatch");
    grad.fill(0.0);
    let inv_m = 1.0 / indices.len() as f64;

    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut clipped = 0usize;
    let mut kl_sum = 0.0;

    for &i in indices {
        let tr = &batch[i];
        let adv = advantages[i];
        let ret = returns[i];

        let cache = net.forward(&tr.features);
        let logp_new = cache.log_prob(tr.action);
        let ratio = (logp_new - tr.logp).exp();
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        policy_loss += -surr1.min(surr2);
        kl_sum += tr.logp - logp_new;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }

        // d(-min(surr1, surr2)) / d logp_new: the unclipped branch carries
        // -adv * ratio; a saturated clip contributes nothing.
        let dlogp = if surr1 <= surr2 { -adv * ratio } else { 0.0 };

        let mut dlogits: [Vec<f64>; ACTION_HEADS] = Default::default();
        for head in 0..ACTION_HEADS {
            let probs = &cache.probs[head];
            let head_entropy = crate::nn::entropy(probs);
            let mut d = vec![0.0; probs.len()];
            for (j, &p) in probs.iter().enumerate() {
                // Policy term: dlogp/dlogit_j = onehot_j - p_j.
                let onehot = if j == tr.action[head] { 1.0 } else { 0.0 };
                d[j] = dlogp * (onehot - p);
                // Entropy bonus: d(-c_e * H)/dlogit_j = c_e * p_j (ln p_j + H).
                if cfg.entropy_coef != 0.0 && p > 0.0 {
                    d[j] += cfg.entropy_coef * p * (p.ln() + head_entropy);
                }
                d[j] *= inv_m;
            }
            dlogits[head] = d;
        }
        entropy_sum += cache.entropy();

        let verr = cache.value - ret;
        value_loss += verr * verr;
        let dvalue = cfg.value_coef * 2.0 * verr * inv_m;

        net.backward(&cache, &dlogits, dvalue, grad);
    }

    MinibatchEval {
        policy_loss: policy_loss * inv_m,
        value_loss: value_loss * inv_m,
        entropy: entropy_sum * inv_m,
        clip_fraction: clipped as f64 * inv_m,
        approx_kl: kl_sum * inv_m,
    }
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

/// One full PPO update on a rollout batch: normalize advantages, then run
/// `epochs` shuffled minibatch passes of Adam. Returns stats averaged over
/// every minibatch step taken.
pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    batch: &[Transition],
    advantages_raw: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut ChaCha12Rng,
) -> PpoStats {
    assert_eq!(batch.len(), advantages_raw.len());
    assert_eq!(batch.len(), returns.len());
    assert!(!batch.is_empty(), "cannot update on an empty batch");

    let advantages = normalize_advantages(advantages_raw);
    let mut grad = vec![0.0; net.params.len()];
    let mut indices: Vec<usize> = (0..batch.len()).collect();

    let mut sums = PpoStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
    };
    let mut steps = 0usize;

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.minibatch_size.max(1)) {
            let eval = minibatch_grad(net, batch, chunk, &advantages, returns, cfg, &mut grad);
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            opt.step(&mut net.params, &grad);
            sums.policy_loss += eval.policy_loss;
            sums.value_loss += eval.value_loss;
            sums.entropy += eval.entropy;
            sums.clip_fraction += eval.clip_fraction;
            sums.approx_kl += eval.approx_kl;
            steps += 1;
        }
    }

    let inv = 1.0 / steps as f64;
    PpoStats {
        policy_loss: sums.policy_loss * inv,
        value_loss: sums.value_loss * inv,
        entropy: sums.entropy * inv,
        clip_fraction: sums.clip_fraction * inv,
        approx_kl: sums.approx_kl * inv,
    }
}

// -------------------------------------------------------------------- tests
