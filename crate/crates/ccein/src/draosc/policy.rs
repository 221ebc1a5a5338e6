//! The actor-critic network behind the adaptive controller, plus its text
//! checkpoint format.
//!
//! The network is deliberately tiny — one tanh hidden layer shared by four
//! independent categorical heads (sub-channel, power level, compression
//! level, coding scheme) and a scalar value head — and is stored as a single
//! flat `Vec<f64>` so the optimizer, the gradient buffer and the checkpoint
//! file all share one layout:
//!
//! ```text
//! [ W1 (hidden x input) | b1 | W_ch | b_ch | W_pw | b_pw
//!   | W_cm | b_cm | W_cd | b_cd | W_v (1 x hidden) | b_v ]
//! ```
//!
//! All math is plain `f64` loops; episodes are short and the network small
//! enough that this outruns any tensor library once setup cost is counted.

use std::fmt::Write as _;
use std::ops::Range;

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use super::{CommState, TransmitPolicy, STATE_DIM};
use crate::channel::{Coding, TransmissionAction, CODING_COUNT, POWER_LEVELS_DBM};
use crate::nn;
use crate::semantics::COMPRESSION_LEVEL_COUNT;

/// The controller picks along four independent axes.
pub const ACTION_HEADS: usize = 4;

/// Magic first line of checkpoint files.
pub const CHECKPOINT_FORMAT_VERSION: &str = "ccein-policy v1";

// -------------------------------------------------------------------- arch

/// Network shape. Everything downstream (parameter count, layout offsets)
/// derives from these four numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Output arity per head: `[channels, powers, compressions, codings]`.
    pub head_sizes: [usize; ACTION_HEADS],
}

impl PolicyArch {
    /// The deployed shape: 8 state features, 64 hidden units, heads sized by
    /// the environment (`num_subchannels` x 8 powers x 4 compressions x 2
    /// codings).
    pub fn standard(num_subchannels: usize) -> Self {
        PolicyArch {
            input_dim: STATE_DIM,
            hidden_dim: 64,
            head_sizes: [
                num_subchannels,
                POWER_LEVELS_DBM.len(),
                COMPRESSION_LEVEL_COUNT,
                CODING_COUNT,
            ],
        }
    }

    pub fn w1_range(&self) -> Range<usize> {
        0..self.hidden_dim * self.input_dim
    }

    pub fn b1_range(&self) -> Range<usize> {
        let s = self.hidden_dim * self.input_dim;
        s..s + self.hidden_dim
    }

    fn head_start(&self, head: usize) -> usize {
        let mut off = self.hidden_dim * (self.input_dim + 1);
        for size in &self.head_sizes[..head] {
            off += size * (self.hidden_dim + 1);
        }
        off
    }

    pub fn head_w_range(&self, head: usize) -> Range<usize> {
        let s = self.head_start(head);
        s..s + self.head_sizes[head] * self.hidden_dim
    }

    pub fn head_b_range(&self, head: usize) -> Range<usize> {
        let s = self.head_start(head) + self.head_sizes[head] * self.hidden_dim;
        s..s + self.head_sizes[head]
    }

    pub fn value_w_range(&self) -> Range<usize> {
        let s = self.head_start(ACTION_HEADS);
        s..s + self.hidden_dim
    }

    pub fn value_b_index(&self) -> usize {
        self.head_start(ACTION_HEADS) + self.hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.value_b_index() + 1
    }
}

// --------------------------------------------------------------------- net

/// Actor-critic network over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub arch: PolicyArch,
    pub params: Vec<f64>,
}

/// Everything the forward pass computed, kept for sampling and backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Post-tanh hidden activations.
    pub hidden: Vec<f64>,
    /// Per-head softmax distributions.
    pub probs: [Vec<f64>; ACTION_HEADS],
    pub value: f64,
}

impl ForwardCache {
    /// Draws one index per head; returns the joint action and its log
    /// probability (the sum over heads).
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> ([usize; ACTION_HEADS], f64) {
        let mut action = [0usize; ACTION_HEADS];
        for (slot, probs) in action.iter_mut().zip(&self.probs) {
            *slot = nn::sample_categorical(probs, rng);
        }
        (action, self.log_prob(action))
    }

    /// Deterministic mode: the per-head argmax.
    pub fn greedy(&self) -> [usize; ACTION_HEADS] {
        let mut action = [0usize; ACTION_HEADS];
        for (slot, probs) in action.iter_mut().zip(&self.probs) {
            *slot = nn::argmax(probs);
        }
        action
    }

    /// Joint log probability of `action` under the cached distributions.
    pub fn log_prob(&self, action: [usize; ACTION_HEADS]) -> f64 {
        action
            .iter()
            .zip(&self.probs)
            .map(|(&a, probs)| probs[a].max(f64::MIN_POSITIVE).ln())
            .sum()
    }

    /// Joint entropy: the sum of per-head entropies (heads are independent).
    pub fn entropy(&self) -> f64 {
        self.probs.iter().map(|p| nn::entropy(p)).sum()
    }
}

impl PolicyNet {
    /// All-zero parameters: every head uniform, value identically zero.
    /// Useful as a neutral reference point in tests.
    pub fn new_zeros(arch: PolicyArch) -> Self {
        let params = vec![0.0; arch.param_count()];
        PolicyNet { arch, params }
    }

    /// Orthogonal initialization: gain 5/3 on the tanh layer, 0.01 on the
    /// action heads (so the initial policy is near-uniform) and 1.0 on the
    /// value head. Biases start at zero.
    pub fn new_seeded(arch: PolicyArch, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "policy-init");
        let mut params = vec![0.0; arch.param_count()];
        let w1 = nn::orthogonal_init(arch.hidden_dim, arch.input_dim, 5.0 / 3.0, &mut rng);
        params[arch.w1_range()].copy_from_slice(&w1);
        for head in 0..ACTION_HEADS {
            let w = nn::orthogonal_init(arch.head_sizes[head], arch.hidden_dim, 0.01, &mut rng);
            params[arch.head_w_range(head)].copy_from_slice(&w);
        }
        let wv = nn::orthogonal_init(1, arch.hidden_dim, 1.0, &mut rng);
        params[arch.value_w_range()].copy_from_slice(&wv);
        PolicyNet { arch, params }
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.arch.input_dim, "input dimension mismatch");
        let (nin, nh) = (self.arch.input_dim, self.arch.hidden_dim);
        let p = &self.params;

        let w1 = &p[self.arch.w1_range()];
        let b1 = &p[self.arch.b1_range()];
        let mut hidden = vec![0.0; nh];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut acc = b1[j];
            for (w, x) in w1[j * nin..(j + 1) * nin].iter().zip(input) {
                acc += w * x;
            }
            *h = acc.tanh();
        }

        let mut probs: [Vec<f64>; ACTION_HEADS] = Default::default();
        for head in 0..ACTION_HEADS {
            let out = self.arch.head_sizes[head];
            let w = &p[self.arch.head_w_range(head)];
            let b = &p[self.arch.head_b_range(head)];
            let mut logits = vec![0.0; out];
            for (o, logit) in logits.iter_mut().enumerate() {
                let mut acc = b[o];
                for (wi, hi) in w[o * nh..(o + 1) * nh].iter().zip(&hidden) {
                    acc += wi * hi;
                }
                *logit = acc;
            }
            probs[head] = nn::softmax(&logits);
        }

        let wv = &p[self.arch.value_w_range()];
        let mut value = p[self.arch.value_b_index()];
        for (wi, hi) in wv.iter().zip(&hidden) {
            value += wi * hi;
        }

        ForwardCache { input: input.to_vec(), hidden, probs, value }
    }

    /// Accumulates `d loss / d params` into `grad`, given the upstream
    /// derivatives with respect to each head's logits and the value output.
    /// Callers own the conversion from losses to `dlogits`/`dvalue`; this
    /// routine only does the chain rule back through the shared trunk.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[Vec<f64>; ACTION_HEADS],
        dvalue: f64,
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size mismatch");
        let (nin, nh) = (self.arch.input_dim, self.arch.hidden_dim);
        let p = &self.params;

        let mut dhidden = vec![0.0; nh];

        for head in 0..ACTION_HEADS {
            let out = self.arch.head_sizes[head];
            debug_assert_eq!(dlogits[head].len(), out);
            let w_range = self.arch.head_w_range(head);
            let b_range = self.arch.head_b_range(head);
            for o in 0..out {
                let dl = dlogits[head][o];
                if dl == 0.0 {
                    continue;
                }
                let row = w_range.start + o * nh;
                for j in 0..nh {
                    grad[row + j] += dl * cache.hidden[j];
                    dhidden[j] += dl * p[row + j];
                }
                grad[b_range.start + o] += dl;
            }
        }

        if dvalue != 0.0 {
            let wv_start = self.arch.value_w_range().start;
            for j in 0..nh {
                grad[wv_start + j] += dvalue * cache.hidden[j];
                dhidden[j] += dvalue * p[wv_start + j];
            }
            grad[self.arch.value_b_index()] += dvalue;
        }

        let b1_start = self.arch.b1_range().start;
        for j in 0..nh {
            let dpre = dhidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
            if dpre == 0.0 {
                continue;
            }
            for (i, x) in cache.input.iter().enumerate() {
                grad[j * nin + i] += dpre * x;
            }
            grad[b1_start + j] += dpre;
        }
    }

    /// Snapshot with training provenance attached.
    pub fn checkpoint(&self, seed: u64, config_digest: &str, iteration: u64) -> PolicyCheckpoint {
        PolicyCheckpoint {
            arch: self.arch.clone(),
            seed,
            config_digest: config_digest.to_string(),
            iteration,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(cp: &PolicyCheckpoint) -> Result<Self, PolicyError> {
        if cp.params.len() != cp.arch.param_count() {
            return Err(PolicyError::Format(format!(
                "checkpoint carries {} parameters but its architecture needs {}",
                cp.params.len(),
                cp.arch.param_count()
            )));
        }
        Ok(PolicyNet { arch: cp.arch.clone(), params: cp.params.clone() })
    }
}

/// Maps the per-head indices to a concrete transmission action.
pub fn action_to_transmission(action: [usize; ACTION_HEADS]) -> TransmissionAction {
    TransmissionAction {
        channel: action[0],
        power_level: action[1],
        compression_level: action[2] as u8,
        coding: Coding::from_index(action[3]).expect("coding head has exactly two outcomes"),
    }
}

/// Inverse of [`action_to_transmission`].
pub fn transmission_to_action(a: &TransmissionAction) -> [usize; ACTION_HEADS] {
    [a.channel, a.power_level, a.compression_level as usize, a.coding.index()]
}

// ------------------------------------------------------------- engine shim

/// The trained network as an engine policy. Actions are *sampled* (not
/// argmaxed) at deployment time too — the stochastic policy is what training
/// optimized, and sampling keeps sub-channel choices spread under load.
#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    pub net: PolicyNet,
}

impl AdaptivePolicy {
    pub fn new(net: PolicyNet) -> Self {
        AdaptivePolicy { net }
    }
}

impl TransmitPolicy for AdaptivePolicy {
    fn decide(
        &mut self,
        state: &CommState,
        channel_load: &[f64],
        rng: &mut ChaCha12Rng,
    ) -> TransmissionAction {
        debug_assert_eq!(
            channel_load.len(),
            self.net.arch.head_sizes[0],
            "policy was trained for a different sub-channel count"
        );
        let cache = self.net.forward(&state.features());
        let (action, _) = cache.sample(rng);
        action_to_transmission(action)
    }

    fn required_subchannels(&self) -> Option<usize> {
        Some(self.net.arch.head_sizes[0])
    }

    fn name(&self) -> &'static str {
        "adaptive"
    }
}

// -------------------------------------------------------------- checkpoint

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unsupported checkpoint format: expected '{CHECKPOINT_FORMAT_VERSION}', got '{0}'")]
    Version(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// A trained policy plus the provenance needed to resume or audit it:
/// the architecture, the training seed, a digest of the run configuration
/// and the number of PPO iterations completed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub arch: PolicyArch,
    pub seed: u64,
    pub config_digest: String,
    pub iteration: u64,
    pub params: Vec<f64>,
}

impl PolicyCheckpoint {
    /// Serializes to the line-oriented text format. Parameters use Rust's
    /// shortest round-trip float formatting, so `from_text(to_text(cp))`
    /// reproduces every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let a = &self.arch;
        writeln!(out, "{CHECKPOINT_FORMAT_VERSION}").unwrap();
        writeln!(
            out,
            "arch {} {} {} {} {} {}",
            a.input_dim,
            a.hidden_dim,
            a.head_sizes[0],
            a.head_sizes[1],
            a.head_sizes[2],
            a.head_sizes[3]
        )
        .unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "config {}", if self.config_digest.is_empty() { "-" } else { &self.config_digest })
            .unwrap();
        writeln!(out, "iteration {}", self.iteration).unwrap();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(out, "{p}").unwrap();
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| PolicyError::Format(format!("missing {what} line")))
        };

        let version = next("version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(PolicyError::Version(version.to_string()));
        }

        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, PolicyError> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| PolicyError::Format(format!("expected '{key} ...', got '{line}'")))
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, PolicyError> {
            s.parse().map_err(|_| PolicyError::Format(format!("bad {what}: '{s}'")))
        }

        let arch_parts: Vec<usize> = field(next("arch")?, "arch")?
            .split_whitespace()
            .map(|t| num(t, "arch size"))
            .collect::<Result<_, _>>()?;
        if arch_parts.len() != 2 + ACTION_HEADS {
            return Err(PolicyError::Format(format!(
                "arch line needs {} sizes, got {}",
                2 + ACTION_HEADS,
                arch_parts.len()
            )));
        }
        let arch = PolicyArch {
            input_dim: arch_parts[0],
            hidden_dim: arch_parts[1],
            head_sizes: [arch_parts[2], arch_parts[3], arch_parts[4], arch_parts[5]],
        };

        let seed = num(field(next("seed")?, "seed")?, "seed")?;
        let config_digest = match field(next("config")?, "config")? {
            "-" => String::new(),
            d => d.to_string(),
        };
        let iteration = num(field(next("iteration")?, "iteration")?, "iteration")?;
        let count: usize = num(field(next("params")?, "params")?, "parameter count")?;
        if count != arch.param_count() {
            return Err(PolicyError::Format(format!(
                "parameter count {} does not match architecture ({} expected)",
                count,
                arch.param_count()
            )));
        }

        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let line = next("parameter")?;
            let v: f64 = num(line, "parameter")?;
            if !v.is_finite() {
                return Err(PolicyError::Format(format!("parameter {i} is not finite: '{line}'")));
            }
            params.push(v);
        }
        if next("end")? != "end" {
            return Err(PolicyError::Format("missing trailing 'end'".into()));
        }
        Ok(PolicyCheckpoint { arch, seed, config_digest, iteration, params })
    }
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_arch() -> PolicyArch {
        PolicyArch { input_dim: 3, hidden_dim: 5, head_sizes: [2, 3, 2, 2] }
    }

    #[test]
    fn param_count_matches_hand_arithmetic() {
        // standard(4): W1 64*8 + b1 64 + heads (4+8+4+2)*(64+1) + value 64+1.
        let arch = PolicyArch::standard(4);
        assert_eq!(arch.param_count(), 512 + 64 + 18 * 65 + 65);
        assert_eq!(arch.param_count(), 1811);
        // tiny: 5*3 + 5 + (2+3+2+2)*(5+1) + 5 + 1 = 80.
        assert_eq!(tiny_arch().param_count(), 80);
    }

    #[test]
    fn layout_segments_tile_the_parameter_vector_exactly() {
        let arch = tiny_arch();
        let mut covered = vec![0u32; arch.param_count()];
        let mut mark = |r: std::ops::Range<usize>| {
            for i in r {
                covered[i] += 1;
            }
        };
        mark(arch.w1_range());
        mark(arch.b1_range());
        for h in 0..ACTION_HEADS {
            mark(arch.head_w_range(h));
            mark(arch.head_b_range(h));
        }
        mark(arch.value_w_range());
        mark(arch.value_b_index()..arch.value_b_index() + 1);
        assert!(covered.iter().all(|&c| c == 1), "segments overlap or leave gaps");
    }

    #[test]
    fn zero_network_is_uniform_with_zero_value() {
        let net = PolicyNet::new_zeros(tiny_arch());
        let cache = net.forward(&[0.2, -0.4, 0.9]);
        for (head, probs) in cache.probs.iter().enumerate() {
            let want = 1.0 / net.arch.head_sizes[head] as f64;
            for &p in probs {
                assert!((p - want).abs() < 1e-15, "head {head} not uniform: {probs:?}");
            }
        }
        assert_eq!(cache.value, 0.0);
    }

    #[test]
    fn seeded_init_is_deterministic_and_near_uniform() {
        let a = PolicyNet::new_seeded(PolicyArch::standard(4), 7);
        let b = PolicyNet::new_seeded(PolicyArch::standard(4), 7);
        assert_eq!(a.params, b.params);
        let c = PolicyNet::new_seeded(PolicyArch::standard(4), 8);
        assert_ne!(a.params, c.params);

        // Small head gains keep the starting policy close to uniform so
        // exploration starts broad.
        let cache = a.forward(&[0.5; STATE_DIM]);
        for (head, probs) in cache.probs.iter().enumerate() {
            let want = 1.0 / a.arch.head_sizes[head] as f64;
            for &p in probs {
                assert!(
                    (p - want).abs() < 0.05 * want,
                    "head {head} too far from uniform at init: {probs:?}"
                );
            }
        }
    }

    #[test]
    fn sampling_logp_agrees_with_log_prob_and_is_seeded() {
        let net = PolicyNet::new_seeded(tiny_arch(), 3);
        let cache = net.forward(&[0.1, 0.7, -0.3]);
        let mut rng = stream(11, "sample");
        let (action, logp) = cache.sample(&mut rng);
        assert!((logp - cache.log_prob(action)).abs() < 1e-15);

        let mut rng2 = stream(11, "sample");
        let (action2, logp2) = cache.sample(&mut rng2);
        assert_eq!(action, action2);
        assert_eq!(logp, logp2);
    }

    #[test]
    fn greedy_picks_the_modal_index_per_head() {
        let net = PolicyNet::new_seeded(tiny_arch(), 3);
        let cache = net.forward(&[0.1, 0.7, -0.3]);
        let action = cache.greedy();
        for (head, &a) in action.iter().enumerate() {
            let best = cache.probs[head]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(cache.probs[head][a], best);
        }
    }

    #[test]
    fn action_mapping_round_trips() {
        let action = [2usize, 7, 3, 0];
        let tx = action_to_transmission(action);
        assert_eq!(tx.channel, 2);
        assert_eq!(tx.power_level, 7);
        assert_eq!(tx.compression_level, 3);
        assert_eq!(tx.coding, Coding::Robust);
        assert_eq!(transmission_to_action(&tx), action);
    }

    /// Central finite differences on the joint log-probability of a fixed
    /// action, over every parameter of a small network. `backward` is fed
    /// `dlogits = onehot - probs` (the analytic d logp / d logits).
    #[test]
    fn backward_matches_finite_differences_on_log_prob() {
        let net = PolicyNet::new_seeded(tiny_arch(), 19);
        let x = [0.3, -0.2, 0.9];
        let action = [1usize, 2, 0, 1];

        let cache = net.forward(&x);
        let mut analytic = vec![0.0; net.params.len()];
        let mut dlogits: [Vec<f64>; ACTION_HEADS] = Default::default();
        for head in 0..ACTION_HEADS {
            let mut d: Vec<f64> = cache.probs[head].iter().map(|p| -p).collect();
            d[action[head]] += 1.0;
            dlogits[head] = d;
        }
        net.backward(&cache, &dlogits, 0.0, &mut analytic);

        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let numeric =
                (plus.forward(&x).log_prob(action) - minus.forward(&x).log_prob(action)) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs()
                / (numeric.abs() + analytic[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "worst relative gradient error {worst}");
    }

    /// Same drill for the value head: `dvalue = 1` must reproduce dV/dparams.
    #[test]
    fn backward_matches_finite_differences_on_value() {
        let net = PolicyNet::new_seeded(tiny_arch(), 23);
        let x = [-0.6, 0.4, 0.2];

        let cache = net.forward(&x);
        let mut analytic = vec![0.0; net.params.len()];
        let dlogits: [Vec<f64>; ACTION_HEADS] = [
            vec![0.0; 2],
            vec![0.0; 3],
            vec![0.0; 2],
            vec![0.0; 2],
        ];
        net.backward(&cache, &dlogits, 1.0, &mut analytic);

        let h = 1e-5;
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let numeric = (plus.forward(&x).value - minus.forward(&x).value) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs()
                / (numeric.abs() + analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-6, "param {i}: numeric {numeric} vs analytic {}", analytic[i]);
        }
    }

    #[test]
    fn checkpoint_text_round_trips_bit_exactly() {
        let net = PolicyNet::new_seeded(PolicyArch::standard(4), 42);
        let cp = net.checkpoint(42, "deadbeef01234567", 150);
        let text = cp.to_text();
        let back = PolicyCheckpoint::from_text(&text).unwrap();
        assert_eq!(back, cp);
        // Bit-exact, not just approximately equal.
        for (a, b) in back.params.iter().zip(&cp.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let net2 = PolicyNet::from_checkpoint(&back).unwrap();
        assert_eq!(net2.params, net.params);
    }

    #[test]
    fn checkpoint_empty_digest_round_trips_as_dash() {
        let net = PolicyNet::new_zeros(tiny_arch());
        let cp = net.checkpoint(0, "", 0);
        let text = cp.to_text();
        assert!(text.contains("\nconfig -\n"));
        assert_eq!(PolicyCheckpoint::from_text(&text).unwrap().config_digest, "");
    }

    #[test]
    fn checkpoint_rejects_bad_version_and_torn_files() {
        let err = PolicyCheckpoint::from_text("ccein-policy v9\n").unwrap_err();
        assert_eq!(err, PolicyError::Version("ccein-policy v9".into()));

        let net = PolicyNet::new_zeros(tiny_arch());
        let text = net.checkpoint(1, "", 0).to_text();
        // Drop the final "end\n" plus the last parameter line.
        let torn: String = {
            let lines: Vec<&str> = text.lines().collect();
            lines[..lines.len() - 2].join("\n")
        };
        assert!(matches!(PolicyCheckpoint::from_text(&torn), Err(PolicyError::Format(_))));
    }

    #[test]
    fn checkpoint_rejects_param_count_mismatch() {
        let net = PolicyNet::new_zeros(tiny_arch());
        let text = net.checkpoint(1, "", 0).to_text().replace("params 80", "params 79");
        assert!(matches!(PolicyCheckpoint::from_text(&text), Err(PolicyError::Format(_))));
    }
}
