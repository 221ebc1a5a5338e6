//! Adaptive transmission control: the resource-allocation MDP and policies.
//!
//! Every time a device is about to transmit, the controller observes an
//! 8-dimensional summary of its situation ([`CommState`]), picks a
//! [`TransmissionAction`] (sub-channel, power level, compression, coding) and
//! is scored by a shaped reward that trades delivery against latency, loss,
//! band usage and energy:
//!
//! ```text
//! r = w_success * delivered_frac * urgency_mult
//!   - w_latency * min(t / deadline_window, 1)
//!   - w_loss * lost_frac
//!   - w_bandwidth * share_used
//!   - w_energy * energy / E_MAX
//! ```
//!
//! `delivered_frac` counts delivered attributes against the full
//! five-attribute reference (a compressed message can never score 1.0), and
//! drops to zero outright when the `Category` fragment is lost, because the
//! receiver can't decode anything without it. `lost_frac` is the fraction of
//! *sent* fragments that died.
//!
//! Three policies implement the same interface: the PPO-trained network
//! ([`policy::PolicyNet`]), a fixed mid-power baseline ([`baseline_static`])
//! and a rule-based heuristic ([`baseline_greedy`]). A separate
//! [`defer_gate`] lets schemes hold low-urgency traffic while the channel is
//! bad and critical messages are waiting.

pub mod policy;
pub mod ppo;
pub mod train;

use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

pub use crate::channel::{Coding, TransmissionAction, POWER_LEVELS_DBM};
use crate::channel::LinkOutcome;
use crate::semantics::{SemanticMessage, Urgency, REFERENCE_ATTR_COUNT};
use crate::Tick;

// ------------------------------------------------------------------- state

/// Normalization range for the SNR feature, in dB.
pub const SNR_NORM_RANGE_DB: (f64, f64) = (-10.0, 30.0);
/// Normalization range for the bandwidth feature, in MHz.
pub const BANDWIDTH_NORM_RANGE_MHZ: (f64, f64) = (50.0, 500.0);
/// Queue lengths at or above this saturate the queue feature.
pub const QUEUE_NORM_CAP: usize = 10;

/// Controller observation. [`CommState::features`] flattens it into the
/// fixed 8-dimensional network input:
/// `[urgency one-hot x3, snr, bandwidth, utilization, queue, battery]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommState {
    pub urgency: Urgency,
    pub snr_db: f64,
    pub bandwidth_mhz: f64,
    /// Fraction of sub-channels currently on the air, 0..=1.
    pub utilization: f64,
    pub queue_len: usize,
    /// Remaining battery as a fraction of the initial charge, 0..=1.
    pub battery_frac: f64,
}

/// Dimension of the flattened controller observation.
pub const STATE_DIM: usize = 8;

fn affine_norm(value: f64, range: (f64, f64)) -> f64 {
    ((value - range.0) / (range.1 - range.0)).clamp(0.0, 1.0)
}

impl CommState {
    /// Flattens into the 8-vector consumed by the policy network. All
    /// entries lie in [0, 1]; SNR and bandwidth are affinely mapped from
    /// [`SNR_NORM_RANGE_DB`] / [`BANDWIDTH_NORM_RANGE_MHZ`].
    pub fn features(&self) -> [f64; STATE_DIM] {
        let mut f = [0.0; STATE_DIM];
        let urgency_slot = match self.urgency {
            Urgency::Critical => 0,
            Urgency::Normal => 1,
            Urgency::Deferred => 2,
        };
        f[urgency_slot] = 1.0;
        f[3] = affine_norm(self.snr_db, SNR_NORM_RANGE_DB);
        f[4] = affine_norm(self.bandwidth_mhz, BANDWIDTH_NORM_RANGE_MHZ);
        f[5] = self.utilization.clamp(0.0, 1.0);
        f[6] = (self.queue_len.min(QUEUE_NORM_CAP) as f64) / QUEUE_NORM_CAP as f64;
        f[7] = self.battery_frac.clamp(0.0, 1.0);
        f
    }

    pub fn snr_norm(&self) -> f64 {
        affine_norm(self.snr_db, SNR_NORM_RANGE_DB)
    }
}

// ------------------------------------------------------------------ reward

/// Energy normalizer of the reward: one max-power transmission of 2.5 ticks
/// (0.2 W × 0.25 s). Short bursts stay cheap, but occupying a thin channel
/// for many ticks — or pushing a bulky payload uncompressed — costs on the
/// order of the success term, which is what teaches the controller to trade
/// power, coding, and compression against the link instead of maxing
/// everything.
pub const ENERGY_NORM_J: f64 = 0.01;

fn default_w_success() -> f64 {
    1.0
}
fn default_w_latency() -> f64 {
    0.2
}
fn default_w_loss() -> f64 {
    0.3
}
fn default_w_bandwidth() -> f64 {
    0.1
}
fn default_w_energy() -> f64 {
    0.2
}

/// Weights of the shaped transmission reward. All must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    #[serde(default = "default_w_success")]
    pub w_success: f64,
    #[serde(default = "default_w_latency")]
    pub w_latency: f64,
    #[serde(default = "default_w_loss")]
    pub w_loss: f64,
    #[serde(default = "default_w_bandwidth")]
    pub w_bandwidth: f64,
    #[serde(default = "default_w_energy")]
    pub w_energy: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_success: default_w_success(),
            w_latency: default_w_latency(),
            w_loss: default_w_loss(),
            w_bandwidth: default_w_bandwidth(),
            w_energy: default_w_energy(),
        }
    }
}

/// Fraction of the five reference attributes this outcome delivered; zero
/// when the `Category` fragment (always the first in canonical order) was
/// sent but lost.
pub fn delivered_fraction(outcome: &LinkOutcome, _msg: &SemanticMessage) -> f64 {
    match outcome.delivered.first() {
        Some(false) => 0.0,
        _ => outcome.delivered_count() as f64 / REFERENCE_ATTR_COUNT as f64,
    }
}

/// Shaped per-transmission reward. Pure in its inputs: the engine computes
/// it the moment a transmission's outcome is known.
pub fn reward(outcome: &LinkOutcome, msg: &SemanticMessage, weights: &RewardWeights) -> f64 {
    let delivered = delivered_fraction(outcome, msg);
    let lost_frac = if outcome.delivered.is_empty() {
        0.0
    } else {
        outcome.lost_count() as f64 / outcome.delivered.len() as f64
    };
    let window = msg.deadline_window().max(1) as f64;
    let latency = (outcome.transmit_time_ticks as f64 / window).min(1.0);
    weights.w_success * delivered * msg.urgency.multiplier()
        - weights.w_latency * latency
        - weights.w_loss * lost_frac
        - weights.w_bandwidth * outcome.share_used
        - weights.w_energy * (outcome.energy_j / ENERGY_NORM_J)
}

// -------------------------------------------------------------- defer gate

/// Configuration of the deferral rule.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeferConfig {
    /// Hold deferred traffic while the normalized SNR is below this.
    #[serde(default = "default_defer_snr")]
    pub snr_threshold: f64,
    /// Always release a message this many ticks before its deadline.
    #[serde(default = "default_defer_margin")]
    pub safety_margin: Tick,
}

fn default_defer_snr() -> f64 {
    0.25
}
fn default_defer_margin() -> Tick {
    15
}

impl Default for DeferConfig {
    fn default() -> Self {
        DeferConfig { snr_threshold: default_defer_snr(), safety_margin: default_defer_margin() }
    }
}

/// Whether to hold a message this tick instead of transmitting.
///
/// Only `Deferred` traffic is ever held, and only while the channel is bad
/// (normalized SNR below the threshold) *and* a critical message is waiting
/// somewhere in the device's queue. A message is always released once the
/// clock reaches `deadline - safety_margin`, so deferral can delay but never
/// starve delivery.
pub fn defer_gate(
    state: &CommState,
    msg: &SemanticMessage,
    critical_queued: bool,
    now: Tick,
    config: &DeferConfig,
) -> bool {
    if msg.urgency != Urgency::Deferred {
        return false;
    }
    if now + config.safety_margin >= msg.deadline_tick {
        return false;
    }
    state.snr_norm() < config.snr_threshold && critical_queued
}

// --------------------------------------------------------------- baselines

/// The "no adaptation" ablation: mid power, light compression, efficient
/// coding, always sub-channel 0, regardless of conditions.
pub fn baseline_static() -> TransmissionAction {
    TransmissionAction {
        channel: 0,
        power_level: 4, // 13.1 dBm
        compression_level: 1,
        coding: Coding::Efficient,
    }
}

/// Rule-based heuristic: urgency decides power/compression/coding, and the
/// transmission goes to the least-loaded sub-channel (lowest index on ties).
pub fn baseline_greedy(state: &CommState, channel_load: &[f64]) -> TransmissionAction {
    let channel = crate::nn::argmax(&channel_load.iter().map(|&l| -l).collect::<Vec<_>>());
    let (power_level, compression_level, coding) = match state.urgency {
        Urgency::Critical => (POWER_LEVELS_DBM.len() - 1, 0, Coding::Robust),
        Urgency::Normal => (4, 1, Coding::Efficient),
        Urgency::Deferred => (0, 3, Coding::Efficient),
    };
    TransmissionAction { channel, power_level, compression_level, coding }
}

// ------------------------------------------------------------ policy trait

/// Anything that can drive transmissions inside the engine. Implementations
/// must be deterministic given the RNG stream they are handed.
pub trait TransmitPolicy {
    /// Chooses an action for the head-of-queue message described by `state`.
    /// `channel_load` has one busy indicator (0 = idle, 1 = on the air) per
    /// sub-channel.
    fn decide(
        &mut self,
        state: &CommState,
        channel_load: &[f64],
        rng: &mut ChaCha12Rng,
    ) -> TransmissionAction;

    /// Called once per decision, as soon as the attempt's reward is known
    /// (blocked attempts score 0). Trainers record it; baselines ignore it.
    fn record_reward(&mut self, _reward: f64) {}

    /// Called when the episode ends, so trainers can mark the boundary.
    fn finish_episode(&mut self) {}

    /// Whether the engine should apply the defer gate for this policy.
    /// Deferral is part of the adaptive controller; the static ablation
    /// transmits everything immediately.
    fn uses_defer_gate(&self) -> bool {
        true
    }

    /// How many sub-channels this policy was built for, if it has a fixed
    /// channel head. The engine refuses to run a policy against a channel
    /// with a different sub-channel count.
    fn required_subchannels(&self) -> Option<usize> {
        None
    }

    fn name(&self) -> &'static str;
}

/// [`baseline_static`] as an engine policy.
#[derive(Debug, Default)]
pub struct StaticPolicy;

impl TransmitPolicy for StaticPolicy {
    fn decide(&mut self, _: &CommState, _: &[f64], _: &mut ChaCha12Rng) -> TransmissionAction {
        baseline_static()
    }

    fn uses_defer_gate(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "static"
    }
}

/// [`baseline_greedy`] as an engine policy.
#[derive(Debug, Default)]
pub struct GreedyPolicy;

impl TransmitPolicy for GreedyPolicy {
    fn decide(
        &mut self,
        state: &CommState,
        channel_load: &[f64],
        _: &mut ChaCha12Rng,
    ) -> TransmissionAction {
        baseline_greedy(state, channel_load)
    }

    fn uses_defer_gate(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "greedy"
    }
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Coord, DeviceId, Target, TargetCategory, TargetId};
    use crate::semantics::{encode, MessageMeta, MsgId, SemanticDescriptor};

    fn state(urgency: Urgency) -> CommState {
        CommState {
            urgency,
            snr_db: 10.0,
            bandwidth_mhz: 275.0,
            utilization: 0.5,
            queue_len: 5,
            battery_frac: 0.8,
        }
    }

    fn message(urgency: Urgency, created: Tick, deadline: Tick) -> SemanticMessage {
        let target = Target {
            id: TargetId(0),
            category: TargetCategory::Victim,
            cell: Coord::new(2, 3),
            severity: 3,
            accessibility: 1,
            confidence: 7,
        };
        encode(
            &SemanticDescriptor::reference(&target),
            urgency,
            0,
            MessageMeta {
                id: MsgId(1),
                source: DeviceId(0),
                created_tick: created,
                deadline_tick: deadline,
                payload_bytes_raw: 1000,
            },
        )
        .unwrap()
    }

    #[test]
    fn features_are_eight_dimensional_and_normalized() {
        let f = state(Urgency::Normal).features();
        assert_eq!(f.len(), 8);
        assert_eq!(&f[0..3], &[0.0, 1.0, 0.0], "urgency one-hot");
        assert!((f[3] - 0.5).abs() < 1e-12, "snr 10 dB is mid-range");
        assert!((f[4] - 0.5).abs() < 1e-12, "275 MHz is mid-range");
        assert_eq!(f[5], 0.5);
        assert_eq!(f[6], 0.5);
        assert_eq!(f[7], 0.8);
        assert!(f.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn feature_normalization_clamps_out_of_range_inputs() {
        let s = CommState { snr_db: -40.0, bandwidth_mhz: 900.0, queue_len: 50, ..state(Urgency::Critical) };
        let f = s.features();
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 1.0);
        assert_eq!(f[6], 1.0);
    }

    fn outcome(delivered: Vec<bool>, ticks: Tick, energy_j: f64, share: f64) -> LinkOutcome {
        LinkOutcome { delivered, transmit_time_ticks: ticks, energy_j, share_used: share }
    }

    #[test]
    fn full_delivery_with_no_penalties_scores_weight_times_multiplier() {
        // Everything arrives instantly and for free except the minimum
        // 1-tick latency; subtract that tiny known term.
        let msg = message(Urgency::Critical, 0, 100);
        let out = outcome(vec![true; 5], 1, 0.0, 0.0);
        let w = RewardWeights::default();
        let r = reward(&out, &msg, &w);
        let expected = 1.0 * 1.0 * 2.0 - 0.2 * (1.0 / 100.0);
        assert!((r - expected).abs() < 1e-12, "got {r}");
    }

    #[test]
    fn total_loss_is_pure_penalty() {
        let msg = message(Urgency::Normal, 0, 60);
        let out = outcome(vec![false; 5], 6, 0.1, 0.25);
        let r = reward(&out, &msg, &RewardWeights::default());
        // 0 success - 0.2*(6/60) - 0.3*1.0 - 0.1*0.25 - 0.2*(0.1/0.5)
        let expected = -0.02 - 0.3 - 0.025 - 0.04;
        assert!((r - expected).abs() < 1e-12, "got {r}");
    }

    #[test]
    fn worked_reward_example() {
        // Normal message, 4/5 fragments delivered including Category,
        // latency at half the window, share 0.25, energy at 0.3 E_max:
        // 0.8 - 0.1 - 0.06 - 0.025 - 0.06 = 0.555.
        let msg = message(Urgency::Normal, 0, 60);
        let out = outcome(vec![true, true, true, true, false], 30, 0.3 * ENERGY_NORM_J, 0.25);
        let r = reward(&out, &msg, &RewardWeights::default());
        assert!((r - 0.555).abs() < 1e-12, "got {r}");
    }

    #[test]
    fn category_loss_zeroes_the_success_term() {
        let msg = message(Urgency::Critical, 0, 60);
        let lost_cat = outcome(vec![false, true, true, true, true], 1, 0.0, 0.0);
        let kept_cat = outcome(vec![true, false, true, true, true], 1, 0.0, 0.0);
        let w = RewardWeights::default();
        assert!(reward(&lost_cat, &msg, &w) < reward(&kept_cat, &msg, &w));
        assert_eq!(delivered_fraction(&lost_cat, &msg), 0.0);
        assert_eq!(delivered_fraction(&kept_cat, &msg), 0.8);
    }

    #[test]
    fn defer_gate_holds_deferred_traffic_in_bad_channel_with_critical_waiting() {
        let cfg = DeferConfig::default();
        let bad = CommState { snr_db: -5.0, ..state(Urgency::Deferred) }; // snr_norm 0.125
        let msg = message(Urgency::Deferred, 0, 120);
        assert!(defer_gate(&bad, &msg, true, 10, &cfg), "bad channel + critical queued: hold");
        assert!(!defer_gate(&bad, &msg, false, 10, &cfg), "no critical traffic: release");
        let good = CommState { snr_db: 20.0, ..bad };
        assert!(!defer_gate(&good, &msg, true, 10, &cfg), "good channel: release");
    }

    #[test]
    fn defer_gate_releases_at_the_safety_margin() {
        let cfg = DeferConfig::default();
        let bad = CommState { snr_db: -5.0, ..state(Urgency::Deferred) };
        let msg = message(Urgency::Deferred, 0, 120);
        assert!(defer_gate(&bad, &msg, true, 104, &cfg), "still inside the window");
        assert!(!defer_gate(&bad, &msg, true, 105, &cfg), "margin reached: release");
    }

    #[test]
    fn defer_gate_never_holds_urgent_traffic() {
        let cfg = DeferConfig::default();
        let bad = CommState { snr_db: -10.0, ..state(Urgency::Critical) };
        assert!(!defer_gate(&bad, &message(Urgency::Critical, 0, 30), true, 0, &cfg));
        assert!(!defer_gate(&bad, &message(Urgency::Normal, 0, 60), true, 0, &cfg));
    }

    #[test]
    fn static_baseline_is_constant() {
        let a = baseline_static();
        assert_eq!(a.channel, 0);
        assert_eq!(a.power_dbm(), 13.1);
        assert_eq!(a.compression_level, 1);
        assert_eq!(a.coding, Coding::Efficient);
    }

    #[test]
    fn greedy_baseline_follows_the_urgency_rules() {
        let load = [0.0, 0.0, 0.0, 0.0];
        let critical = baseline_greedy(&state(Urgency::Critical), &load);
        assert_eq!(critical.power_level, 7);
        assert_eq!(critical.coding, Coding::Robust);
        assert_eq!(critical.compression_level, 0);

        let normal = baseline_greedy(&state(Urgency::Normal), &load);
        assert_eq!(normal.power_level, 4);
        assert_eq!(normal.coding, Coding::Efficient);
        assert_eq!(normal.compression_level, 1);

        let deferred = baseline_greedy(&state(Urgency::Deferred), &load);
        assert_eq!(deferred.power_level, 0);
        assert_eq!(deferred.compression_level, 3);
    }

    #[test]
    fn greedy_picks_least_loaded_channel_with_low_index_ties() {
        let s = state(Urgency::Normal);
        assert_eq!(baseline_greedy(&s, &[1.0, 0.0, 0.0, 1.0]).channel, 1, "first idle wins");
        assert_eq!(baseline_greedy(&s, &[0.0, 0.0, 0.0, 0.0]).channel, 0, "all idle: lowest");
        assert_eq!(baseline_greedy(&s, &[1.0, 1.0, 1.0, 1.0]).channel, 0, "all busy: lowest");
    }
}
