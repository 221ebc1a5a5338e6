//! One TOML file drives everything: scenario generation, the channel
//! model, message generation, reward shaping, deferral, PPO training and
//! the evaluation sweeps. Every key has a default, so the empty string
//! parses to the standard configuration; unknown keys are rejected so typos
//! fail loudly instead of silently running the default.

use serde::Deserialize;

use crate::channel::{BandwidthSchedule, ChannelError};
use crate::draosc::ppo::PpoConfig;
use crate::draosc::{DeferConfig, RewardWeights};
use crate::scenario::ScenarioConfig;
use crate::Tick;

/// A named key failed validation; the key path is spelled out so the
/// offending line in the TOML file is findable.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config error at `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

// ----------------------------------------------------------------- episode

fn default_ticks() -> Tick {
    600
}
fn default_true() -> bool {
    true
}

/// Episode-level knobs: length, task issuance and scripted failures.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Simulated episode length; each tick is 100 ms.
    #[serde(default = "default_ticks")]
    pub ticks: Tick,
    /// Issue one rescue task per reachable victim at tick 0. Turn off to
    /// drive the coordinator with hand-scripted commands.
    #[serde(default = "default_true")]
    pub auto_commands: bool,
    /// Scripted device failures as `(tick, device index)` pairs.
    #[serde(default)]
    pub failures: Vec<(Tick, u32)>,
    /// Force every transmitted fragment to arrive (the channel still bills
    /// airtime and energy, and draws the same random numbers). Used for the
    /// loss-free upper-bound run that normalizes transmission efficiency.
    #[serde(default)]
    pub loss_free: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            ticks: default_ticks(),
            auto_commands: true,
            failures: Vec::new(),
            loss_free: false,
        }
    }
}

// ----------------------------------------------------------------- channel

fn default_subchannels() -> usize {
    4
}
fn default_base_snr() -> f64 {
    -3.0
}
fn default_snr_step() -> f64 {
    0.5
}
fn default_snr_clamp() -> f64 {
    5.0
}
fn default_bandwidth() -> BandwidthSpec {
    BandwidthSpec::Named("descending".into())
}

/// Bandwidth over the episode: the name `"descending"` (the standard
/// 500 → 50 MHz staircase), a constant in MHz, or explicit
/// `(tick, MHz)` breakpoints.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Named(String),
    Constant(f64),
    Points(Vec<(Tick, f64)>),
}

impl BandwidthSpec {
    pub fn resolve(&self, episode_ticks: Tick) -> Result<BandwidthSchedule, ConfigError> {
        let as_config = |e: ChannelError| invalid("channel.bandwidth", e.to_string());
        match self {
            BandwidthSpec::Named(name) if name == "descending" => {
                Ok(BandwidthSchedule::descending(episode_ticks))
            }
            BandwidthSpec::Named(name) => Err(invalid(
                "channel.bandwidth",
                format!("unknown schedule name {name:?} (expected \"descending\")"),
            )),
            BandwidthSpec::Constant(mhz) => BandwidthSchedule::constant(*mhz).map_err(as_config),
            BandwidthSpec::Points(points) => {
                BandwidthSchedule::new(points.clone()).map_err(as_config)
            }
        }
    }
}

/// Wireless layer parameters shared by every device.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Number of orthogonal sub-channels (the policy's channel head size).
    #[serde(default = "default_subchannels")]
    pub num_subchannels: usize,
    /// Center of the per-episode SNR random walk, in dB.
    #[serde(default = "default_base_snr")]
    pub base_snr_db: f64,
    /// Walk step per tick, in dB.
    #[serde(default = "default_snr_step")]
    pub snr_step_db: f64,
    /// Walk clamp around the base, in dB.
    #[serde(default = "default_snr_clamp")]
    pub snr_clamp_db: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: BandwidthSpec,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            num_subchannels: default_subchannels(),
            base_snr_db: default_base_snr(),
            snr_step_db: default_snr_step(),
            snr_clamp_db: default_snr_clamp(),
            bandwidth: default_bandwidth(),
        }
    }
}

// ---------------------------------------------------------------- messages

fn default_critical_bytes() -> u64 {
    50 * 1024
}
fn default_normal_bytes() -> u64 {
    200 * 1024
}
fn default_deferred_bytes() -> u64 {
    1024 * 1024
}
fn default_telemetry_interval() -> Tick {
    25
}
fn default_reobserve_delay() -> Tick {
    5
}

/// Message generation: payload sizes per urgency and the cadences of
/// telemetry and re-observation.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MessageConfig {
    #[serde(default = "default_critical_bytes")]
    pub critical_payload_bytes: u64,
    #[serde(default = "default_normal_bytes")]
    pub normal_payload_bytes: u64,
    #[serde(default = "default_deferred_bytes")]
    pub deferred_payload_bytes: u64,
    /// Every device contributes one deferred environment descriptor each
    /// interval, cycling through the knowledge-base targets.
    #[serde(default = "default_telemetry_interval")]
    pub telemetry_interval_ticks: Tick,
    /// Delay before a device re-observes after its report misses the
    /// message deadline.
    #[serde(default = "default_reobserve_delay")]
    pub reobserve_delay_ticks: Tick,
}

impl Default for MessageConfig {
    fn default() -> Self {
        MessageConfig {
            critical_payload_bytes: default_critical_bytes(),
            normal_payload_bytes: default_normal_bytes(),
            deferred_payload_bytes: default_deferred_bytes(),
            telemetry_interval_ticks: default_telemetry_interval(),
            reobserve_delay_ticks: default_reobserve_delay(),
        }
    }
}

impl MessageConfig {
    pub fn payload_bytes(&self, urgency: crate::semantics::Urgency) -> u64 {
        use crate::semantics::Urgency::*;
        match urgency {
            Critical => self.critical_payload_bytes,
            Normal => self.normal_payload_bytes,
            Deferred => self.deferred_payload_bytes,
        }
    }
}

// ---------------------------------------------------------------- training

fn default_iterations() -> usize {
    60
}
fn default_rollout() -> usize {
    2048
}
fn default_eval_interval() -> usize {
    5
}
fn default_eval_episodes() -> usize {
    5
}
fn default_snr_range() -> (f64, f64) {
    (-10.0, 30.0)
}
fn default_bandwidth_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 50.0).collect()
}

/// Training-loop shape: how much experience per update, how training
/// episodes are randomized, and how candidate checkpoints are scored.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Transitions collected per iteration (episodes run until reached).
    #[serde(default = "default_rollout")]
    pub rollout_length: usize,
    /// Evaluate (and possibly keep) a checkpoint every this many iterations.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    /// Held-out episodes per evaluation, on seeds disjoint from training.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Per-episode base SNR is drawn uniformly from this range (dB) so the
    /// policy sees the whole regime the sweeps later probe.
    #[serde(default = "default_snr_range")]
    pub snr_range_db: (f64, f64),
    /// Per-episode constant bandwidth is drawn from this grid (MHz).
    #[serde(default = "default_bandwidth_grid")]
    pub bandwidth_grid_mhz: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: default_iterations(),
            rollout_length: default_rollout(),
            eval_interval: default_eval_interval(),
            eval_episodes: default_eval_episodes(),
            snr_range_db: default_snr_range(),
            bandwidth_grid_mhz: default_bandwidth_grid(),
        }
    }
}

// ------------------------------------------------------------------ sweeps

fn default_sweep_seeds() -> usize {
    5
}
fn default_snr_grid() -> Vec<f64> {
    (0..=8).map(|i| -10.0 + i as f64 * 5.0).collect()
}
fn default_snr_sweep_bandwidth() -> f64 {
    200.0
}

/// Grids for the bandwidth/power and SNR/consistency sweeps.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Episodes (seeds) per grid point.
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
    #[serde(default = "default_bandwidth_grid")]
    pub bandwidth_grid_mhz: Vec<f64>,
    #[serde(default = "default_snr_grid")]
    pub snr_grid_db: Vec<f64>,
    /// Constant bandwidth used while sweeping SNR.
    #[serde(default = "default_snr_sweep_bandwidth")]
    pub snr_sweep_bandwidth_mhz: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seeds: default_sweep_seeds(),
            bandwidth_grid_mhz: default_bandwidth_grid(),
            snr_grid_db: default_snr_grid(),
            snr_sweep_bandwidth_mhz: default_snr_sweep_bandwidth(),
        }
    }
}

// -------------------------------------------------------------------- root

/// The whole configuration tree. `SimConfig::from_toml("")` is the shipped
/// default experiment.
#[derive(Debug, Clone, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub messages: MessageConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub defer: DeferConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks beyond what deserialization can express. Each
    /// failure names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episode.ticks == 0 {
            return Err(invalid("episode.ticks", "must be at least 1"));
        }
        for (tick, device) in &self.episode.failures {
            if *tick >= self.episode.ticks {
                return Err(invalid(
                    "episode.failures",
                    format!("failure tick {tick} is past the episode end"),
                ));
            }
            if *device as usize >= self.scenario.devices.total() {
                return Err(invalid(
                    "episode.failures",
                    format!("device index {device} out of range"),
                ));
            }
        }
        if self.channel.num_subchannels == 0 || self.channel.num_subchannels > 16 {
            return Err(invalid("channel.num_subchannels", "must be in 1..=16"));
        }
        if !self.channel.snr_step_db.is_finite() || self.channel.snr_step_db < 0.0 {
            return Err(invalid("channel.snr_step_db", "must be finite and non-negative"));
        }
        if !self.channel.snr_clamp_db.is_finite() || self.channel.snr_clamp_db < 0.0 {
            return Err(invalid("channel.snr_clamp_db", "must be finite and non-negative"));
        }
        if !self.channel.base_snr_db.is_finite() {
            return Err(invalid("channel.base_snr_db", "must be finite"));
        }
        self.channel.bandwidth.resolve(self.episode.ticks)?;
        for (key, bytes) in [
            ("messages.critical_payload_bytes", self.messages.critical_payload_bytes),
            ("messages.normal_payload_bytes", self.messages.normal_payload_bytes),
            ("messages.deferred_payload_bytes", self.messages.deferred_payload_bytes),
        ] {
            if bytes == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.messages.telemetry_interval_ticks == 0 {
            return Err(invalid("messages.telemetry_interval_ticks", "must be at least 1"));
        }
        for (key, w) in [
            ("reward.w_success", self.reward.w_success),
            ("reward.w_latency", self.reward.w_latency),
            ("reward.w_loss", self.reward.w_loss),
            ("reward.w_bandwidth", self.reward.w_bandwidth),
            ("reward.w_energy", self.reward.w_energy),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(key, "weights must be finite and non-negative"));
            }
        }
        if self.reward.w_success <= 0.0 {
            return Err(invalid("reward.w_success", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.defer.snr_threshold) {
            return Err(invalid("defer.snr_threshold", "must be in [0, 1]"));
        }
        if !(0.0 < self.ppo.clip && self.ppo.clip < 1.0) {
            return Err(invalid("ppo.clip", "must be in (0, 1)"));
        }
        for (key, v) in [("ppo.gamma", self.ppo.gamma), ("ppo.lambda", self.ppo.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, "must be in [0, 1]"));
            }
        }
        if self.ppo.learning_rate <= 0.0 || !self.ppo.learning_rate.is_finite() {
            return Err(invalid("ppo.learning_rate", "must be positive"));
        }
        if self.ppo.epochs == 0 {
            return Err(invalid("ppo.epochs", "must be at least 1"));
        }
        if self.ppo.minibatch_size == 0 {
            return Err(invalid("ppo.minibatch_size", "must be at least 1"));
        }
        if self.train.rollout_length == 0 {
            return Err(invalid("train.rollout_length", "must be at least 1"));
        }
        if self.train.eval_interval == 0 {
            return Err(invalid("train.eval_interval", "must be at least 1"));
        }
        if self.train.eval_episodes == 0 {
            return Err(invalid("train.eval_episodes", "must be at least 1"));
        }
        let (lo, hi) = self.train.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid("train.snr_range_db", "must be a finite low <= high pair"));
        }
        if self.train.bandwidth_grid_mhz.is_empty() {
            return Err(invalid("train.bandwidth_grid_mhz", "must not be empty"));
        }
        for &mhz in self.train.bandwidth_grid_mhz.iter().chain(&self.sweep.bandwidth_grid_mhz) {
            if !(50.0..=500.0).contains(&mhz) {
                return Err(invalid(
                    "train.bandwidth_grid_mhz",
                    format!("{mhz} MHz outside the supported 50..=500 band"),
                ));
            }
        }
        if self.sweep.seeds == 0 {
            return Err(invalid("sweep.seeds", "must be at least 1"));
        }
        if self.sweep.bandwidth_grid_mhz.is_empty() {
            return Err(invalid("sweep.bandwidth_grid_mhz", "must not be empty"));
        }
        if self.sweep.snr_grid_db.is_empty() {
            return Err(invalid("sweep.snr_grid_db", "must not be empty"));
        }
        if !(50.0..=500.0).contains(&self.sweep.snr_sweep_bandwidth_mhz) {
            return Err(invalid(
                "sweep.snr_sweep_bandwidth_mhz",
                "outside the supported 50..=500 band",
            ));
        }
        Ok(())
    }
}
