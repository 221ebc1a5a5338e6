//! Shared wireless channel: capacity, fragment errors, transmission cost.
//!
//! The network shares one frequency band that the infrastructure splits into
//! equal sub-channels. A transmission books one sub-channel, so its share of
//! the band is `1 / num_subchannels`, and its rate follows the Shannon
//! capacity of that share:
//!
//! ```text
//! rate [Mb/s] = share * bandwidth_mhz * log2(1 + 10^(snr_db / 10))
//! ```
//!
//! Reliability is separate from rate: each message fragment survives
//! independently with a logistic probability of the link margin
//!
//! ```text
//! p = 1 / (1 + exp(-m / 3)),   m = snr_db + (power_dbm - 15) + coding_gain
//! ```
//!
//! where the robust coding scheme trades half the rate for a +3 dB gain.
//! Energy is billed for the whole booked airtime whether or not fragments
//! survive — wasted transmissions cost real battery.
//!
//! ```
//! use ccein::channel::{capacity, ChannelState};
//! let state = ChannelState { snr_db: 0.0, bandwidth_mhz: 1.0, num_subchannels: 1 };
//! assert_eq!(capacity(&state, 1.0), 1.0); // log2(1 + 1) = 1
//! ```

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use crate::semantics::SemanticMessage;
use crate::{Tick, TICK_SECONDS};

// ----------------------------------------------------------------- actions

/// Discrete transmit power grid in dBm (8 levels, 0 to 23 dBm).
pub const POWER_LEVELS_DBM: [f64; 8] = [0.0, 3.3, 6.6, 9.9, 13.1, 16.4, 19.7, 23.0];

/// Reference power of the error model: at `snr_db = 0`, transmitting at
/// 15 dBm with the efficient coding puts the link margin at zero (p = 0.5).
pub const REFERENCE_POWER_DBM: f64 = 15.0;

/// Logistic slope of the fragment error model, in dB.
pub const ERROR_MODEL_SLOPE_DB: f64 = 3.0;

/// Channel coding trade-off: `Robust` buys +3 dB margin for half the rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coding {
    Robust,
    Efficient,
}

impl Coding {
    pub fn rate_factor(self) -> f64 {
        match self {
            Coding::Robust => 0.5,
            Coding::Efficient => 1.0,
        }
    }

    pub fn gain_db(self) -> f64 {
        match self {
            Coding::Robust => 3.0,
            Coding::Efficient => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Coding::Robust => "Robust",
            Coding::Efficient => "Efficient",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "Robust" => Coding::Robust,
            "Efficient" => Coding::Efficient,
            _ => return None,
        })
    }

    /// Position in the controller's two-way coding head.
    pub fn index(self) -> usize {
        match self {
            Coding::Robust => 0,
            Coding::Efficient => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Some(match i {
            0 => Coding::Robust,
            1 => Coding::Efficient,
            _ => return None,
        })
    }
}

/// Number of coding schemes (size of the controller's coding head).
pub const CODING_COUNT: usize = 2;

/// One transmission decision: which sub-channel to book, how hard to drive
/// the amplifier, how much to compress, and which coding scheme to use.
/// This is exactly the action space of the adaptive controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransmissionAction {
    /// Sub-channel index, `0..num_subchannels`.
    pub channel: usize,
    /// Index into [`POWER_LEVELS_DBM`].
    pub power_level: usize,
    /// Semantic compression level, 0..=3.
    pub compression_level: u8,
    pub coding: Coding,
}

impl TransmissionAction {
    pub fn power_dbm(&self) -> f64 {
        POWER_LEVELS_DBM[self.power_level]
    }

    pub fn power_watts(&self) -> f64 {
        dbm_to_watts(self.power_dbm())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

// ------------------------------------------------------------------- state

/// Instantaneous channel condition seen by every device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub snr_db: f64,
    pub bandwidth_mhz: f64,
    pub num_subchannels: usize,
}

impl ChannelState {
    /// Band share of one booked sub-channel.
    pub fn subchannel_share(&self) -> f64 {
        1.0 / self.num_subchannels as f64
    }
}

/// Shannon rate in Mb/s of a `share` slice of the band.
pub fn capacity(state: &ChannelState, share: f64) -> f64 {
    debug_assert!(share > 0.0 && share <= 1.0, "share must be in (0, 1]");
    let snr_linear = 10f64.powf(state.snr_db / 10.0);
    share * state.bandwidth_mhz * (1.0 + snr_linear).log2()
}

/// Probability that a single fragment survives the link.
pub fn fragment_success_prob(snr_db: f64, power_dbm: f64, coding: Coding) -> f64 {
    let margin = snr_db + (power_dbm - REFERENCE_POWER_DBM) + coding.gain_db();
    1.0 / (1.0 + (-margin / ERROR_MODEL_SLOPE_DB).exp())
}

// ------------------------------------------------------------ transmission

/// What one transmission attempt did to the world.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    /// Per-fragment survival, aligned with the message's canonical
    /// attribute order.
    pub delivered: Vec<bool>,
    /// Booked airtime, rounded up to whole ticks (at least one).
    pub transmit_time_ticks: Tick,
    /// Battery cost: transmit watts times booked airtime. Charged in full
    /// even if every fragment is lost.
    pub energy_j: f64,
    /// Band share consumed while the transmission was on the air.
    pub share_used: f64,
}

impl LinkOutcome {
    pub fn delivered_count(&self) -> usize {
        self.delivered.iter().filter(|&&d| d).count()
    }

    pub fn lost_count(&self) -> usize {
        self.delivered.len() - self.delivered_count()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("sub-channel {requested} out of range, channel has {available}")]
    BadChannel { requested: usize, available: usize },
    #[error("power level {0} out of range, valid levels are 0..=7")]
    BadPowerLevel(usize),
    #[error("bandwidth schedule: {0}")]
    BadSchedule(String),
}

/// Books one sub-channel and sends every fragment of `msg`.
///
/// Rounds the airtime up to whole ticks, bills energy for the booked time,
/// and draws fragment survival independently: fragment `i` is delivered iff
/// the i-th `f64` drawn from `rng` is below the fragment success
/// probability. That sampling rule is part of the determinism contract —
/// replaying the same RNG stream reproduces the outcome bit for bit.
pub fn transmit(
    msg: &SemanticMessage,
    action: &TransmissionAction,
    state: &ChannelState,
    rng: &mut ChaCha12Rng,
) -> Result<LinkOutcome, ChannelError> {
    if action.channel >= state.num_subchannels {
        return Err(ChannelError::BadChannel {
            requested: action.channel,
            available: state.num_subchannels,
        });
    }
    if action.power_level >= POWER_LEVELS_DBM.len() {
        return Err(ChannelError::BadPowerLevel(action.power_level));
    }
    let share = state.subchannel_share();
    let rate_mbps = capacity(state, share) * action.coding.rate_factor();
    let bits = msg.payload_bytes_compressed as f64 * 8.0;
    let seconds = bits / (rate_mbps * 1e6);
    let transmit_time_ticks = ceil_ticks(seconds);
    let energy_j = action.power_watts() * transmit_time_ticks as f64 * TICK_SECONDS;
    let p = fragment_success_prob(state.snr_db, action.power_dbm(), action.coding);
    let delivered = (0..msg.fragment_count()).map(|_| rng.random::<f64>() < p).collect();
    Ok(LinkOutcome { delivered, transmit_time_ticks, energy_j, share_used: share })
}

/// Rounds a duration up to whole ticks, snapping near-integer tick counts
/// (within 1e-9) down so that exact multiples of the tick length don't round
/// up an extra tick through floating-point noise.
fn ceil_ticks(seconds: f64) -> Tick {
    let ticks = (seconds / TICK_SECONDS - 1e-9).ceil();
    if ticks < 1.0 {
        1
    } else {
        ticks as Tick
    }
}

// ------------------------------------------------------------- snr process

/// Per-episode SNR evolution: a base level plus a bounded ±0.5 dB random
/// walk, clamped to `base ± clamp`.
#[derive(Debug, Clone)]
pub struct SnrProcess {
    base_db: f64,
    step_db: f64,
    clamp_db: f64,
    current_db: f64,
}

impl SnrProcess {
    pub fn new(base_db: f64, step_db: f64, clamp_db: f64) -> Self {
        SnrProcess { base_db, step_db, clamp_db, current_db: base_db }
    }

    pub fn current_db(&self) -> f64 {
        self.current_db
    }

    /// Advances the walk by one tick.
    pub fn step(&mut self, rng: &mut ChaCha12Rng) {
        let dir = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        self.current_db = (self.current_db + dir * self.step_db)
            .clamp(self.base_db - self.clamp_db, self.base_db + self.clamp_db);
    }
}

// ---------------------------------------------------------------- schedule

/// Piecewise-constant bandwidth over the episode: `(tick, MHz)` breakpoints,
/// strictly increasing ticks starting at 0, values within the supported
/// 50..=500 MHz band.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "Vec<(Tick, f64)>")]
pub struct BandwidthSchedule {
    points: Vec<(Tick, f64)>,
}

impl BandwidthSchedule {
    pub fn new(points: Vec<(Tick, f64)>) -> Result<Self, ChannelError> {
        if points.is_empty() {
            return Err(ChannelError::BadSchedule("schedule must have at least one point".into()));
        }
        if points[0].0 != 0 {
            return Err(ChannelError::BadSchedule(format!(
                "first breakpoint must be at tick 0, got {}",
                points[0].0
            )));
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(ChannelError::BadSchedule(format!(
                    "breakpoint ticks must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for &(tick, mhz) in &points {
            if !(50.0..=500.0).contains(&mhz) {
                return Err(ChannelError::BadSchedule(format!(
                    "bandwidth {mhz} MHz at tick {tick} outside the supported 50..=500 MHz band"
                )));
            }
        }
        Ok(BandwidthSchedule { points })
    }

    /// Constant bandwidth for the whole episode.
    pub fn constant(mhz: f64) -> Result<Self, ChannelError> {
        Self::new(vec![(0, mhz)])
    }

    /// The evaluation default: the band degrades from 500 MHz down to
    /// 50 MHz in ten equal steps over `episode_ticks`.
    pub fn descending(episode_ticks: Tick) -> Self {
        let steps = 10;
        let points = (0..steps)
            .map(|i| (i as Tick * episode_ticks / steps as Tick, 500.0 - 50.0 * i as f64))
            .collect();
        Self::new(points).expect("descending schedule is well-formed")
    }

    pub fn value_at(&self, tick: Tick) -> f64 {
        self.points
            .iter()
            .take_while(|&&(t, _)| t <= tick)
            .last()
            .map(|&(_, v)| v)
            .unwrap_or(self.points[0].1)
    }

    /// Breakpoints after tick 0, i.e. the mid-episode bandwidth changes.
    pub fn changes(&self) -> impl Iterator<Item = (Tick, f64)> + '_ {
        self.points.iter().copied().filter(|&(t, _)| t > 0)
    }

    pub fn points(&self) -> &[(Tick, f64)] {
        &self.points
    }
}

impl TryFrom<Vec<(Tick, f64)>> for BandwidthSchedule {
    type Error = ChannelError;

    fn try_from(points: Vec<(Tick, f64)>) -> Result<Self, Self::Error> {
        BandwidthSchedule::new(points)
    }
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenario::{Coord, DeviceId, Target, TargetCategory, TargetId};
    use crate::semantics::{encode, MessageMeta, MsgId, SemanticDescriptor, Urgency};

    fn message(payload_bytes: u64) -> SemanticMessage {
        let target = Target {
            id: TargetId(0),
            category: TargetCategory::Victim,
            cell: Coord::new(1, 1),
            severity: 1,
            accessibility: 1,
            confidence: 5,
        };
        let obs = SemanticDescriptor::reference(&target);
        encode(
            &obs,
            Urgency::Normal,
            0,
            MessageMeta {
                id: MsgId(0),
                source: DeviceId(0),
                created_tick: 0,
                deadline_tick: 60,
                payload_bytes_raw: payload_bytes,
            },
        )
        .unwrap()
    }

    fn action(power_level: usize, coding: Coding) -> TransmissionAction {
        TransmissionAction { channel: 0, power_level, compression_level: 0, coding }
    }

    #[test]
    fn capacity_of_one_mhz_at_zero_db_is_one_mbps() {
        let state = ChannelState { snr_db: 0.0, bandwidth_mhz: 1.0, num_subchannels: 1 };
        assert_eq!(capacity(&state, 1.0), 1.0);
    }

    #[test]
    fn capacity_matches_shannon_at_linear_snr_three() {
        // linear SNR 3 is 4.771212547196624 dB; log2(1 + 3) = 2.
        let state =
            ChannelState { snr_db: 4.771212547196624, bandwidth_mhz: 10.0, num_subchannels: 1 };
        assert!((capacity(&state, 1.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_half_share_50mhz_10db() {
        // Independently derived: 0.5 * 50 * log2(11) = 86.48579046593244.
        let state = ChannelState { snr_db: 10.0, bandwidth_mhz: 50.0, num_subchannels: 1 };
        assert!((capacity(&state, 0.5) - 86.48579046593244).abs() < 1e-10);
    }

    #[test]
    fn zero_margin_gives_even_odds() {
        // snr 0, power at the 15 dBm reference, no coding gain: margin 0.
        assert_eq!(fragment_success_prob(0.0, REFERENCE_POWER_DBM, Coding::Efficient), 0.5);
    }

    #[test]
    fn example_margin_eleven_db() {
        // snr 5 dB, 18 dBm, robust: margin 5 + 3 + 3 = 11, p = logistic(11/3).
        let p = fragment_success_prob(5.0, 18.0, Coding::Robust);
        assert!((p - 0.975075573352886).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn deep_positive_margin_saturates() {
        assert!(fragment_success_prob(30.0, 23.0, Coding::Robust) > 0.999);
        assert!(fragment_success_prob(-40.0, 0.0, Coding::Efficient) < 1e-3);
    }

    #[test]
    fn success_probability_is_monotone_in_power() {
        let mut last = 0.0;
        for level in POWER_LEVELS_DBM {
            let p = fragment_success_prob(-3.0, level, Coding::Efficient);
            assert!(p > last, "p must increase with power");
            last = p;
        }
    }

    #[test]
    fn extreme_snr_delivers_everything_or_nothing() {
        let msg = message(1000);
        let mut rng = rng::stream(1, "tx");
        let good = ChannelState { snr_db: 300.0, bandwidth_mhz: 100.0, num_subchannels: 4 };
        let out = transmit(&msg, &action(7, Coding::Efficient), &good, &mut rng).unwrap();
        assert_eq!(out.delivered, vec![true; 5]);

        let bad = ChannelState { snr_db: -300.0, bandwidth_mhz: 100.0, num_subchannels: 4 };
        let out = transmit(&msg, &action(0, Coding::Efficient), &bad, &mut rng).unwrap();
        assert_eq!(out.delivered, vec![false; 5]);
        assert!(out.energy_j > 0.0, "failed transmissions still burn energy");
    }

    #[test]
    fn airtime_and_energy_for_known_rate() {
        // 1 MHz at 0 dB, full band: 1 Mb/s. 100 000 bytes = 800 000 bits
        // = 0.8 s = 8 ticks. Energy at 23 dBm: 0.1995262... W * 0.8 s.
        let msg = message(100_000);
        let state = ChannelState { snr_db: 0.0, bandwidth_mhz: 1.0, num_subchannels: 1 };
        let mut rng = rng::stream(2, "tx");
        let out = transmit(&msg, &action(7, Coding::Efficient), &state, &mut rng).unwrap();
        assert_eq!(out.transmit_time_ticks, 8);
        assert!((out.energy_j - 0.1596209851975104).abs() < 1e-15, "got {}", out.energy_j);
        assert_eq!(out.share_used, 1.0);
    }

    #[test]
    fn robust_coding_halves_the_rate() {
        let msg = message(100_000);
        let state = ChannelState { snr_db: 0.0, bandwidth_mhz: 1.0, num_subchannels: 1 };
        let mut rng = rng::stream(2, "tx");
        let out = transmit(&msg, &action(7, Coding::Robust), &state, &mut rng).unwrap();
        assert_eq!(out.transmit_time_ticks, 16);
    }

    #[test]
    fn tiny_payloads_round_up_to_one_tick() {
        let msg = message(1);
        let state = ChannelState { snr_db: 20.0, bandwidth_mhz: 500.0, num_subchannels: 1 };
        let mut rng = rng::stream(3, "tx");
        let out = transmit(&msg, &action(4, Coding::Efficient), &state, &mut rng).unwrap();
        assert_eq!(out.transmit_time_ticks, 1);
        // Energy for one tick at 13.1 dBm.
        assert!((out.energy_j - 0.0020417379446695297).abs() < 1e-18);
    }

    #[test]
    fn fragment_survival_replays_the_rng_stream() {
        // The documented sampling rule: fragment i survives iff the i-th
        // f64 drawn from the stream is < p. Replay it independently.
        let msg = message(1000);
        let state = ChannelState { snr_db: 2.0, bandwidth_mhz: 100.0, num_subchannels: 4 };
        let act = action(3, Coding::Efficient);
        let p = fragment_success_prob(state.snr_db, act.power_dbm(), act.coding);

        let mut expected_rng = rng::stream(7, "replay");
        let expected: Vec<bool> =
            (0..5).map(|_| rand::Rng::random::<f64>(&mut expected_rng) < p).collect();

        let mut rng = rng::stream(7, "replay");
        let out = transmit(&msg, &act, &state, &mut rng).unwrap();
        assert_eq!(out.delivered, expected);
    }

    #[test]
    fn invalid_channel_and_power_are_rejected() {
        let msg = message(1000);
        let state = ChannelState { snr_db: 0.0, bandwidth_mhz: 100.0, num_subchannels: 4 };
        let mut rng = rng::stream(1, "tx");
        let bad_chan = TransmissionAction {
            channel: 4,
            power_level: 0,
            compression_level: 0,
            coding: Coding::Efficient,
        };
        assert_eq!(
            transmit(&msg, &bad_chan, &state, &mut rng).unwrap_err(),
            ChannelError::BadChannel { requested: 4, available: 4 }
        );
        let bad_power = TransmissionAction { channel: 0, power_level: 8, ..bad_chan };
        assert_eq!(
            transmit(&msg, &bad_power, &state, &mut rng).unwrap_err(),
            ChannelError::BadPowerLevel(8)
        );
    }

    #[test]
    fn snr_walk_stays_clamped_and_is_deterministic() {
        let mut a = SnrProcess::new(5.0, 0.5, 6.0);
        let mut b = SnrProcess::new(5.0, 0.5, 6.0);
        let mut rng_a = rng::stream(9, "snr");
        let mut rng_b = rng::stream(9, "snr");
        for _ in 0..500 {
            a.step(&mut rng_a);
            b.step(&mut rng_b);
            assert!(a.current_db() >= -1.0 && a.current_db() <= 11.0);
            assert_eq!(a.current_db(), b.current_db());
        }
    }

    #[test]
    fn schedule_lookup_follows_breakpoints_exactly() {
        let s = BandwidthSchedule::new(vec![(0, 500.0), (100, 300.0), (200, 50.0)]).unwrap();
        assert_eq!(s.value_at(0), 500.0);
        assert_eq!(s.value_at(99), 500.0);
        assert_eq!(s.value_at(100), 300.0);
        assert_eq!(s.value_at(250), 50.0);
        assert_eq!(s.changes().count(), 2);
    }

    #[test]
    fn schedule_validation_catches_bad_input() {
        assert!(BandwidthSchedule::new(vec![]).is_err());
        assert!(BandwidthSchedule::new(vec![(5, 100.0)]).is_err(), "must start at tick 0");
        assert!(BandwidthSchedule::new(vec![(0, 100.0), (0, 200.0)]).is_err());
        assert!(BandwidthSchedule::new(vec![(0, 600.0)]).is_err(), "outside supported band");
    }

    #[test]
    fn descending_default_covers_the_band() {
        let s = BandwidthSchedule::descending(600);
        assert_eq!(s.value_at(0), 500.0);
        assert_eq!(s.value_at(599), 50.0);
        assert_eq!(s.points().len(), 10);
    }
}
