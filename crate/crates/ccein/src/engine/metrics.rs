//! Episode metrics — task completion, transmission efficiency, power and
//! consistency figures — plus their CSV renderings.

use std::collections::BTreeMap;

use rand_chacha::ChaCha12Rng;

use crate::channel::{Coding, TransmissionAction};
use crate::cohesive::{SubtaskId, SubtaskStatus};
use crate::draosc::{CommState, TransmitPolicy};
use crate::scenario::DeviceId;
use crate::semantics::{MsgId, Urgency};
use crate::Tick;

use super::{Event, Trace};

// ----------------------------------------------------------------- records

/// One booked transmission, as the sweeps and the CSV exports see it.
/// Recorded at booking time; the outcome fields are known immediately
/// because fragment survival is drawn when the channel is booked.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    pub tick: Tick,
    pub msg: MsgId,
    pub device: DeviceId,
    pub urgency: Urgency,
    pub channel: usize,
    pub power_dbm: f64,
    pub compression: u8,
    pub coding: Coding,
    pub transmit_ticks: Tick,
    pub bytes: u64,
    pub energy_j: f64,
    pub fragments: usize,
    pub delivered_fragments: usize,
    pub reward: f64,
}

/// Headline numbers of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub total_tasks: usize,
    pub completed_tasks: usize,
    /// Completed / issued. An episode with no tasks scores 1.0 and sets
    /// `tcr_vacuous` so downstream tables can flag the degenerate case.
    pub tcr: f64,
    pub tcr_vacuous: bool,
    /// Total booked payload bytes, in megabytes (counted at booking).
    pub transmitted_megabytes: f64,
    /// Completed tasks per transmitted megabyte; 0 when nothing was sent.
    pub te_raw: f64,
    /// `te_raw` relative to the loss-free oracle run, clamped to [0, 1].
    /// `None` until a caller pairs the episode with its oracle run.
    pub te_norm: Option<f64>,
    pub total_energy_j: f64,
    /// Mean transmit power over actual transmissions; 0 when none happened.
    pub mean_power_dbm: f64,
    /// Final semantic consistency against the knowledge base, `None` when
    /// the scenario has no reference targets.
    pub sc: Option<f64>,
    pub episode_ticks: Tick,
}

/// The transmission-efficiency inputs of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeBreakdown {
    pub completed_tasks: usize,
    pub transmitted_megabytes: f64,
    pub te_raw: f64,
}

pub(crate) fn te_raw(completed: usize, megabytes: f64) -> f64 {
    if megabytes > 0.0 {
        completed as f64 / megabytes
    } else {
        0.0
    }
}

/// Normalized transmission efficiency: the episode's raw figure against the
/// loss-free oracle's, clamped to [0, 1]. A non-positive oracle figure means
/// even the upper bound completed nothing; any run then counts as at-bound.
pub fn te_norm(raw: f64, oracle_raw: f64) -> f64 {
    if oracle_raw <= 0.0 {
        1.0
    } else {
        (raw / oracle_raw).clamp(0.0, 1.0)
    }
}

// ----------------------------------------------------- trace-side recompute

/// Task completion recomputed from a trace alone: replays the status-change
/// events over the task list. Agrees with the live engine's figure — the
/// trace is a complete record.
pub fn compute_tcr(trace: &Trace) -> (usize, usize, f64) {
    let mut status: BTreeMap<SubtaskId, SubtaskStatus> = BTreeMap::new();
    for event in &trace.events {
        if let Event::SubtaskStatusChange { subtask, to, .. } = event {
            status.insert(*subtask, *to);
        }
    }
    let total = trace.tasks.len();
    let completed = trace
        .tasks
        .iter()
        .filter(|(_, _, subs)| {
            !subs.is_empty()
                && subs.iter().all(|s| status.get(s) == Some(&SubtaskStatus::Done))
        })
        .count();
    let tcr = if total == 0 { 1.0 } else { completed as f64 / total as f64 };
    (completed, total, tcr)
}

/// Transmission efficiency recomputed from a trace alone. Megabytes are
/// summed over booking events, matching the live engine's accounting.
pub fn compute_te(trace: &Trace) -> TeBreakdown {
    let megabytes = trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::TransmissionStart { bytes, .. } => Some(*bytes as f64),
            _ => None,
        })
        .sum::<f64>()
        / 1e6;
    let (completed, _, _) = compute_tcr(trace);
    TeBreakdown { completed_tasks: completed, transmitted_megabytes: megabytes, te_raw: te_raw(completed, megabytes) }
}

// ------------------------------------------------------------------ oracle

/// The upper-bound policy for efficiency normalization: maximal compression,
/// minimal power, efficient coding, least-loaded sub-channel. Paired with a
/// loss-free channel it completes tasks with the fewest possible bytes.
#[derive(Debug, Default)]
pub struct OraclePolicy;

impl TransmitPolicy for OraclePolicy {
    fn decide(
        &mut self,
        _state: &CommState,
        channel_load: &[f64],
        _rng: &mut ChaCha12Rng,
    ) -> TransmissionAction {
        let negated: Vec<f64> = channel_load.iter().map(|&l| -l).collect();
        TransmissionAction {
            channel: crate::nn::argmax(&negated),
            power_level: 0,
            compression_level: 3,
            coding: Coding::Efficient,
        }
    }

    fn uses_defer_gate(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

// ------------------------------------------------------------------ sweeps

/// One row of a sweep: grid value, pooled mean/std, sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

// -------------------------------------------------------------------- CSVs

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// `scheme,seed,completed,total,tcr`
pub fn render_tcr_csv(rows: &[(String, u64, MetricsReport)]) -> String {
    let mut out = String::from("scheme,seed,completed,total,tcr\n");
    for (scheme, seed, m) in rows {
        out.push_str(&format!(
            "{scheme},{seed},{},{},{}\n",
            m.completed_tasks, m.total_tasks, m.tcr
        ));
    }
    out
}

/// `scheme,seed,completed,megabytes,te_raw,te_norm`
pub fn render_te_csv(rows: &[(String, u64, MetricsReport)]) -> String {
    let mut out = String::from("scheme,seed,completed,megabytes,te_raw,te_norm\n");
    for (scheme, seed, m) in rows {
        out.push_str(&format!(
            "{scheme},{seed},{},{},{},{}\n",
            m.completed_tasks,
            m.transmitted_megabytes,
            m.te_raw,
            csv_opt(m.te_norm)
        ));
    }
    out
}

/// `bandwidth_mhz,mean_power_dbm,std,n` — power pooled over every
/// transmission at that bandwidth.
pub fn render_sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("bandwidth_mhz,mean_power_dbm,std,n\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.x, p.mean, p.std, p.n));
    }
    out
}

/// `snr_db,sc_mean,sc_std,n` — consistency pooled over episodes at that SNR.
pub fn render_sc_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("snr_db,sc_mean,sc_std,n\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.x, p.mean, p.std, p.n));
    }
    out
}

/// Full per-transmission log.
pub fn render_transmissions_csv(records: &[TransmissionRecord]) -> String {
    let mut out = String::from(
        "tick,msg,device,urgency,channel,power_dbm,compression,coding,transmit_ticks,bytes,energy_j,fragments,delivered,reward\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.tick,
            r.msg,
            r.device,
            r.urgency.as_str(),
            r.channel,
            r.power_dbm,
            r.compression,
            r.coding.as_str(),
            r.transmit_ticks,
            r.bytes,
            r.energy_j,
            r.fragments,
            r.delivered_fragments,
            r.reward
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohesive::{TaskId, TaskKind};

    fn status_event(tick: Tick, subtask: u32, from: SubtaskStatus, to: SubtaskStatus) -> Event {
        Event::SubtaskStatusChange {
            tick,
            task: TaskId(0),
            subtask: SubtaskId(subtask),
            from,
            to,
            device: None,
        }
    }

    fn trace_with(tasks: Vec<(TaskId, TaskKind, Vec<SubtaskId>)>, events: Vec<Event>) -> Trace {
        Trace { seed: 0, scheme: "static".into(), episode_ticks: 100, tasks, events }
    }

    #[test]
    fn tcr_counts_only_fully_done_tasks() {
        use SubtaskStatus::*;
        let tasks = vec![
            (TaskId(0), TaskKind::VictimRescue, vec![SubtaskId(0), SubtaskId(1)]),
            (TaskId(1), TaskKind::RouteClear, vec![SubtaskId(2)]),
            (TaskId(2), TaskKind::CloseInspect, vec![SubtaskId(3)]),
        ];
        let events = vec![
            status_event(1, 0, Pending, Assigned),
            status_event(2, 0, Assigned, Active),
            status_event(3, 0, Active, Done),
            status_event(3, 1, Pending, Assigned),
            // subtask 1 never completes -> task 0 incomplete
            status_event(4, 2, Pending, Assigned),
            status_event(5, 2, Assigned, Active),
            status_event(6, 2, Active, Done), // task 1 complete
            // task 2's subtask never even starts
        ];
        let (completed, total, tcr) = compute_tcr(&trace_with(tasks, events));
        assert_eq!((completed, total), (1, 3));
        assert!((tcr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tcr_ignores_earlier_statuses_once_overwritten() {
        use SubtaskStatus::*;
        // Done via a fail-and-retry cycle still counts.
        let tasks = vec![(TaskId(0), TaskKind::RouteClear, vec![SubtaskId(0)])];
        let events = vec![
            status_event(1, 0, Pending, Assigned),
            status_event(2, 0, Assigned, Active),
            status_event(3, 0, Active, Failed),
            status_event(3, 0, Failed, Pending),
            status_event(4, 0, Pending, Assigned),
            status_event(5, 0, Assigned, Active),
            status_event(9, 0, Active, Done),
        ];
        assert_eq!(compute_tcr(&trace_with(tasks, events)).2, 1.0);
    }

    #[test]
    fn empty_task_list_scores_vacuous_one() {
        let (completed, total, tcr) = compute_tcr(&trace_with(vec![], vec![]));
        assert_eq!((completed, total), (0, 0));
        assert_eq!(tcr, 1.0);
    }

    #[test]
    fn empty_subtask_list_never_completes() {
        // A command that matched no target yields a task with no subtasks.
        let tasks = vec![(TaskId(0), TaskKind::SupplyDelivery, vec![])];
        let (completed, total, _) = compute_tcr(&trace_with(tasks, vec![]));
        assert_eq!((completed, total), (0, 1));
    }

    #[test]
    fn te_sums_booked_bytes() {
        let mk_start = |tick, bytes| Event::TransmissionStart {
            tick,
            msg: MsgId(0),
            device: DeviceId(0),
            channel: 0,
            power_level: 4,
            compression: 1,
            coding: Coding::Efficient,
            transmit_ticks: 1,
            bytes,
        };
        use SubtaskStatus::*;
        let tasks = vec![(TaskId(0), TaskKind::RouteClear, vec![SubtaskId(0)])];
        let events = vec![
            mk_start(1, 400_000),
            mk_start(2, 600_000),
            status_event(3, 0, Pending, Assigned),
            status_event(4, 0, Assigned, Active),
            status_event(5, 0, Active, Done),
        ];
        let te = compute_te(&trace_with(tasks, events));
        assert_eq!(te.completed_tasks, 1);
        assert!((te.transmitted_megabytes - 1.0).abs() < 1e-12);
        assert!((te.te_raw - 1.0).abs() < 1e-12);
    }

    #[test]
    fn te_raw_is_zero_when_nothing_was_sent() {
        assert_eq!(te_raw(3, 0.0), 0.0);
        assert_eq!(te_raw(0, 0.0), 0.0);
    }

    #[test]
    fn te_norm_clamps_and_handles_degenerate_oracle() {
        assert_eq!(te_norm(0.5, 1.0), 0.5);
        assert_eq!(te_norm(2.0, 1.0), 1.0, "better than oracle clamps to 1");
        assert_eq!(te_norm(0.0, 1.0), 0.0);
        assert_eq!(te_norm(0.0, 0.0), 1.0, "oracle completed nothing: at bound");
    }

    #[test]
    fn csv_renderings_have_stable_headers() {
        assert!(render_tcr_csv(&[]).starts_with("scheme,seed,completed,total,tcr\n"));
        assert!(render_te_csv(&[]).starts_with("scheme,seed,completed,megabytes,te_raw,te_norm\n"));
        assert!(render_sweep_csv(&[]).starts_with("bandwidth_mhz,mean_power_dbm,std,n\n"));
        assert!(render_sc_csv(&[]).starts_with("snr_db,sc_mean,sc_std,n\n"));
        let point = SweepPoint { x: 50.0, mean: 13.1, std: 0.0, n: 12 };
        assert_eq!(render_sweep_csv(&[point]).lines().nth(1), Some("50,13.1,0,12"));
    }

    #[test]
    fn oracle_policy_picks_cheapest_action_on_least_loaded_channel() {
        let mut oracle = OraclePolicy;
        let state = CommState {
            urgency: Urgency::Critical,
            snr_db: 5.0,
            bandwidth_mhz: 200.0,
            utilization: 0.25,
            queue_len: 1,
            battery_frac: 1.0,
        };
        let mut rng = crate::rng::stream(0, "oracle");
        let action = oracle.decide(&state, &[1.0, 0.0, 1.0, 0.0], &mut rng);
        assert_eq!(action.channel, 1);
        assert_eq!(action.power_level, 0);
        assert_eq!(action.compression_level, 3);
        assert_eq!(action.coding, Coding::Efficient);
        assert!(!oracle.uses_defer_gate());
    }
}
