//! The discrete-event simulator: device movement, observation, semantic
//! message traffic, transmission scheduling and task progression, tied into
//! one deterministic episode loop with metric extraction.
//!
//! Everything observable about an episode lands in a [`Trace`]: a versioned,
//! newline-delimited event log ordered by `(tick, event priority, sequence)`.
//! Within a tick the engine always works through the same phase pipeline,
//! which is exactly the event-priority order:
//!
//! | # | event                 | phase                                      |
//! |---|-----------------------|--------------------------------------------|
//! | 0 | `BandwidthChange`     | scheduled band changes take effect         |
//! | 1 | `DeviceFailure`       | scripted dropouts; work is requeued        |
//! | 2 | `TransmissionEnd`     | outcomes land, rewards audit, gates check  |
//! | 3 | `DeviceMove`          | path following with conflict resolution    |
//! | 4 | `ObservationMade`     | devices at their goal sense the target     |
//! | 5 | `MessageEnqueued`     | observations/telemetry become messages     |
//! | 6 | `TransmissionStart`   | policy decisions, channel booking          |
//! | 7 | `SubtaskStatusChange` | completion, allocation, activation         |

mod metrics;
mod run;
mod sweeps;

pub use metrics::{
    compute_tcr, compute_te, render_sc_csv, render_sweep_csv, render_tcr_csv, render_te_csv,
    render_transmissions_csv, te_norm, MetricsReport, OraclePolicy, SweepPoint, TeBreakdown,
    TransmissionRecord,
};
pub use run::{run_episode, run_with_coordinator, run_with_oracle, EpisodeResult};
pub use sweeps::{sweep_bandwidth, sweep_snr, sweep_snr_by_seed};

use std::fmt;

use crate::channel::Coding;
use crate::cohesive::{CohesiveError, SubtaskId, SubtaskStatus, TaskId, TaskKind};
use crate::config::ConfigError;
use crate::scenario::{Coord, DeviceId, ScenarioError, TargetId};
use crate::semantics::{MsgId, SemanticsError, Urgency};
use crate::Tick;

// ------------------------------------------------------------------ errors

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("policy expects {policy} sub-channels, channel provides {channel}")]
    ConfigMismatch { policy: usize, channel: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Cohesive(#[from] CohesiveError),
    #[error(transparent)]
    Policy(#[from] crate::draosc::policy::PolicyError),
    #[error("trace format error: {0}")]
    Trace(String),
}

// ------------------------------------------------------------------ events

/// One record in the episode log. Every field that identifies an entity
/// uses that entity's display form (`d0`, `t3`, `m17`, `s5`, `k2`).
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    BandwidthChange {
        tick: Tick,
        mhz: f64,
    },
    DeviceFailure {
        tick: Tick,
        device: DeviceId,
    },
    /// A booked transmission ran its course; `delivered` is the
    /// per-fragment survival mask and `reward` the controller's score for
    /// the attempt.
    TransmissionEnd {
        tick: Tick,
        msg: MsgId,
        device: DeviceId,
        delivered: Vec<bool>,
        bytes: u64,
        energy_j: f64,
        reward: f64,
    },
    DeviceMove {
        tick: Tick,
        device: DeviceId,
        from: Coord,
        to: Coord,
    },
    ObservationMade {
        tick: Tick,
        device: DeviceId,
        target: TargetId,
        cell: Coord,
        subtask: Option<SubtaskId>,
    },
    MessageEnqueued {
        tick: Tick,
        msg: MsgId,
        device: DeviceId,
        target: TargetId,
        urgency: Urgency,
        subtask: Option<SubtaskId>,
    },
    TransmissionStart {
        tick: Tick,
        msg: MsgId,
        device: DeviceId,
        channel: usize,
        power_level: usize,
        compression: u8,
        coding: Coding,
        transmit_ticks: Tick,
        bytes: u64,
    },
    SubtaskStatusChange {
        tick: Tick,
        task: TaskId,
        subtask: SubtaskId,
        from: SubtaskStatus,
        to: SubtaskStatus,
        device: Option<DeviceId>,
    },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::BandwidthChange { tick, .. }
            | Event::DeviceFailure { tick, .. }
            | Event::TransmissionEnd { tick, .. }
            | Event::DeviceMove { tick, .. }
            | Event::ObservationMade { tick, .. }
            | Event::MessageEnqueued { tick, .. }
            | Event::TransmissionStart { tick, .. }
            | Event::SubtaskStatusChange { tick, .. } => *tick,
        }
    }

    /// Processing priority within a tick; lower runs first.
    pub fn priority(&self) -> u8 {
        match self {
            Event::BandwidthChange { .. } => 0,
            Event::DeviceFailure { .. } => 1,
            Event::TransmissionEnd { .. } => 2,
            Event::DeviceMove { .. } => 3,
            Event::ObservationMade { .. } => 4,
            Event::MessageEnqueued { .. } => 5,
            Event::TransmissionStart { .. } => 6,
            Event::SubtaskStatusChange { .. } => 7,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Event::BandwidthChange { .. } => "BandwidthChange",
            Event::DeviceFailure { .. } => "DeviceFailure",
            Event::TransmissionEnd { .. } => "TransmissionEnd",
            Event::DeviceMove { .. } => "DeviceMove",
            Event::ObservationMade { .. } => "ObservationMade",
            Event::MessageEnqueued { .. } => "MessageEnqueued",
            Event::TransmissionStart { .. } => "TransmissionStart",
            Event::SubtaskStatusChange { .. } => "SubtaskStatusChange",
        }
    }
}

fn mask_to_string(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn coord_field(c: Coord) -> String {
    format!("{},{}", c.x, c.y)
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event tick={} kind={}", self.tick(), self.kind_name())?;
        match self {
            Event::BandwidthChange { mhz, .. } => write!(f, " mhz={mhz}"),
            Event::DeviceFailure { device, .. } => write!(f, " device={device}"),
            Event::TransmissionEnd { msg, device, delivered, bytes, energy_j, reward, .. } => {
                write!(
                    f,
                    " msg={msg} device={device} delivered={} bytes={bytes} energy_j={energy_j} reward={reward}",
                    mask_to_string(delivered)
                )
            }
            Event::DeviceMove { device, from, to, .. } => {
                write!(f, " device={device} from={} to={}", coord_field(*from), coord_field(*to))
            }
            Event::ObservationMade { device, target, cell, subtask, .. } => {
                write!(f, " device={device} target={target} cell={}", coord_field(*cell))?;
                match subtask {
                    Some(s) => write!(f, " subtask={s}"),
                    None => write!(f, " subtask=-"),
                }
            }
            Event::MessageEnqueued { msg, device, target, urgency, subtask, .. } => {
                write!(f, " msg={msg} device={device} target={target} urgency={}", urgency.as_str())?;
                match subtask {
                    Some(s) => write!(f, " subtask={s}"),
                    None => write!(f, " subtask=-"),
                }
            }
            Event::TransmissionStart {
                msg,
                device,
                channel,
                power_level,
                compression,
                coding,
                transmit_ticks,
                bytes,
                ..
            } => write!(
                f,
                " msg={msg} device={device} channel={channel} power_level={power_level} compression={compression} coding={} ticks={transmit_ticks} bytes={bytes}",
                coding.as_str()
            ),
            Event::SubtaskStatusChange { task, subtask, from, to, device, .. } => {
                write!(f, " task={task} subtask={subtask} from={} to={}", from.as_str(), to.as_str())?;
                match device {
                    Some(d) => write!(f, " device={d}"),
                    None => write!(f, " device=-"),
                }
            }
        }
    }
}

// ------------------------------------------------------------------- trace

pub const TRACE_FORMAT_VERSION: &str = "ccein-trace v1";

/// The full episode record: header, issued tasks, and every event in
/// processing order. Round-trips through text byte-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub scheme: String,
    pub episode_ticks: Tick,
    /// Tasks issued at episode start: `(task, kind, its subtasks)`.
    pub tasks: Vec<(TaskId, TaskKind, Vec<SubtaskId>)>,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_FORMAT_VERSION);
        out.push('\n');
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("scheme {}\n", self.scheme));
        out.push_str(&format!("ticks {}\n", self.episode_ticks));
        for (task, kind, subtasks) in &self.tasks {
            let list: Vec<String> = subtasks.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!(
                "task {task} kind={} subtasks={}\n",
                kind.as_str(),
                if list.is_empty() { "-".to_string() } else { list.join(",") }
            ));
        }
        for event in &self.events {
            out.push_str(&event.to_string());
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Trace, EngineError> {
        let bad = |m: String| EngineError::Trace(m);
        let mut lines = text.lines();
        match lines.next() {
            Some(TRACE_FORMAT_VERSION) => {}
            other => {
                return Err(bad(format!(
                    "expected header {TRACE_FORMAT_VERSION:?}, found {other:?}"
                )))
            }
        }
        let mut seed = None;
        let mut scheme = None;
        let mut episode_ticks = None;
        let mut tasks = Vec::new();
        let mut events = Vec::new();
        let mut ended = false;
        for line in lines {
            if ended {
                return Err(bad("content after end marker".into()));
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("seed") => {
                    seed = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(format!("bad seed line: {line}")))?,
                    )
                }
                Some("scheme") => scheme = Some(parts.next().unwrap_or("").to_string()),
                Some("ticks") => {
                    episode_ticks = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(format!("bad ticks line: {line}")))?,
                    )
                }
                Some("task") => tasks.push(parse_task_line(line)?),
                Some("event") => events.push(parse_event_line(line)?),
                Some("end") => ended = true,
                Some(other) => return Err(bad(format!("unknown record {other:?}"))),
                None => {}
            }
        }
        if !ended {
            return Err(bad("missing end marker (truncated trace)".into()));
        }
        Ok(Trace {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            scheme: scheme.ok_or_else(|| bad("missing scheme".into()))?,
            episode_ticks: episode_ticks.ok_or_else(|| bad("missing ticks".into()))?,
            tasks,
            events,
        })
    }
}

// ----------------------------------------------------------------- parsing

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, EngineError> {
    let prefix = format!("{key}=");
    line.split_whitespace()
        .find_map(|part| part.strip_prefix(&prefix))
        .ok_or_else(|| EngineError::Trace(format!("missing field {key}= in: {line}")))
}

fn parse_id<T>(s: &str, prefix: char, make: impl Fn(u32) -> T, line: &str) -> Result<T, EngineError> {
    s.strip_prefix(prefix)
        .and_then(|n| n.parse().ok())
        .map(make)
        .ok_or_else(|| EngineError::Trace(format!("bad id {s:?} in: {line}")))
}

fn parse_coord(s: &str, line: &str) -> Result<Coord, EngineError> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| EngineError::Trace(format!("bad coord {s:?} in: {line}")))?;
    match (x.parse(), y.parse()) {
        (Ok(x), Ok(y)) => Ok(Coord::new(x, y)),
        _ => Err(EngineError::Trace(format!("bad coord {s:?} in: {line}"))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: &str) -> Result<T, EngineError> {
    s.parse().map_err(|_| EngineError::Trace(format!("bad number {s:?} in: {line}")))
}

fn parse_opt_subtask(s: &str, line: &str) -> Result<Option<SubtaskId>, EngineError> {
    if s == "-" {
        Ok(None)
    } else {
        parse_id(s, 's', SubtaskId, line).map(Some)
    }
}

fn parse_task_line(line: &str) -> Result<(TaskId, TaskKind, Vec<SubtaskId>), EngineError> {
    let bad = |m: String| EngineError::Trace(m);
    let mut parts = line.split_whitespace();
    parts.next(); // "task"
    let task = parse_id(parts.next().unwrap_or(""), 'k', TaskId, line)?;
    let kind_str = field(line, "kind")?;
    let kind = TaskKind::from_str(kind_str)
        .ok_or_else(|| bad(format!("unknown task kind {kind_str:?} in: {line}")))?;
    let subtasks_str = field(line, "subtasks")?;
    let subtasks = if subtasks_str == "-" {
        Vec::new()
    } else {
        subtasks_str
            .split(',')
            .map(|s| parse_id(s, 's', SubtaskId, line))
            .collect::<Result<_, _>>()?
    };
    Ok((task, kind, subtasks))
}

fn parse_event_line(line: &str) -> Result<Event, EngineError> {
    let bad = |m: String| EngineError::Trace(m);
    let tick: Tick = parse_num(field(line, "tick")?, line)?;
    let kind = field(line, "kind")?;
    let device = || parse_id(field(line, "device")?, 'd', DeviceId, line);
    Ok(match kind {
        "BandwidthChange" => Event::BandwidthChange { tick, mhz: parse_num(field(line, "mhz")?, line)? },
        "DeviceFailure" => Event::DeviceFailure { tick, device: device()? },
        "TransmissionEnd" => Event::TransmissionEnd {
            tick,
            msg: parse_id(field(line, "msg")?, 'm', |n| MsgId(n as u64), line)?,
            device: device()?,
            delivered: field(line, "delivered")?.chars().map(|c| c == '1').collect(),
            bytes: parse_num(field(line, "bytes")?, line)?,
            energy_j: parse_num(field(line, "energy_j")?, line)?,
            reward: parse_num(field(line, "reward")?, line)?,
        },
        "DeviceMove" => Event::DeviceMove {
            tick,
            device: device()?,
            from: parse_coord(field(line, "from")?, line)?,
            to: parse_coord(field(line, "to")?, line)?,
        },
        "ObservationMade" => Event::ObservationMade {
            tick,
            device: device()?,
            target: parse_id(field(line, "target")?, 't', TargetId, line)?,
            cell: parse_coord(field(line, "cell")?, line)?,
            subtask: parse_opt_subtask(field(line, "subtask")?, line)?,
        },
        "MessageEnqueued" => Event::MessageEnqueued {
            tick,
            msg: parse_id(field(line, "msg")?, 'm', |n| MsgId(n as u64), line)?,
            device: device()?,
            target: parse_id(field(line, "target")?, 't', TargetId, line)?,
            urgency: Urgency::from_str(field(line, "urgency")?)
                .ok_or_else(|| bad(format!("bad urgency in: {line}")))?,
            subtask: parse_opt_subtask(field(line, "subtask")?, line)?,
        },
        "TransmissionStart" => Event::TransmissionStart {
            tick,
            msg: parse_id(field(line, "msg")?, 'm', |n| MsgId(n as u64), line)?,
            device: device()?,
            channel: parse_num(field(line, "channel")?, line)?,
            power_level: parse_num(field(line, "power_level")?, line)?,
            compression: parse_num(field(line, "compression")?, line)?,
            coding: Coding::from_str(field(line, "coding")?)
                .ok_or_else(|| bad(format!("bad coding in: {line}")))?,
            transmit_ticks: parse_num(field(line, "ticks")?, line)?,
            bytes: parse_num(field(line, "bytes")?, line)?,
        },
        "SubtaskStatusChange" => Event::SubtaskStatusChange {
            tick,
            task: parse_id(field(line, "task")?, 'k', TaskId, line)?,
            subtask: parse_id(field(line, "subtask")?, 's', SubtaskId, line)?,
            from: parse_status(field(line, "from")?, line)?,
            to: parse_status(field(line, "to")?, line)?,
            device: match field(line, "device")? {
                "-" => None,
                s => Some(parse_id(s, 'd', DeviceId, line)?),
            },
        },
        other => return Err(bad(format!("unknown event kind {other:?}"))),
    })
}

fn parse_status(s: &str, line: &str) -> Result<SubtaskStatus, EngineError> {
    use SubtaskStatus::*;
    Ok(match s {
        "Pending" => Pending,
        "Assigned" => Assigned,
        "Active" => Active,
        "Done" => Done,
        "Failed" => Failed,
        _ => return Err(EngineError::Trace(format!("bad status {s:?} in: {line}"))),
    })
}

// ------------------------------------------------------------- event queue

/// Min-heap of scheduled events ordered by `(tick, priority, seq)`. The
/// sequence number is assigned at insertion, so identically-prioritized
/// events come out in insertion order; differently-prioritized events at
/// the same tick come out in priority order no matter how they went in.
#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: std::collections::BinaryHeap<std::cmp::Reverse<QueuedEvent>>,
    next_seq: u64,
}

#[derive(Debug)]
struct QueuedEvent {
    tick: Tick,
    priority: u8,
    seq: u64,
    event: Event,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.priority, self.seq) == (other.tick, other.priority, other.seq)
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.priority, self.seq).cmp(&(other.tick, other.priority, other.seq))
    }
}

impl EventQueue {
    pub fn push(&mut self, event: Event) {
        let q = QueuedEvent {
            tick: event.tick(),
            priority: event.priority(),
            seq: self.next_seq,
            event,
        };
        self.next_seq += 1;
        self.heap.push(std::cmp::Reverse(q));
    }

    /// Pops every event scheduled for `tick` (and panics on any the loop
    /// left behind — a scheduled event in the past is an engine bug).
    pub fn pop_tick(&mut self, tick: Tick) -> Vec<Event> {
        let mut out = Vec::new();
        while let Some(std::cmp::Reverse(head)) = self.heap.peek() {
            assert!(head.tick >= tick, "event from tick {} left unprocessed", head.tick);
            if head.tick > tick {
                break;
            }
            out.push(self.heap.pop().expect("peeked").0.event);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events() -> Vec<Event> {
        vec![
            Event::BandwidthChange { tick: 0, mhz: 500.0 },
            Event::SubtaskStatusChange {
                tick: 0,
                task: TaskId(0),
                subtask: SubtaskId(2),
                from: SubtaskStatus::Pending,
                to: SubtaskStatus::Assigned,
                device: Some(DeviceId(1)),
            },
            Event::DeviceMove {
                tick: 1,
                device: DeviceId(1),
                from: Coord::new(3, 4),
                to: Coord::new(3, 6),
            },
            Event::ObservationMade {
                tick: 2,
                device: DeviceId(1),
                target: TargetId(7),
                cell: Coord::new(3, 6),
                subtask: Some(SubtaskId(2)),
            },
            Event::MessageEnqueued {
                tick: 2,
                msg: MsgId(0),
                device: DeviceId(1),
                target: TargetId(7),
                urgency: Urgency::Critical,
                subtask: Some(SubtaskId(2)),
            },
            Event::TransmissionStart {
                tick: 2,
                msg: MsgId(0),
                device: DeviceId(1),
                channel: 3,
                power_level: 7,
                compression: 0,
                coding: Coding::Robust,
                transmit_ticks: 2,
                bytes: 51_200,
            },
            Event::TransmissionEnd {
                tick: 4,
                msg: MsgId(0),
                device: DeviceId(1),
                delivered: vec![true, true, false, true, true],
                bytes: 51_200,
                energy_j: 0.0399052463,
                reward: 1.55,
            },
            Event::DeviceFailure { tick: 5, device: DeviceId(0) },
        ]
    }

    #[test]
    fn trace_round_trips_byte_identically() {
        let trace = Trace {
            seed: 42,
            scheme: "adaptive".into(),
            episode_ticks: 10,
            tasks: vec![
                (TaskId(0), TaskKind::VictimRescue, vec![SubtaskId(0), SubtaskId(1), SubtaskId(2)]),
                (TaskId(1), TaskKind::RouteClear, vec![]),
            ],
            events: sample_events(),
        };
        let text = trace.to_text();
        let parsed = Trace::from_text(&text).unwrap();
        assert_eq!(parsed, trace);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn truncated_and_corrupt_traces_are_rejected() {
        let trace = Trace {
            seed: 1,
            scheme: "static".into(),
            episode_ticks: 5,
            tasks: vec![],
            events: vec![Event::BandwidthChange { tick: 0, mhz: 200.0 }],
        };
        let text = trace.to_text();
        let truncated = text.trim_end_matches("end\n");
        assert!(matches!(Trace::from_text(truncated), Err(EngineError::Trace(_))));
        let wrong_header = text.replacen("v1", "v9", 1);
        assert!(matches!(Trace::from_text(&wrong_header), Err(EngineError::Trace(_))));
        let garbage = text.replace("BandwidthChange", "Bandwidth???");
        assert!(matches!(Trace::from_text(&garbage), Err(EngineError::Trace(_))));
    }

    #[test]
    fn queue_orders_by_tick_then_priority_regardless_of_insertion() {
        let mk = |tick| {
            vec![
                Event::TransmissionEnd {
                    tick,
                    msg: MsgId(1),
                    device: DeviceId(0),
                    delivered: vec![true],
                    bytes: 10,
                    energy_j: 0.1,
                    reward: 1.0,
                },
                Event::BandwidthChange { tick, mhz: 100.0 },
                Event::DeviceFailure { tick, device: DeviceId(2) },
            ]
        };
        // Three insertion permutations, one expected pop order.
        for perm in [[0usize, 1, 2], [2, 1, 0], [1, 2, 0]] {
            let mut q = EventQueue::default();
            let events = mk(7);
            for &i in &perm {
                q.push(events[i].clone());
            }
            let popped = q.pop_tick(7);
            let kinds: Vec<&str> = popped.iter().map(|e| e.kind_name()).collect();
            assert_eq!(kinds, ["BandwidthChange", "DeviceFailure", "TransmissionEnd"]);
        }
    }

    #[test]
    fn queue_separates_ticks() {
        let mut q = EventQueue::default();
        q.push(Event::BandwidthChange { tick: 3, mhz: 100.0 });
        q.push(Event::BandwidthChange { tick: 1, mhz: 200.0 });
        assert!(q.pop_tick(0).is_empty());
        assert_eq!(q.pop_tick(1).len(), 1);
        assert!(q.pop_tick(2).is_empty());
        assert_eq!(q.pop_tick(3).len(), 1);
    }

    #[test]
    fn event_lines_are_single_line_key_value_records() {
        for event in sample_events() {
            let line = event.to_string();
            assert!(line.starts_with("event tick="), "{line}");
            assert!(!line.contains('\n'));
            assert!(line.contains(&format!("kind={}", event.kind_name())));
            // Every field must parse back.
            assert_eq!(parse_event_line(&line).unwrap(), event);
        }
    }
}
