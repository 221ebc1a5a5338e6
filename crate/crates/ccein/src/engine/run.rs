//! The episode runner: one deterministic pass of the simulated network.
//!
//! See the module docs on [`super`] for the per-tick phase pipeline. A few
//! conventions the phases share:
//!
//! * All per-device iteration is in device-id order, all per-message
//!   selection uses `(urgency rank desc, deadline asc, id asc)`; together
//!   with the three named RNG streams (`engine-snr`, `engine-transmit`,
//!   `engine-policy`) this makes a run a pure function of
//!   `(world, policy, config, seed)`.
//! * Fragment survival is drawn when the channel is booked, so a
//!   transmission's outcome, energy bill and reward are all known at start;
//!   the trace reveals them at the scheduled `TransmissionEnd`.
//! * Movement conflicts consider the cells devices *finish* the tick on;
//!   pass-throughs and swaps are legal (ground vehicles are assumed to
//!   coordinate locally below the planning horizon).

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::{transmit, ChannelError, ChannelState, SnrProcess, POWER_LEVELS_DBM};
use crate::cohesive::{
    CohesiveMind, Command, PlannedMove, SubtaskId, SubtaskStatus, TaskId, TaskKind,
    BATTERY_RESERVE_FRAC,
};
use crate::config::{ConfigError, SimConfig};
use crate::draosc::{defer_gate, reward, CommState, TransmitPolicy};
use crate::rng;
use crate::scenario::{shortest_path, Coord, Device, DeviceId, TargetId, World};
use crate::semantics::{
    consistency_score, corrupt, encode, AttrKey, KnowledgeBase, MessageMeta, MsgId,
    ReceivedDescriptor, SemanticDescriptor, SemanticMessage, Urgency, REFERENCE_ATTR_COUNT,
};
use crate::stats;
use crate::Tick;

use super::metrics::{te_raw, MetricsReport, OraclePolicy, TeBreakdown, TransmissionRecord};
use super::{EngineError, Event, EventQueue, Trace};

// ------------------------------------------------------------------ results

/// Everything one episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trace: Trace,
    pub metrics: MetricsReport,
    /// Receiver-side knowledge at episode end, per target.
    pub received: BTreeMap<TargetId, ReceivedDescriptor>,
    pub transmissions: Vec<TransmissionRecord>,
}

// ------------------------------------------------------------ episode state

/// Mutable per-device runtime state.
struct DeviceRt {
    device: Device,
    initial_battery_j: f64,
    alive: bool,
    /// Message ids waiting to transmit (unordered; selection sorts).
    queue: Vec<MsgId>,
    /// Message currently on the air, if any.
    inflight: Option<MsgId>,
    /// Remaining cells toward `path_goal`, next cell first.
    path: Vec<Coord>,
    path_goal: Option<Coord>,
}

/// A report the network still owes the operator: observation descriptor plus
/// delivery bookkeeping. Retransmitted (possibly at different compression)
/// until its required attributes arrive or the deadline passes.
struct Report {
    device: DeviceId,
    urgency: Urgency,
    descriptor: SemanticDescriptor,
    created_tick: Tick,
    deadline_tick: Tick,
    payload_bytes_raw: u64,
    /// The subtask this report completes, or `None` for telemetry.
    gates: Option<SubtaskId>,
    /// Attribute keys delivered so far, across attempts.
    delivered: BTreeSet<AttrKey>,
}

impl Report {
    fn meta(&self, id: MsgId) -> MessageMeta {
        MessageMeta {
            id,
            source: self.device,
            created_tick: self.created_tick,
            deadline_tick: self.deadline_tick,
            payload_bytes_raw: self.payload_bytes_raw,
        }
    }

    /// Whether everything this report owes has been delivered. Gated
    /// reports owe the two attributes that identify a target (`Category`,
    /// `Position`); telemetry owes the full descriptor.
    fn is_complete(&self) -> bool {
        match self.gates {
            Some(_) => {
                self.delivered.contains(&AttrKey::Category)
                    && self.delivered.contains(&AttrKey::Position)
            }
            None => self.delivered.len() == REFERENCE_ATTR_COUNT,
        }
    }
}

// -------------------------------------------------------------- entry points

/// Runs one episode, issuing one rescue task per reachable victim when
/// `episode.auto_commands` is set.
pub fn run_episode(
    world: &World,
    policy: &mut dyn TransmitPolicy,
    config: &SimConfig,
    seed: u64,
) -> Result<EpisodeResult, EngineError> {
    let mut coordinator = CohesiveMind::new();
    if config.episode.auto_commands {
        let mut victims: Vec<_> = world.reachable_victims().collect();
        victims.sort_by_key(|t| t.id);
        for victim in victims {
            coordinator.parse(
                &Command { kind: TaskKind::VictimRescue, cell: Some(victim.cell) },
                world,
                0,
            )?;
        }
    }
    run_with_coordinator(world, policy, coordinator, config, seed)
}

/// The loss-free upper-bound companion run used to normalize transmission
/// efficiency: same world and seed, maximal-compression minimal-power
/// policy, every fragment forced through.
pub fn run_with_oracle(
    world: &World,
    config: &SimConfig,
    seed: u64,
) -> Result<TeBreakdown, EngineError> {
    let mut oracle_config = config.clone();
    oracle_config.episode.loss_free = true;
    let mut oracle = OraclePolicy;
    let result = run_episode(world, &mut oracle, &oracle_config, seed)?;
    Ok(TeBreakdown {
        completed_tasks: result.metrics.completed_tasks,
        transmitted_megabytes: result.metrics.transmitted_megabytes,
        te_raw: result.metrics.te_raw,
    })
}

/// Runs one episode against a pre-loaded coordinator (no automatic task
/// issuance — the caller scripts the commands).
pub fn run_with_coordinator(
    world: &World,
    policy: &mut dyn TransmitPolicy,
    mut coordinator: CohesiveMind,
    config: &SimConfig,
    seed: u64,
) -> Result<EpisodeResult, EngineError> {
    config.validate()?;
    if let Some(k) = policy.required_subchannels() {
        if k != config.channel.num_subchannels {
            return Err(EngineError::ConfigMismatch {
                policy: k,
                channel: config.channel.num_subchannels,
            });
        }
    }
    assert!(
        world.devices.iter().enumerate().all(|(i, d)| d.id.0 as usize == i),
        "world devices must have sequential ids starting at d0"
    );

    let ticks = config.episode.ticks;
    let schedule = config.channel.bandwidth.resolve(ticks)?;
    let mut snr = SnrProcess::new(
        config.channel.base_snr_db,
        config.channel.snr_step_db,
        config.channel.snr_clamp_db,
    );
    let mut channel = ChannelState {
        snr_db: snr.current_db(),
        bandwidth_mhz: schedule.value_at(0),
        num_subchannels: config.channel.num_subchannels,
    };

    let mut queue = EventQueue::default();
    for (tick, mhz) in schedule.changes() {
        if tick < ticks {
            queue.push(Event::BandwidthChange { tick, mhz });
        }
    }
    for &(tick, device_index) in &config.episode.failures {
        if device_index as usize >= world.devices.len() {
            return Err(EngineError::Config(ConfigError::Invalid {
                key: "episode.failures",
                reason: format!(
                    "device index {device_index} out of range for this world ({} devices)",
                    world.devices.len()
                ),
            }));
        }
        queue.push(Event::DeviceFailure { tick, device: DeviceId(device_index) });
    }

    let mut devices: Vec<DeviceRt> = world
        .devices
        .iter()
        .map(|d| DeviceRt {
            device: d.clone(),
            initial_battery_j: d.battery_j,
            alive: true,
            queue: Vec::new(),
            inflight: None,
            path: Vec::new(),
            path_goal: None,
        })
        .collect();
    let battery_reserve_j = BATTERY_RESERVE_FRAC
        * devices.iter().map(|r| r.initial_battery_j).fold(0.0, f64::max);

    let kb = KnowledgeBase::from_world(world);
    let kb_targets: Vec<TargetId> = kb.targets().collect();
    let mut telemetry_cursor = 0usize;

    let mut reports: BTreeMap<MsgId, Report> = BTreeMap::new();
    let mut inflight_msgs: BTreeMap<MsgId, SemanticMessage> = BTreeMap::new();
    let mut next_msg = 0u64;

    let mut received: BTreeMap<TargetId, ReceivedDescriptor> = BTreeMap::new();
    let mut observed: BTreeSet<(DeviceId, SubtaskId)> = BTreeSet::new();
    let mut reobserve_at: BTreeMap<(DeviceId, SubtaskId), Tick> = BTreeMap::new();

    let mut busy_until: Vec<Tick> = vec![0; channel.num_subchannels];
    let mut completions: Vec<(DeviceId, SubtaskId)> = Vec::new();
    let mut pending_obs: Vec<(DeviceId, TargetId, Urgency, SubtaskId)> = Vec::new();

    let mut records: Vec<TransmissionRecord> = Vec::new();
    let mut events: Vec<Event> = Vec::new();

    let mut snr_rng = rng::stream(seed, "engine-snr");
    let mut tx_rng = rng::stream(seed, "engine-transmit");
    let mut policy_rng = rng::stream(seed, "engine-policy");

    let trace_tasks: Vec<(TaskId, TaskKind, Vec<SubtaskId>)> =
        coordinator.tasks().map(|t| (t.id, t.kind, t.subtasks.clone())).collect();

    for now in 0..ticks {
        // Phases 0-2: scheduled events, popped in (priority, seq) order.
        for event in queue.pop_tick(now) {
            match &event {
                Event::BandwidthChange { mhz, .. } => channel.bandwidth_mhz = *mhz,
                Event::DeviceFailure { device, .. } => {
                    let rt = &mut devices[device.0 as usize];
                    if rt.alive {
                        rt.alive = false;
                        rt.queue.clear();
                        rt.inflight = None;
                        rt.path.clear();
                        rt.path_goal = None;
                        coordinator.handle_device_failure(*device, now);
                    }
                }
                Event::TransmissionEnd { msg, device, delivered, .. } => {
                    let idx = device.0 as usize;
                    if devices[idx].inflight == Some(*msg) {
                        devices[idx].inflight = None;
                    }
                    // A dead device's frames were already on the air; they
                    // still land, but the report dies with the device.
                    if let Some(sent) = inflight_msgs.remove(msg) {
                        let arrived = corrupt(&sent, delivered)?;
                        if !arrived.is_empty() {
                            received
                                .entry(sent.descriptor.target_id())
                                .or_default()
                                .merge(arrived.attributes());
                        }
                        let mut done = false;
                        let mut gated = false;
                        if let Some(report) = reports.get_mut(msg) {
                            for a in arrived.attributes() {
                                report.delivered.insert(a.key());
                            }
                            done = report.is_complete();
                            gated = report.gates.is_some();
                        }
                        if done {
                            let report = reports.remove(msg).expect("checked above");
                            if let Some(sub) = report.gates {
                                completions.push((report.device, sub));
                            }
                        } else if reports.contains_key(msg) {
                            // Incomplete subtask reports go back in the
                            // queue for another attempt (until their
                            // deadline); telemetry is best-effort — whatever
                            // arrived was merged, and the message retires.
                            if gated && devices[idx].alive {
                                devices[idx].queue.push(*msg);
                            } else {
                                reports.remove(msg);
                            }
                        }
                    }
                }
                _ => unreachable!("only scheduled event kinds live in the queue"),
            }
            events.push(event);
        }

        // Phase 3: movement along cached shortest paths, conflict-checked
        // on the cells devices would finish the tick on.
        let goals: BTreeMap<DeviceId, Coord> = coordinator
            .subtasks()
            .filter(|s| s.status == SubtaskStatus::Active)
            .filter_map(|s| s.assignee.map(|d| (d, s.cell)))
            .collect();
        let mut planned: Vec<(usize, usize, Coord)> = Vec::new();
        for idx in 0..devices.len() {
            let rt = &mut devices[idx];
            if !rt.alive {
                continue;
            }
            let Some(&goal) = goals.get(&rt.device.id) else {
                rt.path.clear();
                rt.path_goal = None;
                continue;
            };
            if rt.device.position == goal {
                rt.path.clear();
                rt.path_goal = None;
                continue;
            }
            if rt.path_goal != Some(goal) || rt.path.is_empty() {
                match shortest_path(&world.map, rt.device.kind, rt.device.position, goal) {
                    Some(p) => {
                        rt.path = p;
                        rt.path_goal = Some(goal);
                    }
                    None => {
                        // Allocation never pairs a device with a goal it
                        // cannot reach, and the map is static; this only
                        // fires for hand-built coordinator states.
                        rt.path.clear();
                        rt.path_goal = None;
                        continue;
                    }
                }
            }
            let steps = rt.device.speed().min(rt.path.len());
            planned.push((idx, steps, rt.path[steps - 1]));
        }
        let moves: Vec<PlannedMove> = planned
            .iter()
            .map(|&(idx, _, to)| PlannedMove {
                device: devices[idx].device.id,
                kind: devices[idx].device.kind,
                to,
            })
            .collect();
        let conflicts = coordinator.detect_conflicts(&[], &moves);
        let resolution = {
            let alive_refs: Vec<&Device> =
                devices.iter().filter(|r| r.alive).map(|r| &r.device).collect();
            coordinator.resolve(&conflicts, &alive_refs, battery_reserve_j, world, now)
        };
        for (idx, steps, to) in planned {
            let rt = &mut devices[idx];
            if resolution.waits.contains(&rt.device.id) {
                continue; // wait one tick; the cached path stays valid
            }
            let from = rt.device.position;
            rt.path.drain(..steps);
            rt.device.position = to;
            events.push(Event::DeviceMove { tick: now, device: rt.device.id, from, to });
        }

        // Phase 4: devices at their Active subtask's cell observe the target
        // (once per (device, subtask), unless a deadline miss reset it).
        let active_by_device: BTreeMap<DeviceId, (SubtaskId, Coord, TargetId, Urgency)> =
            coordinator
                .subtasks()
                .filter(|s| s.status == SubtaskStatus::Active)
                .filter_map(|s| s.assignee.map(|d| (d, (s.id, s.cell, s.target, s.urgency))))
                .collect();
        for rt in devices.iter().filter(|r| r.alive) {
            let Some(&(sid, cell, target, urgency)) = active_by_device.get(&rt.device.id) else {
                continue;
            };
            if rt.device.position != cell {
                continue;
            }
            let key = (rt.device.id, sid);
            if observed.contains(&key) {
                continue;
            }
            if reobserve_at.get(&key).is_some_and(|&t| now < t) {
                continue;
            }
            reobserve_at.remove(&key);
            observed.insert(key);
            events.push(Event::ObservationMade {
                tick: now,
                device: rt.device.id,
                target,
                cell,
                subtask: Some(sid),
            });
            pending_obs.push((rt.device.id, target, urgency, sid));
        }

        // Phase 5: observations become report messages; on telemetry ticks
        // every device also contributes one deferred environment descriptor,
        // cycling through the knowledge base.
        let mut to_enqueue: Vec<(DeviceId, TargetId, Urgency, Option<SubtaskId>)> =
            pending_obs.drain(..).map(|(d, t, u, s)| (d, t, u, Some(s))).collect();
        if now > 0 && now % config.messages.telemetry_interval_ticks == 0 && !kb_targets.is_empty()
        {
            for rt in devices.iter().filter(|r| r.alive) {
                let target = kb_targets[telemetry_cursor % kb_targets.len()];
                telemetry_cursor += 1;
                to_enqueue.push((rt.device.id, target, Urgency::Deferred, None));
            }
        }
        for (device, target, urgency, gates) in to_enqueue {
            let reference = world.target(target).expect("report targets come from this world");
            let id = MsgId(next_msg);
            next_msg += 1;
            reports.insert(
                id,
                Report {
                    device,
                    urgency,
                    descriptor: SemanticDescriptor::reference(reference),
                    created_tick: now,
                    deadline_tick: now + urgency.deadline_window_ticks(),
                    payload_bytes_raw: config.messages.payload_bytes(urgency),
                    gates,
                    delivered: BTreeSet::new(),
                },
            );
            devices[device.0 as usize].queue.push(id);
            events.push(Event::MessageEnqueued {
                tick: now,
                msg: id,
                device,
                target,
                urgency,
                subtask: gates,
            });
        }

        // Phase 6: transmission decisions, one per idle device with traffic.
        let critical_queued = devices.iter().filter(|r| r.alive).any(|r| {
            r.queue.iter().any(|id| reports.get(id).is_some_and(|p| p.urgency == Urgency::Critical))
        });
        for idx in 0..devices.len() {
            if !devices[idx].alive {
                continue;
            }
            // Deadline sweep: expired reports are dropped; a gated report's
            // observation is re-armed after a short delay so the device
            // re-captures and re-sends.
            let expired: Vec<MsgId> = devices[idx]
                .queue
                .iter()
                .copied()
                .filter(|id| reports[id].deadline_tick <= now)
                .collect();
            for id in expired {
                devices[idx].queue.retain(|m| *m != id);
                let report = reports.remove(&id).expect("queued id has a report");
                if let Some(sub) = report.gates {
                    let key = (report.device, sub);
                    observed.remove(&key);
                    reobserve_at.insert(key, now + config.messages.reobserve_delay_ticks);
                }
            }
            if devices[idx].inflight.is_some() || devices[idx].queue.is_empty() {
                continue;
            }
            let head = *devices[idx]
                .queue
                .iter()
                .min_by_key(|id| {
                    let p = &reports[*id];
                    (std::cmp::Reverse(p.urgency.priority_rank()), p.deadline_tick, id.0)
                })
                .expect("queue checked non-empty");
            let state = CommState {
                urgency: reports[&head].urgency,
                snr_db: channel.snr_db,
                bandwidth_mhz: channel.bandwidth_mhz,
                utilization: busy_until.iter().filter(|&&t| t > now).count() as f64
                    / channel.num_subchannels as f64,
                queue_len: devices[idx].queue.len(),
                battery_frac: (devices[idx].device.battery_j / devices[idx].initial_battery_j)
                    .clamp(0.0, 1.0),
            };
            if policy.uses_defer_gate() {
                let preview = encode(
                    &reports[&head].descriptor,
                    reports[&head].urgency,
                    0,
                    reports[&head].meta(head),
                )?;
                if defer_gate(&state, &preview, critical_queued, now, &config.defer) {
                    continue;
                }
            }
            let load: Vec<f64> =
                busy_until.iter().map(|&t| if t > now { 1.0 } else { 0.0 }).collect();
            let action = policy.decide(&state, &load, &mut policy_rng);
            if action.channel >= busy_until.len() {
                return Err(EngineError::Channel(ChannelError::BadChannel {
                    requested: action.channel,
                    available: busy_until.len(),
                }));
            }
            if busy_until[action.channel] > now {
                // The chosen sub-channel is already booked: the attempt is
                // blocked this tick. The decision still happened, so the
                // trainer records a zero.
                policy.record_reward(0.0);
                continue;
            }
            let msg = encode(
                &reports[&head].descriptor,
                reports[&head].urgency,
                action.compression_level,
                reports[&head].meta(head),
            )?;
            let mut outcome = transmit(&msg, &action, &channel, &mut tx_rng)?;
            if config.episode.loss_free {
                outcome.delivered.iter_mut().for_each(|d| *d = true);
            }
            let r = reward(&outcome, &msg, &config.reward);
            policy.record_reward(r);
            busy_until[action.channel] = now + outcome.transmit_time_ticks;
            let rt = &mut devices[idx];
            rt.device.battery_j -= outcome.energy_j;
            rt.queue.retain(|m| *m != head);
            rt.inflight = Some(head);
            records.push(TransmissionRecord {
                tick: now,
                msg: head,
                device: rt.device.id,
                urgency: msg.urgency,
                channel: action.channel,
                power_dbm: POWER_LEVELS_DBM[action.power_level],
                compression: action.compression_level,
                coding: action.coding,
                transmit_ticks: outcome.transmit_time_ticks,
                bytes: msg.payload_bytes_compressed,
                energy_j: outcome.energy_j,
                fragments: outcome.delivered.len(),
                delivered_fragments: outcome.delivered_count(),
                reward: r,
            });
            events.push(Event::TransmissionStart {
                tick: now,
                msg: head,
                device: rt.device.id,
                channel: action.channel,
                power_level: action.power_level,
                compression: action.compression_level,
                coding: action.coding,
                transmit_ticks: outcome.transmit_time_ticks,
                bytes: msg.payload_bytes_compressed,
            });
            queue.push(Event::TransmissionEnd {
                tick: now + outcome.transmit_time_ticks,
                msg: head,
                device: rt.device.id,
                delivered: outcome.delivered.clone(),
                bytes: msg.payload_bytes_compressed,
                energy_j: outcome.energy_j,
                reward: r,
            });
            inflight_msgs.insert(head, msg);
        }

        // Phase 7: coordination — landed reports complete their subtasks,
        // then a fresh allocation/activation round.
        for (device, sub) in completions.drain(..) {
            let still_active = coordinator
                .subtask(sub)
                .is_some_and(|s| s.status == SubtaskStatus::Active && s.assignee == Some(device));
            if still_active {
                coordinator.complete(sub, now)?;
            }
        }
        {
            let alive_refs: Vec<&Device> =
                devices.iter().filter(|r| r.alive).map(|r| &r.device).collect();
            let assignment = coordinator.allocate(&alive_refs, battery_reserve_j, world, now);
            let proposals: Vec<(SubtaskId, DeviceId)> =
                assignment.pairs.iter().map(|(s, d)| (*s, *d)).collect();
            let conflicts = coordinator.detect_conflicts(&proposals, &[]);
            if !conflicts.is_empty() {
                coordinator.resolve(&conflicts, &alive_refs, battery_reserve_j, world, now);
            }
            for r in devices.iter().filter(|r| r.alive) {
                coordinator.activate_next(r.device.id, now);
            }
        }
        for tr in coordinator.drain_transitions() {
            let sub = coordinator.subtask(tr.subtask).expect("transition names a known subtask");
            if tr.from == SubtaskStatus::Active && tr.to == SubtaskStatus::Failed {
                // The work has to be redone (by whichever device gets it
                // next), so the observation flags are reset.
                observed.retain(|&(_, s)| s != tr.subtask);
                reobserve_at.retain(|&(_, s), _| s != tr.subtask);
            }
            events.push(Event::SubtaskStatusChange {
                tick: tr.tick,
                task: sub.task,
                subtask: tr.subtask,
                from: tr.from,
                to: tr.to,
                device: sub.assignee,
            });
        }

        snr.step(&mut snr_rng);
        channel.snr_db = snr.current_db();
    }
    policy.finish_episode();

    let total_tasks = trace_tasks.len();
    let completed_tasks =
        trace_tasks.iter().filter(|(id, _, _)| coordinator.task_done(*id)).count();
    let tcr_vacuous = total_tasks == 0;
    let tcr =
        if tcr_vacuous { 1.0 } else { completed_tasks as f64 / total_tasks as f64 };
    let transmitted_megabytes = records.iter().map(|r| r.bytes as f64).sum::<f64>() / 1e6;
    let total_energy_j = records.iter().map(|r| r.energy_j).sum();
    let mean_power_dbm = if records.is_empty() {
        0.0
    } else {
        stats::mean(&records.iter().map(|r| r.power_dbm).collect::<Vec<_>>())
    };
    let sc = consistency_score(&received, &kb).ok();

    let metrics = MetricsReport {
        total_tasks,
        completed_tasks,
        tcr,
        tcr_vacuous,
        transmitted_megabytes,
        te_raw: te_raw(completed_tasks, transmitted_megabytes),
        te_norm: None,
        total_energy_j,
        mean_power_dbm,
        sc,
        episode_ticks: ticks,
    };
    let trace = Trace {
        seed,
        scheme: policy.name().to_string(),
        episode_ticks: ticks,
        tasks: trace_tasks,
        events,
    };
    Ok(EpisodeResult { trace, metrics, received, transmissions: records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BandwidthSpec;
    use crate::draosc::{GreedyPolicy, StaticPolicy};
    use crate::engine::{compute_tcr, compute_te};
    use crate::scenario::{generate, ScenarioConfig};

    /// Small open world: one victim, a couple of landmarks, full team.
    fn small_world_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            width: 12,
            height: 12,
            victims: 1,
            obstacles: 2,
            collapsed: 0,
            supplies: 1,
            drop_zones: 1,
            kb_obstacle_targets: 1,
            ..ScenarioConfig::default()
        }
    }

    fn easy_config() -> SimConfig {
        let mut config = SimConfig::default();
        config.episode.ticks = 400;
        config.channel.bandwidth = BandwidthSpec::Constant(500.0);
        config.channel.base_snr_db = 30.0;
        config
    }

    #[test]
    fn loss_free_static_run_completes_the_rescue() {
        let world = generate(&small_world_config(11)).unwrap();
        assert_eq!(world.reachable_victims().count(), 1, "victim must be reachable");
        let mut config = easy_config();
        config.episode.loss_free = true;
        let result = run_episode(&world, &mut StaticPolicy, &config, 5).unwrap();

        assert_eq!(result.metrics.total_tasks, 1);
        assert_eq!(result.metrics.completed_tasks, 1, "trace:\n{}", result.trace.to_text());
        assert_eq!(result.metrics.tcr, 1.0);
        assert!(!result.metrics.tcr_vacuous);
        assert!(result.metrics.transmitted_megabytes > 0.0);
        assert!(result.metrics.sc.unwrap() > 0.0);

        // The three rescue steps each observe, report and complete.
        let obs = result
            .trace
            .events
            .iter()
            .filter(|e| matches!(e, Event::ObservationMade { .. }))
            .count();
        assert!(obs >= 3, "locate, annotate and deliver each observe (got {obs})");
    }

    #[test]
    fn trace_recomputation_matches_live_metrics() {
        let world = generate(&small_world_config(11)).unwrap();
        let mut config = easy_config();
        config.episode.loss_free = true;
        let result = run_episode(&world, &mut StaticPolicy, &config, 5).unwrap();

        let (completed, total, tcr) = compute_tcr(&result.trace);
        assert_eq!(completed, result.metrics.completed_tasks);
        assert_eq!(total, result.metrics.total_tasks);
        assert_eq!(tcr, result.metrics.tcr);
        let te = compute_te(&result.trace);
        assert!((te.transmitted_megabytes - result.metrics.transmitted_megabytes).abs() < 1e-12);
        assert!((te.te_raw - result.metrics.te_raw).abs() < 1e-12);
    }

    #[test]
    fn episodes_are_deterministic_and_trace_round_trips() {
        let world = generate(&small_world_config(3)).unwrap();
        let config = easy_config(); // real fragment loss
        let a = run_episode(&world, &mut GreedyPolicy, &config, 7).unwrap();
        let b = run_episode(&world, &mut GreedyPolicy, &config, 7).unwrap();
        assert_eq!(a.trace.to_text(), b.trace.to_text());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.transmissions, b.transmissions);

        let parsed = Trace::from_text(&a.trace.to_text()).unwrap();
        assert_eq!(parsed, a.trace);

        let c = run_episode(&world, &mut GreedyPolicy, &config, 8).unwrap();
        assert_ne!(a.trace.to_text(), c.trace.to_text(), "different seeds diverge");
    }

    #[test]
    fn trace_events_are_ordered_by_tick_then_priority() {
        let world = generate(&small_world_config(3)).unwrap();
        let mut config = easy_config();
        config.episode.failures = vec![(5, 0)];
        let result = run_episode(&world, &mut GreedyPolicy, &config, 9).unwrap();
        let keys: Vec<(Tick, u8)> =
            result.trace.events.iter().map(|e| (e.tick(), e.priority())).collect();
        assert!(!keys.is_empty());
        assert!(keys.windows(2).all(|w| w[0] <= w[1]), "events must be sorted: {keys:?}");
    }

    #[test]
    fn energy_and_bytes_are_conserved() {
        let world = generate(&small_world_config(3)).unwrap();
        let config = easy_config();
        let result = run_episode(&world, &mut GreedyPolicy, &config, 7).unwrap();

        // Energy: metric total equals the per-record sum.
        let record_energy: f64 = result.transmissions.iter().map(|r| r.energy_j).sum();
        assert!((record_energy - result.metrics.total_energy_j).abs() < 1e-9);

        // Bytes: every TransmissionEnd matches its TransmissionStart, and
        // at most one booking per device can still be on the air at the end.
        let started: Vec<(MsgId, u64)> = result
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                Event::TransmissionStart { msg, bytes, .. } => Some((*msg, *bytes)),
                _ => None,
            })
            .collect();
        let ended: BTreeMap<MsgId, u64> = result
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                Event::TransmissionEnd { msg, bytes, .. } => Some((*msg, *bytes)),
                _ => None,
            })
            .collect();
        assert!(!started.is_empty());
        let mut unfinished = 0;
        for (msg, bytes) in &started {
            match ended.get(msg) {
                Some(b) => assert_eq!(b, bytes, "{msg} changed size mid-air"),
                None => unfinished += 1,
            }
        }
        assert!(
            unfinished <= world.devices.len(),
            "at most one unfinished booking per device, got {unfinished}"
        );
        let record_bytes: u64 = result.transmissions.iter().map(|r| r.bytes).sum();
        assert_eq!(record_bytes, started.iter().map(|(_, b)| *b).sum::<u64>());
    }

    #[test]
    fn subchannel_bookings_never_overlap() {
        let world = generate(&small_world_config(3)).unwrap();
        let mut config = easy_config();
        config.channel.bandwidth = BandwidthSpec::Constant(50.0);
        config.channel.base_snr_db = 0.0; // slow links -> long bookings
        let result = run_episode(&world, &mut StaticPolicy, &config, 13).unwrap();

        let mut busy: BTreeMap<usize, Tick> = BTreeMap::new();
        let mut starts = 0;
        for e in &result.trace.events {
            if let Event::TransmissionStart { tick, channel, transmit_ticks, .. } = e {
                assert!(
                    busy.get(channel).is_none_or(|&free_at| *tick >= free_at),
                    "channel {channel} double-booked at tick {tick}"
                );
                busy.insert(*channel, tick + transmit_ticks);
                starts += 1;
            }
        }
        assert!(starts > 1);
        // The static policy always books sub-channel 0.
        assert!(busy.keys().all(|&c| c == 0));
    }

    #[test]
    fn no_tasks_means_vacuous_completion() {
        let world = generate(&small_world_config(2)).unwrap();
        let mut config = easy_config();
        config.episode.auto_commands = false;
        config.episode.ticks = 60;
        let result = run_episode(&world, &mut StaticPolicy, &config, 1).unwrap();
        assert_eq!(result.metrics.total_tasks, 0);
        assert_eq!(result.metrics.tcr, 1.0);
        assert!(result.metrics.tcr_vacuous);
        assert!(result
            .trace
            .events
            .iter()
            .all(|e| !matches!(e, Event::SubtaskStatusChange { .. })));
    }

    #[test]
    fn telemetry_follows_the_configured_cadence() {
        let world = generate(&small_world_config(2)).unwrap();
        let mut config = easy_config();
        config.episode.auto_commands = false;
        config.episode.ticks = 101;
        let result = run_episode(&world, &mut StaticPolicy, &config, 1).unwrap();

        let enqueued: Vec<(Tick, Urgency)> = result
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                Event::MessageEnqueued { tick, urgency, subtask, .. } => {
                    assert_eq!(*subtask, None, "telemetry is not gated");
                    Some((*tick, *urgency))
                }
                _ => None,
            })
            .collect();
        let device_count = world.devices.len();
        assert_eq!(enqueued.len(), 4 * device_count, "ticks 25, 50, 75, 100");
        for (tick, urgency) in enqueued {
            assert_eq!(tick % 25, 0);
            assert_ne!(tick, 0, "no telemetry burst at episode start");
            assert_eq!(urgency, Urgency::Deferred);
        }
    }

    #[test]
    fn device_failure_requeues_its_subtask() {
        // One drone only: the rescue's locate step must sit on d0. Killing
        // d0 forces Active -> Failed -> Pending along declared edges; with
        // no other drone, locate then stays Pending and the task never
        // finishes.
        let mut scenario = small_world_config(4);
        scenario.devices.drones = 1;
        scenario.devices.vehicles = 1;
        scenario.devices.robot_dogs = 1;
        let world = generate(&scenario).unwrap();
        let mut config = easy_config();
        config.episode.loss_free = true;
        config.episode.failures = vec![(2, 0)];
        let result = run_episode(&world, &mut StaticPolicy, &config, 5).unwrap();

        assert!(result
            .trace
            .events
            .iter()
            .any(|e| matches!(e, Event::DeviceFailure { tick: 2, .. })));
        let requeued = result.trace.events.iter().any(|e| {
            matches!(
                e,
                Event::SubtaskStatusChange {
                    tick: 2,
                    from: SubtaskStatus::Failed,
                    to: SubtaskStatus::Pending,
                    ..
                }
            )
        });
        assert!(requeued, "failure must requeue along declared edges:\n{}", result.trace.to_text());
        assert_eq!(result.metrics.completed_tasks, 0);
        // Dead devices stop doing anything.
        assert!(!result.trace.events.iter().any(|e| match e {
            Event::DeviceMove { tick, device, .. } => *tick > 2 && device.0 == 0,
            Event::TransmissionStart { tick, device, .. } => *tick > 2 && device.0 == 0,
            Event::ObservationMade { tick, device, .. } => *tick > 2 && device.0 == 0,
            _ => false,
        }));
    }

    #[test]
    fn missed_deadlines_trigger_reobservation() {
        // Slow channel + deep fade: the locate report's booking outlives its
        // 30-tick deadline and its fragments die, so the report expires and
        // the observation is retaken after the configured delay.
        let world = generate(&small_world_config(4)).unwrap();
        let mut config = easy_config();
        config.episode.ticks = 400;
        config.channel.bandwidth = BandwidthSpec::Constant(50.0);
        config.channel.base_snr_db = -10.0;
        config.channel.snr_step_db = 0.0;
        config.messages.critical_payload_bytes = 4 * 1024 * 1024;
        let result = run_episode(&world, &mut StaticPolicy, &config, 21).unwrap();

        let mut obs: BTreeMap<(DeviceId, SubtaskId), Vec<Tick>> = BTreeMap::new();
        for e in &result.trace.events {
            if let Event::ObservationMade { tick, device, subtask: Some(s), .. } = e {
                obs.entry((*device, *s)).or_default().push(*tick);
            }
        }
        let retaken = obs.values().find(|ticks| ticks.len() >= 2).unwrap_or_else(|| {
            panic!("some observation must be retaken:\n{}", result.trace.to_text())
        });
        for pair in retaken.windows(2) {
            assert!(
                pair[1] >= pair[0] + config.messages.reobserve_delay_ticks,
                "re-observation respects the delay: {retaken:?}"
            );
        }
    }

    #[test]
    fn bandwidth_changes_take_effect_mid_episode() {
        // Telemetry-only episode with a frozen channel: the static scheme
        // sends identical payloads at every burst, so cutting bandwidth
        // tenfold at tick 60 must stretch every later booking.
        let world = generate(&small_world_config(4)).unwrap();
        let mut config = easy_config();
        config.episode.auto_commands = false;
        config.episode.ticks = 101;
        config.episode.loss_free = true;
        config.channel.bandwidth = BandwidthSpec::Points(vec![(0, 500.0), (60, 50.0)]);
        config.channel.base_snr_db = 0.0;
        config.channel.snr_step_db = 0.0;
        let result = run_episode(&world, &mut StaticPolicy, &config, 3).unwrap();

        assert!(result
            .trace
            .events
            .iter()
            .any(|e| matches!(e, Event::BandwidthChange { tick: 60, mhz } if *mhz == 50.0)));
        let bookings: Vec<(Tick, Tick)> =
            result.transmissions.iter().map(|r| (r.tick, r.transmit_ticks)).collect();
        let before: Vec<Tick> =
            bookings.iter().filter(|(t, _)| *t < 60).map(|(_, d)| *d).collect();
        let after: Vec<Tick> = bookings.iter().filter(|(t, _)| *t >= 60).map(|(_, d)| *d).collect();
        assert!(!before.is_empty() && !after.is_empty(), "bursts on both sides: {bookings:?}");
        let fast = *before.iter().max().unwrap();
        let slow = *after.iter().min().unwrap();
        assert!(
            slow > fast,
            "a tenth of the band must slow the same payload: before={before:?} after={after:?}"
        );
    }

    #[test]
    fn policy_subchannel_mismatch_is_refused() {
        struct EightChannelPolicy;
        impl TransmitPolicy for EightChannelPolicy {
            fn decide(
                &mut self,
                _: &CommState,
                _: &[f64],
                _: &mut rand_chacha::ChaCha12Rng,
            ) -> crate::channel::TransmissionAction {
                unreachable!("the engine must refuse before deciding")
            }
            fn required_subchannels(&self) -> Option<usize> {
                Some(8)
            }
            fn name(&self) -> &'static str {
                "eight"
            }
        }
        let world = generate(&small_world_config(2)).unwrap();
        let err = run_episode(&world, &mut EightChannelPolicy, &easy_config(), 1).unwrap_err();
        assert!(matches!(err, EngineError::ConfigMismatch { policy: 8, channel: 4 }), "{err}");
    }

    #[test]
    fn oracle_run_reports_the_efficiency_bound() {
        let world = generate(&small_world_config(11)).unwrap();
        let config = easy_config();
        let oracle = run_with_oracle(&world, &config, 5).unwrap();
        assert_eq!(oracle.completed_tasks, 1, "loss-free oracle finishes the rescue");
        assert!(oracle.te_raw > 0.0);

        // A real lossy run can only be less byte-efficient.
        let result = run_episode(&world, &mut StaticPolicy, &config, 5).unwrap();
        let norm = super::super::te_norm(result.metrics.te_raw, oracle.te_raw);
        assert!((0.0..=1.0).contains(&norm));
    }
}
