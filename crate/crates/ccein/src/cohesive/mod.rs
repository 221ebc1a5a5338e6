//! CohesiveMind — the centralized task coordinator.
//!
//! High-level commands ("rescue the victim at (12, 7)") are parsed against
//! fixed task templates into capability-tagged subtasks with dependency
//! edges, allocated to devices by minimum-cost matching, checked for
//! conflicts every tick, and re-planned when devices fail or work times out.
//!
//! The coordinator owns the subtask state machine. The only legal moves are
//!
//! ```text
//! Pending -> Assigned -> Active -> Done
//!                              \-> Failed -> Pending   (on re-plan)
//! ```
//!
//! and every mutation funnels through one checked transition function, which
//! also records a `(tick, subtask, from, to)` log for the episode trace.
//! Reversions (a dead device, a demoted dependent) never invent shortcut
//! edges; they walk the declared ones (`Assigned -> Active -> Failed ->
//! Pending` for an assigned-but-unstarted subtask whose device died).
//!
//! Allocation cost for device `d` and subtask `s`:
//!
//! ```text
//! cost(d, s) = path_steps(d.position, s.cell) / d.speed
//!            + 10 * queued(d)                       # Assigned + Active load
//!            + infeasible if capability missing, battery below reserve,
//!              or the target is unreachable for that device kind
//! ```

pub mod matching;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::scenario::{
    path_distance, Capability, Coord, Device, DeviceId, DeviceKind, Target, TargetCategory,
    TargetId, World,
};
use crate::semantics::Urgency;
use crate::Tick;
use matching::optimal_assignment;

/// Load penalty per already-queued subtask on a device, in cost units.
pub const LOAD_PENALTY_PER_SUBTASK: f64 = 10.0;

/// A device below this fraction of its initial battery takes no new work.
pub const BATTERY_RESERVE_FRAC: f64 = 0.10;

/// Subtask deadline: this many urgency windows after creation.
pub const SUBTASK_DEADLINE_FACTOR: Tick = 10;

// ------------------------------------------------------------------- types

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubtaskId(pub u32);

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// The command vocabulary. Each kind has a fixed blueprint; see
/// [`template`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    AreaSearch,
    RouteClear,
    SupplyDelivery,
    CloseInspect,
    VictimRescue,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::AreaSearch => "AreaSearch",
            TaskKind::RouteClear => "RouteClear",
            TaskKind::SupplyDelivery => "SupplyDelivery",
            TaskKind::CloseInspect => "CloseInspect",
            TaskKind::VictimRescue => "VictimRescue",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "AreaSearch" => TaskKind::AreaSearch,
            "RouteClear" => TaskKind::RouteClear,
            "SupplyDelivery" => TaskKind::SupplyDelivery,
            "CloseInspect" => TaskKind::CloseInspect,
            "VictimRescue" => TaskKind::VictimRescue,
            _ => return None,
        })
    }
}

/// One step of a task blueprint.
#[derive(Debug, Clone, Copy)]
pub struct BlueprintStep {
    pub action: &'static str,
    pub capability: Capability,
    pub urgency: Urgency,
    /// Whether this step must wait for the previous step of the same task.
    pub depends_on_previous: bool,
}

/// The fixed blueprint of a task kind. `AreaSearch` instantiates its single
/// step once per victim; the others resolve one target from the command
/// cell.
pub fn template(kind: TaskKind) -> &'static [BlueprintStep] {
    use Capability::*;
    use Urgency::*;
    match kind {
        TaskKind::AreaSearch => &[BlueprintStep {
            action: "locate",
            capability: AerialSearch,
            urgency: Critical,
            depends_on_previous: false,
        }],
        TaskKind::RouteClear => &[BlueprintStep {
            action: "survey",
            capability: PathSearch,
            urgency: Normal,
            depends_on_previous: false,
        }],
        TaskKind::SupplyDelivery => &[BlueprintStep {
            action: "deliver",
            capability: SupplyDelivery,
            urgency: Normal,
            depends_on_previous: false,
        }],
        TaskKind::CloseInspect => &[BlueprintStep {
            action: "inspect",
            capability: CloseRangeSearch,
            urgency: Normal,
            depends_on_previous: false,
        }],
        TaskKind::VictimRescue => &[
            BlueprintStep {
                action: "locate",
                capability: AerialSearch,
                urgency: Critical,
                depends_on_previous: false,
            },
            BlueprintStep {
                action: "annotate",
                capability: Annotation,
                urgency: Normal,
                depends_on_previous: true,
            },
            BlueprintStep {
                action: "deliver",
                capability: SupplyDelivery,
                urgency: Normal,
                depends_on_previous: true,
            },
        ],
    }
}

/// A parsed command: what to do and (for single-target kinds) where.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub kind: TaskKind,
    pub cell: Option<Coord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubtaskStatus {
    Pending,
    Assigned,
    Active,
    Done,
    Failed,
}

impl SubtaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SubtaskStatus::Pending => "Pending",
            SubtaskStatus::Assigned => "Assigned",
            SubtaskStatus::Active => "Active",
            SubtaskStatus::Done => "Done",
            SubtaskStatus::Failed => "Failed",
        }
    }
}

/// The declared edges of the status machine — nothing else is ever taken.
pub fn is_legal_transition(from: SubtaskStatus, to: SubtaskStatus) -> bool {
    use SubtaskStatus::*;
    matches!(
        (from, to),
        (Pending, Assigned) | (Assigned, Active) | (Active, Done) | (Active, Failed)
            | (Failed, Pending)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtask {
    pub id: SubtaskId,
    pub task: TaskId,
    pub action: &'static str,
    pub capability: Capability,
    pub target: TargetId,
    pub cell: Coord,
    pub urgency: Urgency,
    pub status: SubtaskStatus,
    pub assignee: Option<DeviceId>,
    pub deadline_tick: Tick,
    pub depends_on: Vec<SubtaskId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub subtasks: Vec<SubtaskId>,
    /// Set when the target selector matched nothing.
    pub warning: Option<String>,
}

/// One allocation round's output: which Pending subtasks were handed to
/// which devices, and the matching's total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: BTreeMap<SubtaskId, DeviceId>,
    pub total_cost: f64,
}

/// A ground/air move the engine intends to make this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedMove {
    pub device: DeviceId,
    pub kind: DeviceKind,
    pub to: Coord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conflict {
    /// One subtask proposed to several devices.
    DuplicateAssignment { subtask: SubtaskId, devices: Vec<DeviceId> },
    /// Two or more ground devices would enter the same cell this tick.
    SpatialOverlap { cell: Coord, devices: Vec<DeviceId> },
    /// A subtask is Active while a dependency is not Done.
    DependencyViolation { subtask: SubtaskId, unmet: SubtaskId },
}

/// What [`CohesiveMind::resolve`] decided.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resolution {
    /// Devices that must skip movement this tick.
    pub waits: BTreeSet<DeviceId>,
    /// Subtasks demoted back to Pending (dependency violations).
    pub demoted: Vec<SubtaskId>,
    /// Duplicate assignments settled: (subtask, winner).
    pub kept: Vec<(SubtaskId, DeviceId)>,
}

impl Resolution {
    pub fn change_count(&self) -> usize {
        self.waits.len() + self.demoted.len() + self.kept.len()
    }
}

/// One recorded status change, for the episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRecord {
    pub tick: Tick,
    pub subtask: SubtaskId,
    pub from: SubtaskStatus,
    pub to: SubtaskStatus,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CohesiveError {
    #[error("command {0} requires a target cell")]
    MissingCell(&'static str),
    #[error("no such subtask: {0}")]
    UnknownSubtask(SubtaskId),
    #[error("illegal status transition for {subtask}: {from:?} -> {to:?}")]
    IllegalTransition { subtask: SubtaskId, from: SubtaskStatus, to: SubtaskStatus },
}

// ------------------------------------------------------------- coordinator

/// Header of the per-tick coordination log CSV.
pub const LOG_HEADER: &str = "tick,subtask,device,status,conflicts_resolved";

/// Central coordination state: single writer (the engine tick loop).
#[derive(Debug, Clone, Default)]
pub struct CohesiveMind {
    tasks: BTreeMap<TaskId, Task>,
    subtasks: BTreeMap<SubtaskId, Subtask>,
    next_task: u32,
    next_subtask: u32,
    transitions: Vec<TransitionRecord>,
}

impl CohesiveMind {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn subtask(&self, id: SubtaskId) -> Option<&Subtask> {
        self.subtasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn subtasks(&self) -> impl Iterator<Item = &Subtask> {
        self.subtasks.values()
    }

    /// Drains the transition log accumulated since the last call.
    pub fn drain_transitions(&mut self) -> Vec<TransitionRecord> {
        std::mem::take(&mut self.transitions)
    }

    /// The single checked mutation point of the status machine.
    pub fn transition(
        &mut self,
        id: SubtaskId,
        to: SubtaskStatus,
        tick: Tick,
    ) -> Result<(), CohesiveError> {
        let sub = self.subtasks.get_mut(&id).ok_or(CohesiveError::UnknownSubtask(id))?;
        let from = sub.status;
        if !is_legal_transition(from, to) {
            return Err(CohesiveError::IllegalTransition { subtask: id, from, to });
        }
        sub.status = to;
        if to == SubtaskStatus::Pending || to == SubtaskStatus::Failed {
            sub.assignee = None;
        }
        self.transitions.push(TransitionRecord { tick, subtask: id, from, to });
        Ok(())
    }

    /// Routes a non-terminal subtask to Failed along declared edges only
    /// (`Assigned` passes through `Active`). Pending and terminal subtasks
    /// are left alone.
    pub fn force_fail(&mut self, id: SubtaskId, tick: Tick) -> Result<(), CohesiveError> {
        let status =
            self.subtasks.get(&id).ok_or(CohesiveError::UnknownSubtask(id))?.status;
        match status {
            SubtaskStatus::Assigned => {
                self.transition(id, SubtaskStatus::Active, tick)?;
                self.transition(id, SubtaskStatus::Failed, tick)
            }
            SubtaskStatus::Active => self.transition(id, SubtaskStatus::Failed, tick),
            SubtaskStatus::Pending | SubtaskStatus::Done | SubtaskStatus::Failed => Ok(()),
        }
    }

    // -------------------------------------------------------------- parse

    /// Instantiates a command against the world. Selector misses produce an
    /// empty task with a warning rather than an error — the command was
    /// valid, the world just has nothing for it.
    pub fn parse(
        &mut self,
        command: &Command,
        world: &World,
        now: Tick,
    ) -> Result<TaskId, CohesiveError> {
        let steps = template(command.kind);

        // Resolve the target selector.
        let targets: Vec<&Target> = match command.kind {
            TaskKind::AreaSearch => {
                world.targets.iter().filter(|t| t.category == TargetCategory::Victim).collect()
            }
            kind => {
                let cell = command.cell.ok_or(CohesiveError::MissingCell(kind.as_str()))?;
                let wanted: Option<TargetCategory> = match kind {
                    TaskKind::RouteClear => Some(TargetCategory::Obstacle),
                    TaskKind::SupplyDelivery | TaskKind::VictimRescue => {
                        Some(TargetCategory::Victim)
                    }
                    TaskKind::CloseInspect => None,
                    TaskKind::AreaSearch => unreachable!(),
                };
                world
                    .targets
                    .iter()
                    .filter(|t| t.cell == cell && wanted.is_none_or(|w| t.category == w))
                    .collect()
            }
        };

        let task_id = TaskId(self.next_task);
        self.next_task += 1;

        let mut subtask_ids = Vec::new();
        for target in &targets {
            let mut previous: Option<SubtaskId> = None;
            for step in steps {
                let id = SubtaskId(self.next_subtask);
                self.next_subtask += 1;
                let depends_on = if step.depends_on_previous {
                    previous.into_iter().collect()
                } else {
                    Vec::new()
                };
                self.subtasks.insert(
                    id,
                    Subtask {
                        id,
                        task: task_id,
                        action: step.action,
                        capability: step.capability,
                        target: target.id,
                        cell: target.cell,
                        urgency: step.urgency,
                        status: SubtaskStatus::Pending,
                        assignee: None,
                        deadline_tick: now
                            + SUBTASK_DEADLINE_FACTOR * step.urgency.deadline_window_ticks(),
                        depends_on,
                    },
                );
                subtask_ids.push(id);
                previous = Some(id);
            }
        }

        let warning = if targets.is_empty() {
            Some(match command.cell {
                Some(c) => format!("{} matched no target at ({}, {})", command.kind.as_str(), c.x, c.y),
                None => format!("{} matched no target", command.kind.as_str()),
            })
        } else {
            None
        };
        self.tasks.insert(
            task_id,
            Task { id: task_id, kind: command.kind, subtasks: subtask_ids, warning },
        );
        Ok(task_id)
    }

    // ----------------------------------------------------------- allocate

    /// Subtasks eligible for assignment: Pending with every dependency Done.
    pub fn ready_pending(&self) -> Vec<SubtaskId> {
        self.subtasks
            .values()
            .filter(|s| {
                s.status == SubtaskStatus::Pending
                    && s.depends_on
                        .iter()
                        .all(|d| self.subtasks[d].status == SubtaskStatus::Done)
            })
            .map(|s| s.id)
            .collect()
    }

    /// Number of Assigned/Active subtasks currently on a device.
    pub fn queued_on(&self, device: DeviceId) -> usize {
        self.subtasks
            .values()
            .filter(|s| {
                s.assignee == Some(device)
                    && matches!(s.status, SubtaskStatus::Assigned | SubtaskStatus::Active)
            })
            .count()
    }

    /// Allocation cost of giving `sub` to `device`, or `INFINITY` when the
    /// pairing is infeasible.
    pub fn assignment_cost(
        &self,
        device: &Device,
        battery_reserve_j: f64,
        sub: &Subtask,
        world: &World,
    ) -> f64 {
        if !device.capabilities.contains(&sub.capability) || device.battery_j < battery_reserve_j {
            return f64::INFINITY;
        }
        match path_distance(&world.map, device.kind, device.position, sub.cell) {
            Some(steps) => {
                steps as f64 / device.speed() as f64
                    + LOAD_PENALTY_PER_SUBTASK * self.queued_on(device.id) as f64
            }
            None => f64::INFINITY,
        }
    }

    /// One matching round over the ready Pending subtasks and the given
    /// devices. Winners move Pending -> Assigned (at most one new subtask
    /// per device per round); everything unassignable stays Pending.
    pub fn allocate(
        &mut self,
        devices: &[&Device],
        battery_reserve_j: f64,
        world: &World,
        tick: Tick,
    ) -> Assignment {
        let mut ready = self.ready_pending();
        ready.sort(); // rows in subtask-id order: ties resolve toward low ids
        let mut device_ids: Vec<DeviceId> = devices.iter().map(|d| d.id).collect();
        debug_assert!(device_ids.windows(2).all(|w| w[0] < w[1] || w[0] == w[1]));
        device_ids.sort();
        let by_id: BTreeMap<DeviceId, &Device> = devices.iter().map(|d| (d.id, *d)).collect();

        let cost: Vec<Vec<f64>> = ready
            .iter()
            .map(|sid| {
                let sub = &self.subtasks[sid];
                device_ids
                    .iter()
                    .map(|did| self.assignment_cost(by_id[did], battery_reserve_j, sub, world))
                    .collect()
            })
            .collect();

        let matched = optimal_assignment(&cost);
        let mut pairs = BTreeMap::new();
        for (row, col) in matched.pairs.iter().enumerate() {
            if let Some(col) = col {
                let sid = ready[row];
                let did = device_ids[*col];
                self.subtasks.get_mut(&sid).expect("known id").assignee = Some(did);
                self.transition(sid, SubtaskStatus::Assigned, tick)
                    .expect("Pending -> Assigned is declared");
                pairs.insert(sid, did);
            }
        }
        Assignment { pairs, total_cost: matched.total }
    }

    /// Promotes the device's next runnable Assigned subtask to Active, if it
    /// has no Active one already (max one concurrent Active per device).
    /// Picks the lowest subtask id whose dependencies are Done.
    pub fn activate_next(&mut self, device: DeviceId, tick: Tick) -> Option<SubtaskId> {
        let has_active = self
            .subtasks
            .values()
            .any(|s| s.assignee == Some(device) && s.status == SubtaskStatus::Active);
        if has_active {
            return None;
        }
        let next = self
            .subtasks
            .values()
            .filter(|s| {
                s.assignee == Some(device)
                    && s.status == SubtaskStatus::Assigned
                    && s.depends_on
                        .iter()
                        .all(|d| self.subtasks[d].status == SubtaskStatus::Done)
            })
            .map(|s| s.id)
            .min()?;
        self.transition(next, SubtaskStatus::Active, tick)
            .expect("Assigned -> Active is declared");
        Some(next)
    }

    /// Marks an Active subtask finished. Done is terminal and immutable.
    pub fn complete(&mut self, id: SubtaskId, tick: Tick) -> Result<(), CohesiveError> {
        self.transition(id, SubtaskStatus::Done, tick)
    }

    // ---------------------------------------------------------- conflicts

    /// Scans proposed assignments and this tick's planned moves.
    ///
    /// Conflicts come in three shapes: one subtask proposed to two devices,
    /// two *ground* devices stepping into the same cell on the same tick
    /// (drones fly over), and a subtask that is Active although one of its
    /// dependencies is not Done.
    pub fn detect_conflicts(
        &self,
        proposals: &[(SubtaskId, DeviceId)],
        moves: &[PlannedMove],
    ) -> Vec<Conflict> {
        let mut conflicts = Vec::new();

        let mut per_subtask: BTreeMap<SubtaskId, Vec<DeviceId>> = BTreeMap::new();
        for (sid, did) in proposals {
            per_subtask.entry(*sid).or_default().push(*did);
        }
        for (sid, mut devices) in per_subtask {
            if devices.len() > 1 {
                devices.sort();
                devices.dedup();
                if devices.len() > 1 {
                    conflicts.push(Conflict::DuplicateAssignment { subtask: sid, devices });
                }
            }
        }

        let mut per_cell: BTreeMap<Coord, Vec<DeviceId>> = BTreeMap::new();
        for mv in moves {
            if mv.kind != DeviceKind::Drone {
                per_cell.entry(mv.to).or_default().push(mv.device);
            }
        }
        for (cell, mut devices) in per_cell {
            if devices.len() > 1 {
                devices.sort();
                conflicts.push(Conflict::SpatialOverlap { cell, devices });
            }
        }

        for sub in self.subtasks.values() {
            if sub.status == SubtaskStatus::Active {
                for dep in &sub.depends_on {
                    if self.subtasks[dep].status != SubtaskStatus::Done {
                        conflicts
                            .push(Conflict::DependencyViolation { subtask: sub.id, unmet: *dep });
                    }
                }
            }
        }

        conflicts
    }

    /// Applies the resolution rules:
    ///
    /// - duplicate: the cheaper assignee keeps the subtask (tie: lower
    ///   device id); the coordinator's assignee field is fixed up to match;
    /// - spatial: the device whose current subtask has the highest urgency
    ///   proceeds (tie: lowest device id); the rest wait one tick;
    /// - dependency violation: the early child is demoted to Pending (via
    ///   the declared Failed edge) for re-allocation after the dependency
    ///   completes.
    ///
    /// Running resolve on already-resolved state changes nothing.
    pub fn resolve(
        &mut self,
        conflicts: &[Conflict],
        devices: &[&Device],
        battery_reserve_j: f64,
        world: &World,
        tick: Tick,
    ) -> Resolution {
        let by_id: BTreeMap<DeviceId, &Device> = devices.iter().map(|d| (d.id, *d)).collect();
        let mut resolution = Resolution::default();

        for conflict in conflicts {
            match conflict {
                Conflict::DuplicateAssignment { subtask, devices: contenders } => {
                    let sub = self.subtasks[subtask].clone();
                    let winner = contenders
                        .iter()
                        .copied()
                        .min_by(|a, b| {
                            let ca = by_id.get(a).map_or(f64::INFINITY, |d| {
                                self.assignment_cost(d, battery_reserve_j, &sub, world)
                            });
                            let cb = by_id.get(b).map_or(f64::INFINITY, |d| {
                                self.assignment_cost(d, battery_reserve_j, &sub, world)
                            });
                            ca.partial_cmp(&cb).unwrap().then(a.cmp(b))
                        })
                        .expect("duplicate conflict lists contenders");
                    if self.subtasks[subtask].assignee != Some(winner) {
                        self.subtasks.get_mut(subtask).expect("known id").assignee = Some(winner);
                    }
                    resolution.kept.push((*subtask, winner));
                }
                Conflict::SpatialOverlap { cell: _, devices: contenders } => {
                    let proceeds = contenders
                        .iter()
                        .copied()
                        .max_by(|a, b| {
                            self.device_urgency_rank(*a)
                                .cmp(&self.device_urgency_rank(*b))
                                .then(b.cmp(a)) // lower id wins ties
                        })
                        .expect("spatial conflict lists contenders");
                    for d in contenders {
                        if *d != proceeds {
                            resolution.waits.insert(*d);
                        }
                    }
                }
                Conflict::DependencyViolation { subtask, unmet: _ } => {
                    if self.subtasks[subtask].status == SubtaskStatus::Active {
                        self.transition(*subtask, SubtaskStatus::Failed, tick)
                            .expect("Active -> Failed is declared");
                        self.transition(*subtask, SubtaskStatus::Pending, tick)
                            .expect("Failed -> Pending is declared");
                        resolution.demoted.push(*subtask);
                    }
                }
            }
        }

        resolution
    }

    fn device_urgency_rank(&self, device: DeviceId) -> u8 {
        self.subtasks
            .values()
            .filter(|s| s.assignee == Some(device) && s.status == SubtaskStatus::Active)
            .map(|s| s.urgency.priority_rank())
            .max()
            .unwrap_or(0)
    }

    // -------------------------------------------------------------- replan

    /// A device dropped out: its Assigned/Active subtasks are failed (along
    /// declared edges) and immediately requeued as Pending. Done work stays
    /// done. Returns the requeued subtask ids.
    pub fn handle_device_failure(&mut self, device: DeviceId, tick: Tick) -> Vec<SubtaskId> {
        let affected: Vec<SubtaskId> = self
            .subtasks
            .values()
            .filter(|s| {
                s.assignee == Some(device)
                    && matches!(s.status, SubtaskStatus::Assigned | SubtaskStatus::Active)
            })
            .map(|s| s.id)
            .collect();
        for id in &affected {
            self.force_fail(*id, tick).expect("assigned/active subtasks can fail");
            self.transition(*id, SubtaskStatus::Pending, tick)
                .expect("Failed -> Pending is declared");
        }
        affected
    }

    /// Requeues every Failed subtask (deadline expiries the engine marked)
    /// as Pending so the next [`CohesiveMind::allocate`] sees them.
    pub fn replan(&mut self, tick: Tick) -> Vec<SubtaskId> {
        let failed: Vec<SubtaskId> = self
            .subtasks
            .values()
            .filter(|s| s.status == SubtaskStatus::Failed)
            .map(|s| s.id)
            .collect();
        for id in &failed {
            self.transition(*id, SubtaskStatus::Pending, tick)
                .expect("Failed -> Pending is declared");
        }
        failed
    }

    // ----------------------------------------------------------- reporting

    /// Per-tick coordination log rows (see [`LOG_HEADER`]). One row per
    /// live subtask; `conflicts_resolved` repeats the tick's total.
    pub fn log_rows(&self, tick: Tick, conflicts_resolved: usize) -> Vec<String> {
        self.subtasks
            .values()
            .map(|s| {
                format!(
                    "{},{},{},{},{}",
                    tick,
                    s.id,
                    s.assignee.map_or_else(|| "-".to_string(), |d| d.to_string()),
                    s.status.as_str(),
                    conflicts_resolved
                )
            })
            .collect()
    }

    /// True once every subtask of the task is Done. Empty (warned) tasks
    /// never complete.
    pub fn task_done(&self, id: TaskId) -> bool {
        self.tasks.get(&id).is_some_and(|t| {
            !t.subtasks.is_empty()
                && t.subtasks.iter().all(|s| self.subtasks[s].status == SubtaskStatus::Done)
        })
    }
}

// -------------------------------------------------------------------- tests
