//! Post-disaster scenario model: grid world, heterogeneous devices, targets.
//!
//! The world is a rectangular grid of [`CellKind`] cells populated by three
//! kinds of devices (aerial drones, ground vehicles, robot dogs) and a set of
//! ground-truth *targets* (victims, notable obstacles, supply depots) that the
//! network is trying to discover and describe. Generation is fully
//! deterministic: the same [`ScenarioConfig`] always produces the same world,
//! byte for byte under [`World::to_text`].
//!
//! Besides generation the module provides the two geometric services the rest
//! of the simulator builds on:
//!
//! * [`render_patch`] — the egocentric grayscale observation a device takes of
//!   its surroundings, later consumed by the decision-explanation classifier;
//! * [`shortest_path`] — deterministic 4-connected BFS paths honouring each
//!   device kind's passability rules.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::Deserialize;

use crate::rng;

// ---------------------------------------------------------------- geometry

/// Grid coordinate, `x` growing rightwards and `y` growing downwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }

    /// 4-connected neighbourhood distance ignoring obstacles.
    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Neighbour offsets in the fixed processing order (up, left, right, down).
/// The order is part of the determinism contract: BFS visits neighbours in
/// this sequence, so tied shortest paths always resolve the same way.
const NEIGHBOURS_4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

// ------------------------------------------------------------------- cells

/// What occupies a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Free,
    Obstacle,
    CollapsedBuilding,
    Victim,
    SupplyDepot,
    DropZone,
}

impl CellKind {
    /// Grayscale encoding used by [`render_patch`]. Drop zones read as clear
    /// ground; they matter for staging, not for perception.
    pub fn render_value(self) -> f64 {
        match self {
            CellKind::Free | CellKind::DropZone => 0.0,
            CellKind::Obstacle => 0.5,
            CellKind::CollapsedBuilding => 0.6,
            CellKind::SupplyDepot => 0.8,
            CellKind::Victim => 1.0,
        }
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Free => '.',
            CellKind::Obstacle => '#',
            CellKind::CollapsedBuilding => 'C',
            CellKind::Victim => 'V',
            CellKind::SupplyDepot => 'S',
            CellKind::DropZone => 'D',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => CellKind::Free,
            '#' => CellKind::Obstacle,
            'C' => CellKind::CollapsedBuilding,
            'V' => CellKind::Victim,
            'S' => CellKind::SupplyDepot,
            'D' => CellKind::DropZone,
            _ => return None,
        })
    }
}

/// Rectangular grid of cells, row-major storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
}

impl WorldMap {
    pub fn filled(width: usize, height: usize, kind: CellKind) -> Self {
        WorldMap { width, height, cells: vec![kind; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn get(&self, c: Coord) -> CellKind {
        self.cells[c.y * self.width + c.x]
    }

    pub fn set(&mut self, c: Coord, kind: CellKind) {
        self.cells[c.y * self.width + c.x] = kind;
    }

    /// Whether `kind` may occupy cell `c`. Drones fly over everything; robot
    /// dogs can enter collapsed buildings; vehicles keep to open ground.
    pub fn passable(&self, kind: DeviceKind, c: Coord) -> bool {
        match self.get(c) {
            CellKind::Obstacle => kind == DeviceKind::Drone,
            CellKind::CollapsedBuilding => kind != DeviceKind::Vehicle,
            _ => true,
        }
    }

    fn neighbours(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        NEIGHBOURS_4.iter().filter_map(move |&(dx, dy)| {
            let x = c.x as i64 + dx;
            let y = c.y as i64 + dy;
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                Some(Coord::new(x as usize, y as usize))
            } else {
                None
            }
        })
    }

    fn is_border(&self, c: Coord) -> bool {
        c.x == 0 || c.y == 0 || c.x == self.width - 1 || c.y == self.height - 1
    }
}

// ----------------------------------------------------------------- devices

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceKind {
    Drone,
    Vehicle,
    RobotDog,
}

impl DeviceKind {
    fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Drone => "Drone",
            DeviceKind::Vehicle => "Vehicle",
            DeviceKind::RobotDog => "RobotDog",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "Drone" => DeviceKind::Drone,
            "Vehicle" => DeviceKind::Vehicle,
            "RobotDog" => DeviceKind::RobotDog,
            _ => return None,
        })
    }

    /// Movement speed in cells per tick.
    pub fn speed(self) -> usize {
        match self {
            DeviceKind::Drone => 2,
            DeviceKind::Vehicle | DeviceKind::RobotDog => 1,
        }
    }

    /// The capabilities every device of this kind carries.
    pub fn capabilities(self) -> &'static [Capability] {
        match self {
            DeviceKind::Drone => &[Capability::AerialSearch],
            DeviceKind::Vehicle => &[Capability::PathSearch, Capability::SupplyDelivery],
            DeviceKind::RobotDog => &[Capability::CloseRangeSearch, Capability::Annotation],
        }
    }
}

/// What a device can be asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    AerialSearch,
    PathSearch,
    SupplyDelivery,
    CloseRangeSearch,
    Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: DeviceId,
    pub kind: DeviceKind,
    pub position: Coord,
    pub battery_j: f64,
    pub capabilities: BTreeSet<Capability>,
}

impl Device {
    pub fn new(id: DeviceId, kind: DeviceKind, position: Coord, battery_j: f64) -> Self {
        Device {
            id,
            kind,
            position,
            battery_j,
            capabilities: kind.capabilities().iter().copied().collect(),
        }
    }

    pub fn speed(&self) -> usize {
        self.kind.speed()
    }
}

// ----------------------------------------------------------------- targets

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TargetId(pub u32);

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Coarse class of a ground-truth target; also the label set of the
/// decision-explanation classifier (plus its implicit `Clear` class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetCategory {
    Victim,
    Obstacle,
    Supply,
}

impl TargetCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetCategory::Victim => "Victim",
            TargetCategory::Obstacle => "Obstacle",
            TargetCategory::Supply => "Supply",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "Victim" => TargetCategory::Victim,
            "Obstacle" => TargetCategory::Obstacle,
            "Supply" => TargetCategory::Supply,
            _ => return None,
        })
    }
}

/// Ground truth about one target. These are the reference descriptors the
/// consistency score is measured against: severity 0..=3, accessibility
/// 0..=2, confidence 0..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub id: TargetId,
    pub category: TargetCategory,
    pub cell: Coord,
    pub severity: u8,
    pub accessibility: u8,
    pub confidence: u8,
}

// ------------------------------------------------------------------ config

fn default_width() -> usize {
    32
}
fn default_height() -> usize {
    32
}
fn default_victims() -> usize {
    10
}
fn default_obstacles() -> usize {
    40
}
fn default_collapsed() -> usize {
    20
}
fn default_supplies() -> usize {
    3
}
fn default_drop_zones() -> usize {
    1
}
fn default_kb_obstacle_targets() -> usize {
    5
}
fn default_drones() -> usize {
    2
}
fn default_vehicles() -> usize {
    2
}
fn default_robot_dogs() -> usize {
    2
}
fn default_battery_j() -> f64 {
    20_000.0
}

/// Device-count section of the scenario configuration.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DeviceCounts {
    #[serde(default = "default_drones")]
    pub drones: usize,
    #[serde(default = "default_vehicles")]
    pub vehicles: usize,
    #[serde(default = "default_robot_dogs")]
    pub robot_dogs: usize,
}

impl Default for DeviceCounts {
    fn default() -> Self {
        DeviceCounts {
            drones: default_drones(),
            vehicles: default_vehicles(),
            robot_dogs: default_robot_dogs(),
        }
    }
}

impl DeviceCounts {
    pub fn total(&self) -> usize {
        self.drones + self.vehicles + self.robot_dogs
    }
}

/// Everything [`generate`] needs. Defaults describe the standard evaluation
/// scenario: a 32x32 district with ten victims and a six-device team.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_victims")]
    pub victims: usize,
    #[serde(default = "default_obstacles")]
    pub obstacles: usize,
    #[serde(default = "default_collapsed")]
    pub collapsed: usize,
    #[serde(default = "default_supplies")]
    pub supplies: usize,
    #[serde(default = "default_drop_zones")]
    pub drop_zones: usize,
    /// How many obstacle cells are promoted to knowledge-base targets.
    #[serde(default = "default_kb_obstacle_targets")]
    pub kb_obstacle_targets: usize,
    #[serde(default = "default_battery_j")]
    pub battery_j: f64,
    #[serde(default)]
    pub devices: DeviceCounts,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            width: default_width(),
            height: default_height(),
            victims: default_victims(),
            obstacles: default_obstacles(),
            collapsed: default_collapsed(),
            supplies: default_supplies(),
            drop_zones: default_drop_zones(),
            kb_obstacle_targets: default_kb_obstacle_targets(),
            battery_j: default_battery_j(),
            devices: DeviceCounts::default(),
        }
    }
}

// ------------------------------------------------------------------ errors

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    /// A config field asks for more than the grid can hold. Carries the
    /// offending field name so config errors are actionable.
    #[error("infeasible scenario config: `{field}` = {requested} cannot be placed ({reason})")]
    Infeasible { field: &'static str, requested: usize, reason: String },
    #[error("scenario config: `{field}` = {value} is out of range ({reason})")]
    OutOfRange { field: &'static str, value: usize, reason: String },
    #[error("world format: {0}")]
    Format(String),
}

// -------------------------------------------------------------------- world

/// A fully generated scenario: the map, the team, and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub map: WorldMap,
    pub devices: Vec<Device>,
    pub targets: Vec<Target>,
    /// Victim targets no ground vehicle can reach from the map border.
    /// Rescue tasks are not issued for these, keeping completion-rate
    /// denominators well defined.
    pub unreachable: BTreeSet<TargetId>,
}

impl World {
    pub fn target(&self, id: TargetId) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Victim targets that rescue tasks are issued for.
    pub fn reachable_victims(&self) -> impl Iterator<Item = &Target> {
        self.targets
            .iter()
            .filter(|t| t.category == TargetCategory::Victim && !self.unreachable.contains(&t.id))
    }
}

/// Generates a world from the config. Deterministic: the same config yields
/// a byte-identical [`World::to_text`] serialization on every run.
pub fn generate(config: &ScenarioConfig) -> Result<World, ScenarioError> {
    if config.width < 8 {
        return Err(ScenarioError::OutOfRange {
            field: "scenario.width",
            value: config.width,
            reason: "grid must be at least 8x8".into(),
        });
    }
    if config.height < 8 {
        return Err(ScenarioError::OutOfRange {
            field: "scenario.height",
            value: config.height,
            reason: "grid must be at least 8x8".into(),
        });
    }
    if config.kb_obstacle_targets > config.obstacles {
        return Err(ScenarioError::OutOfRange {
            field: "scenario.kb_obstacle_targets",
            value: config.kb_obstacle_targets,
            reason: format!("only {} obstacle cells are placed", config.obstacles),
        });
    }

    let mut rng = rng::stream(config.seed, "scenario");
    let mut map = WorldMap::filled(config.width, config.height, CellKind::Free);

    // Row-major pool of still-free cells; placement swaps out sampled entries
    // so each draw is O(1) and the sequence depends only on the RNG stream.
    let mut free: Vec<Coord> = (0..config.height)
        .flat_map(|y| (0..config.width).map(move |x| Coord::new(x, y)))
        .collect();

    let mut place = |free: &mut Vec<Coord>,
                     rng: &mut rand_chacha::ChaCha12Rng,
                     count: usize,
                     kind: CellKind,
                     field: &'static str|
     -> Result<Vec<Coord>, ScenarioError> {
        let mut placed = Vec::with_capacity(count);
        for _ in 0..count {
            if free.is_empty() {
                return Err(ScenarioError::Infeasible {
                    field,
                    requested: count,
                    reason: "no free cells remain".into(),
                });
            }
            let idx = rng.random_range(0..free.len());
            let cell = free.swap_remove(idx);
            map.set(cell, kind);
            placed.push(cell);
        }
        Ok(placed)
    };

    let drop_cells =
        place(&mut free, &mut rng, config.drop_zones, CellKind::DropZone, "scenario.drop_zones")?;
    let obstacle_cells =
        place(&mut free, &mut rng, config.obstacles, CellKind::Obstacle, "scenario.obstacles")?;
    place(&mut free, &mut rng, config.collapsed, CellKind::CollapsedBuilding, "scenario.collapsed")?;
    let supply_cells =
        place(&mut free, &mut rng, config.supplies, CellKind::SupplyDepot, "scenario.supplies")?;
    let victim_cells =
        place(&mut free, &mut rng, config.victims, CellKind::Victim, "scenario.victims")?;

    // Targets: victims first, then the sampled obstacle landmarks, then all
    // supply depots. Attribute values are part of the seeded ground truth.
    let mut targets = Vec::new();
    let mut next_id = 0u32;
    let mut push_target = |category: TargetCategory, cell: Coord, rng: &mut rand_chacha::ChaCha12Rng| {
        targets.push(Target {
            id: TargetId(next_id),
            category,
            cell,
            severity: rng.random_range(0..=3),
            accessibility: rng.random_range(0..=2),
            confidence: rng.random_range(0..=10),
        });
        next_id += 1;
    };
    for &cell in &victim_cells {
        push_target(TargetCategory::Victim, cell, &mut rng);
    }
    // Sample obstacle landmarks without replacement, preserving placement order.
    let mut obstacle_pool = obstacle_cells.clone();
    for _ in 0..config.kb_obstacle_targets {
        let idx = rng.random_range(0..obstacle_pool.len());
        let cell = obstacle_pool.swap_remove(idx);
        push_target(TargetCategory::Obstacle, cell, &mut rng);
    }
    for &cell in &supply_cells {
        push_target(TargetCategory::Supply, cell, &mut rng);
    }

    // Devices stage around the first drop zone: breadth-first ring scan,
    // first passable free cells win. Falls back to the map centre when no
    // drop zone is configured.
    let staging = drop_cells.first().copied().unwrap_or(Coord::new(config.width / 2, config.height / 2));
    let device_kinds: Vec<DeviceKind> = std::iter::empty()
        .chain(std::iter::repeat(DeviceKind::Drone).take(config.devices.drones))
        .chain(std::iter::repeat(DeviceKind::Vehicle).take(config.devices.vehicles))
        .chain(std::iter::repeat(DeviceKind::RobotDog).take(config.devices.robot_dogs))
        .collect();
    let mut devices = Vec::with_capacity(device_kinds.len());
    let mut occupied: BTreeSet<Coord> = BTreeSet::new();
    let mut ring = VecDeque::from([staging]);
    let mut seen: BTreeSet<Coord> = BTreeSet::from([staging]);
    let mut kind_iter = device_kinds.iter();
    let mut pending = kind_iter.next();
    while let Some(&kind) = pending {
        let Some(cell) = ring.pop_front() else {
            return Err(ScenarioError::Infeasible {
                field: "scenario.devices",
                requested: device_kinds.len(),
                reason: "no staging cells available around the drop zone".into(),
            });
        };
        for n in map.neighbours(cell) {
            if seen.insert(n) {
                ring.push_back(n);
            }
        }
        let standable = matches!(map.get(cell), CellKind::Free | CellKind::DropZone);
        if standable && !occupied.contains(&cell) {
            occupied.insert(cell);
            devices.push(Device::new(DeviceId(devices.len() as u32), kind, cell, config.battery_j));
            pending = kind_iter.next();
        }
    }

    // Reachability audit: a victim counts as reachable when a ground vehicle
    // can get from some border cell to the victim's cell.
    let reachable = vehicle_reachable_set(&map);
    let unreachable = targets
        .iter()
        .filter(|t| t.category == TargetCategory::Victim && !reachable.contains(&t.cell))
        .map(|t| t.id)
        .collect();

    Ok(World { seed: config.seed, map, devices, targets, unreachable })
}

/// Cells a ground vehicle can reach starting from any passable border cell.
fn vehicle_reachable_set(map: &WorldMap) -> BTreeSet<Coord> {
    let mut visited: BTreeSet<Coord> = BTreeSet::new();
    let mut queue: VecDeque<Coord> = VecDeque::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = Coord::new(x, y);
            if map.is_border(c) && map.passable(DeviceKind::Vehicle, c) && visited.insert(c) {
                queue.push_back(c);
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for n in map.neighbours(c) {
            if map.passable(DeviceKind::Vehicle, n) && visited.insert(n) {
                queue.push_back(n);
            }
        }
    }
    visited
}

// ------------------------------------------------------------- pathfinding

/// Shortest 4-connected path for `kind` from `from` to `to`, excluding the
/// start cell and including the goal. Returns `None` when the goal is
/// unreachable or impassable. Deterministic: neighbours expand in the fixed
/// up/left/right/down order, so among equal-length paths the same one is
/// always chosen.
pub fn shortest_path(
    map: &WorldMap,
    kind: DeviceKind,
    from: Coord,
    to: Coord,
) -> Option<Vec<Coord>> {
    if !map.in_bounds(from) || !map.in_bounds(to) || !map.passable(kind, to) {
        return None;
    }
    if from == to {
        return Some(Vec::new());
    }
    let idx = |c: Coord| c.y * map.width() + c.x;
    let mut parent: Vec<Option<Coord>> = vec![None; map.width() * map.height()];
    let mut visited = vec![false; map.width() * map.height()];
    visited[idx(from)] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(p) = parent[idx(cur)] {
                if p == from {
                    break;
                }
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for n in map.neighbours(c) {
            if !visited[idx(n)] && map.passable(kind, n) {
                visited[idx(n)] = true;
                parent[idx(n)] = Some(c);
                queue.push_back(n);
            }
        }
    }
    None
}

/// Length in moves of the shortest path, or `None` if unreachable.
pub fn path_distance(map: &WorldMap, kind: DeviceKind, from: Coord, to: Coord) -> Option<usize> {
    shortest_path(map, kind, from, to).map(|p| p.len())
}

// ------------------------------------------------------------ observations

/// Egocentric grayscale observation: a `(2*radius+1)` square of render
/// values centred on `center`; cells outside the map read 0.0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePatch {
    side: usize,
    values: Vec<f64>,
}

impl ScenePatch {
    pub fn from_values(side: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), side * side, "patch must be square");
        ScenePatch { side, values }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at patch row `r`, column `c`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.side + c]
    }
}

/// Default observation radius; patches are 15x15.
pub const DEFAULT_PATCH_RADIUS: usize = 7;

/// Renders the map neighbourhood around `center` as a grayscale patch.
pub fn render_patch(map: &WorldMap, center: Coord, radius: usize) -> ScenePatch {
    let side = 2 * radius + 1;
    let mut values = Vec::with_capacity(side * side);
    for dy in -(radius as i64)..=(radius as i64) {
        for dx in -(radius as i64)..=(radius as i64) {
            let x = center.x as i64 + dx;
            let y = center.y as i64 + dy;
            let v = if x >= 0 && y >= 0 && (x as usize) < map.width() && (y as usize) < map.height()
            {
                map.get(Coord::new(x as usize, y as usize)).render_value()
            } else {
                0.0
            };
            values.push(v);
        }
    }
    ScenePatch { side, values }
}

// ------------------------------------------------------------- text format

pub const WORLD_FORMAT_VERSION: &str = "ccein-world v1";

impl World {
    /// Serializes the world in the versioned text format. The output is the
    /// canonical golden-file representation: byte-identical for identical
    /// worlds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(WORLD_FORMAT_VERSION);
        out.push('\n');
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("size {} {}\n", self.map.width(), self.map.height()));
        out.push_str("map\n");
        for y in 0..self.map.height() {
            for x in 0..self.map.width() {
                out.push(self.map.get(Coord::new(x, y)).to_char());
            }
            out.push('\n');
        }
        out.push_str("endmap\n");
        out.push_str(&format!("targets {}\n", self.targets.len()));
        for t in &self.targets {
            out.push_str(&format!(
                "target {} {} {} {} {} {} {}\n",
                t.id.0,
                t.category.as_str(),
                t.cell.x,
                t.cell.y,
                t.severity,
                t.accessibility,
                t.confidence
            ));
        }
        out.push_str(&format!("devices {}\n", self.devices.len()));
        for d in &self.devices {
            out.push_str(&format!(
                "device {} {} {} {} {}\n",
                d.id.0,
                d.kind.as_str(),
                d.position.x,
                d.position.y,
                d.battery_j
            ));
        }
        out.push_str("unreachable");
        for id in &self.unreachable {
            out.push_str(&format!(" {}", id.0));
        }
        out.push('\n');
        out
    }

    /// Parses the versioned text format produced by [`World::to_text`].
    pub fn from_text(text: &str) -> Result<World, ScenarioError> {
        let err = |msg: String| ScenarioError::Format(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty input".into()))?;
        if header != WORLD_FORMAT_VERSION {
            return Err(err(format!(
                "unsupported header {header:?}, expected {WORLD_FORMAT_VERSION:?}"
            )));
        }
        let seed_line = lines.next().ok_or_else(|| err("missing seed line".into()))?;
        let seed: u64 = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("bad seed line {seed_line:?}")))?;
        let size_line = lines.next().ok_or_else(|| err("missing size line".into()))?;
        let dims: Vec<usize> = size_line
            .strip_prefix("size ")
            .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .ok_or_else(|| err(format!("bad size line {size_line:?}")))?;
        let [width, height] = dims[..] else {
            return Err(err(format!("bad size line {size_line:?}")));
        };
        if lines.next() != Some("map") {
            return Err(err("missing map section".into()));
        }
        let mut map = WorldMap::filled(width, height, CellKind::Free);
        for y in 0..height {
            let row = lines.next().ok_or_else(|| err(format!("missing map row {y}")))?;
            if row.chars().count() != width {
                return Err(err(format!("map row {y} has wrong width")));
            }
            for (x, ch) in row.chars().enumerate() {
                let kind = CellKind::from_char(ch)
                    .ok_or_else(|| err(format!("unknown cell {ch:?} at ({x},{y})")))?;
                map.set(Coord::new(x, y), kind);
            }
        }
        if lines.next() != Some("endmap") {
            return Err(err("missing endmap".into()));
        }
        let tline = lines.next().ok_or_else(|| err("missing targets line".into()))?;
        let n_targets: usize = tline
            .strip_prefix("targets ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("bad targets line {tline:?}")))?;
        let mut targets = Vec::with_capacity(n_targets);
        for _ in 0..n_targets {
            let line = lines.next().ok_or_else(|| err("missing target line".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 || f[0] != "target" {
                return Err(err(format!("bad target line {line:?}")));
            }
            let parse_u8 = |s: &str| -> Result<u8, ScenarioError> {
                s.parse().map_err(|_| err(format!("bad number {s:?} in {line:?}")))
            };
            targets.push(Target {
                id: TargetId(f[1].parse().map_err(|_| err(format!("bad target id in {line:?}")))?),
                category: TargetCategory::from_str(f[2])
                    .ok_or_else(|| err(format!("unknown category in {line:?}")))?,
                cell: Coord::new(
                    f[3].parse().map_err(|_| err(format!("bad x in {line:?}")))?,
                    f[4].parse().map_err(|_| err(format!("bad y in {line:?}")))?,
                ),
                severity: parse_u8(f[5])?,
                accessibility: parse_u8(f[6])?,
                confidence: parse_u8(f[7])?,
            });
        }
        let dline = lines.next().ok_or_else(|| err("missing devices line".into()))?;
        let n_devices: usize = dline
            .strip_prefix("devices ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("bad devices line {dline:?}")))?;
        let mut devices = Vec::with_capacity(n_devices);
        for _ in 0..n_devices {
            let line = lines.next().ok_or_else(|| err("missing device line".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 || f[0] != "device" {
                return Err(err(format!("bad device line {line:?}")));
            }
            devices.push(Device::new(
                DeviceId(f[1].parse().map_err(|_| err(format!("bad device id in {line:?}")))?),
                DeviceKind::from_str(f[2])
                    .ok_or_else(|| err(format!("unknown device kind in {line:?}")))?,
                Coord::new(
                    f[3].parse().map_err(|_| err(format!("bad x in {line:?}")))?,
                    f[4].parse().map_err(|_| err(format!("bad y in {line:?}")))?,
                ),
                f[5].parse().map_err(|_| err(format!("bad battery in {line:?}")))?,
            ));
        }
        let uline = lines.next().ok_or_else(|| err("missing unreachable line".into()))?;
        let rest = uline
            .strip_prefix("unreachable")
            .ok_or_else(|| err(format!("bad unreachable line {uline:?}")))?;
        let unreachable = rest
            .split_whitespace()
            .map(|s| s.parse().map(TargetId).map_err(|_| err(format!("bad id {s:?}"))))
            .collect::<Result<BTreeSet<_>, _>>()?;
        Ok(World { seed, map, devices, targets, unreachable })
    }
}

// -------------------------------------------------------------------- tests
