//! # ccein — collaborative embodied-intelligence network simulator
//!
//! A deterministic discrete-event simulator of a post-disaster rescue network
//! in which drones, ground vehicles and robot dogs cooperate over a degraded
//! wireless channel. The library covers the full loop studied by the
//! experiments: semantic task decomposition and assignment, compressed
//! attribute-level messaging, an adaptive transmission controller trained
//! with proximal policy optimization, and gradient-based visual explanations
//! of the perception model's decisions.
//!
//! ```text
//!   scenario ──► cohesive (tasks, assignment)
//!      │              │
//!      ▼              ▼
//!   semantics ──► engine (event loop, metrics) ◄── draosc (learned policy)
//!      │              │                               ▲
//!      ▼              ▼                               │
//!    indec        trace / CSV artifacts            channel
//! ```
//!
//! | module      | concern                                                      |
//! |-------------|--------------------------------------------------------------|
//! | [`scenario`] | grid world, devices, targets, observation patches           |
//! | [`semantics`]| attribute descriptors, compression, consistency score       |
//! | [`channel`]  | capacity, fragment error model, transmission accounting     |
//! | [`draosc`]   | transmission-control MDP, PPO training, baselines           |
//! | [`cohesive`] | task templates, optimal assignment, conflict resolution     |
//! | [`indec`]    | tiny CNN classifier and Grad-CAM heatmaps                   |
//! | [`engine`]   | discrete-event episode runner, metrics, sweeps               |
//! | [`config`]   | TOML run configuration                                       |
//!
//! Everything is seeded: a run is identified by `(config, seed)` and
//! reproduces byte-identical artifacts.

pub mod config;
pub mod rng;
pub mod scenario;
pub mod semantics;
pub mod channel;
pub mod nn;
pub mod draosc;
pub mod cohesive;
pub mod engine;
pub mod indec;
pub mod stats;

/// Library crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Simulation time: one tick is 100 ms of simulated wall-clock.
pub type Tick = u64;

/// Simulated duration of one tick in seconds.
pub const TICK_SECONDS: f64 = 0.1;
