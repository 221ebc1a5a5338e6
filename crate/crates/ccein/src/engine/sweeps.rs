//! Parameter sweeps: repeated episodes over a grid, aggregated per point.
//!
//! Both sweeps derive every episode's seed from the base seed, the grid
//! index and the repeat index, so a sweep is reproducible as a whole and
//! each point is independent of grid order.

use crate::config::{BandwidthSpec, SimConfig};
use crate::draosc::TransmitPolicy;
use crate::rng;
use crate::scenario::{generate, ScenarioConfig};
use crate::stats;

use super::metrics::SweepPoint;
use super::run::run_episode;
use super::EngineError;

/// Runs `config.sweep.seeds` episodes at each bandwidth in
/// `config.sweep.bandwidth_grid_mhz` and summarizes the transmit power the
/// policy chose, pooled over every transmission at that point.
///
/// Each grid point models one stage of network collapse, not an isolated
/// spectrum reallocation: as the infrastructure degrades, the usable band
/// narrows *and* the residual link margin sags with it. The stage's base SNR
/// therefore slides along `train.snr_range_db` with the bandwidth — the
/// narrowest band pairs with the worst margin, the full band with the best.
/// A power-aware controller shows a falling curve here: the healthier the
/// network, the less power it needs to hit its deadlines.
pub fn sweep_bandwidth(
    config: &SimConfig,
    policy: &mut dyn TransmitPolicy,
    base_seed: u64,
) -> Result<Vec<SweepPoint>, EngineError> {
    let grid = &config.sweep.bandwidth_grid_mhz;
    let bw_lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let bw_hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut points = Vec::with_capacity(grid.len());
    for (i, &mhz) in grid.iter().enumerate() {
        let mut pooled: Vec<f64> = Vec::new();
        for s in 0..config.sweep.seeds {
            let seed = rng::child_seed(base_seed, &format!("sweep-bw-{i}-{s}"));
            let mut point_config = config.clone();
            point_config.channel.bandwidth = BandwidthSpec::Constant(mhz);
            point_config.channel.base_snr_db = damage_stage_snr_db(config, mhz, bw_lo, bw_hi);
            let world = sweep_world(config, seed)?;
            let result = run_episode(&world, policy, &point_config, seed)?;
            pooled.extend(result.transmissions.iter().map(|r| r.power_dbm));
        }
        points.push(summarize(mhz, &pooled));
    }
    Ok(points)
}

/// Base SNR of a damage stage: linear in bandwidth between the extremes of
/// the sweep grid, spanning the training envelope `train.snr_range_db`.
fn damage_stage_snr_db(config: &SimConfig, mhz: f64, bw_lo: f64, bw_hi: f64) -> f64 {
    let (snr_lo, snr_hi) = config.train.snr_range_db;
    if bw_hi > bw_lo {
        snr_lo + (mhz - bw_lo) / (bw_hi - bw_lo) * (snr_hi - snr_lo)
    } else {
        config.channel.base_snr_db
    }
}

/// Runs `config.sweep.seeds` episodes at each SNR in
/// `config.sweep.snr_grid_db` (bandwidth pinned to
/// `config.sweep.snr_sweep_bandwidth_mhz`) and summarizes the episode-level
/// semantic consistency score at each point.
pub fn sweep_snr(
    config: &SimConfig,
    policy: &mut dyn TransmitPolicy,
    base_seed: u64,
) -> Result<Vec<SweepPoint>, EngineError> {
    let cells = sweep_snr_by_seed(config, policy, base_seed)?;
    Ok(cells.iter().map(|(snr_db, scores)| summarize(*snr_db, scores)).collect())
}

/// Like [`sweep_snr`], but keeps the per-repeat consistency scores separate:
/// one `(snr_db, scores)` pair per grid point, `scores[s]` belonging to
/// repeat `s`. Two sweeps over the same `base_seed` see identical worlds and
/// channels at matching indices, so repeat `s` is directly comparable across
/// policies. A scenario whose knowledge base has no reference targets leaves
/// consistency undefined and is rejected.
pub fn sweep_snr_by_seed(
    config: &SimConfig,
    policy: &mut dyn TransmitPolicy,
    base_seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>, EngineError> {
    let mut cells = Vec::with_capacity(config.sweep.snr_grid_db.len());
    for (i, &snr_db) in config.sweep.snr_grid_db.iter().enumerate() {
        let mut scores: Vec<f64> = Vec::with_capacity(config.sweep.seeds);
        for s in 0..config.sweep.seeds {
            let seed = rng::child_seed(base_seed, &format!("sweep-snr-{i}-{s}"));
            let mut point_config = config.clone();
            point_config.channel.base_snr_db = snr_db;
            point_config.channel.bandwidth =
                BandwidthSpec::Constant(config.sweep.snr_sweep_bandwidth_mhz);
            let world = sweep_world(config, seed)?;
            let result = run_episode(&world, policy, &point_config, seed)?;
            scores.push(result.metrics.sc.ok_or_else(|| {
                crate::config::ConfigError::Invalid {
                    key: "scenario",
                    reason: "sweep scenario yields no reference targets, so consistency is undefined"
                        .into(),
                }
            })?);
        }
        cells.push((snr_db, scores));
    }
    Ok(cells)
}

/// Each sweep episode gets its own world, derived from the episode seed so
/// neighbouring points never share terrain.
fn sweep_world(config: &SimConfig, seed: u64) -> Result<crate::scenario::World, EngineError> {
    let scenario = ScenarioConfig {
        seed: rng::child_seed(seed, "world"),
        ..config.scenario.clone()
    };
    Ok(generate(&scenario)?)
}

fn summarize(x: f64, samples: &[f64]) -> SweepPoint {
    if samples.is_empty() {
        SweepPoint { x, mean: 0.0, std: 0.0, n: 0 }
    } else {
        SweepPoint { x, mean: stats::mean(samples), std: stats::std_dev(samples), n: samples.len() }
    }
}
