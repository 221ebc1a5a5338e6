//! The seven subcommands. Each one reads its inputs, runs the library, and
//! closes a run directory with a manifest; none of them mutates an input
//! file.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ccein::config::SimConfig;
use ccein::draosc::policy::{AdaptivePolicy, PolicyCheckpoint, PolicyNet};
use ccein::draosc::{train as training, GreedyPolicy, StaticPolicy, TransmitPolicy};
use ccein::engine::{
    render_sc_csv, render_sweep_csv, render_tcr_csv, render_te_csv, render_transmissions_csv,
    run_episode, run_with_oracle, sweep_bandwidth as run_bandwidth_sweep,
    sweep_snr as run_snr_sweep, te_norm, Event, MetricsReport, TransmissionRecord,
};
use ccein::indec::{grad_cam, heatmap_csv, overlay, ClassLabel, CnnCheckpoint};
use ccein::rng::child_seed;
use ccein::scenario::{generate, render_patch, ScenarioConfig, World, DEFAULT_PATCH_RADIUS};

use crate::manifest::{sha256_hex, RunDir};
use crate::{ClassArg, CliError, Scheme};

/// The classifier `explain` falls back to when `--classifier` is not given:
/// the shipped checkpoint, trained by `ccein`'s `train_scene_classifier`
/// example and compiled into the binary.
const BUILTIN_CLASSIFIER: &str = include_str!("../../../assets/indec.ckpt");

/// Everything a command needs besides its own flags.
pub struct Context {
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub quiet: bool,
    pub command_line: String,
}

impl Context {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

// ------------------------------------------------------------------ loading

/// Reads the config file (or falls back to the built-in defaults for a
/// missing `--config`), returning the parsed tree together with the exact
/// text, which is copied into the run and digested for the manifest.
fn load_config(ctx: &Context) -> Result<(SimConfig, String), CliError> {
    let text = match &ctx.config_path {
        None => String::new(),
        Some(path) => read_input(path, "config file")?,
    };
    let config = SimConfig::from_toml(&text).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, text))
}

/// Reads a user-named input file; a missing path is a usage error, any
/// other I/O failure a runtime one.
fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        let msg = format!("cannot read {what} {}: {e}", path.display());
        if e.kind() == ErrorKind::NotFound {
            CliError::Usage(msg)
        } else {
            CliError::Runtime(msg)
        }
    })
}

fn load_policy_net(path: &Path) -> Result<PolicyNet, CliError> {
    let text = read_input(path, "policy checkpoint")?;
    let cp = PolicyCheckpoint::from_text(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    PolicyNet::from_checkpoint(&cp)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn make_policy(
    scheme: Scheme,
    checkpoint: Option<&Path>,
) -> Result<Box<dyn TransmitPolicy>, CliError> {
    match scheme {
        Scheme::Static => Ok(Box::new(StaticPolicy)),
        Scheme::Greedy => Ok(Box::new(GreedyPolicy)),
        Scheme::Adaptive => {
            let path = checkpoint.ok_or_else(|| {
                CliError::Usage("the adaptive scheme needs --checkpoint".into())
            })?;
            Ok(Box::new(AdaptivePolicy::new(load_policy_net(path)?)))
        }
    }
}

fn scheme_label(scheme: Scheme) -> &'static str {
    match scheme {
        Scheme::Adaptive => "adaptive",
        Scheme::Static => "static",
        Scheme::Greedy => "greedy",
    }
}

// ----------------------------------------------------------------- scenario

pub fn scenario(ctx: &Context) -> Result<(), CliError> {
    let (config, config_text) = load_config(ctx)?;
    let world = eval_world(&config, ctx.seed)?;

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("artifacts/world.txt", &world.to_text())?;

    ctx.say(format!(
        "world {}x{}: {} devices, {} targets, {} reachable victims",
        world.map.width(),
        world.map.height(),
        world.devices.len(),
        world.targets.len(),
        world.reachable_victims().count(),
    ));
    ctx.say(format!("wrote {}", ctx.out.display()));
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &[ctx.seed])
}

/// The world an evaluation run on `run_seed` plays out in. `scenario` uses
/// the same derivation, so `ccein scenario --seed S` prints exactly the map
/// that `eval --seed S` scores its first episode on.
fn eval_world(config: &SimConfig, run_seed: u64) -> Result<World, CliError> {
    let scenario = ScenarioConfig { seed: child_seed(run_seed, "world"), ..config.scenario.clone() };
    generate(&scenario).map_err(|e| CliError::Config(e.to_string()))
}

// -------------------------------------------------------------------- train

pub fn train(
    ctx: &Context,
    iterations: Option<usize>,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let (mut config, config_text) = load_config(ctx)?;
    if let Some(n) = iterations {
        config.train.iterations = n;
    }
    let config_digest = sha256_hex(config_text.as_bytes());

    let resume_cp = match resume {
        None => None,
        Some(path) => {
            let text = read_input(path, "resume checkpoint")?;
            Some(
                PolicyCheckpoint::from_text(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            )
        }
    };

    let total = config.train.iterations;
    let outcome = training::train(&config, ctx.seed, &config_digest, resume_cp.as_ref(), |r| {
        let eval = r.eval_return.map_or(String::new(), |v| format!(", eval {v:.3}"));
        ctx.say(format!(
            "iteration {}/{total}: return {:.3}, entropy {:.3}{eval}",
            r.iteration, r.mean_return, r.stats.entropy
        ));
    })
    .map_err(engine_error)?;

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("artifacts/policy.ckpt", &outcome.best.to_text())?;
    run.write("artifacts/policy-last.ckpt", &outcome.last.to_text())?;
    run.write("metrics/training.csv", &training::render_training_csv(&outcome.curve))?;

    ctx.say(format!(
        "best checkpoint: iteration {}, eval return {:.3}",
        outcome.best.iteration, outcome.best_return
    ));
    ctx.say(format!("wrote {}", ctx.out.display()));
    run.finish(&ctx.command_line, &config_digest, ctx.seed, &[ctx.seed])
}

// --------------------------------------------------------------------- eval

/// Per-seed results of running one scheme.
struct SchemeEval {
    /// `(scheme, seed, metrics)` rows, one per episode, `te_norm` filled in
    /// from the loss-free oracle companion run.
    rows: Vec<(String, u64, MetricsReport)>,
    transmissions: Vec<TransmissionRecord>,
    /// `(seed, world text, trace text)` per episode, for the artifacts dir.
    episodes: Vec<(u64, String, String)>,
}

fn eval_scheme(
    ctx: &Context,
    config: &SimConfig,
    policy: &mut dyn TransmitPolicy,
    label: &str,
    runs: usize,
) -> Result<SchemeEval, CliError> {
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let mut result = SchemeEval { rows: Vec::new(), transmissions: Vec::new(), episodes: Vec::new() };
    for i in 0..runs {
        let run_seed = ctx.seed + i as u64;
        let world = eval_world(config, run_seed)?;
        let episode = run_episode(&world, policy, config, run_seed).map_err(engine_error)?;
        let oracle = run_with_oracle(&world, config, run_seed).map_err(engine_error)?;

        let mut metrics = episode.metrics.clone();
        metrics.te_norm = Some(te_norm(metrics.te_raw, oracle.te_raw));
        ctx.say(format!(
            "{label} seed {run_seed}: tcr {:.3}, te_norm {:.3}, {} transmissions",
            metrics.tcr,
            metrics.te_norm.unwrap(),
            episode.transmissions.len()
        ));

        result.rows.push((label.to_string(), run_seed, metrics));
        result.episodes.push((run_seed, world.to_text(), episode.trace.to_text()));
        result.transmissions.extend(episode.transmissions);
    }
    Ok(result)
}

pub fn eval(
    ctx: &Context,
    scheme: Scheme,
    checkpoint: Option<&Path>,
    runs: usize,
) -> Result<(), CliError> {
    let (config, config_text) = load_config(ctx)?;
    let mut policy = make_policy(scheme, checkpoint)?;
    let label = scheme_label(scheme);

    let evaled = eval_scheme(ctx, &config, policy.as_mut(), label, runs)?;
    let power = run_bandwidth_sweep(&config, policy.as_mut(), ctx.seed).map_err(engine_error)?;
    let sc = run_snr_sweep(&config, policy.as_mut(), ctx.seed).map_err(engine_error)?;

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    for (seed, world_text, trace_text) in &evaled.episodes {
        run.write(&format!("artifacts/world-{seed}.txt"), world_text)?;
        run.write(&format!("artifacts/trace-{seed}.txt"), trace_text)?;
    }
    run.write("metrics/tcr.csv", &render_tcr_csv(&evaled.rows))?;
    run.write("metrics/te.csv", &render_te_csv(&evaled.rows))?;
    run.write("metrics/transmissions.csv", &render_transmissions_csv(&evaled.transmissions))?;
    run.write("metrics/power_vs_bandwidth.csv", &render_sweep_csv(&power))?;
    run.write("metrics/sc_vs_snr.csv", &render_sc_csv(&sc))?;

    ctx.say(format!("wrote {}", ctx.out.display()));
    let seeds: Vec<u64> = (0..runs as u64).map(|i| ctx.seed + i).collect();
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &seeds)
}

// ------------------------------------------------------------------- ablate

/// `scheme,seed,completed,total,tcr,megabytes,te_raw,te_norm`
fn render_ablation_csv(rows: &[(String, u64, MetricsReport)]) -> String {
    let mut out = String::from("scheme,seed,completed,total,tcr,megabytes,te_raw,te_norm\n");
    for (scheme, seed, m) in rows {
        let te_norm = m.te_norm.map_or_else(|| "-".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{scheme},{seed},{},{},{},{},{},{te_norm}\n",
            m.completed_tasks, m.total_tasks, m.tcr, m.transmitted_megabytes, m.te_raw
        ));
    }
    out
}

pub fn ablate(ctx: &Context, checkpoint: &Path, runs: usize) -> Result<(), CliError> {
    let (config, config_text) = load_config(ctx)?;

    let mut rows = Vec::new();
    for scheme in [Scheme::Adaptive, Scheme::Static, Scheme::Greedy] {
        let mut policy = make_policy(scheme, Some(checkpoint))?;
        let evaled = eval_scheme(ctx, &config, policy.as_mut(), scheme_label(scheme), runs)?;
        rows.extend(evaled.rows);
    }

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("metrics/ablation.csv", &render_ablation_csv(&rows))?;

    for scheme in [Scheme::Adaptive, Scheme::Static, Scheme::Greedy] {
        let label = scheme_label(scheme);
        let of = |f: fn(&MetricsReport) -> f64| {
            let vals: Vec<f64> =
                rows.iter().filter(|(s, _, _)| s == label).map(|(_, _, m)| f(m)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        ctx.say(format!(
            "{label}: mean tcr {:.3}, mean te_norm {:.3}",
            of(|m| m.tcr),
            of(|m| m.te_norm.unwrap_or(0.0))
        ));
    }
    ctx.say(format!("wrote {}", ctx.out.display()));
    let seeds: Vec<u64> = (0..runs as u64).map(|i| ctx.seed + i).collect();
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &seeds)
}

// ------------------------------------------------------------------- sweeps

pub fn sweep_bandwidth(
    ctx: &Context,
    scheme: Scheme,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let (config, config_text) = load_config(ctx)?;
    let mut policy = make_policy(scheme, checkpoint)?;
    let points = run_bandwidth_sweep(&config, policy.as_mut(), ctx.seed).map_err(engine_error)?;

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("metrics/power_vs_bandwidth.csv", &render_sweep_csv(&points))?;

    for p in &points {
        ctx.say(format!("{:>6.1} MHz: mean power {:.2} dBm over {} transmissions", p.x, p.mean, p.n));
    }
    ctx.say(format!("wrote {}", ctx.out.display()));
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &[ctx.seed])
}

pub fn sweep_snr(ctx: &Context, scheme: Scheme, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let (config, config_text) = load_config(ctx)?;
    let mut policy = make_policy(scheme, checkpoint)?;
    let points = run_snr_sweep(&config, policy.as_mut(), ctx.seed).map_err(engine_error)?;

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("metrics/sc_vs_snr.csv", &render_sc_csv(&points))?;

    for p in &points {
        ctx.say(format!("{:>6.1} dB: mean consistency {:.3} over {} episodes", p.x, p.mean, p.n));
    }
    ctx.say(format!("wrote {}", ctx.out.display()));
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &[ctx.seed])
}

// ------------------------------------------------------------------ explain

pub struct ExplainRequest<'a> {
    pub run: &'a Path,
    pub device: u32,
    pub tick: u64,
    pub class: ClassArg,
    pub episode: Option<u64>,
    pub classifier: Option<&'a Path>,
}

/// Episode seeds with both a world and a trace in a run's artifacts.
fn episode_seeds(run: &Path) -> Result<Vec<u64>, CliError> {
    let artifacts = run.join("artifacts");
    let entries = std::fs::read_dir(&artifacts).map_err(|e| {
        CliError::Usage(format!("cannot read run directory {}: {e}", artifacts.display()))
    })?;
    let mut seeds = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Runtime(e.to_string()))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(seed) = name.strip_prefix("trace-").and_then(|s| s.strip_suffix(".txt")) {
            if let Ok(seed) = seed.parse::<u64>() {
                if artifacts.join(format!("world-{seed}.txt")).exists() {
                    seeds.push(seed);
                }
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

pub fn explain(ctx: &Context, req: ExplainRequest) -> Result<(), CliError> {
    let config_text = match &ctx.config_path {
        None => String::new(),
        Some(path) => read_input(path, "config file")?,
    };

    let seeds = episode_seeds(req.run)?;
    let episode = match req.episode {
        Some(seed) if seeds.contains(&seed) => seed,
        Some(seed) => {
            return Err(CliError::Usage(format!(
                "run has no episode {seed}; recorded episodes: {seeds:?}"
            )))
        }
        None => *seeds.first().ok_or_else(|| {
            CliError::Usage(format!(
                "{} holds no world/trace pairs; point --run at an eval run directory",
                req.run.display()
            ))
        })?,
    };

    let world_text = read_input(&req.run.join(format!("artifacts/world-{episode}.txt")), "world")?;
    let world = World::from_text(&world_text).map_err(|e| CliError::Config(e.to_string()))?;
    let trace_text = read_input(&req.run.join(format!("artifacts/trace-{episode}.txt")), "trace")?;
    let trace =
        ccein::engine::Trace::from_text(&trace_text).map_err(|e| CliError::Config(e.to_string()))?;

    let cell = trace
        .events
        .iter()
        .find_map(|event| match event {
            Event::ObservationMade { tick, device, cell, .. }
                if *tick == req.tick && device.0 == req.device =>
            {
                Some(*cell)
            }
            _ => None,
        })
        .ok_or_else(|| {
            CliError::Runtime(format!(
                "no observation at tick {} by device {} in episode {episode}",
                req.tick, req.device
            ))
        })?;

    let classifier_text = match req.classifier {
        None => BUILTIN_CLASSIFIER.to_string(),
        Some(path) => read_input(path, "classifier checkpoint")?,
    };
    let checkpoint = CnnCheckpoint::from_text(&classifier_text)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let net = checkpoint.network();

    let class = match req.class {
        ClassArg::Victim => ClassLabel::Victim,
        ClassArg::Obstacle => ClassLabel::Obstacle,
        ClassArg::Supply => ClassLabel::Supply,
        ClassArg::Clear => ClassLabel::Clear,
    };
    if net.arch.classes != ccein::indec::CLASS_COUNT {
        return Err(CliError::Config(format!(
            "classifier has {} classes, expected {}",
            net.arch.classes,
            ccein::indec::CLASS_COUNT
        )));
    }

    let patch = render_patch(&world.map, cell, DEFAULT_PATCH_RADIUS);
    let logits = net.forward(&patch).logits;
    let predicted = ClassLabel::from_index(
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0),
    )
    .unwrap_or(ClassLabel::Clear);

    let heat = grad_cam(&net, &patch, class.index());
    let (patch_pgm, overlay_pgm) = overlay(&heat, &patch);

    let mut run = RunDir::create(&ctx.out)?;
    run.write("config/config.toml", &config_text)?;
    run.write("artifacts/patch.pgm", &patch_pgm)?;
    run.write("artifacts/overlay.pgm", &overlay_pgm)?;
    run.write("metrics/heatmap.csv", &heatmap_csv(&heat))?;

    ctx.say(format!(
        "episode {episode}, device {} at tick {}: cell ({}, {}), predicted {}, explaining {}",
        req.device,
        req.tick,
        cell.x,
        cell.y,
        predicted.as_str(),
        class.as_str()
    ));
    ctx.say(format!("wrote {}", ctx.out.display()));
    run.finish(&ctx.command_line, &sha256_hex(config_text.as_bytes()), ctx.seed, &[episode])
}

// ------------------------------------------------------------------- errors

fn engine_error(e: ccein::engine::EngineError) -> CliError {
    use ccein::engine::EngineError;
    match e {
        EngineError::Config(_)
        | EngineError::Scenario(_)
        | EngineError::ConfigMismatch { .. }
        | EngineError::Policy(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}
