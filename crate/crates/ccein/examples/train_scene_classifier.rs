//! Trains the scene-patch classifier on the synthetic corpus and writes the
//! checkpoint that ships with the CLI (the `explain` subcommand's default
//! classifier).
//!
//! ```text
//! cargo run --release -p ccein --example train_scene_classifier -- assets/indec.ckpt
//! ```
//!
//! Deterministic: the same seeds produce byte-identical checkpoints.

use ccein::indec::{accuracy, synthetic_dataset, train_tiny, CnnArch, TinyCnn, TrainConfig};
use ccein::scenario::DEFAULT_PATCH_RADIUS;

/// Corpus seed; 128 patches per class.
const DATA_SEED: u64 = 1;
/// Weight-init seed, recorded in the checkpoint header.
const INIT_SEED: u64 = 5;
/// Held-out corpus seed, disjoint from training.
const HELD_OUT_SEED: u64 = 999;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "assets/indec.ckpt".into());

    let data = synthetic_dataset(DATA_SEED, 128, DEFAULT_PATCH_RADIUS);
    let mut net = TinyCnn::new_seeded(CnnArch::standard(), INIT_SEED);
    let report = train_tiny(&mut net, &data, &TrainConfig::default());

    let held_out = synthetic_dataset(HELD_OUT_SEED, 64, DEFAULT_PATCH_RADIUS);
    let held_accuracy = accuracy(&net, &held_out);
    println!(
        "{} steps: loss {:.4} -> {:.4}, train accuracy {:.3}, held-out accuracy {:.3}",
        report.steps, report.initial_loss, report.final_loss, report.final_accuracy, held_accuracy
    );

    std::fs::write(&out, net.checkpoint(INIT_SEED, held_accuracy).to_text())
        .unwrap_or_else(|e| panic!("cannot write {out}: {e}"));
    println!("wrote {out}");
}
