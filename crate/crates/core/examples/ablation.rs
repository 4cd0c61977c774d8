//! Trains the synthetic ablation variants and prints test accuracy and
//! alignment entropy for each.
//!
//! `cargo run --release -p scan-core --example ablation -- [key=value ...]`
//! where each `key=value` overrides the training config. Set `VARIANTS` to a
//! comma-separated subset of `full,word,dot` to skip the others.

use std::time::Instant;

use scan_core::fusion::{AlignMode, SyntaxMode};
use scan_core::pipeline::experiment::{synthetic_train_config, train_and_score};
use scan_core::pipeline::{synth_generate, SynthSpec, TrainConfig};

fn main() -> scan_core::Result<()> {
    let spec = SynthSpec::default();
    let data = synth_generate(&spec)?;
    let mut base = synthetic_train_config(&spec);
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| scan_core::Error::Config(format!("expected key=value, got '{arg}'")))?;
        base.set(k, v)?;
    }
    let only = std::env::var("VARIANTS").unwrap_or_default();
    let variants = [
        ("full", AlignMode::Ot, SyntaxMode::Hypergraph),
        ("word", AlignMode::Ot, SyntaxMode::WordLevel),
        ("dot", AlignMode::Dot, SyntaxMode::Hypergraph),
    ];
    for (name, align_mode, syntax_mode) in variants {
        if !only.is_empty() && !only.split(',').any(|v| v == name) {
            continue;
        }
        let cfg = TrainConfig {
            align_mode,
            syntax_mode,
            ..base.clone()
        };
        let start = Instant::now();
        let score = train_and_score(&data, cfg, |m| {
            eprintln!("{name} {}", serde_json::to_string(m).expect("metrics serialise"));
            Ok(())
        })?;
        println!(
            "{name}: accuracy {:.4}, entropy {:.4}, {:.1}s",
            score.accuracy,
            score.entropy,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
