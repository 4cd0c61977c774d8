//! Shared settings for training on synthetic data.

use super::config::{OptimizerKind, TrainConfig};
use super::model::Model;
use super::synth::{SynthData, SynthSpec};
use super::train::{evaluate, mean_alignment_entropy, train, EpochMetrics};
use crate::error::Result;
use crate::fusion::AlignScale;

/// IPOT iterations used for the synthetic ablation. Ten iterations leave the
/// trained plans too diffuse to be sparser than dot-product attention.
pub const SYNTH_OT_ITERS: usize = 100;

/// Training setup for a synthetic task: widths from the spec, Adam,
/// mass-scaled alignments and tied projection initialisation.
pub fn synthetic_train_config(spec: &SynthSpec) -> TrainConfig {
    TrainConfig {
        seed: spec.seed,
        d_w: spec.dim,
        d_v: spec.dim,
        d: spec.dim,
        d_o: spec.dim,
        ot_iters: SYNTH_OT_ITERS,
        align_scale: AlignScale::Mass,
        tied_projections: true,
        optimizer: OptimizerKind::Adam,
        lr: 0.003,
        epochs: 60,
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct Score {
    pub accuracy: f64,
    pub entropy: f64,
    pub history: Vec<EpochMetrics>,
}

/// Trains a fresh model on `data.train` and scores it on `data.test`.
pub fn train_and_score(
    data: &SynthData,
    cfg: TrainConfig,
    log: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Score> {
    let mut model = Model::init(cfg, data.train.task()?, data.train.answers.clone())?;
    let history = train(&mut model, &data.train, Some(&data.test), log)?;
    Ok(Score {
        accuracy: evaluate(&model, &data.test)?.value,
        entropy: mean_alignment_entropy(&model, &data.test)?,
        history,
    })
}
