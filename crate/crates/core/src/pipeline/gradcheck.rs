//! End-to-end gradient verification of randomly initialised models.

use serde::Serialize;

use super::config::TrainConfig;
use super::dataset::{Example, QuestionInput, Target};
use super::model::Model;
use super::rng::{substream, Stream};
use crate::deptree::{parse_conllu, SAMPLE_CONLLU};
use crate::error::Result;
use crate::fusion::AlignMode;
use crate::numcore::{finite_diff_check, GradCheckReport, Matrix};
use crate::qahead::TaskKind;

/// Finite-difference step. Smaller steps let round-off dominate on the
/// smallest gradient entries.
pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub task: &'static str,
    pub align_mode: AlignMode,
    pub parameters: usize,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub dims: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    pub cases: Vec<CaseReport>,
}

fn example(task: &TaskKind, dims: usize, seed: u64) -> Result<Example> {
    let mut rng = substream(seed, Stream::Data);
    let tree = parse_conllu(SAMPLE_CONLLU)?.remove(0);
    let n_q = match task {
        TaskKind::MultipleChoice { candidates } => *candidates,
        _ => 1,
    };
    let questions = (0..n_q)
        .map(|_| QuestionInput::new(tree.clone(), Matrix::randn(tree.len(), dims, 1.0, &mut rng)))
        .collect::<Result<Vec<_>>>()?;
    let target = match task {
        TaskKind::OpenEnded => Target::Answer(1),
        TaskKind::Count => Target::Count(3.0),
        TaskKind::MultipleChoice { .. } => Target::Choice(0),
    };
    Ok(Example {
        id: format!("gradcheck-{}", task.name()),
        task: task.clone(),
        questions,
        frames: Matrix::randn(6, dims, 1.0, &mut rng),
        clips: Matrix::randn(3, dims, 1.0, &mut rng),
        target,
        candidates: vec![],
    })
}

/// Compares tape gradients with central differences for every head, under
/// both alignment modes, on a two-block model of width `dims` with the
/// context encoder enabled.
pub fn gradcheck_suite(dims: usize, seed: u64, step: f64, tolerance: f64) -> Result<SuiteReport> {
    let tasks = [
        TaskKind::OpenEnded,
        TaskKind::Count,
        TaskKind::MultipleChoice { candidates: 3 },
    ];
    let mut cases = Vec::new();
    for align_mode in [AlignMode::Ot, AlignMode::Dot] {
        for task in &tasks {
            let config = TrainConfig {
                seed,
                d_w: dims,
                d_v: dims,
                d: dims,
                d_o: dims,
                blocks: 2,
                align_mode,
                context_encoder: true,
                ..Default::default()
            };
            let model = Model::init(config, task.clone(), vec!["a".into(), "b".into(), "c".into()])?;
            let ex = example(task, dims, seed)?;
            let report = finite_diff_check(&model.store, step, |g| Ok(model.forward(g, &ex)?.loss))?;
            cases.push(CaseReport {
                task: task.name(),
                align_mode,
                parameters: model.store.num_scalars(),
                report,
            });
        }
    }
    let max_rel_err = cases.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    Ok(SuiteReport {
        dims,
        seed,
        tolerance,
        max_rel_err,
        passed: max_rel_err <= tolerance,
        cases,
    })
}
