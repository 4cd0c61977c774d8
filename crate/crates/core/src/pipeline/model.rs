use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::{Example, QuestionInput, Target};
use super::rng::{substream, Stream};
use crate::error::{Error, Result};
use crate::fusion::{context_encode, stack_forward, Alignments, BlockParams, BundleVars, ContextParams, Dims};
use crate::numcore::{Graph, Matrix, ParamStore, Var};
use crate::qahead::{self, count_predict, HeadParams, TaskKind};

/// Parameters, architecture and answer vocabulary of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: TrainConfig,
    pub task: TaskKind,
    pub answers: Vec<String>,
    pub store: ParamStore,
    pub blocks: Vec<BlockParams>,
    pub context: Option<ContextParams>,
    pub head: HeadParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Answer(usize),
    Count(u8),
    Choice(usize),
}

impl Prediction {
    pub fn is_correct(&self, target: &Target) -> bool {
        match (self, target) {
            (Prediction::Answer(p), Target::Answer(t)) | (Prediction::Choice(p), Target::Choice(t)) => p == t,
            (Prediction::Count(p), Target::Count(t)) => f64::from(*p) == *t,
            _ => false,
        }
    }
}

/// Nodes produced by one forward pass over an example.
pub struct Forward {
    pub loss: Var,
    /// Readout per question sentence (one per candidate for multiple choice).
    pub outputs: Vec<Var>,
    /// Per sentence, per block.
    pub alignments: Vec<Vec<Alignments>>,
}

impl Model {
    /// Fresh parameters from the `Init` stream of `config.seed`.
    pub fn init(config: TrainConfig, task: TaskKind, answers: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, Stream::Init);
        let mut store = ParamStore::new();
        let dims = Dims {
            d_w: config.d_w,
            d_v: config.d_v,
            d: config.d,
        };
        let context = config
            .context_encoder
            .then(|| ContextParams::init(&mut store, config.d_w, &mut rng));
        let blocks = (0..config.blocks)
            .map(|i| BlockParams::init(&mut store, &format!("block{i}"), dims, config.tied_projections, &mut rng))
            .collect();
        let n_answers = if task == TaskKind::OpenEnded { answers.len() } else { 0 };
        let head = HeadParams::init(&mut store, config.d_w, config.d_v, config.d_o, &task, n_answers, &mut rng)?;
        Ok(Model {
            config,
            task,
            answers,
            store,
            blocks,
            context,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Model = serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
        if !m.store.is_finite() {
            return Err(Error::load(path, "model contains non-finite parameters"));
        }
        Ok(m)
    }

    /// Checks that `ex` fits this model's task and feature widths.
    pub fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.task.name() != self.task.name() {
            return Err(Error::Data(format!(
                "example {} is {} but the model is {}",
                ex.id,
                ex.task.name(),
                self.task.name()
            )));
        }
        let (d_w, d_v) = (ex.questions[0].q.cols(), ex.frames.cols());
        if d_w != self.config.d_w || d_v != self.config.d_v {
            return Err(Error::Data(format!(
                "example {} has (d_w, d_v) = ({d_w}, {d_v}), the model expects ({}, {})",
                ex.id, self.config.d_w, self.config.d_v
            )));
        }
        Ok(())
    }

    fn encode<'a>(
        &self,
        g: &mut Graph<'a>,
        question: &'a QuestionInput,
        frames: &'a Matrix,
        clips: &'a Matrix,
    ) -> Result<(Var, Vec<Alignments>)> {
        let cfg = self.config.fusion();
        let mut q = g.constant_ref(&question.q);
        if let Some(c) = &self.context {
            q = context_encode(g, q, c)?;
        }
        let input = BundleVars {
            q,
            f: g.constant_ref(frames),
            m: g.constant_ref(clips),
        };
        let graph = question.graph_for(cfg.syntax_mode);
        let (out, aligns) = stack_forward(g, input, graph, &self.blocks, &cfg)?;
        let f = cfg.use_frames.then_some(out.f);
        let m = cfg.use_clips.then_some(out.m);
        let pooled = qahead::pooled_output(g, out.q, f, m, &self.head)?;
        Ok((qahead::readout(g, pooled, &self.head)?, aligns))
    }

    /// Records the task loss of `ex` on `g`, which must be bound to `self.store`.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, ex: &'a Example) -> Result<Forward> {
        self.check_example(ex)?;
        let mut outputs = Vec::with_capacity(ex.questions.len());
        let mut alignments = Vec::with_capacity(ex.questions.len());
        for q in &ex.questions {
            let (o, a) = self.encode(g, q, &ex.frames, &ex.clips)?;
            outputs.push(o);
            alignments.push(a);
        }
        let loss = match ex.target {
            Target::Answer(a) => qahead::open_ended_loss(g, outputs[0], a)?,
            Target::Count(c) => qahead::count_loss(g, outputs[0], c)?,
            Target::Choice(t) => {
                let col = g.concat_rows(&outputs)?;
                let scores = g.transpose(col);
                g.hinge(scores, t)?
            }
        };
        Ok(Forward {
            loss,
            outputs,
            alignments,
        })
    }

    /// Prediction from the readout nodes of a forward pass.
    pub fn predict_from(&self, g: &Graph<'_>, fwd: &Forward) -> Prediction {
        let argmax = |xs: &[f64]| {
            xs.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        };
        match self.task {
            TaskKind::OpenEnded => Prediction::Answer(argmax(g.value(fwd.outputs[0]).data())),
            TaskKind::Count => Prediction::Count(count_predict(g.scalar(fwd.outputs[0]))),
            TaskKind::MultipleChoice { .. } => {
                let scores: Vec<f64> = fwd.outputs.iter().map(|&o| g.scalar(o)).collect();
                Prediction::Choice(argmax(&scores))
            }
        }
    }

    /// Loss and prediction for one example without gradients.
    pub fn infer(&self, ex: &Example) -> Result<(f64, Prediction)> {
        let mut g = Graph::with_params(&self.store);
        let fwd = self.forward(&mut g, ex)?;
        Ok((g.scalar(fwd.loss), self.predict_from(&g, &fwd)))
    }

    /// Transport plan (or attention matrix) between the first sentence's
    /// hyperedges and the frames, from the first block.
    pub fn frame_alignment(&self, ex: &Example) -> Result<Option<Matrix>> {
        self.check_example(ex)?;
        self.question_alignment(&ex.questions[0], &ex.frames, &ex.clips)
    }

    /// First-block frame alignment of one question against a video, with
    /// no answer target involved.
    pub fn question_alignment(&self, question: &QuestionInput, frames: &Matrix, clips: &Matrix) -> Result<Option<Matrix>> {
        let (d_w, d_v) = (question.q.cols(), frames.cols());
        if d_w != self.config.d_w || d_v != self.config.d_v || clips.cols() != d_v {
            return Err(Error::Data(format!(
                "inputs have (d_w, d_v) = ({d_w}, {d_v}), the model expects ({}, {})",
                self.config.d_w, self.config.d_v
            )));
        }
        let mut g = Graph::with_params(&self.store);
        let (_, aligns) = self.encode(&mut g, question, frames, clips)?;
        Ok(aligns[0].g_xf.map(|v| g.value(v).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deptree::DependencyTree;

    fn example(task: TaskKind, target: Target, n_q: usize) -> Example {
        let tree = DependencyTree::from_heads(&["what", "red", "ball"], &[0, 3, 1]).unwrap();
        let q = QuestionInput::new(tree, Matrix::filled(3, 4, 0.3)).unwrap();
        Example {
            id: "e".into(),
            task,
            questions: vec![q; n_q],
            frames: Matrix::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.0, 1.0, -0.5]]).unwrap(),
            clips: Matrix::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap(),
            target,
            candidates: vec![],
        }
    }

    fn config() -> TrainConfig {
        TrainConfig {
            d_w: 4,
            d_v: 3,
            d: 5,
            d_o: 4,
            blocks: 2,
            ..Default::default()
        }
    }

    #[test]
    fn every_task_runs_and_predicts() {
        let cases = [
            (TaskKind::OpenEnded, Target::Answer(1), 1),
            (TaskKind::Count, Target::Count(2.0), 1),
            (TaskKind::MultipleChoice { candidates: 3 }, Target::Choice(2), 3),
        ];
        for (task, target, n) in cases {
            let m = Model::init(config(), task.clone(), vec!["a".into(), "b".into()]).unwrap();
            let ex = example(task, target, n);
            let (loss, pred) = m.infer(&ex).unwrap();
            assert!(loss.is_finite());
            match pred {
                Prediction::Answer(a) => assert!(a < 2),
                Prediction::Count(c) => assert!(c <= 10),
                Prediction::Choice(c) => {
                    assert!(c < 3);
                    // identical candidates tie, so the hinge loss is exactly N_a
                    assert!((loss - 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn task_and_dim_mismatches_rejected() {
        let m = Model::init(config(), TaskKind::Count, vec![]).unwrap();
        assert!(m.infer(&example(TaskKind::OpenEnded, Target::Answer(0), 1)).is_err());
        let mut ex = example(TaskKind::Count, Target::Count(1.0), 1);
        ex.frames = Matrix::zeros(2, 5);
        ex.clips = Matrix::zeros(1, 5);
        assert!(m.infer(&ex).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::init(config(), TaskKind::Count, vec![]).unwrap();
        let b = Model::init(config(), TaskKind::Count, vec![]).unwrap();
        assert_eq!(a, b);
        let c = Model::init(TrainConfig { seed: 1, ..config() }, TaskKind::Count, vec![]).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = Model::init(config(), TaskKind::OpenEnded, vec!["x".into()]).unwrap();
        let back: Model = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
