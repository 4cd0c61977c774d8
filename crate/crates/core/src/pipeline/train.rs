use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::{OptimizerKind, TrainConfig};
use super::dataset::{Dataset, Target};
use super::model::{Model, Prediction};
use super::rng::{substream, Stream};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, ParamStore};
use crate::otalign::mean_row_entropy;
use crate::qahead::TaskKind;

/// First-order update rule with per-parameter state.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.lr,
            momentum: cfg.momentum,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            first: zeros(),
            second: match cfg.optimizer {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::Sgd => Vec::new(),
            },
            steps: 0,
        }
    }

    /// Applies one update; `grads[i]` belongs to the i-th parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let p = store.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    let v = self.first[i].data_mut();
                    for k in 0..p.len() {
                        v[k] = self.momentum * v[k] + g[k];
                        p[k] -= self.lr * v[k];
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - self.beta1.powi(self.steps);
                    let c2 = 1.0 - self.beta2.powi(self.steps);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for k in 0..p.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean task loss over the epoch's examples, before weight decay.
    pub train_loss: f64,
    pub metric: &'static str,
    pub train_metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_metric: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub task: &'static str,
    /// `accuracy` (higher is better) or `mse` (lower is better).
    pub metric: &'static str,
    pub value: f64,
    pub mean_loss: f64,
    pub examples: usize,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

fn metric_name(task: &TaskKind) -> &'static str {
    match task {
        TaskKind::Count => "mse",
        _ => "accuracy",
    }
}

#[derive(Default)]
struct Tally {
    loss: f64,
    correct: usize,
    sq_err: f64,
    n: usize,
}

impl Tally {
    fn add(&mut self, loss: f64, pred: &Prediction, target: &Target) {
        self.loss += loss;
        self.n += 1;
        if pred.is_correct(target) {
            self.correct += 1;
        }
        if let (Prediction::Count(p), Target::Count(t)) = (pred, target) {
            self.sq_err += (f64::from(*p) - t).powi(2);
        }
    }

    fn metric(&self, task: &TaskKind) -> f64 {
        let n = self.n.max(1) as f64;
        match task {
            TaskKind::Count => self.sq_err / n,
            _ => self.correct as f64 / n,
        }
    }
}

pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Evaluation> {
    let task = ds.task()?;
    let mut tally = Tally::default();
    let mut predictions = Vec::with_capacity(ds.len());
    for ex in &ds.examples {
        let (loss, pred) = model.infer(ex)?;
        tally.add(loss, &pred, &ex.target);
        predictions.push(pred);
    }
    Ok(Evaluation {
        task: task.name(),
        metric: metric_name(&task),
        value: tally.metric(&task),
        mean_loss: tally.loss / tally.n as f64,
        examples: tally.n,
        predictions,
    })
}

/// Mean row entropy of the first block's frame alignment over `ds`.
pub fn mean_alignment_entropy(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for ex in &ds.examples {
        let g = model
            .frame_alignment(ex)?
            .ok_or_else(|| Error::Config("frames are disabled, no frame alignment".into()))?;
        total += mean_row_entropy(&g)?;
    }
    Ok(total / ds.len().max(1) as f64)
}

fn nonfinite_params(store: &ParamStore) -> Vec<String> {
    store
        .ids()
        .filter(|&id| !store.get(id).is_finite())
        .map(|id| store.name(id).to_string())
        .collect()
}

/// Trains `model` in place. `log` receives one record per epoch; any
/// non-finite loss or parameter aborts with a diagnostic error.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    valid: Option<&Dataset>,
    mut log: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let task = train_set.task()?;
    if task.name() != model.task.name() {
        return Err(Error::Data(format!(
            "training set is {} but the model is {}",
            task.name(),
            model.task.name()
        )));
    }
    if let Some(v) = valid {
        v.task()?;
    }
    if !model.store.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters before training: {:?}",
            nonfinite_params(&model.store)
        )));
    }
    let cfg = model.config.clone();
    let mut opt = Optimizer::new(&cfg, &model.store);
    let mut shuffle = substream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut tally = Tally::default();
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Matrix> = model
                .store
                .ids()
                .map(|id| {
                    let (r, c) = model.store.get(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_set.examples[i];
                let mut g = Graph::with_params(&model.store);
                let fwd = model
                    .forward(&mut g, ex)
                    .map_err(|e| Error::Data(format!("epoch {epoch}, step {step}, example {}: {e}", ex.id)))?;
                let loss = g.scalar(fwd.loss);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} at epoch {epoch}, step {step}, example {}; parameter norm² {:.6e}; non-finite parameters: {:?}",
                        ex.id,
                        model.store.sum_of_squares(),
                        nonfinite_params(&model.store)
                    )));
                }
                tally.add(loss, &model.predict_from(&g, &fwd), &ex.target);
                for (id, gm) in g.backward(fwd.loss)?.into_params() {
                    grads[id.index()].add_scaled(&gm, scale);
                }
            }
            if cfg.weight_decay > 0.0 {
                for id in model.store.ids() {
                    grads[id.index()].add_scaled(model.store.get(id), 2.0 * cfg.weight_decay);
                }
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads
                    .iter()
                    .flat_map(|m| m.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    for m in &mut grads {
                        *m = m.scale(cfg.grad_clip / norm);
                    }
                }
            }
            opt.step(&mut model.store, &grads);
            if !model.store.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, step {step}: {:?}",
                    nonfinite_params(&model.store)
                )));
            }
        }
        let valid_metric = valid.map(|v| evaluate(model, v).map(|e| e.value)).transpose()?;
        let rec = EpochMetrics {
            epoch,
            train_loss: tally.loss / tally.n.max(1) as f64,
            metric: metric_name(&task),
            train_metric: tally.metric(&task),
            valid_metric,
        };
        log(&rec)?;
        history.push(rec);
    }
    Ok(history)
}
