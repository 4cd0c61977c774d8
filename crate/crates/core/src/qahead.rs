//! Output pooling and answer heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{log_sum_exp, Graph, Matrix, ParamId, ParamStore, Var};

pub const MAX_COUNT: u8 = 10;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    OpenEnded,
    Count,
    MultipleChoice { candidates: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::OpenEnded => "open_ended",
            TaskKind::Count => "count",
            TaskKind::MultipleChoice { .. } => "multiple_choice",
        }
    }
}

/// Task-specific output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Readout {
    /// `|A| × d_o` classifier and `1 × |A|` bias.
    OpenEnded { classifier: ParamId, bias: ParamId },
    /// `d_o × 1` regression vector and scalar bias.
    Count { weight: ParamId, bias: ParamId },
    /// `d_o × 1` scoring vector and scalar bias.
    MultipleChoice { weight: ParamId, bias: ParamId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// Bias-free projections to `d_o`: `d_w × d_o`, `d_v × d_o`, `d_v × d_o`.
    pub proj_q: ParamId,
    pub proj_f: ParamId,
    pub proj_m: ParamId,
    /// Pooling weights `d_o × d_o` and `d_o × 1`.
    pub pool_w1: ParamId,
    pub pool_w2: ParamId,
    pub readout: Readout,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_w: usize,
        d_v: usize,
        d_o: usize,
        task: &TaskKind,
        n_answers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut add = |name: &str, r: usize, c: usize, rng: &mut R| {
            store.add(format!("head.{name}"), Matrix::xavier(r, c, rng))
        };
        let proj_q = add("proj_q", d_w, d_o, rng);
        let proj_f = add("proj_f", d_v, d_o, rng);
        let proj_m = add("proj_m", d_v, d_o, rng);
        let pool_w1 = add("pool_w1", d_o, d_o, rng);
        let pool_w2 = add("pool_w2", d_o, 1, rng);
        let readout = match task {
            TaskKind::OpenEnded => {
                if n_answers == 0 {
                    return Err(Error::Config("open-ended head needs a nonempty answer set".into()));
                }
                Readout::OpenEnded {
                    classifier: add("classifier", n_answers, d_o, rng),
                    bias: store.add("head.classifier_bias", Matrix::zeros(1, n_answers)),
                }
            }
            TaskKind::Count => Readout::Count {
                weight: add("count_w", d_o, 1, rng),
                bias: store.add("head.count_b", Matrix::zeros(1, 1)),
            },
            TaskKind::MultipleChoice { .. } => Readout::MultipleChoice {
                weight: add("score_w", d_o, 1, rng),
                bias: store.add("head.score_b", Matrix::zeros(1, 1)),
            },
        };
        Ok(HeadParams {
            proj_q,
            proj_f,
            proj_m,
            pool_w1,
            pool_w2,
            readout,
        })
    }
}

/// `Y = [Q̃ P_q; F̃ P_f; M̃ P_m]`, rows in that fixed order. Disabled
/// modalities contribute no rows.
pub fn project_concat(
    g: &mut Graph<'_>,
    q: Var,
    f: Option<Var>,
    m: Option<Var>,
    p: &HeadParams,
) -> Result<Var> {
    let pq = g.param(p.proj_q);
    let mut parts = vec![g.matmul(q, pq)?];
    if let Some(f) = f {
        let pf = g.param(p.proj_f);
        parts.push(g.matmul(f, pf)?);
    }
    if let Some(m) = m {
        let pm = g.param(p.proj_m);
        parts.push(g.matmul(m, pm)?);
    }
    g.concat_rows(&parts)
}

/// `y = softmax(LeakyReLU(Y W_1) W_2)ᵀ Y`; returns `(y, weights)` with
/// `y: 1 × d_o` and `weights: 1 × rows(Y)`.
pub fn attention_pool(
    g: &mut Graph<'_>,
    y: Var,
    w1: Var,
    w2: Var,
    slope: f64,
) -> Result<(Var, Var)> {
    let h = g.matmul(y, w1)?;
    let h = g.leaky_relu(h, slope);
    let logits = g.matmul(h, w2)?;
    let logits_t = g.transpose(logits);
    let weights = g.row_softmax(logits_t);
    let pooled = g.matmul(weights, y)?;
    Ok((pooled, weights))
}

/// Pooled task vector from the three fused modalities.
pub fn pooled_output(
    g: &mut Graph<'_>,
    q: Var,
    f: Option<Var>,
    m: Option<Var>,
    p: &HeadParams,
) -> Result<Var> {
    let y = project_concat(g, q, f, m, p)?;
    let (w1, w2) = (g.param(p.pool_w1), g.param(p.pool_w2));
    Ok(attention_pool(g, y, w1, w2, DEFAULT_LEAKY_SLOPE)?.0)
}

/// Linear readout of a pooled vector: logits (`1 × |A|`) or a `1 × 1` value.
pub fn readout(g: &mut Graph<'_>, pooled: Var, p: &HeadParams) -> Result<Var> {
    match p.readout {
        Readout::OpenEnded { classifier, bias } => {
            let w = g.param(classifier);
            let wt = g.transpose(w);
            let z = g.matmul(pooled, wt)?;
            let b = g.param(bias);
            g.add(z, b)
        }
        Readout::Count { weight, bias } | Readout::MultipleChoice { weight, bias } => {
            let w = g.param(weight);
            let z = g.matmul(pooled, w)?;
            let b = g.param(bias);
            g.add(z, b)
        }
    }
}

/// Cross-entropy of `1 × |A|` logits against `answer`.
pub fn open_ended_loss(g: &mut Graph<'_>, logits: Var, answer: usize) -> Result<Var> {
    let k = g.shape(logits).1;
    if answer >= k {
        return Err(Error::Data(format!("answer index {answer} outside 0..{k}")));
    }
    g.cross_entropy(logits, answer)
}

pub fn check_count_target(target: f64) -> Result<()> {
    if !(0.0..=f64::from(MAX_COUNT)).contains(&target) {
        return Err(Error::Data(format!("count target {target} outside [0, {MAX_COUNT}]")));
    }
    Ok(())
}

/// Squared error of the raw regression output.
pub fn count_loss(g: &mut Graph<'_>, output: Var, target: f64) -> Result<Var> {
    check_count_target(target)?;
    let diff = g.add_const(output, -target);
    Ok(g.square(diff))
}

/// Rounds then clamps to `0..=10`.
pub fn count_predict(output: f64) -> u8 {
    if output.is_nan() {
        return 0;
    }
    output.round().clamp(0.0, f64::from(MAX_COUNT)) as u8
}

/// Batch hinge loss `(1/|Q|) Σ_j Σ_i max(0, 1 + s_i^j − s_t^j)`, with the
/// `i = t` term included.
pub fn hinge_loss(scores: &[Vec<f64>], truths: &[usize]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("hinge loss over an empty batch".into()));
    }
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} score rows for {} truths",
            scores.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (s, &t) in scores.iter().zip(truths) {
        if t >= s.len() {
            return Err(Error::Data(format!("truth {t} outside 0..{}", s.len())));
        }
        total += s.iter().map(|si| (1.0 + si - s[t]).max(0.0)).sum::<f64>();
    }
    Ok(total / scores.len() as f64)
}

/// Cross-entropy on plain logits.
pub fn cross_entropy(logits: &[f64], answer: usize) -> Result<f64> {
    if answer >= logits.len() {
        return Err(Error::Data(format!("answer index {answer} outside 0..{}", logits.len())));
    }
    Ok(log_sum_exp(logits) - logits[answer])
}
