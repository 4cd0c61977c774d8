//! Synthetic compositional video QA.
//!
//! Concepts are prototype vectors shared by words and frames. A question
//!
//! ```text
//! what ─┬─ A₁ ── A₂ ── … ── A_k      (the referent phrase)
//!       └─ C                         (a context word)
//! ```
//!
//! asks for the attribute of the frame showing `A₁ … A_k` together. The
//! video also shows every other k-subset of `{A₁ … A_k, C}` with its own
//! attribute, so as an unordered bag of words the candidate frames are
//! interchangeable: only the tree says which k words belong together. Each
//! question object additionally gets single-object distractor frames
//! (`gain · X + d`) that beat every phrase frame on single-word similarity.
//! The remaining frames are fillers built from objects outside the question.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, QuestionInput, Target};
use super::io::EmbeddingTable;
use super::rng::{substream, Stream};
use crate::deptree::DependencyTree;
use crate::error::{Error, Result};
use crate::hypergraph::get_subtree;
use crate::numcore::Matrix;
use crate::qahead::TaskKind;

pub const QUESTION_WORD: &str = "what";
const MAX_RESAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Shared word and visual feature width.
    pub dim: usize,
    pub n_objects: usize,
    pub n_attributes: usize,
    /// Object words in the referent phrase.
    pub arity: usize,
    pub frames: usize,
    pub clips: usize,
    /// Single-object distractor frames per question object.
    pub distractors_per_word: usize,
    pub distractor_gain: f64,
    /// Per-coordinate std of frame noise.
    pub noise: f64,
    /// Per-coordinate std of word-embedding noise around the prototypes.
    pub embedding_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_train: 2000,
            n_test: 500,
            dim: 16,
            n_objects: 10,
            n_attributes: 6,
            arity: 2,
            frames: 8,
            clips: 4,
            distractors_per_word: 1,
            distractor_gain: 1.3,
            noise: 0.1,
            embedding_noise: 0.05,
        }
    }
}

impl SynthSpec {
    fn compositional(&self) -> bool {
        self.arity >= 2
    }

    /// Phrase frames (answer plus swaps) and single-object distractors.
    fn structured_frames(&self) -> usize {
        if self.compositional() {
            (self.arity + 1) * (1 + self.distractors_per_word)
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("infeasible synthetic spec: {m}")));
        if self.dim == 0 || self.arity == 0 || self.clips == 0 {
            return fail("dim, arity and clips must be positive".into());
        }
        let objects_needed = if self.compositional() { self.arity + 2 } else { 2 };
        if self.n_objects < objects_needed {
            return fail(format!(
                "arity {} needs {objects_needed} object prototypes, have {}",
                self.arity, self.n_objects
            ));
        }
        let attrs_needed = if self.compositional() { self.arity + 2 } else { 2 };
        if self.n_attributes < attrs_needed {
            return fail(format!(
                "arity {} needs {attrs_needed} distinct attributes, have {}",
                self.arity, self.n_attributes
            ));
        }
        if self.frames < self.structured_frames() {
            return fail(format!(
                "{} frames cannot hold {} phrase and distractor frames",
                self.frames,
                self.structured_frames()
            ));
        }
        if self.clips > self.frames {
            return fail(format!("{} clips from {} frames", self.clips, self.frames));
        }
        for (name, v) in [
            ("distractor_gain", self.distractor_gain),
            ("noise", self.noise),
            ("embedding_noise", self.embedding_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Generated splits plus the generating prototypes.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub embeddings: EmbeddingTable,
    /// `n_objects × dim`, unit rows.
    pub objects: Matrix,
    /// `n_attributes × dim`, unit rows; row `k` is answer `k`.
    pub attributes: Matrix,
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b) + 1e-12)
}

/// Unit prototypes; mutually orthogonal when `n ≤ dim`.
fn prototypes<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian(rng, dim, 1.0);
        if out.len() < dim {
            for u in &out {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= d * y;
                }
            }
        }
        let l = norm(&v);
        if l > 1e-6 {
            out.push(v.iter().map(|x| x / l).collect());
        }
    }
    out
}

fn f32_round(v: &mut [f64]) {
    for x in v {
        *x = f64::from(*x as f32);
    }
}

pub fn object_word(i: usize) -> String {
    format!("obj{i}")
}

pub fn attribute_word(k: usize) -> String {
    format!("attr{k}")
}

struct Generator<'a, R> {
    spec: &'a SynthSpec,
    rng: R,
    objects: Vec<Vec<f64>>,
    attributes: Vec<Vec<f64>>,
    embeddings: EmbeddingTable,
}

impl<R: Rng> Generator<'_, R> {
    fn frame(&mut self, objects: &[usize], gain: f64, attribute: usize) -> Vec<f64> {
        let mut f = gaussian(&mut self.rng, self.spec.dim, self.spec.noise);
        for &o in objects {
            for (a, x) in f.iter_mut().zip(&self.objects[o]) {
                *a += gain * x;
            }
        }
        for (a, x) in f.iter_mut().zip(&self.attributes[attribute]) {
            *a += x;
        }
        f
    }

    fn example(&mut self, id: String) -> Result<Example> {
        let s = self.spec;
        let mut objs: Vec<usize> = (0..s.n_objects).collect();
        objs.shuffle(&mut self.rng);
        let mut attrs: Vec<usize> = (0..s.n_attributes).collect();
        attrs.shuffle(&mut self.rng);

        let mut frames: Vec<Vec<f64>> = Vec::with_capacity(s.frames);
        let (question_objs, fillers, answer, filler_attrs) = if s.compositional() {
            // objs[..arity] is the phrase, objs[arity] the context word
            let question_objs = objs[..=s.arity].to_vec();
            let fillers = objs[s.arity + 1..].to_vec();
            for drop in (0..=s.arity).rev() {
                let subset: Vec<usize> = question_objs
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != drop)
                    .map(|(_, &o)| o)
                    .collect();
                // drop == arity removes the context word: the answer frame
                let f = self.frame(&subset, 1.0, attrs[s.arity - drop]);
                frames.push(f);
            }
            let single = attrs[s.arity + 1];
            for &o in &question_objs {
                for _ in 0..s.distractors_per_word {
                    let f = self.frame(&[o], s.distractor_gain, single);
                    frames.push(f);
                }
            }
            (question_objs, fillers, attrs[0], attrs[s.arity + 1..].to_vec())
        } else {
            let f = self.frame(&objs[..1], 1.0, attrs[0]);
            frames.push(f);
            (objs[..1].to_vec(), objs[1..].to_vec(), attrs[0], attrs[1..].to_vec())
        };
        while frames.len() < s.frames {
            let n = self.rng.gen_range(1..=2.min(fillers.len()));
            let chosen: Vec<usize> = fillers.choose_multiple(&mut self.rng, n).copied().collect();
            let attr = *filler_attrs.choose(&mut self.rng).expect("nonempty");
            let f = self.frame(&chosen, 1.0, attr);
            frames.push(f);
        }
        frames.shuffle(&mut self.rng);

        let mut fdata = frames.concat();
        f32_round(&mut fdata);
        let fm = Matrix::from_vec(s.frames, s.dim, fdata)?;
        let mut cdata = Vec::with_capacity(s.clips * s.dim);
        for c in 0..s.clips {
            let (lo, hi) = (c * s.frames / s.clips, (c + 1) * s.frames / s.clips);
            for d in 0..s.dim {
                cdata.push((lo..hi).map(|r| fm[(r, d)]).sum::<f64>() / (hi - lo) as f64);
            }
        }
        f32_round(&mut cdata);
        let cm = Matrix::from_vec(s.clips, s.dim, cdata)?;

        let mut forms = vec![QUESTION_WORD.to_string()];
        forms.extend(question_objs.iter().map(|&o| object_word(o)));
        // what ← A₁ ← … ← A_k, and the context word hangs off "what"
        let mut heads: Vec<usize> = (0..=s.arity).collect();
        if s.compositional() {
            heads.push(1);
        }
        let tree = DependencyTree::from_heads(&forms, &heads)?;
        let q = self
            .embeddings
            .lookup(&forms)
            .map_err(|w| Error::Data(format!("no embedding for '{w}'")))?;
        Ok(Example {
            id,
            task: TaskKind::OpenEnded,
            questions: vec![QuestionInput::new(tree, q)?],
            frames: fm,
            clips: cm,
            target: Target::Answer(answer),
            candidates: Vec::new(),
        })
    }
}

fn argmax(it: impl Iterator<Item = (usize, f64)>) -> usize {
    it.fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b }).0
}

/// Frame with the highest cosine to any single object word.
pub fn word_nearest_frame(ex: &Example) -> usize {
    let q = &ex.questions[0].q;
    let frames = &ex.frames;
    argmax((1..q.rows()).flat_map(|w| (0..frames.rows()).map(move |j| (j, cosine(q.row(w), frames.row(j))))))
}

/// Frame with the highest cosine to the summed referent phrase, the
/// subtree under the first object word.
pub fn phrase_nearest_frame(ex: &Example) -> usize {
    let input = &ex.questions[0];
    let phrase_nodes = get_subtree(&input.tree, 2.min(input.tree.len())).expect("node in range");
    let mut phrase = vec![0.0; input.q.cols()];
    for n in phrase_nodes {
        for (p, v) in phrase.iter_mut().zip(input.q.row(n - 1)) {
            *p += v;
        }
    }
    argmax((0..ex.frames.rows()).map(|j| (j, cosine(&phrase, ex.frames.row(j)))))
}

/// Attribute whose prototype has the largest projection onto `frame`.
pub fn read_attribute(attributes: &Matrix, frame: &[f64]) -> usize {
    argmax((0..attributes.rows()).map(|k| (k, attributes.row(k).iter().zip(frame).map(|(a, b)| a * b).sum())))
}

fn answer_of(ex: &Example) -> Option<usize> {
    match ex.target {
        Target::Answer(a) => Some(a),
        _ => None,
    }
}

/// Accuracy of reading the attribute of the frame chosen by `pick`.
pub fn rule_accuracy(ds: &Dataset, attributes: &Matrix, pick: fn(&Example) -> usize) -> f64 {
    let hits = ds
        .examples
        .iter()
        .filter(|ex| Some(read_attribute(attributes, ex.frames.row(pick(ex)))) == answer_of(ex))
        .count();
    hits as f64 / ds.len().max(1) as f64
}

/// Fraction of examples whose best single-word frame is not the frame the
/// phrase refers to.
pub fn word_misdirection_rate(ds: &Dataset) -> f64 {
    let n = ds
        .examples
        .iter()
        .filter(|ex| word_nearest_frame(ex) != phrase_nearest_frame(ex))
        .count();
    n as f64 / ds.len().max(1) as f64
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = substream(spec.seed, Stream::Data);
    let protos = prototypes(&mut rng, spec.n_objects + spec.n_attributes, spec.dim);
    let (objects, attributes) = protos.split_at(spec.n_objects);

    let mut embeddings = EmbeddingTable::new(spec.dim);
    let noisy = |rng: &mut _, base: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = gaussian(rng, spec.dim, spec.embedding_noise)
            .iter()
            .zip(base)
            .map(|(n, b)| n + b)
            .collect();
        f32_round(&mut v);
        v
    };
    for (i, o) in objects.iter().enumerate() {
        let v = noisy(&mut rng, o);
        embeddings.insert(&object_word(i), &v)?;
    }
    for (k, a) in attributes.iter().enumerate() {
        let v = noisy(&mut rng, a);
        embeddings.insert(&attribute_word(k), &v)?;
    }
    let mut what = gaussian(&mut rng, spec.dim, 1.0 / (spec.dim as f64).sqrt());
    f32_round(&mut what);
    embeddings.insert(QUESTION_WORD, &what)?;

    let mut gen = Generator {
        spec,
        rng,
        objects: objects.to_vec(),
        attributes: attributes.to_vec(),
        embeddings,
    };
    let answers: Vec<String> = (0..spec.n_attributes).map(attribute_word).collect();
    let mut split = |name: &str, n: usize| -> Result<Dataset> {
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let id = format!("{name}-{i:05}");
            let mut tries = 0;
            let ex = loop {
                let ex = gen.example(id.clone())?;
                tries += 1;
                // no single word may already point at the phrase frame
                if !spec.compositional()
                    || word_nearest_frame(&ex) != phrase_nearest_frame(&ex)
                    || tries >= MAX_RESAMPLES
                {
                    break ex;
                }
            };
            examples.push(ex);
        }
        Ok(Dataset {
            examples,
            answers: answers.clone(),
        })
    };
    let train = split("train", spec.n_train)?;
    let test = split("test", spec.n_test)?;
    let to_matrix = |rows: &[Vec<f64>]| Matrix::from_rows(rows).expect("prototype rows");
    Ok(SynthData {
        spec: spec.clone(),
        train,
        test,
        objects: to_matrix(objects),
        attributes: to_matrix(attributes),
        embeddings: gen.embeddings,
    })
}
