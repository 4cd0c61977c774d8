//! Examples, JSONL manifests and their on-disk layout.
//!
//! One manifest line per example:
//!
//! ```json
//! {"id": "q17", "task": "open_ended", "question": "questions.conllu#17",
//!  "embeddings": "emb.txt", "frames": "f/q17.scnf", "clips": "c/q17.scnf",
//!  "answer": "red"}
//! ```
//!
//! `question` is a CoNLL-U path, optionally suffixed `#k` to pick the k-th
//! sentence (0-based), or a list of such references. Count examples carry
//! `"count": 3`; multiple-choice examples carry `"candidates"` (one parsed
//! question+candidate sentence each) and `"truth_index"`. Relative paths
//! resolve against the manifest's directory.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_feature_container, write_feature_container, EmbeddingTable};
use crate::deptree::{parse_conllu, DependencyTree};
use crate::error::{Error, Result};
use crate::hypergraph::{build_hypergraph, SyntacticHypergraph};
use crate::fusion::SyntaxMode;
use crate::numcore::Matrix;
use crate::qahead::{check_count_target, TaskKind};

/// One parsed sentence with its hypergraphs and word embeddings.
#[derive(Clone, Debug)]
pub struct QuestionInput {
    pub tree: DependencyTree,
    pub graph: SyntacticHypergraph,
    pub word_graph: SyntacticHypergraph,
    /// `N_w × d_w`
    pub q: Matrix,
}

impl QuestionInput {
    pub fn new(tree: DependencyTree, q: Matrix) -> Result<Self> {
        if q.rows() != tree.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for {} tokens",
                q.rows(),
                tree.len()
            )));
        }
        let graph = build_hypergraph(&tree);
        let word_graph = SyntacticHypergraph::identity(tree.len());
        Ok(QuestionInput {
            tree,
            graph,
            word_graph,
            q,
        })
    }

    pub fn graph_for(&self, mode: SyntaxMode) -> &SyntacticHypergraph {
        match mode {
            SyntaxMode::Hypergraph => &self.graph,
            SyntaxMode::WordLevel => &self.word_graph,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Index into the answer vocabulary.
    Answer(usize),
    Count(f64),
    /// Index of the correct candidate.
    Choice(usize),
}

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub task: TaskKind,
    /// One entry, or one per candidate for multiple choice.
    pub questions: Vec<QuestionInput>,
    /// `N_f × d_v`
    pub frames: Matrix,
    /// `N_c × d_v`
    pub clips: Matrix,
    pub target: Target,
    /// Display strings of multiple-choice candidates.
    pub candidates: Vec<String>,
}

impl Example {
    pub fn validate(&self, answers: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("example {}: {m}", self.id)));
        if self.questions.is_empty() {
            return bad("no question".into());
        }
        if self.frames.rows() == 0 || self.clips.rows() == 0 {
            return bad("empty frame or clip features".into());
        }
        if self.frames.cols() != self.clips.cols() {
            return bad(format!(
                "frame dim {} differs from clip dim {}",
                self.frames.cols(),
                self.clips.cols()
            ));
        }
        let d_w = self.questions[0].q.cols();
        if self.questions.iter().any(|q| q.q.cols() != d_w) {
            return bad("candidate embeddings differ in width".into());
        }
        match (&self.task, &self.target) {
            (TaskKind::OpenEnded, Target::Answer(a)) if *a < answers && self.questions.len() == 1 => Ok(()),
            (TaskKind::Count, Target::Count(c)) if self.questions.len() == 1 => check_count_target(*c),
            (TaskKind::MultipleChoice { candidates }, Target::Choice(t))
                if *t < *candidates && self.questions.len() == *candidates =>
            {
                Ok(())
            }
            _ => bad(format!("target {:?} does not fit a {} task", self.target, self.task.name())),
        }
    }
}

/// A set of examples sharing one task kind.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Open-ended answer vocabulary; empty for other tasks.
    pub answers: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The single task kind of all examples. Multiple-choice sets may mix
    /// candidate counts.
    pub fn task(&self) -> Result<TaskKind> {
        let first = self
            .examples
            .first()
            .ok_or_else(|| Error::Data("empty dataset".into()))?;
        for ex in &self.examples {
            if ex.task.name() != first.task.name() {
                return Err(Error::Data(format!(
                    "mixed task kinds: {} and {} (example {})",
                    first.task.name(),
                    ex.task.name(),
                    ex.id
                )));
            }
        }
        Ok(first.task.clone())
    }

    /// `(d_w, d_v)` shared by every example.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self
            .examples
            .first()
            .ok_or_else(|| Error::Data("empty dataset".into()))?;
        let dims = (first.questions[0].q.cols(), first.frames.cols());
        for ex in &self.examples {
            if (ex.questions[0].q.cols(), ex.frames.cols()) != dims {
                return Err(Error::Data(format!(
                    "example {} has feature dims ({}, {}), expected {dims:?}",
                    ex.id,
                    ex.questions[0].q.cols(),
                    ex.frames.cols()
                )));
            }
        }
        Ok(dims)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuestionRef {
    One(String),
    Many(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub task: String,
    pub question: QuestionRef,
    pub embeddings: String,
    pub frames: String,
    pub clips: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_index: Option<usize>,
}

#[derive(Default)]
struct Cache {
    conllu: HashMap<PathBuf, Vec<DependencyTree>>,
    embeddings: HashMap<PathBuf, EmbeddingTable>,
    features: HashMap<PathBuf, Matrix>,
}

impl Cache {
    fn sentences(&mut self, path: &Path) -> Result<&Vec<DependencyTree>> {
        if !self.conllu.contains_key(path) {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let trees = parse_conllu(&text).map_err(|e| Error::load(path, e.to_string()))?;
            self.conllu.insert(path.to_path_buf(), trees);
        }
        Ok(&self.conllu[path])
    }

    fn table(&mut self, path: &Path) -> Result<&EmbeddingTable> {
        if !self.embeddings.contains_key(path) {
            let t = EmbeddingTable::read(path)?;
            self.embeddings.insert(path.to_path_buf(), t);
        }
        Ok(&self.embeddings[path])
    }

    fn feature(&mut self, path: &Path) -> Result<Matrix> {
        if !self.features.contains_key(path) {
            let m = read_feature_container(path)?;
            self.features.insert(path.to_path_buf(), m);
        }
        Ok(self.features[path].clone())
    }
}

fn split_ref(r: &str) -> Result<(&str, Option<usize>)> {
    match r.rsplit_once('#') {
        Some((p, k)) => {
            let k = k
                .parse()
                .map_err(|_| Error::Data(format!("bad sentence selector in '{r}'")))?;
            Ok((p, Some(k)))
        }
        None => Ok((r, None)),
    }
}

fn resolve_trees(cache: &mut Cache, base: &Path, refs: &QuestionRef) -> Result<Vec<DependencyTree>> {
    let list: Vec<&str> = match refs {
        QuestionRef::One(s) => vec![s.as_str()],
        QuestionRef::Many(v) => v.iter().map(String::as_str).collect(),
    };
    let mut out = Vec::new();
    for r in list {
        let (p, k) = split_ref(r)?;
        let path = base.join(p);
        let trees = cache.sentences(&path)?;
        match k {
            Some(k) => out.push(
                trees
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("{} has no sentence {k}", path.display())))?,
            ),
            None => out.extend(trees.iter().cloned()),
        }
    }
    Ok(out)
}

/// Answer vocabulary: sorted unique answers of an open-ended manifest.
pub fn collect_answers<'r>(records: impl IntoIterator<Item = &'r ManifestRecord>) -> Vec<String> {
    records
        .into_iter()
        .filter_map(|r| r.answer.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Records of a JSONL manifest with their 1-based line numbers. Blank lines
/// are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::load(path, Error::Parse { line: i + 1, msg: e.to_string() }.to_string()))
        })
        .collect()
}

/// Loads every example of a manifest. With `answers = None` the open-ended
/// vocabulary is built from the manifest itself; otherwise an answer outside
/// `answers` is an error.
pub fn load_dataset(manifest: &Path, answers: Option<&[String]>) -> Result<Dataset> {
    let records = read_manifest(manifest)?;
    let vocab: Vec<String> = match answers {
        Some(a) => a.to_vec(),
        None => collect_answers(records.iter().map(|(_, r)| r)),
    };
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let base = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut cache = Cache::default();
    let mut examples = Vec::with_capacity(records.len());
    for (line, r) in &records {
        let located = |e: Error| Error::load(manifest, format!("line {line}, example {}: {e}", r.id));
        let ex = load_record(&mut cache, &base, r, &index).map_err(located)?;
        ex.validate(vocab.len()).map_err(located)?;
        examples.push(ex);
    }
    let ds = Dataset {
        examples,
        answers: vocab,
    };
    if !ds.is_empty() {
        ds.task().map_err(|e| Error::load(manifest, e.to_string()))?;
        ds.dims().map_err(|e| Error::load(manifest, e.to_string()))?;
    }
    Ok(ds)
}

fn load_record(
    cache: &mut Cache,
    base: &Path,
    r: &ManifestRecord,
    answers: &HashMap<&str, usize>,
) -> Result<Example> {
    let trees = resolve_trees(cache, base, &r.question)?;
    let (task, target, candidates) = match r.task.as_str() {
        "open_ended" => {
            let a = r
                .answer
                .as_deref()
                .ok_or_else(|| Error::Data("open-ended example without 'answer'".into()))?;
            let i = *answers
                .get(a)
                .ok_or_else(|| Error::Data(format!("answer '{a}' is not in the answer vocabulary")))?;
            (TaskKind::OpenEnded, Target::Answer(i), Vec::new())
        }
        "count" => {
            let c = r
                .count
                .ok_or_else(|| Error::Data("count example without 'count'".into()))?;
            (TaskKind::Count, Target::Count(c), Vec::new())
        }
        "multiple_choice" => {
            let cands = r
                .candidates
                .clone()
                .ok_or_else(|| Error::Data("multiple-choice example without 'candidates'".into()))?;
            let t = r
                .truth_index
                .ok_or_else(|| Error::Data("multiple-choice example without 'truth_index'".into()))?;
            if trees.len() != cands.len() {
                return Err(Error::Data(format!(
                    "{} candidate sentences for {} candidates",
                    trees.len(),
                    cands.len()
                )));
            }
            (
                TaskKind::MultipleChoice {
                    candidates: cands.len(),
                },
                Target::Choice(t),
                cands,
            )
        }
        other => return Err(Error::Data(format!("unknown task '{other}'"))),
    };
    if !matches!(task, TaskKind::MultipleChoice { .. }) && trees.len() != 1 {
        return Err(Error::Data(format!("expected one question sentence, found {}", trees.len())));
    }

    let table = cache.table(&base.join(&r.embeddings))?;
    let mut questions = Vec::with_capacity(trees.len());
    for tree in trees {
        let q = table
            .lookup(&tree.forms())
            .map_err(|w| Error::Data(format!("token '{w}' has no embedding")))?;
        questions.push(QuestionInput::new(tree, q)?);
    }
    Ok(Example {
        id: r.id.clone(),
        task,
        questions,
        frames: cache.feature(&base.join(&r.frames))?,
        clips: cache.feature(&base.join(&r.clips))?,
        target,
        candidates,
    })
}

/// Writes `ds` as `<dir>/<split>.jsonl` with its sentences and features
/// under `<dir>/<split>/`. `embeddings` is the manifest-relative table path.
pub fn write_dataset(dir: &Path, split: &str, ds: &Dataset, embeddings: &str) -> Result<PathBuf> {
    let sub = dir.join(split);
    let feat = sub.join("features");
    fs::create_dir_all(&feat).map_err(|e| Error::io(&feat, e))?;
    let mut conllu = String::new();
    let mut manifest = String::new();
    let mut sentence = 0usize;
    for ex in &ds.examples {
        let mut refs = Vec::with_capacity(ex.questions.len());
        for q in &ex.questions {
            let _ = writeln!(conllu, "# sent_id = {}-{}", ex.id, refs.len());
            conllu.push_str(&q.tree.to_conllu());
            refs.push(format!("{split}/questions.conllu#{sentence}"));
            sentence += 1;
        }
        let frames = format!("{split}/features/{}.frames.scnf", ex.id);
        let clips = format!("{split}/features/{}.clips.scnf", ex.id);
        write_feature_container(&dir.join(&frames), &ex.frames)?;
        write_feature_container(&dir.join(&clips), &ex.clips)?;
        let mut rec = ManifestRecord {
            id: ex.id.clone(),
            task: ex.task.name().to_string(),
            question: if refs.len() == 1 {
                QuestionRef::One(refs.remove(0))
            } else {
                QuestionRef::Many(refs)
            },
            embeddings: embeddings.to_string(),
            frames,
            clips,
            answer: None,
            count: None,
            candidates: None,
            truth_index: None,
        };
        match ex.target {
            Target::Answer(a) => {
                rec.answer = Some(
                    ds.answers
                        .get(a)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("answer index {a} has no label")))?,
                )
            }
            Target::Count(c) => rec.count = Some(c),
            Target::Choice(t) => {
                rec.candidates = Some(ex.candidates.clone());
                rec.truth_index = Some(t);
            }
        }
        manifest.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        manifest.push('\n');
    }
    let cpath = sub.join("questions.conllu");
    fs::write(&cpath, conllu).map_err(|e| Error::io(&cpath, e))?;
    let mpath = dir.join(format!("{split}.jsonl"));
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(mpath)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_selectors() {
        assert_eq!(split_ref("a/b.conllu#3").unwrap(), ("a/b.conllu", Some(3)));
        assert_eq!(split_ref("b.conllu").unwrap(), ("b.conllu", None));
        assert!(split_ref("b.conllu#x").is_err());
    }

    #[test]
    fn manifest_record_forms() {
        let r: ManifestRecord = serde_json::from_str(
            r#"{"id":"1","task":"multiple_choice","question":["q#0","q#1"],"embeddings":"e","frames":"f","clips":"c","candidates":["a","b"],"truth_index":1}"#,
        )
        .unwrap();
        assert_eq!(r.question, QuestionRef::Many(vec!["q#0".into(), "q#1".into()]));
        assert!(serde_json::from_str::<ManifestRecord>(r#"{"id":"1"}"#).is_err());
    }

    #[test]
    fn mixed_tasks_rejected() {
        let tree = DependencyTree::from_heads(&["a"], &[0]).unwrap();
        let q = QuestionInput::new(tree, Matrix::zeros(1, 2)).unwrap();
        let mk = |task, target| Example {
            id: "x".into(),
            task,
            questions: vec![q.clone()],
            frames: Matrix::zeros(1, 2),
            clips: Matrix::zeros(1, 2),
            target,
            candidates: vec![],
        };
        let ds = Dataset {
            examples: vec![mk(TaskKind::Count, Target::Count(1.0)), mk(TaskKind::OpenEnded, Target::Answer(0))],
            answers: vec!["a".into()],
        };
        assert!(ds.task().unwrap_err().to_string().contains("mixed task kinds"));
        assert!(mk(TaskKind::Count, Target::Count(11.0)).validate(0).is_err());
        assert!(mk(TaskKind::OpenEnded, Target::Answer(1)).validate(1).is_err());
    }
}
