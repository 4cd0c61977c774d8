use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use scan_core::deptree::parse_conllu;
use scan_core::fusion::{AlignMode, SyntaxMode};
use scan_core::otalign::{self, mean_row_entropy};
use scan_core::pipeline::experiment::synthetic_train_config;
use scan_core::pipeline::gradcheck::gradcheck_suite;
use scan_core::pipeline::io::matrix_csv;
use scan_core::pipeline::synth::{phrase_nearest_frame, rule_accuracy, word_nearest_frame};
use scan_core::pipeline::{
    evaluate, load_dataset, read_feature_container, synth_generate, train as run_training, write_dataset,
    EmbeddingTable, Model, Prediction, QuestionInput, SynthSpec, TrainConfig,
};
use scan_core::{DependencyTree, Matrix};

use crate::{
    AlignArgs, EvalArgs, GradcheckArgs, HypergraphArgs, InspectArgs, Mode, Syntax, SynthArgs, TrainArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn write_json(path: Option<&Path>, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn syntax_mode(s: Syntax) -> SyntaxMode {
    match s {
        Syntax::Hypergraph => SyntaxMode::Hypergraph,
        Syntax::WordLevel => SyntaxMode::WordLevel,
    }
}

fn align_mode(m: Mode) -> AlignMode {
    match m {
        Mode::Ot => AlignMode::Ot,
        Mode::Dot => AlignMode::Dot,
    }
}

fn read_sentence(path: &Path, k: usize) -> Result<DependencyTree> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut trees = parse_conllu(&text).with_context(|| path.display().to_string())?;
    if k >= trees.len() {
        bail!("{} has {} sentence(s), no sentence {k}", path.display(), trees.len());
    }
    Ok(trees.swap_remove(k))
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        seed: a.seed.unwrap_or(d.seed),
        n_train: a.n_train.unwrap_or(d.n_train),
        n_test: a.n_test.unwrap_or(d.n_test),
        dim: a.dim.unwrap_or(d.dim),
        arity: a.arity.unwrap_or(d.arity),
        noise: a.noise.unwrap_or(d.noise),
        frames: a.frames.unwrap_or(d.frames),
        ..d
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = synth_generate(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    data.embeddings.write(&a.out.join("embeddings.txt"))?;
    let train = write_dataset(&a.out, "train", &data.train, "embeddings.txt")?;
    let test = write_dataset(&a.out, "test", &data.test, "embeddings.txt")?;
    let config = a.out.join("config.toml");
    fs::write(&config, synthetic_train_config(&spec).to_toml_string())?;
    write_json(
        None,
        &json!({
            "train": train,
            "test": test,
            "config": config,
            "train_examples": data.train.len(),
            "test_examples": data.test.len(),
            "answers": data.train.answers.len(),
            "word_rule_accuracy": rule_accuracy(&data.test, &data.attributes, word_nearest_frame),
            "phrase_rule_accuracy": rule_accuracy(&data.test, &data.attributes, phrase_nearest_frame),
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn build_hypergraph(a: HypergraphArgs) -> Result<ExitCode> {
    let tree = read_sentence(&a.conllu, a.sentence)?;
    let graph = match syntax_mode(a.syntax) {
        SyntaxMode::Hypergraph => scan_core::hypergraph::build_hypergraph(&tree),
        SyntaxMode::WordLevel => scan_core::SyntacticHypergraph::identity(tree.len()),
    };
    write_json(a.out.as_deref(), &graph.export(Some(&tree)))?;
    if let Some(p) = &a.csv {
        fs::write(p, graph.incidence_csv(Some(&tree))).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn align(a: AlignArgs) -> Result<ExitCode> {
    let tree = read_sentence(&a.conllu, a.sentence)?;
    let table = EmbeddingTable::read(&a.embeddings)?;
    let q = table
        .lookup(&tree.forms())
        .map_err(|w| anyhow!("token '{w}' has no embedding in {}", a.embeddings.display()))?;
    let question = QuestionInput::new(tree, q)?;
    let frames = read_feature_container(&a.frames)?;

    let (g, syntax, mode, iters) = match &a.model {
        Some(path) => {
            let mut model = Model::load(path)?;
            if let Some(m) = a.mode {
                model.config.align_mode = align_mode(m);
            }
            if let Some(n) = a.iters {
                model.config.ot_iters = n;
            }
            if let Some(s) = a.syntax {
                model.config.syntax_mode = syntax_mode(s);
            }
            model.config.validate().map_err(|e| usage(e.to_string()))?;
            let clips = match &a.clips {
                Some(p) => read_feature_container(p)?,
                None => mean_row(&frames),
            };
            let g = model
                .question_alignment(&question, &frames, &clips)?
                .ok_or_else(|| anyhow!("the model ignores frames, so it has no frame alignment"))?;
            let c = &model.config;
            (g, c.syntax_mode, c.align_mode, c.ot_iters)
        }
        None => {
            let syntax = a.syntax.map_or(SyntaxMode::Hypergraph, syntax_mode);
            let mode = a.mode.map_or(AlignMode::Ot, align_mode);
            let iters = a.iters.unwrap_or(otalign::DEFAULT_ITERS);
            if iters == 0 {
                return Err(usage("--iters must be positive"));
            }
            let (d_w, d_v) = (question.q.cols(), frames.cols());
            if d_w != d_v {
                return Err(usage(format!(
                    "word width {d_w} differs from frame width {d_v}; pass --model to use learned projections"
                )));
            }
            let x = question.graph_for(syntax).gather_operator().matmul(&question.q)?;
            let id = Matrix::identity(d_w);
            let g = match mode {
                AlignMode::Ot => otalign::align(&x, &frames, &id, &id, iters)?,
                AlignMode::Dot => otalign::dot_align(&x, &frames, &id, &id)?,
            };
            (g, syntax, mode, iters)
        }
    };

    let forms = question.tree.forms();
    let edges: Vec<Vec<&str>> = question
        .graph_for(syntax)
        .edges()
        .iter()
        .map(|e| e.nodes().iter().map(|&i| forms[i - 1]).collect())
        .collect();
    let report = json!({
        "align_mode": mode,
        "syntax_mode": syntax,
        "ot_iters": (mode == AlignMode::Ot).then_some(iters),
        "edges": edges,
        "n_frames": frames.rows(),
        "total_mass": g.sum(),
        "mean_row_entropy": mean_row_entropy(&g)?,
        "G": g.to_rows(),
    });
    write_json(a.out.as_deref(), &report)?;
    if let Some(p) = &a.csv {
        fs::write(p, matrix_csv(&g)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn mean_row(m: &Matrix) -> Matrix {
    let n = m.rows().max(1) as f64;
    Matrix::row_vector(&m.col_sums().iter().map(|v| v / n).collect::<Vec<_>>())
}

fn config_keys(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| path.display().to_string())?;
    Ok(table.keys().cloned().collect())
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let (mut cfg, mut explicit) = match &a.config {
        Some(p) => (TrainConfig::load(p)?, config_keys(p)?),
        None => (TrainConfig::default(), BTreeSet::new()),
    };
    cfg.apply_env().map_err(|e| usage(format!("SCAN_SEED: {e}")))?;
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
        explicit.insert(k.trim().to_string());
    }

    let train_set = load_dataset(&a.train, None)?;
    let (d_w, d_v) = train_set.dims()?;
    for (key, have, want) in [("d_w", &mut cfg.d_w, d_w), ("d_v", &mut cfg.d_v, d_v)] {
        if *have != want {
            if explicit.contains(key) {
                bail!("{key} = {have} but the training data has width {want}");
            }
            *have = want;
        }
    }
    let valid = a
        .valid
        .as_deref()
        .map(|p| load_dataset(p, Some(&train_set.answers)))
        .transpose()?;

    let mut model = Model::init(cfg, train_set.task()?, train_set.answers.clone())?;
    let mut sink = match &a.metrics {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let history = run_training(&mut model, &train_set, valid.as_ref(), |m| {
        let line = serde_json::to_string(m).expect("metrics serialise");
        eprintln!("{line}");
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| scan_core::Error::Data(format!("writing metrics: {e}")))?;
        }
        Ok(())
    })?;
    model.save(&a.out)?;
    let last = history.last();
    write_json(
        None,
        &json!({
            "model": a.out,
            "epochs": history.len(),
            "train_loss": last.map(|m| m.train_loss),
            "metric": last.map(|m| m.metric),
            "train_metric": last.map(|m| m.train_metric),
            "valid_metric": last.and_then(|m| m.valid_metric),
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let model = Model::load(&a.model)?;
    let ds = load_dataset(&a.data, Some(&model.answers))?;
    let ev = evaluate(&model, &ds)?;
    if let Some(p) = &a.predictions {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        for (ex, pred) in ds.examples.iter().zip(&ev.predictions) {
            let mut rec = json!({ "id": ex.id, "prediction": pred, "correct": pred.is_correct(&ex.target) });
            if let Prediction::Answer(i) = pred {
                rec["answer"] = Value::from(model.answers[*i].clone());
            }
            writeln!(w, "{rec}")?;
        }
        w.flush()?;
    }
    write_json(None, &ev)?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if a.dims == 0 {
        return Err(usage("--dims must be positive"));
    }
    if !(a.step > 0.0 && a.tol > 0.0) {
        return Err(usage("--step and --tol must be positive"));
    }
    let report = gradcheck_suite(a.dims, a.seed, a.step, a.tol)?;
    write_json(a.out.as_deref(), &report)?;
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradient check failed: max relative error {:.3e} > {:.1e}",
            report.max_rel_err, a.tol
        );
        Ok(ExitCode::from(1))
    }
}

pub fn inspect(a: InspectArgs) -> Result<ExitCode> {
    let p = a.path.as_path();
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
    let summary = match ext {
        "scnf" => {
            let m = read_feature_container(p)?;
            let (lo, hi) = m
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            json!({
                "kind": "features",
                "rows": m.rows(),
                "cols": m.cols(),
                "min": lo,
                "max": hi,
                "mean": m.sum() / m.data().len().max(1) as f64,
            })
        }
        "conllu" => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let trees = parse_conllu(&text).with_context(|| p.display().to_string())?;
            let sentences: Vec<Value> = trees
                .iter()
                .map(|t| {
                    let h = scan_core::hypergraph::build_hypergraph(t);
                    json!({ "words": t.forms(), "root": t.root(), "edges": h.export(None).edges })
                })
                .collect();
            json!({ "kind": "conllu", "sentences": sentences })
        }
        "txt" | "vec" => {
            let t = EmbeddingTable::read(p)?;
            json!({ "kind": "embeddings", "tokens": t.len(), "dim": t.dim() })
        }
        "jsonl" => {
            let ds = load_dataset(p, None)?;
            let dims = (!ds.is_empty()).then(|| ds.dims()).transpose()?;
            let task = (!ds.is_empty()).then(|| ds.task()).transpose()?;
            json!({
                "kind": "manifest",
                "examples": ds.len(),
                "task": task.map(|t| t.name()),
                "d_w": dims.map(|d| d.0),
                "d_v": dims.map(|d| d.1),
                "answers": ds.answers.len(),
            })
        }
        "json" => {
            let m = Model::load(p)?;
            json!({
                "kind": "model",
                "task": m.task.name(),
                "answers": m.answers.len(),
                "parameters": m.store.num_scalars(),
                "config": m.config,
            })
        }
        _ => {
            return Err(usage(format!(
                "cannot tell the file type of {}; expected .scnf, .conllu, .txt, .vec, .jsonl or .json",
                p.display()
            )))
        }
    };
    write_json(None, &summary)?;
    Ok(ExitCode::SUCCESS)
}
