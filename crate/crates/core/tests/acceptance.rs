//! Acceptance checks. Prints one `PASS` or `FAIL` line per criterion (plus
//! `INFO` lines with supporting numbers) and exits non-zero if any fail.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scan_core::deptree::{parse_conllu, SAMPLE_CONLLU};
use scan_core::fusion::{AlignMode, SyntaxMode};
use scan_core::hypergraph::{build_hypergraph, subtree_gen};
use scan_core::numcore::Graph;
use scan_core::otalign::{cost_matrix, dot_align, ipot, ipot_trace, mean_row_entropy, CostMatrix};
use scan_core::pipeline::experiment::{synthetic_train_config, train_and_score, Score};
use scan_core::pipeline::gradcheck::{gradcheck_suite, DEFAULT_STEP};
use scan_core::pipeline::synth::{rule_accuracy, word_misdirection_rate, word_nearest_frame};
use scan_core::pipeline::{synth_generate, train, Model, SynthData, SynthSpec, TrainConfig};
use scan_core::qahead::{count_predict, cross_entropy, hinge_loss};
use scan_core::Matrix;

use common::{heads_of, random_tree, subtree_oracle};

struct Report {
    failed: usize,
}

impl Report {
    fn line(&self, text: String) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{text}");
        let _ = out.flush();
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        self.line(format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
    }

    fn info(&self, name: &str, detail: String) {
        self.line(format!("INFO {name}: {detail}"));
    }
}

fn subtree_oracle_check(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let tree = random_tree(n, &mut rng);
        if subtree_gen(&tree) != subtree_oracle(&heads_of(&tree)) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.check(
        "subtree oracle",
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches over 1000 random trees (<= 12 nodes), {secs:.3}s"),
    );
}

fn sample_parse_check(r: &mut Report) {
    let tree = parse_conllu(SAMPLE_CONLLU).unwrap().remove(0);
    let h = build_hypergraph(&tree);
    let forms = tree.forms();
    let got: BTreeSet<BTreeSet<&str>> = h
        .edges()
        .iter()
        .map(|e| e.nodes().iter().map(|&i| forms[i - 1]).collect())
        .collect();
    let want: BTreeSet<BTreeSet<&str>> = [
        vec!["green"],
        vec!["on"],
        vec!["in", "green"],
        vec!["sitting", "on"],
        vec!["girl", "in", "green"],
        vec!["girl", "sitting", "on"],
        vec!["girl", "in", "green", "sitting", "on"],
    ]
    .into_iter()
    .map(|v| v.into_iter().collect())
    .collect();
    let ok = h.n_edges() == 7 && got == want && h.edge_degree() == [1, 1, 2, 2, 3, 3, 5];
    r.check(
        "sample parse hypergraph",
        ok,
        format!("{} edges, degrees {:?}", h.n_edges(), h.edge_degree()),
    );
}

fn random_cost<R: Rng>(rng: &mut R, max_s: usize, max_f: usize) -> CostMatrix {
    let (ns, nf, d) = (rng.gen_range(1..=max_s), rng.gen_range(1..=max_f), rng.gen_range(2..=16));
    let x = Matrix::randn(ns, d, 1.0, rng);
    let f = Matrix::randn(nf, d, 1.0, rng);
    let id = Matrix::identity(d);
    cost_matrix(&x, &f, &id, &id).unwrap()
}

fn ot_marginal_check(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut col_worst, mut row_worst, mut mass_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut monotone = 0;
    let mut improved = 0;
    let mut mean_dev = [0.0f64; 10];
    for _ in 0..200 {
        let cost = random_cost(&mut rng, 20, 30);
        let trace = ipot_trace(&cost, 10).unwrap();
        let last = trace.last().unwrap();
        col_worst = col_worst.max(last.col_deviation());
        row_worst = row_worst.max(last.row_deviation());
        mass_worst = mass_worst.max((last.total_mass() - 1.0).abs());
        let devs: Vec<f64> = trace.iter().map(|p| p.row_deviation()).collect();
        if devs.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
            monotone += 1;
        }
        if devs[9] <= devs[0] {
            improved += 1;
        }
        for (m, d) in mean_dev.iter_mut().zip(&devs) {
            *m += d / 200.0;
        }
    }
    r.check(
        "OT column marginals",
        col_worst <= 1e-9,
        format!("max |col sum - 1/N_f| = {col_worst:.2e} over 200 plans at 10 iterations"),
    );
    r.check(
        "OT row marginals",
        row_worst <= 5e-2,
        format!("max |row sum - 1/N_s| = {row_worst:.2e}"),
    );
    r.check("OT total mass", mass_worst <= 1e-6, format!("max |mass - 1| = {mass_worst:.2e}"));
    r.check(
        "OT deviation non-increasing",
        monotone as f64 >= 0.95 * 200.0,
        format!("{monotone}/200 instances have non-increasing row deviation over iterations 1..10"),
    );
    let seq: Vec<String> = mean_dev.iter().map(|v| format!("{v:.1e}")).collect();
    r.info(
        "OT row deviation by iteration",
        format!(
            "mean over instances {}; lower at 10 than at 1 on {improved}/200",
            seq.join(" ")
        ),
    );
}

fn two_by_two_check(r: &mut Report) {
    let c = CostMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
    let p = ipot(&c, 200).unwrap();
    let m = p.matrix();
    let off = m[(0, 1)] + m[(1, 0)];
    r.check("OT 2x2 exactness", off <= 1e-3, format!("off-diagonal mass {off:.2e} at 200 iterations"));
}

fn unit_rows<R: Rng>(n: usize, d: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::randn(n, d, 1.0, rng);
    for i in 0..n {
        let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Fraction of pairs where the OT plan has lower mean row entropy, and the
/// two mean entropies.
fn entropy_race<R: Rng>(rng: &mut R, sample: impl Fn(&mut R) -> (Matrix, Matrix, Matrix, Matrix)) -> (usize, f64, f64) {
    let mut wins = 0;
    let (mut ot_sum, mut dot_sum) = (0.0, 0.0);
    for _ in 0..500 {
        let (x, f, t_x, t_f) = sample(rng);
        let ot = mean_row_entropy(ipot(&cost_matrix(&x, &f, &t_x, &t_f).unwrap(), 10).unwrap().matrix()).unwrap();
        let dot = mean_row_entropy(&dot_align(&x, &f, &t_x, &t_f).unwrap()).unwrap();
        ot_sum += ot;
        dot_sum += dot;
        if ot < dot {
            wins += 1;
        }
    }
    (wins, ot_sum / 500.0, dot_sum / 500.0)
}

fn sparsity_check(r: &mut Report) {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Unit-norm rows and identity projections: dot attention is a softmax
    // over the same cosine similarities the transport cost is built from.
    let (wins, ot, dot) = entropy_race(&mut rng, |rng| {
        let (ns, nf) = (rng.gen_range(2..=20), rng.gen_range(2..=30));
        (unit_rows(ns, d, rng), unit_rows(nf, d, rng), Matrix::identity(d), Matrix::identity(d))
    });
    r.check(
        "OT sparser than dot attention",
        wins as f64 >= 0.9 * 500.0,
        format!("OT entropy lower on {wins}/500 random unit-norm pairs (mean {ot:.3} vs {dot:.3} nats)"),
    );
    // Dot attention sharpens with feature scale while the cosine cost does
    // not; at Xavier-projected Gaussian scale the comparison flips.
    let (wins, ot, dot) = entropy_race(&mut rng, |rng| {
        let (ns, nf) = (rng.gen_range(2..=20), rng.gen_range(2..=30));
        (
            Matrix::randn(ns, d, 1.0, rng),
            Matrix::randn(nf, d, 1.0, rng),
            Matrix::xavier(d, d, rng),
            Matrix::xavier(d, d, rng),
        )
    });
    r.info(
        "entropy at raw Gaussian scale",
        format!("OT lower on {wins}/500 pairs (mean {ot:.3} vs {dot:.3} nats)"),
    );
}

fn gradient_check(r: &mut Report) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let (mut entries, mut kinks) = (0, 0);
    let mut cases = 0;
    for (dims, seed) in [(4, 7), (8, 11)] {
        let s = gradcheck_suite(dims, seed, DEFAULT_STEP, 1e-4).unwrap();
        worst = worst.max(s.max_rel_err);
        for c in &s.cases {
            entries += c.report.entries;
            kinks += c.report.kinks;
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.check(
        "gradient suite",
        worst <= 1e-4 && kinks * 100 <= entries && secs < 60.0,
        format!(
            "max rel err {worst:.2e} over {entries} entries ({cases} head/alignment cases, dims 4 and 8), \
             {kinks} entries at a kink skipped, {secs:.1}s"
        ),
    );
}

fn variant(data: &SynthData, base: &TrainConfig, align_mode: AlignMode, syntax_mode: SyntaxMode) -> Score {
    let cfg = TrainConfig {
        align_mode,
        syntax_mode,
        ..base.clone()
    };
    train_and_score(data, cfg, |_| Ok(())).unwrap()
}

fn ablation_check(r: &mut Report) {
    let start = Instant::now();
    let spec = SynthSpec::default();
    let data = synth_generate(&spec).unwrap();
    r.info(
        "synthetic task",
        format!(
            "{} train / {} test, arity {}; single-word nearest frame misleads on {:.1}% of test questions, word rule accuracy {:.1}%",
            data.train.len(),
            data.test.len(),
            spec.arity,
            100.0 * word_misdirection_rate(&data.test),
            100.0 * rule_accuracy(&data.test, &data.attributes, word_nearest_frame)
        ),
    );
    let base = synthetic_train_config(&spec);
    let full = variant(&data, &base, AlignMode::Ot, SyntaxMode::Hypergraph);
    let word = variant(&data, &base, AlignMode::Ot, SyntaxMode::WordLevel);
    let dot = variant(&data, &base, AlignMode::Dot, SyntaxMode::Hypergraph);
    let secs = start.elapsed().as_secs_f64();
    let pct = |s: &Score| 100.0 * s.accuracy;
    r.info(
        "ablation accuracies",
        format!(
            "full {:.1}%, word-level {:.1}%, dot-product {:.1}% ({} epochs, {} OT iterations)",
            pct(&full),
            pct(&word),
            pct(&dot),
            base.epochs,
            base.ot_iters
        ),
    );
    r.check(
        "ablation: hypergraph beats word level",
        pct(&full) - pct(&word) >= 5.0,
        format!("gap {:.1} points", pct(&full) - pct(&word)),
    );
    r.check(
        "ablation: OT entropy below dot",
        full.entropy < dot.entropy,
        format!("{:.3} vs {:.3} nats", full.entropy, dot.entropy),
    );
    r.check(
        "ablation: OT accuracy within 1 point of dot",
        pct(&full) >= pct(&dot) - 1.0,
        format!("{:.1}% vs {:.1}%", pct(&full), pct(&dot)),
    );
    r.check("ablation runtime", secs < 1800.0, format!("{secs:.0}s for three training runs"));

    // The library default of 10 iterations, for reference.
    let short = TrainConfig {
        ot_iters: scan_core::otalign::DEFAULT_ITERS,
        ..base.clone()
    };
    let s = variant(&data, &short, AlignMode::Ot, SyntaxMode::Hypergraph);
    r.info(
        "full model at 10 OT iterations",
        format!("accuracy {:.1}%, entropy {:.3} nats", pct(&s), s.entropy),
    );
}

fn depth_check(r: &mut Report) {
    let spec = SynthSpec {
        n_train: 500,
        n_test: 200,
        ..Default::default()
    };
    let data = synth_generate(&spec).unwrap();
    let base = TrainConfig {
        epochs: 10,
        ot_iters: 10,
        ..synthetic_train_config(&spec)
    };
    let mut accs = Vec::new();
    let mut finite = true;
    for blocks in 1..=5 {
        match train_and_score(&data, TrainConfig { blocks, ..base.clone() }, |_| Ok(())) {
            Ok(s) => {
                finite &= s.history.iter().all(|e| e.train_loss.is_finite()) && s.accuracy.is_finite();
                accs.push(format!("l={blocks} {:.1}%", 100.0 * s.accuracy));
            }
            Err(e) => {
                finite = false;
                accs.push(format!("l={blocks} error: {e}"));
            }
        }
    }
    r.check("block depth sweep", finite, accs.join(", "));
}

fn loss_check(r: &mut Report) {
    let h1 = hinge_loss(&[vec![0.0, 2.0]], &[1]).unwrap();
    let h2 = hinge_loss(&[vec![2.0, 0.0]], &[1]).unwrap();
    let mut g = Graph::new();
    let s = g.constant(Matrix::row_vector(&[2.0, 0.0]));
    let h = g.hinge(s, 1).unwrap();
    let tape = g.scalar(h);
    r.check(
        "hinge hand cases",
        h1 == 1.0 && h2 == 4.0 && tape == 4.0,
        format!("{h1}, {h2} (tape {tape})"),
    );

    let worst = [2usize, 3, 7, 100]
        .iter()
        .map(|&k| (cross_entropy(&vec![0.37; k], k / 2).unwrap() - (k as f64).ln()).abs())
        .fold(0.0, f64::max);
    r.check("uniform cross-entropy is ln k", worst <= 1e-12, format!("max error {worst:.1e}"));

    let cases = [(3.4, 3u8), (-0.7, 0), (10.9, 10), (2.5, 3), (1e9, 10), (-1e9, 0), (f64::NAN, 0)];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(x, want)| count_predict(*x) != *want)
        .map(|(x, _)| format!("{x} -> {}", count_predict(*x)))
        .collect();
    r.check(
        "count prediction clamps to 0..10",
        bad.is_empty(),
        if bad.is_empty() { "all cases hold".into() } else { bad.join(", ") },
    );
}

fn determinism_check(r: &mut Report) {
    let spec = SynthSpec {
        n_train: 200,
        n_test: 50,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let data = synth_generate(&spec).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ot_iters: 10,
            ..synthetic_train_config(&spec)
        };
        let mut m = Model::init(cfg, data.train.task().unwrap(), data.train.answers.clone()).unwrap();
        let mut log = Vec::new();
        train(&mut m, &data.train, Some(&data.test), |e| {
            log.extend_from_slice(serde_json::to_string(e).unwrap().as_bytes());
            log.push(b'\n');
            Ok(())
        })
        .unwrap();
        log
    };
    let (a, b) = (run(), run());
    r.check(
        "determinism",
        a == b && !a.is_empty(),
        format!("two seeded runs wrote {} and {} identical log bytes", a.len(), b.len()),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    r.info(
        "benchmark tables",
        "full-dataset accuracy tables need the original video datasets and CNN features; not reproduced here".into(),
    );
    subtree_oracle_check(&mut r);
    sample_parse_check(&mut r);
    ot_marginal_check(&mut r);
    two_by_two_check(&mut r);
    sparsity_check(&mut r);
    gradient_check(&mut r);
    loss_check(&mut r);
    determinism_check(&mut r);
    depth_check(&mut r);
    ablation_check(&mut r);
    r.line(format!("{} criteria failed", r.failed));
    if r.failed > 0 {
        std::process::exit(1);
    }
}
