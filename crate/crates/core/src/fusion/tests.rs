use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::deptree::{parse_conllu, SAMPLE_CONLLU};
use crate::hypergraph::build_hypergraph;
use crate::numcore::{finite_diff_check, layer_norm, row_softmax};
use crate::qahead::{self, HeadParams, TaskKind};

const DIMS: Dims = Dims { d_w: 4, d_v: 3, d: 5 };

fn sample_graph() -> SyntacticHypergraph {
    build_hypergraph(&parse_conllu(SAMPLE_CONLLU).unwrap()[0])
}

struct Setup {
    store: ParamStore,
    blocks: Vec<BlockParams>,
    bundle: FeatureBundle,
    graph: SyntacticHypergraph,
}

fn setup(n_blocks: usize, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let blocks = (0..n_blocks)
        .map(|i| BlockParams::init(&mut store, &format!("block{i}"), DIMS, false, &mut rng))
        .collect();
    let bundle = FeatureBundle::new(
        Matrix::randn(5, DIMS.d_w, 1.0, &mut rng),
        Matrix::randn(6, DIMS.d_v, 1.0, &mut rng),
        Matrix::randn(3, DIMS.d_v, 1.0, &mut rng),
    )
    .unwrap();
    Setup {
        store,
        blocks,
        bundle,
        graph: sample_graph(),
    }
}

fn mean_rows(m: &Matrix, idx: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for &i in idx {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out.iter().map(|v| v / idx.len() as f64).collect()
}

fn close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max abs diff {d}");
}

#[test]
fn hyperedge_rows_are_member_means() {
    let graph = sample_graph();
    let q = Matrix::from_rows(&(0..5).map(|i| vec![i as f64, (i * i) as f64]).collect::<Vec<_>>())
        .unwrap();
    let w = Matrix::identity(2);
    let mut g = Graph::new();
    let qv = g.constant_ref(&q);
    let wv = g.constant_ref(&w);
    let x = hyperedge_repr(&mut g, &graph, qv, wv).unwrap();
    let x = g.value(x);
    assert_eq!(x.rows(), graph.n_edges());
    for (e, edge) in graph.edges().iter().enumerate() {
        let nodes: Vec<usize> = edge.nodes().iter().map(|n| n - 1).collect();
        let want = mean_rows(&q, &nodes);
        for (a, b) in x.row(e).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // the full-sentence edge averages all five words
    assert_eq!(x.row(graph.n_edges() - 1), &[2.0, 6.0]);
}

#[test]
fn node_rows_are_incident_edge_means() {
    let graph = sample_graph();
    let xt = Matrix::from_rows(&(0..graph.n_edges()).map(|e| vec![e as f64, 1.0]).collect::<Vec<_>>())
        .unwrap();
    let id = Matrix::identity(2);
    let mut g = Graph::new();
    let xv = g.constant_ref(&xt);
    let wv = g.constant_ref(&id);
    let q = node_update(&mut g, &graph, xv, wv).unwrap();
    let q = g.value(q);
    for node in 0..5 {
        let incident: Vec<usize> = (0..graph.n_edges())
            .filter(|&e| graph.edges()[e].contains(node + 1))
            .collect();
        assert_eq!(incident.len(), graph.node_degree()[node]);
        let want = mean_rows(&xt, &incident);
        assert!((q.row(node)[0] - want[0]).abs() < 1e-12);
        assert!((q.row(node)[1] - 1.0).abs() < 1e-12);
    }
    // "girl" sits in three hyperedges
    assert_eq!(graph.node_degree()[0], 3);
}

#[test]
fn mismatched_question_rows_rejected() {
    let graph = sample_graph();
    let mut g = Graph::new();
    let q = g.constant(Matrix::zeros(4, 2));
    let w = g.constant(Matrix::identity(2));
    assert!(hyperedge_repr(&mut g, &graph, q, w).is_err());
    let x = g.constant(Matrix::zeros(3, 2));
    assert!(node_update(&mut g, &graph, x, w).is_err());
}

/// Recomputes one block with plain matrix code.
fn oracle_block(s: &Setup, p: &BlockParams, cfg: &FusionConfig) -> (Matrix, Matrix, Matrix) {
    let get = |id| s.store.get(id);
    let ln = |m: &Matrix, l: &LnParams| {
        layer_norm(m, get(l.gain).row(0), get(l.bias).row(0), cfg.ln_eps)
    };
    let mm = |a: &Matrix, b: &Matrix| a.matmul(b).unwrap();
    let add = |a: &Matrix, b: &Matrix| a.zip_map(b, |x, y| x + y).unwrap();
    let b = &s.bundle;

    let x = mm(&mm(s.graph.gather_operator(), &b.q), get(p.w));
    let plan = |v: &Matrix, t_v| match cfg.align_mode {
        AlignMode::Ot => otalign::align(&x, v, get(p.t_x), get(t_v), cfg.ot_iters).unwrap(),
        AlignMode::Dot => otalign::dot_align(&x, v, get(p.t_x), get(t_v)).unwrap(),
    };
    let g_xf = plan(&b.f, p.t_f);
    let g_xm = plan(&b.m, p.t_m);

    let v2x = {
        let t1 = mm(&mm(&row_softmax(&g_xm), &b.m), get(p.w_xm));
        let t2 = mm(&mm(&row_softmax(&g_xf), &b.f), get(p.w_xf));
        ln(&add(&add(&t1, &t2), &mm(&x, get(p.w_x))), &p.ln_vx)
    };
    let x2f = ln(
        &add(&mm(&mm(&row_softmax(&g_xf.transpose()), &x), get(p.w_fx)), &mm(&b.f, get(p.w_f))),
        &p.ln_fx,
    );
    let x2m = ln(
        &add(&mm(&mm(&row_softmax(&g_xm.transpose()), &x), get(p.w_mx)), &mm(&b.m, get(p.w_m))),
        &p.ln_mx,
    );
    let xt = ln(&add(&mm(&v2x, get(p.w_v2x)), &x), &p.ln_x);
    let ft = ln(&add(&mm(&x2f, get(p.w_x2f)), &b.f), &p.ln_f);
    let mt = ln(&add(&mm(&x2m, get(p.w_x2m)), &b.m), &p.ln_m);
    let qt = mm(&mm(s.graph.scatter_operator(), &xt), get(p.w_tilde));
    (qt, ft, mt)
}

fn run_block(s: &Setup, cfg: &FusionConfig) -> (Matrix, Matrix, Matrix) {
    let mut g = Graph::with_params(&s.store);
    let input = BundleVars::bind(&mut g, &s.bundle);
    let out = block_forward(&mut g, input, &s.graph, &s.blocks[0], cfg).unwrap();
    let b = out.bundle;
    (g.value(b.q).clone(), g.value(b.f).clone(), g.value(b.m).clone())
}

#[test]
fn block_matches_plain_matrix_oracle() {
    let s = setup(1, 3);
    for mode in [AlignMode::Ot, AlignMode::Dot] {
        let cfg = FusionConfig {
            align_mode: mode,
            ..Default::default()
        };
        let (q, f, m) = run_block(&s, &cfg);
        let (oq, of, om) = oracle_block(&s, &s.blocks[0], &cfg);
        close(&q, &oq, 1e-10);
        close(&f, &of, 1e-10);
        close(&m, &om, 1e-10);
    }
}

#[test]
fn zero_influence_leaves_normalised_residual() {
    let mut s = setup(1, 4);
    let p = s.blocks[0].clone();
    for id in [p.w_v2x, p.w_x2f, p.w_x2m] {
        *s.store.get_mut(id) = Matrix::zeros(s.store.get(id).rows(), s.store.get(id).cols());
    }
    let (_, f, m) = run_block(&s, &FusionConfig::default());
    let ones = |d| vec![1.0; d];
    let zeros = |d| vec![0.0; d];
    close(&f, &layer_norm(&s.bundle.f, &ones(3), &zeros(3), 1e-5), 1e-12);
    close(&m, &layer_norm(&s.bundle.m, &ones(3), &zeros(3), 1e-5), 1e-12);
}

#[test]
fn disabled_modalities_pass_through() {
    let s = setup(1, 5);
    let cfg = FusionConfig {
        use_frames: false,
        use_clips: false,
        ..Default::default()
    };
    let (q, f, m) = run_block(&s, &cfg);
    assert_eq!(q.shape(), (5, DIMS.d_w));
    assert_eq!(f, s.bundle.f);
    assert_eq!(m, s.bundle.m);
}

#[test]
fn output_shapes_and_word_level_edges() {
    let s = setup(1, 6);
    for mode in [SyntaxMode::Hypergraph, SyntaxMode::WordLevel] {
        let eff = effective_graph(&s.graph, mode);
        let mut g = Graph::with_params(&s.store);
        let input = BundleVars::bind(&mut g, &s.bundle);
        let out = block_forward(&mut g, input, &eff, &s.blocks[0], &FusionConfig::default()).unwrap();
        let n_s = match mode {
            SyntaxMode::Hypergraph => 7,
            SyntaxMode::WordLevel => 5,
        };
        assert_eq!(g.shape(out.hyperedges), (n_s, DIMS.d_w));
        assert_eq!(g.shape(out.alignments.g_xf.unwrap()), (n_s, 6));
        assert_eq!(g.shape(out.alignments.g_xm.unwrap()), (n_s, 3));
        assert_eq!(g.shape(out.bundle.q), (5, DIMS.d_w));
        assert_eq!(g.shape(out.bundle.f), (6, DIMS.d_v));
        assert_eq!(g.shape(out.bundle.m), (3, DIMS.d_v));
    }
}

#[test]
fn two_blocks_equal_manual_composition() {
    let s = setup(2, 7);
    let cfg = FusionConfig::default();
    let mut g = Graph::with_params(&s.store);
    let input = BundleVars::bind(&mut g, &s.bundle);
    let (stacked, aligns) = stack_forward(&mut g, input, &s.graph, &s.blocks, &cfg).unwrap();
    assert_eq!(aligns.len(), 2);

    let (q1, f1, m1) = oracle_block(&s, &s.blocks[0], &cfg);
    let second = Setup {
        store: s.store.clone(),
        blocks: vec![],
        bundle: FeatureBundle { q: q1, f: f1, m: m1 },
        graph: s.graph.clone(),
    };
    let (q2, f2, m2) = oracle_block(&second, &s.blocks[1], &cfg);
    close(g.value(stacked.q), &q2, 1e-10);
    close(g.value(stacked.f), &f2, 1e-10);
    close(g.value(stacked.m), &m2, 1e-10);
}

#[test]
fn deep_stacks_stay_finite() {
    for l in 1..=5 {
        let s = setup(l, 8);
        let mut g = Graph::with_params(&s.store);
        let input = BundleVars::bind(&mut g, &s.bundle);
        let (out, _) = stack_forward(&mut g, input, &s.graph, &s.blocks, &FusionConfig::default()).unwrap();
        for v in [out.q, out.f, out.m] {
            assert!(g.value(v).is_finite(), "depth {l}");
        }
    }
    let s = setup(0, 8);
    let mut g = Graph::with_params(&s.store);
    let input = BundleVars::bind(&mut g, &s.bundle);
    assert!(stack_forward(&mut g, input, &s.graph, &s.blocks, &FusionConfig::default()).is_err());
}

#[test]
fn frame_permutation_permutes_frame_outputs_only() {
    let s = setup(1, 9);
    let perm = [3, 0, 5, 1, 4, 2];
    let permuted = Setup {
        store: s.store.clone(),
        blocks: s.blocks.clone(),
        bundle: FeatureBundle {
            f: s.bundle.f.select_rows(&perm),
            ..s.bundle.clone()
        },
        graph: s.graph.clone(),
    };
    for mode in [AlignMode::Ot, AlignMode::Dot] {
        let cfg = FusionConfig {
            align_mode: mode,
            ..Default::default()
        };
        let (q, f, m) = run_block(&s, &cfg);
        let (pq, pf, pm) = run_block(&permuted, &cfg);
        close(&pq, &q, 1e-10);
        close(&pm, &m, 1e-10);
        close(&pf, &f.select_rows(&perm), 1e-10);
    }
}

#[test]
fn mass_scaling_sharpens_attention() {
    let mut g = Graph::new();
    let plan = g.constant(Matrix::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap());
    let flat = attention_weights(&mut g, plan, &FusionConfig::default());
    let sharp = attention_weights(
        &mut g,
        plan,
        &FusionConfig {
            align_scale: AlignScale::Mass,
            ..Default::default()
        },
    );
    assert!(g.value(sharp).row(0)[0] > g.value(flat).row(0)[0]);
    // 4 · 0.3 = 1.2 logit gap
    let want = 1.0 / (1.0 + (-1.2f64).exp());
    assert!((g.value(sharp).row(0)[0] - want).abs() < 1e-12);
}

#[test]
fn context_encoder_keeps_shape_and_order_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let p = ContextParams::init(&mut store, 3, &mut rng);
    let q = Matrix::randn(4, 3, 1.0, &mut rng);
    let mut g = Graph::with_params(&store);
    let qv = g.constant_ref(&q);
    let out = context_encode(&mut g, qv, &p).unwrap();
    assert_eq!(g.shape(out), (4, 3));
    // first row of a one-word question is tanh(qA) + tanh(qB)
    let q0 = q.slice_rows(0, 1);
    let mut g1 = Graph::with_params(&store);
    let qv = g1.constant_ref(&q0);
    let single = context_encode(&mut g1, qv, &p).unwrap();
    let a = q0.matmul(store.get(p.in_fwd)).unwrap().map(f64::tanh);
    let b = q0.matmul(store.get(p.in_bwd)).unwrap().map(f64::tanh);
    close(g1.value(single), &a.zip_map(&b, |x, y| x + y).unwrap(), 1e-14);
}

fn full_loss<'a>(
    g: &mut Graph<'a>,
    s: &'a Setup,
    head: &HeadParams,
    cfg: &FusionConfig,
) -> Result<Var> {
    let input = BundleVars::bind(g, &s.bundle);
    let (out, _) = stack_forward(g, input, &s.graph, &s.blocks, cfg)?;
    let pooled = qahead::pooled_output(g, out.q, Some(out.f), Some(out.m), head)?;
    let logits = qahead::readout(g, pooled, head)?;
    qahead::open_ended_loss(g, logits, 1)
}

#[test]
fn gradients_match_central_differences() {
    for (mode, scale) in [(AlignMode::Ot, AlignScale::None), (AlignMode::Dot, AlignScale::Mass)] {
        let mut s = setup(2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let head = HeadParams::init(&mut s.store, DIMS.d_w, DIMS.d_v, 4, &TaskKind::OpenEnded, 3, &mut rng)
            .unwrap();
        let cfg = FusionConfig {
            align_mode: mode,
            align_scale: scale,
            ..Default::default()
        };
        let store = s.store.clone();
        let report = finite_diff_check(&store, 1e-5, |g| full_loss(g, &s, &head, &cfg)).unwrap();
        assert!(report.passes(1e-4), "{mode:?}: {report:?}");
        assert_eq!(report.entries + report.kinks, store.num_scalars());
    }
}
