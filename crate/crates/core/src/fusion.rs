//! Cross-modality-aware hypergraph convolution.
//!
//! One block maps `{Q, F, M}` to `{Q̃, F̃, M̃}`:
//!
//! 1. hyperedge gathering `X = D_e⁻¹ Hᵀ Q W`
//! 2. alignments `G_xf`, `G_xm` (transport plan or dot-product softmax)
//! 3. influences video→hyperedge, hyperedge→frame and hyperedge→clip
//! 4. layer-normalised residual updates of all three modalities
//! 5. node update `Q̃ = D_v⁻¹ H X̃ W̃`
//!
//! Blocks stack left to right without sharing parameters.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::SyntacticHypergraph;
use crate::numcore::{Graph, Matrix, ParamId, ParamStore, Var};
use crate::otalign;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Transport plan from the proximal-point solver.
    Ot,
    /// Row softmax of projected dot products.
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxMode {
    Hypergraph,
    /// Singleton hyperedges only: word-level alignment.
    WordLevel,
}

/// Scaling applied to an alignment matrix before the row softmax of the
/// influence terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignScale {
    /// Use the alignment entries as they are.
    None,
    /// Rescale so the mean entry is one: `N_s·N_f` for a transport plan,
    /// `N_f` for dot-product attention.
    Mass,
}

/// Settings that shape one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub align_mode: AlignMode,
    pub syntax_mode: SyntaxMode,
    pub ot_iters: usize,
    pub align_scale: AlignScale,
    /// Extra multiplier on the alignment before the softmax.
    pub align_temperature: f64,
    pub ln_eps: f64,
    pub use_frames: bool,
    pub use_clips: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            align_mode: AlignMode::Ot,
            syntax_mode: SyntaxMode::Hypergraph,
            ot_iters: otalign::DEFAULT_ITERS,
            align_scale: AlignScale::None,
            align_temperature: 1.0,
            ln_eps: 1e-5,
            use_frames: true,
            use_clips: true,
        }
    }
}

/// Question, frame and clip features of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// `N_w × d_w`
    pub q: Matrix,
    /// `N_f × d_v`
    pub f: Matrix,
    /// `N_c × d_v`
    pub m: Matrix,
}

impl FeatureBundle {
    pub fn new(q: Matrix, f: Matrix, m: Matrix) -> Result<Self> {
        if f.cols() != m.cols() {
            return Err(Error::Shape(format!(
                "frame dim {} differs from clip dim {}",
                f.cols(),
                m.cols()
            )));
        }
        for (name, x) in [("question", &q), ("frames", &f), ("clips", &m)] {
            if x.rows() == 0 {
                return Err(Error::Shape(format!("{name} matrix has no rows")));
            }
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("{name} features")));
            }
        }
        Ok(FeatureBundle { q, f, m })
    }
}

/// The three modality nodes flowing between blocks.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub q: Var,
    pub f: Var,
    pub m: Var,
}

impl BundleVars {
    pub fn bind<'a>(g: &mut Graph<'a>, b: &'a FeatureBundle) -> Self {
        BundleVars {
            q: g.constant_ref(&b.q),
            f: g.constant_ref(&b.f),
            m: g.constant_ref(&b.m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_w: usize,
    pub d_v: usize,
    pub d: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LnParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LnParams {
    fn init(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LnParams {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, d, 1.0)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, d)),
        }
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var, eps: f64) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias, eps)
    }
}

/// Weights of one fusion block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    /// Hyperedge gathering, `d_w × d_w`.
    pub w: ParamId,
    /// Alignment projections: `d_w × d`, `d_v × d`, `d_v × d`.
    pub t_x: ParamId,
    pub t_f: ParamId,
    pub t_m: ParamId,
    /// Video→hyperedge mixers: `d_v × d`, `d_v × d`, `d_w × d`.
    pub w_xm: ParamId,
    pub w_xf: ParamId,
    pub w_x: ParamId,
    /// Hyperedge→frame and hyperedge→clip: `d_w × d` each.
    pub w_fx: ParamId,
    pub w_mx: ParamId,
    /// Frame/clip self terms: `d_v × d` each.
    pub w_f: ParamId,
    pub w_m: ParamId,
    /// Residual projections back to the input widths.
    pub w_v2x: ParamId,
    pub w_x2f: ParamId,
    pub w_x2m: ParamId,
    /// Node update, `d_w × d_w`.
    pub w_tilde: ParamId,
    pub ln_vx: LnParams,
    pub ln_fx: LnParams,
    pub ln_mx: LnParams,
    pub ln_x: LnParams,
    pub ln_f: LnParams,
    pub ln_m: LnParams,
}

impl BlockParams {
    /// Registers a freshly initialised block under `prefix`. With
    /// `tied_projections`, `W` starts as the identity and (when `d_w == d_v`)
    /// `T_f` and `T_m` start as copies of `T_x`, so initial costs reflect the
    /// raw feature geometry.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: Dims,
        tied_projections: bool,
        rng: &mut R,
    ) -> Self {
        let Dims { d_w, d_v, d } = dims;
        let add = |store: &mut ParamStore, name: &str, r: usize, c: usize, rng: &mut R| {
            store.add(format!("{prefix}.{name}"), Matrix::xavier(r, c, rng))
        };
        let w = if tied_projections {
            store.add(format!("{prefix}.W"), Matrix::identity(d_w))
        } else {
            add(store, "W", d_w, d_w, rng)
        };
        let t_x = add(store, "T_x", d_w, d, rng);
        let (t_f, t_m) = if tied_projections && d_w == d_v {
            let tx = store.get(t_x).clone();
            (
                store.add(format!("{prefix}.T_f"), tx.clone()),
                store.add(format!("{prefix}.T_m"), tx),
            )
        } else {
            (add(store, "T_f", d_v, d, rng), add(store, "T_m", d_v, d, rng))
        };
        BlockParams {
            w,
            t_x,
            t_f,
            t_m,
            w_xm: add(store, "W_xm", d_v, d, rng),
            w_xf: add(store, "W_xf", d_v, d, rng),
            w_x: add(store, "W_x", d_w, d, rng),
            w_fx: add(store, "W_fx", d_w, d, rng),
            w_mx: add(store, "W_mx", d_w, d, rng),
            w_f: add(store, "W_f", d_v, d, rng),
            w_m: add(store, "W_m", d_v, d, rng),
            w_v2x: add(store, "W_v2x", d, d_w, rng),
            w_x2f: add(store, "W_x2f", d, d_v, rng),
            w_x2m: add(store, "W_x2m", d, d_v, rng),
            w_tilde: add(store, "W_tilde", d_w, d_w, rng),
            ln_vx: LnParams::init(store, &format!("{prefix}.ln_vx"), d),
            ln_fx: LnParams::init(store, &format!("{prefix}.ln_fx"), d),
            ln_mx: LnParams::init(store, &format!("{prefix}.ln_mx"), d),
            ln_x: LnParams::init(store, &format!("{prefix}.ln_x"), d_w),
            ln_f: LnParams::init(store, &format!("{prefix}.ln_f"), d_v),
            ln_m: LnParams::init(store, &format!("{prefix}.ln_m"), d_v),
        }
    }
}

/// Bidirectional recurrent pass over the question rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextParams {
    pub in_fwd: ParamId,
    pub rec_fwd: ParamId,
    pub in_bwd: ParamId,
    pub rec_bwd: ParamId,
}

impl ContextParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, d_w: usize, rng: &mut R) -> Self {
        let mut add = |name: &str| store.add(format!("context.{name}"), Matrix::xavier(d_w, d_w, rng));
        ContextParams {
            in_fwd: add("in_fwd"),
            rec_fwd: add("rec_fwd"),
            in_bwd: add("in_bwd"),
            rec_bwd: add("rec_bwd"),
        }
    }
}

/// Row `t` of the output is `h_t^fwd + h_t^bwd` with
/// `h_t = tanh(q_t A + h_{t∓1} U)`.
pub fn context_encode(g: &mut Graph<'_>, q: Var, p: &ContextParams) -> Result<Var> {
    let (n, d) = g.shape(q);
    let (a_f, u_f) = (g.param(p.in_fwd), g.param(p.rec_fwd));
    let (a_b, u_b) = (g.param(p.in_bwd), g.param(p.rec_bwd));
    let proj_f = g.matmul(q, a_f)?;
    let proj_b = g.matmul(q, a_b)?;

    let run = |g: &mut Graph<'_>, proj: Var, rec: Var, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Option<Var>>> {
        let mut states = vec![None; n];
        let mut prev: Option<Var> = None;
        for t in order {
            let x = g.slice_rows(proj, t, 1)?;
            let pre = match prev {
                Some(h) => {
                    let r = g.matmul(h, rec)?;
                    g.add(x, r)?
                }
                None => x,
            };
            let h = g.tanh(pre);
            states[t] = Some(h);
            prev = Some(h);
        }
        Ok(states)
    };
    let fwd = run(g, proj_f, u_f, &mut (0..n))?;
    let bwd = run(g, proj_b, u_b, &mut (0..n).rev())?;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let (hf, hb) = (fwd[t].expect("state"), bwd[t].expect("state"));
        rows.push(g.add(hf, hb)?);
    }
    let out = g.concat_rows(&rows)?;
    debug_assert_eq!(g.shape(out), (n, d));
    Ok(out)
}

/// Hypergraph actually used under `mode`.
pub fn effective_graph(graph: &SyntacticHypergraph, mode: SyntaxMode) -> Cow<'_, SyntacticHypergraph> {
    match mode {
        SyntaxMode::Hypergraph => Cow::Borrowed(graph),
        SyntaxMode::WordLevel => Cow::Owned(SyntacticHypergraph::identity(graph.n_nodes())),
    }
}

/// `X = D_e⁻¹ Hᵀ Q W`
pub fn hyperedge_repr<'a>(
    g: &mut Graph<'a>,
    graph: &'a SyntacticHypergraph,
    q: Var,
    w: Var,
) -> Result<Var> {
    if g.shape(q).0 != graph.n_nodes() {
        return Err(Error::Shape(format!(
            "question has {} rows but the hypergraph has {} nodes",
            g.shape(q).0,
            graph.n_nodes()
        )));
    }
    let gather = g.constant_ref(graph.gather_operator());
    let hq = g.matmul(gather, q)?;
    g.matmul(hq, w)
}

/// Alignment between hyperedge rows and visual rows under the configured mode.
pub fn alignment(
    g: &mut Graph<'_>,
    x: Var,
    v: Var,
    t_x: Var,
    t_v: Var,
    cfg: &FusionConfig,
) -> Result<Var> {
    match cfg.align_mode {
        AlignMode::Ot => {
            let c = otalign::cosine_cost(g, x, v, t_x, t_v)?;
            otalign::ipot_on(g, c, cfg.ot_iters)
        }
        AlignMode::Dot => otalign::dot_align_on(g, x, v, t_x, t_v),
    }
}

/// Applies the configured scaling and temperature to an alignment node,
/// followed by the row softmax used by the influence terms.
pub fn attention_weights(g: &mut Graph<'_>, align: Var, cfg: &FusionConfig) -> Var {
    let (ns, nv) = g.shape(align);
    let mass = match cfg.align_scale {
        AlignScale::None => 1.0,
        AlignScale::Mass => match cfg.align_mode {
            AlignMode::Ot => (ns * nv) as f64,
            AlignMode::Dot => nv as f64,
        },
    };
    let s = mass * cfg.align_temperature;
    let scaled = if s == 1.0 { align } else { g.scale(align, s) };
    g.row_softmax(scaled)
}

/// Optional frame and clip alignments of one block.
#[derive(Clone, Copy, Debug)]
pub struct Alignments {
    pub g_xf: Option<Var>,
    pub g_xm: Option<Var>,
}

/// `X_{v→x} = LN(softmax(G_xm) M W_xm + softmax(G_xf) F W_xf + X W_x)`;
/// a disabled modality drops its term.
pub fn video_to_hyperedge(
    g: &mut Graph<'_>,
    x: Var,
    f: Var,
    m: Var,
    al: Alignments,
    p: &BlockParams,
    cfg: &FusionConfig,
) -> Result<Var> {
    let w_x = g.param(p.w_x);
    let mut acc = g.matmul(x, w_x)?;
    if let Some(gm) = al.g_xm {
        let att = attention_weights(g, gm, cfg);
        let mixed = g.matmul(att, m)?;
        let w = g.param(p.w_xm);
        let term = g.matmul(mixed, w)?;
        acc = g.add(term, acc)?;
    }
    if let Some(gf) = al.g_xf {
        let att = attention_weights(g, gf, cfg);
        let mixed = g.matmul(att, f)?;
        let w = g.param(p.w_xf);
        let term = g.matmul(mixed, w)?;
        acc = g.add(acc, term)?;
    }
    p.ln_vx.apply(g, acc, cfg.ln_eps)
}

fn hyperedge_to_visual(
    g: &mut Graph<'_>,
    x: Var,
    v: Var,
    align: Var,
    w_mix: ParamId,
    w_self: ParamId,
    ln: &LnParams,
    cfg: &FusionConfig,
) -> Result<Var> {
    let at = g.transpose(align);
    let att = attention_weights(g, at, cfg);
    let mixed = g.matmul(att, x)?;
    let wm = g.param(w_mix);
    let cross = g.matmul(mixed, wm)?;
    let ws = g.param(w_self);
    let own = g.matmul(v, ws)?;
    let sum = g.add(cross, own)?;
    ln.apply(g, sum, cfg.ln_eps)
}

/// `F_{x→f} = LN(softmax(G_xfᵀ) X W_fx + F W_f)`
pub fn hyperedge_to_frame(
    g: &mut Graph<'_>,
    x: Var,
    f: Var,
    g_xf: Var,
    p: &BlockParams,
    cfg: &FusionConfig,
) -> Result<Var> {
    hyperedge_to_visual(g, x, f, g_xf, p.w_fx, p.w_f, &p.ln_fx, cfg)
}

/// `M_{x→m} = LN(softmax(G_xmᵀ) X W_mx + M W_m)`
pub fn hyperedge_to_clip(
    g: &mut Graph<'_>,
    x: Var,
    m: Var,
    g_xm: Var,
    p: &BlockParams,
    cfg: &FusionConfig,
) -> Result<Var> {
    hyperedge_to_visual(g, x, m, g_xm, p.w_mx, p.w_m, &p.ln_mx, cfg)
}

/// Cross-modal influences feeding the residual update; `None` skips that modality.
#[derive(Clone, Copy, Debug)]
pub struct Influences {
    pub v2x: Var,
    pub x2f: Option<Var>,
    pub x2m: Option<Var>,
}

/// `X̃ = LN(X_{v→x} W_{v→x} + X)`, and the analogous frame and clip updates.
/// Modalities without an influence pass through unchanged.
pub fn residual_update(
    g: &mut Graph<'_>,
    x: Var,
    f: Var,
    m: Var,
    inf: Influences,
    p: &BlockParams,
    cfg: &FusionConfig,
) -> Result<(Var, Var, Var)> {
    let step = |g: &mut Graph<'_>, infl: Var, w: ParamId, base: Var, ln: &LnParams| -> Result<Var> {
        let wv = g.param(w);
        let proj = g.matmul(infl, wv)?;
        let sum = g.add(proj, base)?;
        ln.apply(g, sum, cfg.ln_eps)
    };
    let xt = step(g, inf.v2x, p.w_v2x, x, &p.ln_x)?;
    let ft = match inf.x2f {
        Some(i) => step(g, i, p.w_x2f, f, &p.ln_f)?,
        None => f,
    };
    let mt = match inf.x2m {
        Some(i) => step(g, i, p.w_x2m, m, &p.ln_m)?,
        None => m,
    };
    Ok((xt, ft, mt))
}

/// `Q̃ = D_v⁻¹ H X̃ W̃`
pub fn node_update<'a>(
    g: &mut Graph<'a>,
    graph: &'a SyntacticHypergraph,
    x_tilde: Var,
    w_tilde: Var,
) -> Result<Var> {
    if g.shape(x_tilde).0 != graph.n_edges() {
        return Err(Error::Shape(format!(
            "{} hyperedge rows for {} hyperedges",
            g.shape(x_tilde).0,
            graph.n_edges()
        )));
    }
    let scatter = g.constant_ref(graph.scatter_operator());
    let hx = g.matmul(scatter, x_tilde)?;
    g.matmul(hx, w_tilde)
}

/// Output of one block, with the alignments it used.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub bundle: BundleVars,
    pub hyperedges: Var,
    pub alignments: Alignments,
}

/// One transformation block. `graph` must already reflect the syntax mode
/// (see [`effective_graph`]).
pub fn block_forward<'a>(
    g: &mut Graph<'a>,
    input: BundleVars,
    graph: &'a SyntacticHypergraph,
    p: &BlockParams,
    cfg: &FusionConfig,
) -> Result<BlockOutput> {
    let w = g.param(p.w);
    let x = hyperedge_repr(g, graph, input.q, w)?;

    let t_x = g.param(p.t_x);
    let g_xf = if cfg.use_frames {
        let t_f = g.param(p.t_f);
        Some(alignment(g, x, input.f, t_x, t_f, cfg)?)
    } else {
        None
    };
    let g_xm = if cfg.use_clips {
        let t_m = g.param(p.t_m);
        Some(alignment(g, x, input.m, t_x, t_m, cfg)?)
    } else {
        None
    };
    let al = Alignments { g_xf, g_xm };

    let v2x = video_to_hyperedge(g, x, input.f, input.m, al, p, cfg)?;
    let x2f = g_xf
        .map(|a| hyperedge_to_frame(g, x, input.f, a, p, cfg))
        .transpose()?;
    let x2m = g_xm
        .map(|a| hyperedge_to_clip(g, x, input.m, a, p, cfg))
        .transpose()?;
    let (xt, ft, mt) = residual_update(g, x, input.f, input.m, Influences { v2x, x2f, x2m }, p, cfg)?;

    let wt = g.param(p.w_tilde);
    let qt = node_update(g, graph, xt, wt)?;
    Ok(BlockOutput {
        bundle: BundleVars {
            q: qt,
            f: ft,
            m: mt,
        },
        hyperedges: xt,
        alignments: al,
    })
}

/// Applies `blocks` left to right.
pub fn stack_forward<'a>(
    g: &mut Graph<'a>,
    input: BundleVars,
    graph: &'a SyntacticHypergraph,
    blocks: &[BlockParams],
    cfg: &FusionConfig,
) -> Result<(BundleVars, Vec<Alignments>)> {
    if blocks.is_empty() {
        return Err(Error::Config("at least one block is required".into()));
    }
    let mut cur = input;
    let mut aligns = Vec::with_capacity(blocks.len());
    for p in blocks {
        let out = block_forward(g, cur, graph, p, cfg)?;
        cur = out.bundle;
        aligns.push(out.alignments);
    }
    Ok((cur, aligns))
}

#[cfg(test)]
mod tests;
