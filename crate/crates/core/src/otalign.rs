//! Cross-modal alignment by optimal transport.
//!
//! Costs are one minus the cosine similarity of linearly projected rows, so
//! they live in `[0, 2]`. The plan is computed by the inexact proximal-point
//! iteration: with kernel `K = exp(−C)` and the previous plan `π`, each step
//! scales `Γ = K ⊙ π` to uniform row marginals and then to uniform column
//! marginals. Everything runs on the differentiation tape, so the unrolled
//! iterations are differentiable end to end.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{row_softmax, Graph, Matrix, Var};

/// Added to the cosine denominator so zero-norm rows give a finite cost.
pub const COSINE_EPS: f64 = 1e-8;
/// Marginal scalings smaller than this mean the kernel has collapsed.
pub const DEGENERATE_KERNEL: f64 = 1e-30;
pub const DEFAULT_ITERS: usize = 10;

/// Projections into the shared alignment space.
#[derive(Clone, Debug)]
pub struct ProjectionParams {
    /// `d_w × d`
    pub t_x: Matrix,
    /// `d_v × d`
    pub t_f: Matrix,
    /// `d_v × d`
    pub t_m: Matrix,
}

/// Pairwise costs, every entry in `[0, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(c: Matrix) -> Result<Self> {
        if let Some(bad) = c.data().iter().find(|&&v| !(-1e-12..=2.0 + 1e-12).contains(&v)) {
            return Err(Error::Data(format!("cost {bad} outside [0, 2]")));
        }
        Ok(CostMatrix(c))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Nonnegative `N_s × N_f` coupling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportPlan(Matrix);

impl TransportPlan {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn total_mass(&self) -> f64 {
        self.0.sum()
    }

    /// Largest `|row_sum − 1/N_s|`.
    pub fn row_deviation(&self) -> f64 {
        let target = 1.0 / self.0.rows() as f64;
        self.0
            .row_sums()
            .iter()
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|col_sum − 1/N_f|`.
    pub fn col_deviation(&self) -> f64 {
        let target = 1.0 / self.0.cols() as f64;
        self.0
            .col_sums()
            .iter()
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }
}

/// `c_ij = 1 − ⟨x_i T_x, f_j T_f⟩ / (‖x_i T_x‖ ‖f_j T_f‖ + ε)` on the tape.
pub fn cosine_cost(g: &mut Graph<'_>, x: Var, f: Var, t_x: Var, t_f: Var) -> Result<Var> {
    let px = g.matmul(x, t_x)?;
    let pf = g.matmul(f, t_f)?;
    let pf_t = g.transpose(pf);
    let dots = g.matmul(px, pf_t)?;
    let nx = g.row_norm(px);
    let nf = g.row_norm(pf);
    let nf_t = g.transpose(nf);
    let denom = g.matmul(nx, nf_t)?;
    let denom = g.add_const(denom, COSINE_EPS);
    let cos = g.div(dots, denom)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.add_const(neg, 1.0))
}

/// Proximal-point transport iterations on a cost node; returns the plan node.
pub fn ipot_on(g: &mut Graph<'_>, cost: Var, iters: usize) -> Result<Var> {
    if iters == 0 {
        return Err(Error::Config("ipot needs at least one iteration".into()));
    }
    let (ns, nf) = g.shape(cost);
    if ns == 0 || nf == 0 {
        return Err(Error::Shape(format!("empty cost matrix {ns}x{nf}")));
    }
    let neg = g.scale(cost, -1.0);
    let kernel = g.exp(neg);
    let mut plan = g.constant(Matrix::filled(ns, nf, 1.0));
    let mut b = g.constant(Matrix::filled(nf, 1, 1.0 / nf as f64));
    for _ in 0..iters {
        let gamma = g.mul(kernel, plan)?;
        let gb = g.matmul(gamma, b)?;
        check_scaling(g.value(gb))?;
        let gb = g.scale(gb, ns as f64);
        let a = g.recip(gb);
        let gamma_t = g.transpose(gamma);
        let gta = g.matmul(gamma_t, a)?;
        check_scaling(g.value(gta))?;
        let gta = g.scale(gta, nf as f64);
        b = g.recip(gta);
        let rows = g.scale_rows(gamma, a)?;
        plan = g.scale_cols(rows, b)?;
    }
    Ok(plan)
}

fn check_scaling(v: &Matrix) -> Result<()> {
    if v.data().iter().any(|&x| !(x >= DEGENERATE_KERNEL)) {
        return Err(Error::Solver("degenerate kernel".into()));
    }
    Ok(())
}

/// Transport plan for a fixed cost matrix.
pub fn ipot(cost: &CostMatrix, iters: usize) -> Result<TransportPlan> {
    let mut g = Graph::new();
    let c = g.constant_ref(cost.matrix());
    let plan = ipot_on(&mut g, c, iters)?;
    Ok(TransportPlan(g.value(plan).clone()))
}

/// Plans after every iteration `1..=iters` (for convergence studies).
pub fn ipot_trace(cost: &CostMatrix, iters: usize) -> Result<Vec<TransportPlan>> {
    (1..=iters).map(|t| ipot(cost, t)).collect()
}

/// Cost matrix between rows of `x` and rows of `f` under the given projections.
pub fn cost_matrix(x: &Matrix, f: &Matrix, t_x: &Matrix, t_f: &Matrix) -> Result<CostMatrix> {
    let mut g = Graph::new();
    let (xv, fv) = (g.constant_ref(x), g.constant_ref(f));
    let (tx, tf) = (g.constant_ref(t_x), g.constant_ref(t_f));
    let c = cosine_cost(&mut g, xv, fv, tx, tf)?;
    CostMatrix::new(g.value(c).clone())
}

/// Alignment matrix `G = π*` between hyperedge rows and frame rows.
pub fn align(x: &Matrix, f: &Matrix, t_x: &Matrix, t_f: &Matrix, iters: usize) -> Result<Matrix> {
    Ok(ipot(&cost_matrix(x, f, t_x, t_f)?, iters)?.into_matrix())
}

/// Dot-product baseline on the tape: `row_softmax((X T_x)(F T_f)ᵀ)`.
pub fn dot_align_on(g: &mut Graph<'_>, x: Var, f: Var, t_x: Var, t_f: Var) -> Result<Var> {
    let px = g.matmul(x, t_x)?;
    let pf = g.matmul(f, t_f)?;
    let pf_t = g.transpose(pf);
    let sim = g.matmul(px, pf_t)?;
    Ok(g.row_softmax(sim))
}

pub fn dot_align(x: &Matrix, f: &Matrix, t_x: &Matrix, t_f: &Matrix) -> Result<Matrix> {
    let sim = x.matmul(t_x)?.matmul(&f.matmul(t_f)?.transpose())?;
    Ok(row_softmax(&sim))
}

/// Shannon entropy (nats) of each row after normalising it to sum to one.
pub fn row_entropy(g: &Matrix) -> Result<Vec<f64>> {
    (0..g.rows())
        .map(|i| {
            let row = g.row(i);
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::Data(format!("row {i} has negative entries")));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::Data(format!("row {i} is all zero")));
            }
            Ok(row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / total;
                    -p * p.ln()
                })
                .sum())
        })
        .collect()
}

pub fn mean_row_entropy(g: &Matrix) -> Result<f64> {
    let e = row_entropy(g)?;
    Ok(e.iter().sum::<f64>() / e.len().max(1) as f64)
}
