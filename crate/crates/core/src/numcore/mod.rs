//! Dense matrices, the differentiation tape and elementary layers.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{
    log_sum_exp, normalize_rows, row_softmax, Gradients, Graph, ParamId, ParamStore, Var,
};
pub use matrix::Matrix;

/// Layer normalisation on a plain matrix (no tape).
pub fn layer_norm(a: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Matrix {
    assert_eq!(gain.len(), a.cols());
    assert_eq!(bias.len(), a.cols());
    let (mut out, _) = normalize_rows(a, eps);
    for i in 0..out.rows() {
        for ((o, g), b) in out.row_mut(i).iter_mut().zip(gain).zip(bias) {
            *o = *o * g + b;
        }
    }
    out
}

pub fn leaky_relu(a: &Matrix, slope: f64) -> Matrix {
    a.map(|x| if x >= 0.0 { x } else { slope * x })
}
