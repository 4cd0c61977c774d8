use serde::Serialize;

use super::graph::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Magnitude below which gradient entries are compared absolutely rather
/// than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Parameter name and flat entry index of the largest relative error.
    pub worst: Option<(String, usize)>,
    /// Entries compared against the finite-difference estimate.
    pub entries: usize,
    /// Entries skipped because a perturbation crossed a leaky-ReLU or hinge
    /// kink, where central differences do not estimate the derivative.
    pub kinks: usize,
    pub step: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks every entry of every parameter that receives a gradient, by
/// central differences at steps `h` and `h/2` combined by Richardson
/// extrapolation, which cancels the `h²` truncation term. A plain central
/// difference needs a step small enough to hide curvature yet large enough
/// to stay clear of round-off, and no single step does both for every entry.
///
/// Entries whose perturbations move any leaky-ReLU input or hinge term
/// across its kink are counted in `kinks` and left out of the error.
/// `build` must construct the scalar loss on the given graph; perturbed
/// graphs override one entry without touching `store`.
pub fn finite_diff_check<'s, F>(store: &'s ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'s>) -> Result<Var>,
{
    let (analytic, signature) = {
        let mut g = Graph::with_params(store);
        let loss = build(&mut g)?;
        (g.backward(loss)?.into_params(), g.kink_signature())
    };

    // Loss at one perturbed entry, and whether it stayed on the same smooth piece.
    let eval = |id: ParamId, k: usize, value: f64| -> Result<(f64, bool)> {
        let mut g = Graph::with_params(store).perturbed(id, k, value);
        let loss = build(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during finite differences".into()));
        }
        Ok((v, g.kink_signature() == signature))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        entries: 0,
        kinks: 0,
        step: h,
    };
    for (id, grad) in &analytic {
        for k in 0..grad.data().len() {
            let orig = store.get(*id).data()[k];
            let mut smooth = true;
            let mut central = |step: f64| -> Result<f64> {
                let (plus, a) = eval(*id, k, orig + step)?;
                let (minus, b) = eval(*id, k, orig - step)?;
                smooth &= a && b;
                Ok((plus - minus) / (2.0 * step))
            };
            let numeric = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
            if !smooth {
                report.kinks += 1;
                continue;
            }
            let a = grad.data()[k];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((store.name(*id).to_string(), k));
            }
            report.entries += 1;
        }
    }
    Ok(report)
}
