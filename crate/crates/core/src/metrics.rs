//! Subspace distances and reference error curves.
//!
//! Reference curves use constant 1 wherever the underlying bounds only fix
//! the rate. They are for plotting against measurements and for slope
//! comparisons, not for asserting absolute levels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covmodel::CovarianceModel;
use crate::error::{Error, Result};
use crate::estimators::ProjectionMatrix;
use crate::fantope::FeasibleSetParams;
use crate::linalg;

/// `r − ⟨P₁, P₂⟩` for equal-rank projectors, clamped at zero.
///
/// Equals `‖(I − P₁) P₂‖²_F` and `½‖P₁ − P₂‖²_F`.
pub fn sin_theta_sq(a: &ProjectionMatrix, b: &ProjectionMatrix) -> Result<f64> {
    if a.rank != b.rank {
        return Err(Error::RankMismatch(a.rank, b.rank));
    }
    Ok(sin_theta_sq_raw(&a.p, &b.p, a.rank))
}

/// [`sin_theta_sq`] on bare matrices of known common rank.
pub fn sin_theta_sq_raw(a: &DMatrix<f64>, b: &DMatrix<f64>, r: usize) -> f64 {
    (r as f64 - linalg::frob_inner(a, b)).max(0.0)
}

/// Reference upper curve for the solver-based estimator:
/// `√(λ₁r)κδ/gap + rκ²λ₁√(ln n)·n^{2/q}/(gap·√m)`.
pub fn predicted_error_comp(model: &CovarianceModel, params: &FeasibleSetParams, delta: f64, m: usize) -> Result<f64> {
    let gap = model.eigengap();
    if !(gap > 0.0) {
        return Err(Error::DegenerateGap);
    }
    let (r, n, l1, k) = (params.r as f64, model.n as f64, model.lambda_max(), params.kappa);
    let lead = (l1 * r).sqrt() * k * delta / gap;
    let stat = r * k * k * l1 * n.ln().sqrt() * n.powf(2.0 * params.q.reciprocal()) / (gap * (m as f64).sqrt());
    Ok(lead + stat)
}

/// Reference lower curve: `√r κδ / (√λ₁ ln(rm) ln n)`.
pub fn predicted_error_lower(model: &CovarianceModel, params: &FeasibleSetParams, delta: f64, m: usize) -> f64 {
    let (r, n, l1, k) = (params.r as f64, model.n as f64, model.lambda_max(), params.kappa);
    r.sqrt() * k * delta / (l1.sqrt() * (r * m as f64).ln().max(1.0) * n.ln().max(1.0))
}

/// Reference curve for `‖Σ̂_top − Σ_top‖²_F` given a projector error bound:
/// `λ₁²·proj + λ₁²r²/m + κ⁴δ⁴ + λ₁κ²δ²`.
pub fn predicted_bound_cov(
    model: &CovarianceModel,
    params: &FeasibleSetParams,
    delta: f64,
    m: usize,
    proj_bound: f64,
) -> f64 {
    let (r, l1, k) = (params.r as f64, model.lambda_max(), params.kappa);
    let kd = k * k * delta * delta;
    l1 * l1 * proj_bound + l1 * l1 * r * r / m as f64 + kd * kd + l1 * kd
}

/// Error measurements for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub sin_theta_sq: f64,
    pub frob_proj_sq: f64,
    pub frob_cov_sq: f64,
    pub inner_product: f64,
    pub predicted_bound_proj: f64,
    pub predicted_bound_cov: f64,
    pub delta_diag: f64,
}

impl ErrorReport {
    /// Projector errors of `estimate` against `truth`; covariance and
    /// reference fields are left for the caller.
    pub fn projector_errors(estimate: &ProjectionMatrix, truth: &DMatrix<f64>) -> ErrorReport {
        let inner = linalg::frob_inner(&estimate.p, truth);
        ErrorReport {
            sin_theta_sq: (estimate.rank as f64 - inner).max(0.0),
            frob_proj_sq: (&estimate.p - truth).norm_squared(),
            inner_product: inner,
            ..Default::default()
        }
    }
}
