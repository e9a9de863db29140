//! Estimation pipelines built on the solver: subspace rounding, covariance
//! recovery with sample splitting, an exhaustive rank-one search, and robust
//! mean estimation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmodel::Dataset;
use crate::error::{Error, Result};
use crate::fantope::{self, FeasibleSetParams, SolverConfig, SolverState, SolverStatus};
use crate::linalg;
use crate::norms::{self, NormIndex, OracleOptions};

/// A rank-`r` orthogonal projector with its orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub p: DMatrix<f64>,
    /// `n × r`, columns in canonical sign.
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// Measured `‖P‖_{∞→2}`.
    pub measured_kappa: f64,
    pub kappa_exact: bool,
}

impl ProjectionMatrix {
    /// Build from orthonormal columns, measuring `κ`.
    pub fn from_basis(basis: DMatrix<f64>, opts: &OracleOptions) -> Result<Self> {
        let defect = linalg::orthonormality_defect(&basis);
        if defect > 1e-8 {
            return Err(Error::NotOrthonormal(defect));
        }
        let p = linalg::projector_from_basis(&basis);
        let est = norms::op_q_to_2(&p, NormIndex::Infinity, opts)?;
        Ok(ProjectionMatrix { rank: basis.ncols(), p, basis, measured_kappa: est.value, kappa_exact: est.exact })
    }

    /// Projector onto the top-`r` eigenvectors of a symmetric matrix.
    pub fn from_top_eigenvectors(m: &DMatrix<f64>, r: usize, opts: &OracleOptions) -> Result<Self> {
        let (_, basis) = linalg::top_eigenvectors(m, r);
        Self::from_basis(basis, opts)
    }
}

/// Estimator options on top of the solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub solver: SolverConfig,
    /// The solver runs with `min(κ · kappa_slack, √n)`.
    pub kappa_slack: f64,
    pub oracle_rounds: usize,
    pub oracle_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { solver: SolverConfig::default(), kappa_slack: 1.0, oracle_rounds: 64, oracle_seed: 0x5eed }
    }
}

impl EstimatorConfig {
    pub fn oracle(&self) -> OracleOptions {
        OracleOptions { exact_limit: self.solver.exact_limit, rounds: self.oracle_rounds, seed: self.oracle_seed }
    }

    /// `params` with the slack applied to `κ`.
    pub fn solver_params(&self, params: &FeasibleSetParams) -> FeasibleSetParams {
        let cap = (params.n as f64).sqrt();
        FeasibleSetParams { kappa: (params.kappa * self.kappa_slack).min(cap).max(1.0), ..*params }
    }
}

/// Output of [`robust_projection`].
#[derive(Debug, Clone)]
pub struct RobustProjection {
    pub projector: ProjectionMatrix,
    pub state: SolverState,
    /// Descending eigenvalues of the solver output `X̂`.
    pub x_eigenvalues: DVector<f64>,
    /// `λ_r(X̂)` and `λ_{r+1}(X̂)` agree within `1e-9`.
    pub tie: bool,
    /// The `κ` the solver actually used.
    pub solver_kappa: f64,
}

/// Solve the program on `data` and round `X̂` to its top-`r` eigenvectors.
pub fn robust_projection(
    data: &Dataset,
    params: &FeasibleSetParams,
    config: &EstimatorConfig,
) -> Result<RobustProjection> {
    let solver_params = config.solver_params(params);
    let state = fantope::solve(data, &solver_params, &config.solver)?;
    if state.status == SolverStatus::Infeasible {
        return Err(Error::Infeasible(state.feas_trace.last().map_or(f64::NAN, |r| r.max())));
    }
    round_solution(state, params.r, solver_params.kappa, config)
}

fn round_solution(
    state: SolverState,
    r: usize,
    solver_kappa: f64,
    config: &EstimatorConfig,
) -> Result<RobustProjection> {
    let (values, basis) = linalg::top_eigenvectors(&state.x, r);
    let tie = r < values.len() && (values[r - 1] - values[r]).abs() <= 1e-9;
    let projector = ProjectionMatrix::from_basis(basis, &config.oracle())?;
    Ok(RobustProjection { projector, state, x_eigenvalues: values, tie, solver_kappa })
}

/// Top-`r` eigenvectors of the empirical second moment.
pub fn vanilla_pca(data: &Dataset, r: usize, opts: &OracleOptions) -> Result<ProjectionMatrix> {
    if r == 0 || r > data.n() {
        return Err(Error::RankInfeasible { r, n: data.n() });
    }
    ProjectionMatrix::from_top_eigenvectors(&data.second_moment(), r, opts)
}

/// Output of [`adv_robust_pca`].
#[derive(Debug, Clone)]
pub struct CovEstimate {
    /// `Π̂ S'' Π̂` with `S''` from the held-out half.
    pub sigma_top_hat: DMatrix<f64>,
    pub projection: RobustProjection,
    /// Columns used for the projector and for the covariance.
    pub sample_counts: (usize, usize),
}

/// Split `(A_j − A_{m+j})/√2` for `j` in `[offset, offset + m)`.
fn symmetrized_block(samples: &DMatrix<f64>, offset: usize, m: usize) -> DMatrix<f64> {
    (samples.columns(offset, m) - samples.columns(offset + m, m)) * std::f64::consts::FRAC_1_SQRT_2
}

/// Covariance recovery from `4m` possibly shifted samples.
///
/// Columns `1..2m` are symmetrized pairwise to form the projector input and
/// columns `2m+1..4m` likewise form the held-out half; pairing cancels any
/// common mean.
pub fn adv_robust_pca(samples: &Dataset, params: &FeasibleSetParams, config: &EstimatorConfig) -> Result<CovEstimate> {
    let total = samples.m();
    if total % 4 != 0 || total == 0 {
        return Err(Error::SampleCountNotDivisible(total));
    }
    let m = total / 4;
    let first = Dataset::from_samples(symmetrized_block(&samples.samples, 0, m), samples.seed);
    let held_out = symmetrized_block(&samples.samples, 2 * m, m);
    let projection = robust_projection(&first, params, config)?;
    let p = &projection.projector.p;
    let s2 = linalg::second_moment(&held_out);
    let sigma_top_hat = linalg::symmetrize(&(p * s2 * p));
    Ok(CovEstimate { sigma_top_hat, projection, sample_counts: (m, m) })
}

/// Output of [`statistical_estimator_r1`].
#[derive(Debug, Clone)]
pub struct SupportSearch {
    pub projector: ProjectionMatrix,
    /// The winning support, ascending.
    pub support: Vec<usize>,
    pub candidates_evaluated: u128,
    pub candidates_kept: u128,
    /// Always `true`: only vectors supported on exactly `k` coordinates are
    /// searched, a subset of all projectors with `‖Π‖_{∞→2} ≤ κ`.
    pub restricted_search: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive rank-one search over supports of size `k = ⌊κ²⌋`.
///
/// For each support `T` the top eigenvector of `S` restricted to `T` is a
/// candidate; candidates with `‖v‖₁/‖v‖₂ > κ` are dropped and the one with
/// the largest `vᵀSv` wins, ties going to the lexicographically first
/// support.
pub fn statistical_estimator_r1(
    data: &Dataset,
    kappa: f64,
    max_support: u128,
    opts: &OracleOptions,
) -> Result<SupportSearch> {
    let n = data.n();
    let k = ((kappa * kappa) + 1e-9).floor() as usize;
    let k = k.clamp(1, n);
    let needed = binomial(n, k);
    if needed > max_support {
        return Err(Error::BudgetExceeded { needed, budget: max_support });
    }
    let s = data.second_moment();
    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    let mut kept = 0u128;
    let mut support: Vec<usize> = (0..k).collect();
    loop {
        let sub = DMatrix::from_fn(k, k, |i, j| s[(support[i], support[j])]);
        let (vals, vecs) = linalg::sym_eigen(&sub);
        let local = vecs.column(0);
        let ratio = local.iter().map(|x| x.abs()).sum::<f64>() / local.norm();
        if ratio <= kappa * (1.0 + 1e-9) {
            kept += 1;
            if best.as_ref().map_or(true, |(b, _, _)| vals[0] > *b) {
                let mut v = DVector::zeros(n);
                for (i, &row) in support.iter().enumerate() {
                    v[row] = local[i];
                }
                best = Some((vals[0], support.clone(), v));
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && support[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        support[i - 1] += 1;
        for j in i..k {
            support[j] = support[j - 1] + 1;
        }
    }
    let (_, support, mut v) =
        best.ok_or_else(|| Error::InsufficientData("no support passed the sparsity filter".into()))?;
    linalg::canonical_sign(&mut v);
    let projector = ProjectionMatrix::from_basis(DMatrix::from_column_slice(n, 1, v.as_slice()), opts)?;
    Ok(SupportSearch {
        projector,
        support,
        candidates_evaluated: needed,
        candidates_kept: kept,
        restricted_search: true,
    })
}

/// Output of [`robust_mean`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mu_hat: Vec<f64>,
    pub mu_empirical: Vec<f64>,
    /// Ball radius `δ + η`.
    pub shrinkage: f64,
    pub eta: f64,
    /// Optimality conditions verified (closed forms) or approximately met.
    pub kkt_ok: bool,
}

/// Concentration radius `η = 2σ n^{1/q} √(ln n / m)`.
pub fn mean_eta(n: usize, m: usize, q: NormIndex, sigma: f64) -> f64 {
    let nf = n as f64;
    2.0 * sigma * nf.powf(q.reciprocal()) * (nf.ln().max(0.0) / m as f64).sqrt()
}

/// Minimum-`ℓ_{q*}` point in the `ℓq` ball of radius `δ + η` around the
/// empirical mean.
///
/// `q = ∞` is soft thresholding and `q = 2` radial shrinkage; other `q` run
/// projected subgradient descent on `‖u‖_{q*}^{q*}`.
pub fn robust_mean(data: &Dataset, q: NormIndex, delta: f64, sigma_bound: f64) -> Result<MeanEstimate> {
    let n = data.n();
    if data.m() == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let eta = mean_eta(n, data.m(), q, sigma_bound);
    let t = delta + eta;
    let mu_e = data.empirical_mean();
    let (mu_hat, kkt_ok) = match q {
        NormIndex::Infinity => {
            let hat = mu_e.map(|x| x.signum() * (x.abs() - t).max(0.0));
            let ok = (0..n).all(|i| {
                let tol = 1e-12 * mu_e[i].abs().max(1.0);
                if hat[i] != 0.0 {
                    ((hat[i] - mu_e[i]).abs() - t).abs() <= tol
                } else {
                    mu_e[i].abs() <= t + tol
                }
            });
            (hat, ok)
        }
        NormIndex::Finite(p) if p == 2.0 => {
            let norm = mu_e.norm();
            let scale = if norm > 0.0 { (1.0 - t / norm).max(0.0) } else { 0.0 };
            let hat = &mu_e * scale;
            let ok = if scale > 0.0 { ((&hat - &mu_e).norm() - t).abs() <= 1e-12 * norm.max(1.0) } else { norm <= t };
            (hat, ok)
        }
        NormIndex::Finite(_) => min_dual_norm_in_ball(&mu_e, q, t),
    };
    Ok(MeanEstimate {
        mu_hat: mu_hat.iter().cloned().collect(),
        mu_empirical: mu_e.iter().cloned().collect(),
        shrinkage: t,
        eta,
        kkt_ok,
    })
}

fn min_dual_norm_in_ball(center: &DVector<f64>, q: NormIndex, t: f64) -> (DVector<f64>, bool) {
    let p = q.dual().value();
    let project = |u: &DVector<f64>| {
        let mut d = u - center;
        norms::project_lp_ball(d.as_mut_slice(), q, t);
        center + d
    };
    let obj = |u: &DVector<f64>| u.iter().map(|x| x.abs().powf(p)).sum::<f64>();
    let mut u = project(&DVector::zeros(center.len()));
    let mut best = (obj(&u), u.clone());
    for k in 1..=10_000 {
        let g = u.map(|x| p * x.signum() * x.abs().powf(p - 1.0));
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let step = t / (gn * (k as f64).sqrt());
        u = project(&(&u - g * step));
        let f = obj(&u);
        if f < best.0 {
            best = (f, u.clone());
        }
    }
    let inside = norms::vector_norm((&best.1 - center).as_slice(), q) <= t * (1.0 + 1e-9);
    (best.1, inside)
}
