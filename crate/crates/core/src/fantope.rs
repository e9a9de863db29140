//! The constrained semidefinite program behind the subspace estimator:
//!
//! ```text
//! minimize    tr(S) − ⟨S, X⟩            S = (1/m) Ã Ãᵀ
//! subject to  tr X = r,  0 ⪯ X ⪯ I
//!             ‖X‖_{q*} ≤ r κ²           (entry-wise)
//!             ‖X‖_{q→q*} ≤ κ²
//! ```
//!
//! The solver is projected gradient. Each step `X ← P(X + ηS)` projects onto
//! the intersection with Dykstra's cyclic scheme: entry-wise ball, then the
//! current cutting planes, then the Fantope last, so that trace and
//! eigenvalue constraints hold to machine precision at every iterate. The
//! operator-norm constraint has no cheap projection; it enters as halfspaces
//! `⟨xxᵀ, X⟩ ≤ κ²` found by the norm oracles every few iterations.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmodel::{CovarianceModel, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::norms::{self, NormIndex, OracleOptions};

/// Parameters of the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSetParams {
    pub n: usize,
    pub r: usize,
    pub kappa: f64,
    pub q: NormIndex,
}

impl FeasibleSetParams {
    pub fn new(n: usize, r: usize, kappa: f64, q: NormIndex) -> Result<Self> {
        let p = FeasibleSetParams { n, r, kappa, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.n {
            return Err(Error::RankInfeasible { r: self.r, n: self.n });
        }
        let hi = (self.n as f64).sqrt() * (1.0 + 1e-12);
        if !(self.kappa >= 1.0 && self.kappa <= hi) {
            return Err(Error::InvalidParameter(format!(
                "kappa = {} must lie in [1, sqrt(n)] = [1, {:.4}]",
                self.kappa, hi
            )));
        }
        self.q.ensure_robust_range()
    }

    /// Radius of the entry-wise `ℓ_{q*}` ball.
    pub fn entrywise_radius(&self) -> f64 {
        self.r as f64 * self.kappa * self.kappa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `η = 1 / (2‖S‖_op)`, halved whenever a step raises the objective.
    Adaptive,
    /// A fixed step, still halved on objective increase.
    Constant { eta: f64 },
}

/// Solver tolerances and limits. Every field has a default, so config files
/// only list what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative objective change per check period counted as converged.
    pub tol_obj: f64,
    /// Largest relative feasibility residual accepted at exit.
    pub tol_feas: f64,
    /// Eigenvalue slack around `[0, 1]`.
    pub tol_eig: f64,
    pub max_iters: usize,
    pub cut_pool_size: usize,
    /// Iterations between separation-oracle calls.
    pub cut_check_period: usize,
    pub step_rule: StepRule,
    /// A cut is added when `⟨xxᵀ, X⟩ > κ² (1 + cut_slack)`.
    pub cut_slack: f64,
    pub oracle_rounds: usize,
    pub exact_limit: usize,
    pub dykstra_max_cycles: usize,
    pub dykstra_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_obj: 1e-7,
            tol_feas: 1e-7,
            tol_eig: 1e-9,
            max_iters: 5000,
            cut_pool_size: 200,
            cut_check_period: 10,
            step_rule: StepRule::Adaptive,
            cut_slack: 1e-6,
            oracle_rounds: 64,
            exact_limit: norms::EXACT_LIMIT,
            dykstra_max_cycles: 500,
            dykstra_tol: 1e-10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// Reads `.toml` files as TOML and anything else as JSON.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    fn oracle(&self, salt: u64) -> OracleOptions {
        OracleOptions {
            exact_limit: self.exact_limit,
            rounds: self.oracle_rounds,
            seed: crate::covmodel::derive_seed(self.seed, salt),
        }
    }
}

/// A halfspace `⟨y zᵀ, X⟩ ≤ rhs`. The oracles only emit `y = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub rhs: f64,
    /// Iteration at which the cut last moved an iterate.
    pub last_violated: usize,
}

impl Cut {
    fn normal(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.y * self.z.transpose()))
    }

    /// `⟨y zᵀ, X⟩`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> f64 {
        self.y.dot(&(x * &self.z))
    }
}

/// Relative residuals of each constraint family at an iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub trace: f64,
    pub eig: f64,
    pub entrywise: f64,
    pub cuts: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.trace.max(self.eig).max(self.entrywise).max(self.cuts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIters,
    Infeasible,
}

/// Final iterate plus the full history of a run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub cuts: Vec<Cut>,
    pub objective_trace: Vec<f64>,
    pub feas_trace: Vec<Residuals>,
    pub cut_count_trace: Vec<usize>,
    pub iters: usize,
    pub status: SolverStatus,
    /// Measured `‖X‖_{q→q*} / κ²` at exit.
    pub norm_ratio: f64,
    pub norm_ratio_exact: bool,
}

impl SolverState {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    /// Trace as CSV with header `iter,objective,max_residual,n_cuts`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "objective", "max_residual", "n_cuts"])?;
        for (i, (obj, res)) in self.objective_trace.iter().zip(&self.feas_trace).enumerate() {
            w.write_record([
                i.to_string(),
                obj.to_string(),
                res.max().to_string(),
                self.cut_count_trace[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Euclidean projection onto `{tr X = r, 0 ⪯ X ⪯ I}`.
///
/// The eigenvalues are replaced by `clamp(λᵢ − γ, 0, 1)` with `γ` solving
/// `Σ clamp(λᵢ − γ, 0, 1) = r`. The sum is piecewise linear in `γ`, so `γ` is
/// located exactly between consecutive breakpoints.
pub fn project_fantope(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if r > n {
        return Err(Error::RankInfeasible { r, n });
    }
    let (values, vectors) = linalg::sym_eigen(m);
    let gamma = water_level(values.as_slice(), r as f64);
    let clamped = values.map(|l| (l - gamma).clamp(0.0, 1.0));
    Ok(linalg::recompose(&clamped, &vectors))
}

/// `γ` with `Σ clamp(λᵢ − γ, 0, 1) = target`.
pub(crate) fn water_level(values: &[f64], target: f64) -> f64 {
    let total = |g: f64| values.iter().map(|&l| (l - g).clamp(0.0, 1.0)).sum::<f64>();
    let mut breaks: Vec<f64> = values.iter().flat_map(|&l| [l, l - 1.0]).collect();
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    // total is non-increasing in γ; find the bracketing pair of breakpoints
    let mut lo = breaks[0];
    let mut hi = breaks[breaks.len() - 1];
    for w in breaks.windows(2) {
        if total(w[0]) >= target && total(w[1]) <= target {
            lo = w[0];
            hi = w[1];
            break;
        }
    }
    let (flo, fhi) = (total(lo), total(hi));
    if (flo - fhi).abs() < 1e-300 {
        return lo;
    }
    lo + (flo - target) * (hi - lo) / (flo - fhi)
}

/// Euclidean projection of a matrix onto the entry-wise `ℓ1` ball.
pub fn project_entrywise_l1(m: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    norms::project_l1_ball(out.as_mut_slice(), radius);
    out
}

/// Euclidean projection onto the entry-wise `ℓp` ball.
pub fn project_entrywise_lp(m: &DMatrix<f64>, p: NormIndex, radius: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    norms::project_lp_ball(out.as_mut_slice(), p, radius);
    out
}

/// Look for a violated `‖X‖_{q→q*} ≤ κ²` constraint.
///
/// Returns a cut only when the certificate itself shows `xᵀXx > κ²(1 + slack)`,
/// so every returned cut is valid for the feasible set even when the oracle is
/// the heuristic one.
pub fn separation_oracle_qnorm(
    x: &DMatrix<f64>,
    params: &FeasibleSetParams,
    opts: &OracleOptions,
    slack: f64,
) -> Result<Option<Cut>> {
    let est = norms::op_q_to_qstar_psd(&linalg::symmetrize(x), params.q, opts)?;
    let kk = params.kappa * params.kappa;
    let cert = match est.certificate {
        Some(c) => c,
        None => return Ok(None),
    };
    let value = cert.witness_x.dot(&(x * &cert.witness_x));
    if value > kk * (1.0 + slack) {
        Ok(Some(Cut { y: cert.witness_x.clone(), z: cert.witness_x, rhs: kk, last_violated: 0 }))
    } else {
        Ok(None)
    }
}

/// `tr(S) − ⟨S, X⟩`.
pub fn objective(s: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    s.trace() - linalg::frob_inner(s, x)
}

/// `|⟨(1/m) Ã Ãᵀ − Σ*, X⟩|` for a known model.
pub fn compute_delta_diagnostic(x: &DMatrix<f64>, data: &Dataset, model: &CovarianceModel) -> f64 {
    linalg::frob_inner(&(data.second_moment() - model.sigma()), x).abs()
}

fn residuals(x: &DMatrix<f64>, params: &FeasibleSetParams, cuts: &[Cut]) -> Residuals {
    let r = params.r as f64;
    let (values, _) = linalg::sym_eigen(x);
    let eig_lo = (-values[values.len() - 1]).max(0.0);
    let eig_hi = (values[0] - 1.0).max(0.0);
    let radius = params.entrywise_radius();
    let ent = norms::entrywise_norm(x, params.q.dual());
    let kk = params.kappa * params.kappa;
    let cut = cuts.iter().map(|c| (c.evaluate(x) - c.rhs).max(0.0) / kk).fold(0.0, f64::max);
    Residuals {
        trace: (x.trace() - r).abs() / r,
        eig: eig_lo.max(eig_hi),
        entrywise: (ent - radius).max(0.0) / radius,
        cuts: cut,
    }
}

/// Pull a Fantope point toward the centre `(r/n) I` just far enough to
/// satisfy the ball and the cuts. Constraints the centre does not strictly
/// satisfy are left alone.
fn restore_feasibility(x: DMatrix<f64>, params: &FeasibleSetParams, cuts: &[Cut]) -> DMatrix<f64> {
    let n = params.n;
    let centre = DMatrix::identity(n, n) * (params.r as f64 / n as f64);
    let dual = params.q.dual();
    let radius = params.entrywise_radius();
    let mut t: f64 = 0.0;
    let (nx, nc) = (norms::entrywise_norm(&x, dual), norms::entrywise_norm(&centre, dual));
    if nx > radius && nc < radius {
        t = t.max((nx - radius) / (nx - nc));
    }
    for c in cuts {
        let (vx, vc) = (c.evaluate(&x), c.evaluate(&centre));
        if vx > c.rhs && vc < c.rhs {
            t = t.max((vx - c.rhs) / (vx - vc));
        }
    }
    if t == 0.0 {
        return x;
    }
    let t = (t * (1.0 + 1e-12)).min(1.0);
    x * (1.0 - t) + centre * t
}

/// Dykstra's cyclic projection onto ball ∩ cuts ∩ Fantope.
fn project_feasible(
    v: &DMatrix<f64>,
    params: &FeasibleSetParams,
    cuts: &mut [Cut],
    iter: usize,
    config: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let n = params.n;
    let dual = params.q.dual();
    let radius = params.entrywise_radius();
    let normals: Vec<(DMatrix<f64>, f64)> = cuts
        .iter()
        .map(|c| {
            let a = c.normal();
            let nn = a.norm_squared();
            (a, nn)
        })
        .collect();
    let sets = 2 + cuts.len();
    let mut incr: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); sets];
    let mut x = v.clone();
    for _ in 0..config.dykstra_max_cycles.max(1) {
        let before = x.clone();
        for s in 0..sets {
            let y = &x + &incr[s];
            let proj = if s == 0 {
                project_entrywise_lp(&y, dual, radius)
            } else if s == sets - 1 {
                project_fantope(&y, params.r)?
            } else {
                let (a, nn) = &normals[s - 1];
                let excess = linalg::frob_inner(a, &y) - cuts[s - 1].rhs;
                if excess > 0.0 {
                    cuts[s - 1].last_violated = iter;
                    &y - a * (excess / nn)
                } else {
                    y.clone()
                }
            };
            incr[s] = &y - &proj;
            x = proj;
        }
        let moved = (&x - &before).norm();
        if moved <= config.dykstra_tol * x.norm().max(1.0) {
            break;
        }
    }
    Ok(restore_feasibility(x, params, cuts))
}

fn same_cut(a: &Cut, b: &Cut) -> bool {
    let close = |u: &DVector<f64>, v: &DVector<f64>| {
        (u - v).norm() <= 1e-9 * u.norm().max(1.0) || (u + v).norm() <= 1e-9 * u.norm().max(1.0)
    };
    a.rhs == b.rhs && close(&a.y, &b.y) && close(&a.z, &b.z)
}

/// Projected-gradient solve of the program on `data`.
pub fn solve(data: &Dataset, params: &FeasibleSetParams, config: &SolverConfig) -> Result<SolverState> {
    if data.n() != params.n {
        return Err(Error::ShapeMismatch(format!("data has n = {}, params n = {}", data.n(), params.n)));
    }
    if data.m() == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    params.validate()?;
    solve_moment(&data.second_moment(), params, config)
}

/// Same as [`solve`] given the second-moment matrix `S` directly.
pub fn solve_moment(s: &DMatrix<f64>, params: &FeasibleSetParams, config: &SolverConfig) -> Result<SolverState> {
    let n = params.n;
    let r = params.r as f64;
    let scale = s.trace().abs().max(1e-300);
    let mut eta = match config.step_rule {
        StepRule::Adaptive => 0.5 / linalg::sym_op_norm(s).max(1e-300),
        StepRule::Constant { eta } => eta,
    };
    let mut cuts: Vec<Cut> = Vec::new();
    let mut x = DMatrix::identity(n, n) * (r / n as f64);
    let mut f = objective(s, &x);
    let mut objective_trace = vec![f];
    let mut feas_trace = vec![residuals(&x, params, &cuts)];
    let mut cut_count_trace = vec![0];
    let mut status = SolverStatus::MaxIters;
    let mut anchor = f;
    let mut fresh_cut = false;
    let mut iters = 0;
    for it in 1..=config.max_iters {
        iters = it;
        let mut next = project_feasible(&(&x + s * eta), params, &mut cuts, it, config)?;
        let mut f_next = objective(s, &next);
        if !fresh_cut {
            let mut halvings = 0;
            while f_next > f + 1e-12 * scale && halvings < 30 {
                eta *= 0.5;
                halvings += 1;
                next = project_feasible(&(&x + s * eta), params, &mut cuts, it, config)?;
                f_next = objective(s, &next);
            }
        }
        fresh_cut = false;
        x = next;
        f = f_next;
        if it % config.cut_check_period.max(1) == 0 {
            let salt = it as u64;
            let cut = separation_oracle_qnorm(&x, params, &config.oracle(salt), config.cut_slack)?;
            let added = cut.is_some();
            let duplicate = cut.as_ref().and_then(|c| cuts.iter().position(|k| same_cut(k, c)));
            if let Some(i) = duplicate {
                cuts[i].last_violated = it;
            } else if let Some(mut c) = cut {
                c.last_violated = it;
                if cuts.len() >= config.cut_pool_size.max(1) {
                    let oldest = (0..cuts.len()).min_by_key(|&i| cuts[i].last_violated).unwrap();
                    cuts.remove(oldest);
                }
                cuts.push(c);
                fresh_cut = true;
            }
            let res = residuals(&x, params, &cuts);
            let change = (anchor - f).abs() / scale;
            anchor = f;
            if !added && change < config.tol_obj && res.max() < config.tol_feas {
                objective_trace.push(f);
                feas_trace.push(res);
                cut_count_trace.push(cuts.len());
                status = SolverStatus::Converged;
                break;
            }
        }
        objective_trace.push(f);
        feas_trace.push(residuals(&x, params, &cuts));
        cut_count_trace.push(cuts.len());
    }
    let last = *feas_trace.last().unwrap();
    if last.max() > 1e3 * config.tol_feas.max(1e-12) {
        status = SolverStatus::Infeasible;
    }
    let est = norms::op_q_to_qstar_psd(&x, params.q, &config.oracle(u64::MAX))?;
    let kk = params.kappa * params.kappa;
    Ok(SolverState {
        x,
        cuts,
        objective_trace,
        feas_trace,
        cut_count_trace,
        iters,
        status,
        norm_ratio: est.value / kk,
        norm_ratio_exact: est.exact,
    })
}
