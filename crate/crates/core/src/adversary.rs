//! Perturbation models: coupled lower-bound constructions and simple baselines.
//!
//! The coupled attacks rebuild every clean column `A_j` from its retained
//! Gaussian coefficients and emit a partner `A'_j` that is an exact draw from
//! an alternative covariance `Σ'` whose top subspace `Π'` is far from `Π*`,
//! while `‖A'_j − A_j‖_∞ ≤ δ` holds for every column with high probability.
//! An estimator seeing `A'` cannot tell which of the two models produced it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covmodel::{fourier_sparse_basis, power_of_two_floor, CovarianceModel, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg;
use crate::norms::{self, NormIndex};

/// Attack families understood by the sweep harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    ConstantShift,
    SpikeInflation,
    InstanceOptimal,
    Minmax,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::ConstantShift => "constant_shift",
            AttackKind::SpikeInflation => "spike_inflation",
            AttackKind::InstanceOptimal => "instance_optimal",
            AttackKind::Minmax => "minmax",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "none" => AttackKind::None,
            "constant_shift" => AttackKind::ConstantShift,
            "spike_inflation" => AttackKind::SpikeInflation,
            "instance_optimal" => AttackKind::InstanceOptimal,
            "minmax" => AttackKind::Minmax,
            other => return Err(Error::InvalidParameter(format!("unknown adversary `{other}`"))),
        })
    }
}

/// Per-column distances between a clean and a perturbed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub max_violation: f64,
    pub column_norms: Vec<f64>,
    /// Columns whose distance exceeds `δ (1 + 1e-9)`.
    pub violating_columns: Vec<usize>,
}

impl BudgetReport {
    pub fn within_budget(&self) -> bool {
        self.violating_columns.is_empty()
    }
}

/// Compare columns of two datasets in `ℓq`.
pub fn validate_budget(clean: &Dataset, perturbed: &Dataset, q: NormIndex, delta: f64) -> Result<BudgetReport> {
    if clean.samples.shape() != perturbed.samples.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", clean.samples.shape(), perturbed.samples.shape())));
    }
    let diff = &perturbed.samples - &clean.samples;
    let column_norms: Vec<f64> = diff.column_iter().map(|c| norms::vector_norm(c.as_slice(), q)).collect();
    let limit = delta * (1.0 + 1e-9);
    let violating_columns = column_norms.iter().enumerate().filter(|(_, &v)| v > limit).map(|(j, _)| j).collect();
    let max_violation = column_norms.iter().cloned().fold(0.0, f64::max);
    Ok(BudgetReport { max_violation, column_norms, violating_columns })
}

fn perturbed_from(clean: &Dataset, samples: DMatrix<f64>, delta: f64, seed: u64) -> Dataset {
    Dataset {
        samples,
        provenance: Provenance::Perturbed { q: NormIndex::Infinity, delta, parent_seed: clean.seed },
        seed,
        mu: clean.mu.clone(),
        coefficients: None,
    }
}

/// Move every column by `δ · direction`.
pub fn attack_constant_shift(dataset: &Dataset, delta: f64, direction: &[f64]) -> Result<Dataset> {
    if direction.len() != dataset.n() {
        return Err(Error::ShapeMismatch(format!("direction length {} for n = {}", direction.len(), dataset.n())));
    }
    if direction.iter().any(|&d| d != 1.0 && d != -1.0) {
        return Err(Error::InvalidParameter("shift direction must be a sign vector".into()));
    }
    let shift = DVector::from_column_slice(direction) * delta;
    let mut samples = dataset.samples.clone();
    for mut col in samples.column_iter_mut() {
        col += &shift;
    }
    Ok(perturbed_from(dataset, samples, delta, dataset.seed))
}

/// Result of [`attack_mean_sparse`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShift {
    pub perturbed: Dataset,
    /// Number of shifted coordinates `s = ⌊(‖μ‖₁/‖μ‖₂)²⌋`.
    pub support: usize,
    /// `‖μ' − μ‖₂ = δ√s`.
    pub displacement: f64,
}

/// Shift the `s` largest-magnitude coordinates of the mean by `δ · sign(μᵢ)`.
pub fn attack_mean_sparse(dataset: &Dataset, mu: &DVector<f64>, delta: f64) -> Result<MeanShift> {
    let n = dataset.n();
    if mu.len() != n {
        return Err(Error::ShapeMismatch(format!("mean length {} for n = {n}", mu.len())));
    }
    let l1: f64 = mu.iter().map(|x| x.abs()).sum();
    let l2 = mu.norm();
    if l2 == 0.0 {
        return Err(Error::InvalidParameter("mean must be nonzero".into()));
    }
    let ratio = l1 / l2;
    let limit = (n as f64).sqrt() / 4.0;
    if ratio > limit * (1.0 + 1e-12) {
        return Err(Error::SparsityTooLarge { ratio, limit });
    }
    let s = ((ratio * ratio) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[b].abs().total_cmp(&mu[a].abs()).then(a.cmp(&b)));
    let mut shift = DVector::zeros(n);
    for &i in order.iter().take(s) {
        shift[i] = delta * mu[i].signum();
    }
    let mut samples = dataset.samples.clone();
    for mut col in samples.column_iter_mut() {
        col += &shift;
    }
    Ok(MeanShift {
        perturbed: perturbed_from(dataset, samples, delta, dataset.seed),
        support: s,
        displacement: shift.norm(),
    })
}

/// Push each column by `δ · sign(⟨w, A_j⟩) · sign(w)` along the top model
/// direction `w`, inflating the variance of the spike coordinates.
///
/// Unlike a constant shift this survives the pairwise symmetrization used by
/// the covariance pipeline.
pub fn attack_spike_inflation(model: &CovarianceModel, dataset: &Dataset, delta: f64) -> Result<Dataset> {
    if model.n != dataset.n() {
        return Err(Error::ShapeMismatch(format!("model n = {}, data n = {}", model.n, dataset.n())));
    }
    let w = model.basis.column(0).into_owned();
    let dir = w.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    let mut samples = dataset.samples.clone();
    for mut col in samples.column_iter_mut() {
        let side = if w.dot(&col) >= 0.0 { 1.0 } else { -1.0 };
        col.axpy(side * delta, &dir, 1.0);
    }
    Ok(perturbed_from(dataset, samples, delta, dataset.seed))
}

/// Outcome of the random-direction property checks for one `u_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionChecks {
    pub norm_sq: f64,
    pub norm_sq_bound: f64,
    pub sup: f64,
    pub sup_bound: f64,
    pub l1: f64,
    pub l1_bound: f64,
}

impl DirectionChecks {
    pub fn all_hold(&self) -> bool {
        (self.norm_sq - 1.0).abs() <= self.norm_sq_bound && self.sup <= self.sup_bound && self.l1 <= self.l1_bound
    }
}

/// A clean dataset together with its coupled partner.
#[derive(Debug, Clone)]
pub struct CoupledInstance {
    pub kind: AttackKind,
    pub clean: Dataset,
    pub perturbed: Dataset,
    /// The covariance that generated `perturbed`, with its true eigenbasis.
    pub alt_model: CovarianceModel,
    /// Orthonormal `v'_1, …, v'_r`.
    pub alt_basis: DMatrix<f64>,
    /// `Π'`, the projector onto `span(v')`.
    pub pi_alt: DMatrix<f64>,
    pub epsilon: f64,
    pub k_prime: usize,
    /// Columns `u_1, …, u_r`.
    pub u_vectors: DMatrix<f64>,
    pub budget: BudgetReport,
    pub max_violation: f64,
    /// Resamples of the random directions after a budget violation.
    pub rejections: usize,
    /// Whether the returned instance respects the budget.
    pub accepted: bool,
    pub direction_checks: Vec<DirectionChecks>,
}

/// `‖Π' − Π*‖²_F` from its orthogonal pieces, for
/// `v'_ℓ = (1−ε) v_ℓ + √(2ε−ε²) u_ℓ/‖u_ℓ‖`.
///
/// The difference expands as `−(2ε−ε²) vvᵀ + (2ε−ε²)/‖u‖² uuᵀ +
/// (1−ε)√(2ε−ε²)/‖u‖ (uvᵀ + vuᵀ)` per direction. The three pieces are
/// mutually orthogonal, and the Frobenius norms of `uuᵀ` and `uvᵀ + vuᵀ` are
/// `‖u‖²` and `√2 ‖u‖`.
pub fn frobenius_closed_form(epsilon: f64, u_norms: &[f64]) -> f64 {
    let a = 2.0 * epsilon - epsilon * epsilon;
    u_norms
        .iter()
        .map(|&nu| {
            let c_vv = a;
            let c_uu = a / (nu * nu);
            let c_uv = (1.0 - epsilon) * a.sqrt() / nu;
            c_vv * c_vv + c_uu * c_uu * nu.powi(4) + 2.0 * c_uv * c_uv * nu * nu
        })
        .sum()
}

/// Knobs for [`attack_instance_optimal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceOptimalOptions {
    /// Constant in `ε = c δκ / (√(rλ₁) ln(rm) ln n)`.
    pub c: f64,
    /// Failure probability used in the direction property bounds.
    pub eta: f64,
    pub max_resamples: usize,
}

impl Default for InstanceOptimalOptions {
    fn default() -> Self {
        InstanceOptimalOptions { c: 0.1, eta: 0.01, max_resamples: 20 }
    }
}

/// Knobs for [`attack_minmax`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinmaxOptions {
    /// Constant in `ε = c₄ δκ / (√(rθ) ln(nm))`.
    pub c4: f64,
}

impl Default for MinmaxOptions {
    fn default() -> Self {
        MinmaxOptions { c4: 0.1 }
    }
}

/// Admissible `δ` range of the instance-optimal attack: `[√(rλ₁)κ/n, √(rλ₁)/κ]`.
pub fn instance_optimal_window(model: &CovarianceModel) -> (f64, f64) {
    let base = (model.r as f64 * model.lambda_max()).sqrt();
    (base * model.kappa / model.n as f64, base / model.kappa)
}

/// Block size `k' = ⌊√(λ₁/r) κ/δ⌋` of the instance-optimal attack.
pub fn instance_optimal_block(model: &CovarianceModel, delta: f64) -> usize {
    ((model.lambda_max() / model.r as f64).sqrt() * model.kappa / delta * (1.0 + 1e-12)).floor() as usize
}

/// `ε` of the instance-optimal attack for `m` samples.
pub fn instance_optimal_epsilon(model: &CovarianceModel, delta: f64, m: usize, c: f64) -> f64 {
    let r = model.r as f64;
    let log_rm = (r * m as f64).ln().max(1.0);
    let log_n = (model.n as f64).ln().max(1.0);
    c * delta * model.kappa / ((r * model.lambda_max()).sqrt() * log_rm * log_n)
}

fn identity_instance(
    kind: AttackKind,
    model: &CovarianceModel,
    dataset: &Dataset,
    seed: u64,
) -> Result<CoupledInstance> {
    let perturbed = perturbed_from(dataset, dataset.samples.clone(), 0.0, seed);
    let budget = validate_budget(dataset, &perturbed, NormIndex::Infinity, 0.0)?;
    Ok(CoupledInstance {
        kind,
        clean: dataset.clone(),
        perturbed,
        alt_model: model.clone(),
        alt_basis: model.top_basis(),
        pi_alt: model.projector(),
        epsilon: 0.0,
        k_prime: 0,
        u_vectors: DMatrix::zeros(model.n, model.r),
        max_violation: budget.max_violation,
        budget,
        rejections: 0,
        accepted: true,
        direction_checks: Vec::new(),
    })
}

fn coefficients_of<'a>(model: &CovarianceModel, dataset: &'a Dataset) -> Result<&'a DMatrix<f64>> {
    let z = dataset
        .coefficients
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("coupled attacks need a dataset with retained coefficients".into()))?;
    if z.nrows() != model.n || dataset.n() != model.n {
        return Err(Error::ShapeMismatch(format!("model n = {}, data n = {}", model.n, dataset.n())));
    }
    Ok(z)
}

/// Disjoint blocks of `size` coordinates outside `taken`, allocated in index order.
fn allocate_blocks(n: usize, taken: &[usize], count: usize, size: usize) -> Result<Vec<Vec<usize>>> {
    let free: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
    if count * size > free.len() {
        return Err(Error::SupportOverflow { needed: count * size + taken.len(), available: n });
    }
    Ok((0..count).map(|l| free[l * size..(l + 1) * size].to_vec()).collect())
}

/// The instance-optimal coupled attack.
///
/// Each `u_ℓ` is a Gaussian vector on its own block `S_ℓ`, projected onto
/// the part of `ℝ^{S_ℓ}` orthogonal to `Π*` and scaled by `1/√d_ℓ`, where
/// `d_ℓ` is the numerical rank of that projection. The perturbed columns are
///
/// ```text
/// A'_j = A_j + Σ_ℓ ζ_ℓj √λ_ℓ · √(2ε−ε²) / ((1−ε)‖u_ℓ‖) · u_ℓ
/// ```
///
/// with the dataset's own coefficients `ζ`. If some column leaves the `δ`
/// budget the directions are redrawn, up to `max_resamples` times.
pub fn attack_instance_optimal(
    model: &CovarianceModel,
    dataset: &Dataset,
    delta: f64,
    opts: &InstanceOptimalOptions,
    seed: u64,
) -> Result<CoupledInstance> {
    let zeta = coefficients_of(model, dataset)?;
    if delta == 0.0 {
        return identity_instance(AttackKind::InstanceOptimal, model, dataset, seed);
    }
    let (n, r, m) = (model.n, model.r, dataset.m());
    if model.kappa < 2.0 * r as f64 * (1.0 - 1e-9) {
        return Err(Error::InvalidParameter(format!("kappa = {} must be at least 2r", model.kappa)));
    }
    let (lo, hi) = instance_optimal_window(model);
    if !(delta >= lo * (1.0 - 1e-12) && delta <= hi * (1.0 + 1e-12)) {
        return Err(Error::ParameterWindow { delta, lo, hi });
    }
    let k_prime = instance_optimal_block(model, delta).max(1);
    let epsilon = instance_optimal_epsilon(model, delta, m, opts.c);
    let blocks = allocate_blocks(n, &model.top_support(), r, k_prime)?;
    let v = model.top_basis();

    // orthogonal complement of span(V[S_ℓ, :]) inside ℝ^{S_ℓ}
    let complements: Vec<(DMatrix<f64>, usize)> = blocks
        .iter()
        .map(|s| {
            let vs = DMatrix::from_fn(s.len(), r, |i, j| v[(s[i], j)]);
            let svd = vs.svd(true, false);
            let u = svd.u.expect("left singular vectors");
            let rank = svd.singular_values.iter().filter(|&&x| x > 1e-10).count();
            let mut proj = DMatrix::identity(s.len(), s.len());
            for (j, &sv) in svd.singular_values.iter().enumerate() {
                if sv > 1e-10 {
                    let c = u.column(j);
                    proj -= &c * c.transpose();
                }
            }
            (proj, s.len() - rank)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_a = (2.0 * epsilon - epsilon * epsilon).sqrt();
    let mut rejections = 0;
    loop {
        let mut u_vectors = DMatrix::zeros(n, r);
        for (l, (s, (proj, d))) in blocks.iter().zip(&complements).enumerate() {
            let g = DVector::from_fn(s.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let pg = proj * g / (*d as f64).max(1.0).sqrt();
            for (i, &row) in s.iter().enumerate() {
                u_vectors[(row, l)] = pg[i];
            }
        }
        let u_norms: Vec<f64> = u_vectors.column_iter().map(|c| c.norm()).collect();
        // direction w_ℓ = v_ℓ + c_ℓ u_ℓ, with c_ℓ = √(2ε−ε²)/((1−ε)‖u_ℓ‖)
        let scales: Vec<f64> = u_norms.iter().map(|&nu| sqrt_a / ((1.0 - epsilon) * nu)).collect();
        let mut shift_dirs = DMatrix::zeros(n, r);
        for l in 0..r {
            let col = u_vectors.column(l) * (scales[l] * model.eigvals[l].sqrt());
            shift_dirs.set_column(l, &col);
        }
        let samples = &dataset.samples + &shift_dirs * zeta.rows(0, r);
        let perturbed = perturbed_from(dataset, samples, delta, seed);
        let budget = validate_budget(dataset, &perturbed, NormIndex::Infinity, delta)?;
        if !budget.within_budget() && rejections < opts.max_resamples {
            rejections += 1;
            continue;
        }

        let mut alt_basis = DMatrix::zeros(n, r);
        for l in 0..r {
            let col = v.column(l) * (1.0 - epsilon) + u_vectors.column(l) * (sqrt_a / u_norms[l]);
            alt_basis.set_column(l, &col);
        }
        let mut factor = model.basis.clone();
        for l in 0..n {
            let mut col = model.basis.column(l).into_owned();
            if l < r {
                col.axpy(scales[l], &u_vectors.column(l), 1.0);
            }
            factor.set_column(l, &(col * model.eigvals[l].max(0.0).sqrt()));
        }
        let sigma_alt = linalg::symmetrize(&(&factor * factor.transpose()));
        let (vals, vecs) = linalg::sym_eigen(&sigma_alt);
        let vals: Vec<f64> = vals.iter().map(|&x| x.max(0.0)).collect();
        let alt_model = CovarianceModel::new(vals, vecs, r)?;

        let direction_checks = u_vectors
            .column_iter()
            .map(|u| {
                let kp = k_prime as f64;
                let l1 = (r as f64 / opts.eta).ln();
                let l2 = (r as f64 * kp / opts.eta).ln();
                DirectionChecks {
                    norm_sq: u.norm_squared(),
                    norm_sq_bound: 3.0 * (l1 / kp).sqrt() + 4.0 * l1 / kp,
                    sup: u.amax(),
                    sup_bound: 3.0 * (l2 / kp).sqrt(),
                    l1: u.iter().map(|x| x.abs()).sum(),
                    l1_bound: 2.0 * kp.sqrt(),
                }
            })
            .collect();

        return Ok(CoupledInstance {
            kind: AttackKind::InstanceOptimal,
            clean: dataset.clone(),
            accepted: budget.within_budget(),
            max_violation: budget.max_violation,
            budget,
            perturbed,
            alt_model,
            pi_alt: linalg::projector_from_basis(&alt_basis),
            alt_basis,
            epsilon,
            k_prime,
            u_vectors,
            rejections,
            direction_checks,
        });
    }
}

/// Admissible `δ` range of the min-max attack: `(√(rλ₁)κ/n, √(rθ)/κ]`.
pub fn minmax_window(model: &CovarianceModel, kappa: f64) -> (f64, f64) {
    let r = model.r as f64;
    let theta = model.lambda_max() - 1.0;
    ((r * model.lambda_max()).sqrt() * kappa / model.n as f64, (r * theta).sqrt() / kappa)
}

/// The min-max coupled attack on a spiked model `I + θΠ*`.
///
/// Each `u_ℓ` is a flat Fourier character on its own block of size `k'`
/// (a power of two in `[¼, ½]·√θκ/(δ√r)`) and `v'_ℓ = (1−ε)v_ℓ + √(2ε−ε²)u_ℓ`.
/// The retained top coefficient `a = √(1+θ) ζ` of each column is split into
/// independent parts `s ~ N(0, θ)` and `a − s ~ N(0, 1)` by drawing
/// `s = θ/(1+θ)·a + √(θ/(1+θ))·ξ` with fresh `ξ`; then
/// `A' = A + Σ_ℓ s_ℓ (v'_ℓ − v_ℓ)` is an exact draw from `N(0, I + θΠ')`.
pub fn attack_minmax(
    model: &CovarianceModel,
    dataset: &Dataset,
    kappa: f64,
    delta: f64,
    opts: &MinmaxOptions,
    seed: u64,
) -> Result<CoupledInstance> {
    let zeta = coefficients_of(model, dataset)?;
    let (n, r, m) = (model.n, model.r, dataset.m());
    let theta = model.lambda_max() - 1.0;
    let spiked = theta > 0.0
        && (0..n).all(|i| {
            let want = if i < r { 1.0 + theta } else { 1.0 };
            (model.eigvals[i] - want).abs() < 1e-12
        });
    if !spiked {
        return Err(Error::InvalidParameter("min-max attack needs a spiked model I + theta * Pi".into()));
    }
    if delta == 0.0 {
        return identity_instance(AttackKind::Minmax, model, dataset, seed);
    }
    let (lo, hi) = minmax_window(model, kappa);
    if !(delta > lo && delta <= hi * (1.0 + 1e-12)) {
        return Err(Error::ParameterWindow { delta, lo, hi });
    }
    let rf = r as f64;
    let k_prime = power_of_two_floor(0.5 * theta.sqrt() * kappa / (delta * rf.sqrt()))
        .ok_or(Error::ParameterWindow { delta, lo, hi })?;
    let support = model.top_support();
    let start = support.iter().max().map_or(0, |&s| s + 1);
    if start + r * k_prime > n {
        return Err(Error::SupportOverflow { needed: start + r * k_prime, available: n });
    }
    let epsilon = opts.c4 * delta * kappa / ((rf * theta).sqrt() * ((n * m) as f64).ln());
    let mut u_vectors = DMatrix::zeros(n, r);
    for l in 0..r {
        let block = fourier_sparse_basis(n, k_prime, 1, start + l * k_prime)?;
        u_vectors.set_column(l, &block.column(0));
    }
    let v = model.top_basis();
    let sqrt_a = (2.0 * epsilon - epsilon * epsilon).sqrt();
    let alt_basis = &v * (1.0 - epsilon) + &u_vectors * sqrt_a;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = zeta.rows(0, r) * (1.0 + theta).sqrt();
    let split = theta / (1.0 + theta);
    let signal = DMatrix::from_fn(r, m, |i, j| split * a[(i, j)] + split.sqrt() * rng.sample::<f64, _>(StandardNormal));
    let samples = &dataset.samples + (&alt_basis - &v) * signal;
    let perturbed = perturbed_from(dataset, samples, delta, seed);
    let budget = validate_budget(dataset, &perturbed, NormIndex::Infinity, delta)?;

    let mut eig = vec![1.0; n];
    eig[..r].iter_mut().for_each(|l| *l = 1.0 + theta);
    let alt_model = CovarianceModel::new(eig, alt_basis.clone(), r)?;
    Ok(CoupledInstance {
        kind: AttackKind::Minmax,
        clean: dataset.clone(),
        accepted: budget.within_budget(),
        max_violation: budget.max_violation,
        budget,
        perturbed,
        alt_model,
        pi_alt: linalg::projector_from_basis(&alt_basis),
        alt_basis,
        epsilon,
        k_prime,
        u_vectors,
        rejections: 0,
        direction_checks: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{minmax_model, sample, spiked_model};
    use crate::norms::OracleOptions;

    fn crit6_model() -> CovarianceModel {
        spiked_model(32, 1, 1.0, 8f64.sqrt()).unwrap()
    }

    #[test]
    fn constant_shift_examples() {
        let model = spiked_model(8, 1, 1.0, 2.0).unwrap();
        let d = sample(&model, 20, None, 1).unwrap();
        let ones = vec![1.0; 8];
        let same = attack_constant_shift(&d, 0.0, &ones).unwrap();
        assert_eq!(same.samples, d.samples);
        let p = attack_constant_shift(&d, 0.1, &ones).unwrap();
        let rep = validate_budget(&d, &p, NormIndex::Infinity, 0.1).unwrap();
        assert!((rep.max_violation - 0.1).abs() < 1e-15 && rep.within_budget());
        let l2 = validate_budget(&d, &p, NormIndex::Finite(2.0), 10.0).unwrap();
        assert!((l2.max_violation - 0.1 * 8f64.sqrt()).abs() < 1e-12);
        assert!(attack_constant_shift(&d, 0.1, &[0.5; 8]).is_err());
    }

    #[test]
    fn mean_sparse_examples() {
        let n = 16;
        let mut mu = DVector::zeros(n);
        mu[0] = 1.0;
        let d = crate::covmodel::sample_isotropic(&mu, 0.1, 10, 2).unwrap();
        let s = attack_mean_sparse(&d, &mu, 0.2).unwrap();
        assert_eq!(s.support, 1);
        assert!((s.displacement - 0.2).abs() < 1e-15);
        let moved = &s.perturbed.samples - &d.samples;
        assert!(moved.column_iter().all(|c| (c[0] - 0.2).abs() < 1e-15 && c.rows(1, n - 1).amax() == 0.0));
        let same = attack_mean_sparse(&d, &mu, 0.0).unwrap();
        assert_eq!(same.perturbed.samples, d.samples);
        let dense = DVector::from_element(n, 1.0);
        assert!(matches!(attack_mean_sparse(&d, &dense, 0.1), Err(Error::SparsityTooLarge { .. })));
    }

    #[test]
    fn spike_inflation_stays_in_budget() {
        let model = spiked_model(16, 1, 1.0, 2.0).unwrap();
        let d = sample(&model, 200, None, 3).unwrap();
        let p = attack_spike_inflation(&model, &d, 0.05).unwrap();
        let rep = validate_budget(&d, &p, NormIndex::Infinity, 0.05).unwrap();
        assert!(rep.within_budget());
        assert!(rep.max_violation > 0.0499);
    }

    #[test]
    fn closed_form_matches_direct_norm() {
        let model = crit6_model();
        let d = sample(&model, 2000, None, 5).unwrap();
        let inst = attack_instance_optimal(&model, &d, 0.25, &InstanceOptimalOptions::default(), 9).unwrap();
        let norms: Vec<f64> = inst.u_vectors.column_iter().map(|c| c.norm()).collect();
        let direct = (&inst.pi_alt - model.projector()).norm_squared();
        assert!((direct - frobenius_closed_form(inst.epsilon, &norms)).abs() < 1e-8);
        assert!(direct >= model.r as f64 * inst.epsilon);
        let pp = &inst.pi_alt * &inst.pi_alt;
        assert!((&pp - &inst.pi_alt).norm() < 1e-8 && (inst.pi_alt.trace() - 1.0).abs() < 1e-8);
        for u in inst.u_vectors.column_iter() {
            assert!(model.top_basis().column(0).dot(&u).abs() < 1e-10);
        }
    }

    #[test]
    fn instance_optimal_zero_delta_is_identity() {
        let model = crit6_model();
        let d = sample(&model, 100, None, 5).unwrap();
        let inst = attack_instance_optimal(&model, &d, 0.0, &InstanceOptimalOptions::default(), 9).unwrap();
        assert_eq!(inst.perturbed.samples, d.samples);
        assert!((&inst.pi_alt - model.projector()).norm() < 1e-8);
    }

    #[test]
    fn instance_optimal_rejects_bad_parameters() {
        let model = crit6_model();
        let d = sample(&model, 100, None, 5).unwrap();
        let opts = InstanceOptimalOptions::default();
        assert!(matches!(attack_instance_optimal(&model, &d, 0.9, &opts, 1), Err(Error::ParameterWindow { .. })));
        // inside the window but the block no longer fits next to the support
        assert!(matches!(attack_instance_optimal(&model, &d, 0.13, &opts, 1), Err(Error::SupportOverflow { .. })));
    }

    #[test]
    fn instance_optimal_covariance_matches_samples() {
        let model = spiked_model(16, 1, 1.0, 2.0).unwrap();
        let m = 20_000;
        let d = sample(&model, m, None, 11).unwrap();
        let (lo, hi) = instance_optimal_window(&model);
        let inst =
            attack_instance_optimal(&model, &d, (lo * hi).sqrt(), &InstanceOptimalOptions::default(), 3).unwrap();
        let err = linalg::sym_op_norm(&(inst.perturbed.second_moment() - inst.alt_model.sigma()));
        assert!(err <= 5.0 * model.lambda_max() * (16.0 / m as f64).sqrt());
    }

    #[test]
    fn minmax_examples() {
        let kappa = 2.0;
        let model = minmax_model(64, 1, 1.0, kappa).unwrap();
        let d = sample(&model, 500, None, 1).unwrap();
        let (lo, hi) = minmax_window(&model, kappa);
        let inst = attack_minmax(&model, &d, kappa, (lo * hi).sqrt(), &MinmaxOptions::default(), 2).unwrap();
        let e = inst.epsilon;
        let frob = (&inst.pi_alt - model.projector()).norm_squared();
        assert!(frob >= (4.0 * e - 2.0 * e * e) * (1.0 - 1e-10));
        let k = norms::op_q_to_2(&inst.pi_alt, NormIndex::Infinity, &OracleOptions::default()).unwrap();
        assert!(k.exact && k.value <= kappa);
        assert!((inst.u_vectors.amax() - 1.0 / (inst.k_prime as f64).sqrt()).abs() < 1e-15);
        assert!(attack_minmax(&model, &d, kappa, 0.9, &MinmaxOptions::default(), 2).is_err());
    }
}
