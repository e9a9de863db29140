//! Vector and matrix norms, including the `p → q` operator norms the
//! estimators are built around.
//!
//! The `∞ → 1` norm of a PSD matrix `M` is `max xᵀMx` over sign vectors
//! `x ∈ {±1}ⁿ`. It is NP-hard in general, so two oracles are provided:
//!
//! * [`op_inf_to_1_exact`] enumerates sign vectors with a Gray-code walk
//!   (each step is `O(n)`). Rows and columns that are identically zero are
//!   dropped and block-diagonal structure is split first, so the 22-coordinate
//!   limit applies to the largest connected block, not to `n`.
//! * [`op_inf_to_1_heuristic`] rounds `M^{1/2} g` for Gaussian `g` to a sign
//!   vector and improves it by single-coordinate flips. It always returns a
//!   certified lower bound.
//!
//! The duality `‖MᵀM‖_{q→q*} = ‖M‖²_{q→2}` turns both into oracles for the
//! robustness parameter `κ = ‖Π‖_{∞→2}` of a projector.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest block the exact sign-vector enumeration accepts.
pub const EXACT_LIMIT: usize = 22;

/// Exponent of an `ℓq` norm. `q = ∞` is kept symbolic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormIndex {
    Finite(f64),
    Infinity,
}

impl NormIndex {
    pub fn finite(q: f64) -> Result<Self> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!("norm index {q} must be a finite real >= 1")));
        }
        Ok(NormIndex::Finite(q))
    }

    /// Hölder conjugate `q* = q / (q - 1)`.
    pub fn dual(self) -> NormIndex {
        match self {
            NormIndex::Infinity => NormIndex::Finite(1.0),
            NormIndex::Finite(q) if q == 1.0 => NormIndex::Infinity,
            NormIndex::Finite(q) => NormIndex::Finite(q / (q - 1.0)),
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, NormIndex::Infinity)
    }

    /// Numeric value, `f64::INFINITY` for `∞`.
    pub fn value(self) -> f64 {
        match self {
            NormIndex::Finite(q) => q,
            NormIndex::Infinity => f64::INFINITY,
        }
    }

    /// `1/q`, zero for `∞`.
    pub fn reciprocal(self) -> f64 {
        match self {
            NormIndex::Finite(q) => 1.0 / q,
            NormIndex::Infinity => 0.0,
        }
    }

    /// The perturbation norms the estimators support: `q ∈ (2, ∞]`.
    pub fn ensure_robust_range(self) -> Result<()> {
        match self {
            NormIndex::Infinity => Ok(()),
            NormIndex::Finite(q) if q > 2.0 && q.is_finite() => Ok(()),
            NormIndex::Finite(q) => Err(Error::InvalidParameter(format!("q = {q} must lie in (2, inf]"))),
        }
    }
}

impl fmt::Display for NormIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormIndex::Finite(q) => write!(f, "{q}"),
            NormIndex::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for NormIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(NormIndex::Infinity),
            other => {
                let q: f64 =
                    other.parse().map_err(|_| Error::InvalidParameter(format!("cannot parse norm index `{s}`")))?;
                NormIndex::finite(q)
            }
        }
    }
}

impl Serialize for NormIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormIndex::Finite(q) => s.serialize_f64(*q),
            NormIndex::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) => NormIndex::finite(q).map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `ℓq` norm of a slice.
pub fn vector_norm(v: &[f64], q: NormIndex) -> f64 {
    match q {
        NormIndex::Infinity => v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())),
        NormIndex::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
        NormIndex::Finite(p) if p == 2.0 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormIndex::Finite(p) => {
            // scale by the max entry so large p does not overflow
            let peak = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
            if peak == 0.0 {
                return 0.0;
            }
            peak * v.iter().map(|x| (x.abs() / peak).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

/// Euclidean projection of `v` onto the ℓ1 ball of the given radius, in place.
///
/// Sort-based: find the soft threshold `τ` with `Σ max(|vᵢ| − τ, 0) = radius`.
pub fn project_l1_ball(v: &mut [f64], radius: f64) {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (j + 1) as f64;
        if u > t {
            tau = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - tau).max(0.0);
    }
}

/// Euclidean projection of `v` onto the `ℓp` ball of the given radius, in place.
///
/// `p = 1`, `2` and `∞` use closed forms. Otherwise the KKT conditions give
/// `xᵢ = sign(vᵢ) tᵢ` with `tᵢ + μ p tᵢ^{p−1} = |vᵢ|`; each `tᵢ` is found by
/// bisection, nested in a bisection on the multiplier `μ`.
pub fn project_lp_ball(v: &mut [f64], p: NormIndex, radius: f64) {
    if vector_norm(v, p) <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let p = match p {
        NormIndex::Infinity => {
            v.iter_mut().for_each(|x| *x = x.clamp(-radius, radius));
            return;
        }
        NormIndex::Finite(p) if p == 1.0 => return project_l1_ball(v, radius),
        NormIndex::Finite(p) if p == 2.0 => {
            let scale = radius / vector_norm(v, NormIndex::Finite(2.0));
            v.iter_mut().for_each(|x| *x *= scale);
            return;
        }
        NormIndex::Finite(p) => p,
    };
    let solve_t = |a: f64, mu: f64| -> f64 {
        let (mut lo, mut hi) = (0.0, a);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid + mu * p * mid.powf(p - 1.0) > a {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-16 * a {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let target = radius.powf(p);
    let mass = |mu: f64| mags.iter().map(|&a| solve_t(a, mu).powf(p)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    while mass(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    for (x, &a) in v.iter_mut().zip(&mags) {
        *x = x.signum() * solve_t(a, hi);
    }
}

/// Entry-wise `ℓq` norm `(Σ|Mᵢⱼ|^q)^{1/q}`; max-abs entry for `q = ∞`.
pub fn entrywise_norm(m: &DMatrix<f64>, q: NormIndex) -> f64 {
    vector_norm(m.as_slice(), q)
}

/// A certified value of an operator norm.
///
/// When `witness_y` is present the value is `|yᵀ M x|`; otherwise it is
/// `‖M x‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCertificate {
    pub value: f64,
    pub witness_x: DVector<f64>,
    pub witness_y: Option<DVector<f64>>,
    pub exact: bool,
}

impl NormCertificate {
    /// Re-evaluate the bilinear form at the stored witnesses.
    pub fn recompute(&self, m: &DMatrix<f64>) -> f64 {
        let mx = m * &self.witness_x;
        match &self.witness_y {
            Some(y) => y.dot(&mx).abs(),
            None => mx.norm(),
        }
    }
}

/// An operator-norm value together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    /// `false` when the exact oracle was out of reach and a heuristic lower
    /// bound was used instead.
    pub exact: bool,
    pub certificate: Option<NormCertificate>,
}

/// Knobs for the operator-norm oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Largest block handed to the exact oracle.
    pub exact_limit: usize,
    /// Rounds of the randomized heuristic.
    pub rounds: usize,
    /// Seed for the heuristic.
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { exact_limit: EXACT_LIMIT, rounds: 64, seed: 0x5eed }
    }
}

/// Norms the library knows how to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    EntrywiseQ(NormIndex),
    Frobenius,
    Operator2to2,
    /// For symmetric PSD input.
    OpInftyTo1,
    OpInftyTo2,
    /// For symmetric PSD input.
    OpQtoQstar(NormIndex),
    OpQto2(NormIndex),
}

impl NormKind {
    pub fn evaluate(&self, m: &DMatrix<f64>, opts: &OracleOptions) -> Result<NormEstimate> {
        let plain = |value| NormEstimate { value, exact: true, certificate: None };
        match *self {
            NormKind::EntrywiseQ(q) => Ok(plain(entrywise_norm(m, q))),
            NormKind::Frobenius => Ok(plain(m.norm())),
            NormKind::Operator2to2 => {
                let svd = m.clone().svd(false, false);
                Ok(plain(svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b))))
            }
            NormKind::OpInftyTo1 => op_q_to_qstar_psd(m, NormIndex::Infinity, opts),
            NormKind::OpInftyTo2 => op_q_to_2(m, NormIndex::Infinity, opts),
            NormKind::OpQtoQstar(q) => op_q_to_qstar_psd(m, q, opts),
            NormKind::OpQto2(q) => op_q_to_2(m, q, opts),
        }
    }
}

/// Connected blocks of the nonzero pattern, with all-zero coordinates dropped.
fn nonzero_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut active = vec![false; n];
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != 0.0 {
                active[i] = true;
                active[j] = true;
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        if !active[i] {
            continue;
        }
        let root = find(&mut parent, i);
        if root_slot[root] == usize::MAX {
            root_slot[root] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[root_slot[root]].push(i);
    }
    blocks
}

/// Maximize `xᵀBx` over `x ∈ {±1}^b` for one dense block by Gray-code walk.
fn max_quadratic_sign(block: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let b = block.nrows();
    let mut x = vec![1.0; b];
    if b == 0 {
        return (0.0, x);
    }
    let resync = |x: &[f64]| -> (Vec<f64>, f64) {
        let y: Vec<f64> = (0..b).map(|i| (0..b).map(|j| block[(i, j)] * x[j]).sum()).collect();
        let val = x.iter().zip(&y).map(|(a, c)| a * c).sum();
        (y, val)
    };
    let (mut y, mut val) = resync(&x);
    let mut best = val;
    let mut best_x = x.clone();
    // x[0] stays +1: the form is invariant under x -> -x
    let steps: u64 = 1u64 << (b - 1);
    for t in 1..steps {
        let i = t.trailing_zeros() as usize + 1;
        let xi = x[i];
        val += -4.0 * xi * y[i] + 4.0 * block[(i, i)];
        for (k, yk) in y.iter_mut().enumerate() {
            *yk -= 2.0 * xi * block[(k, i)];
        }
        x[i] = -xi;
        if t & 0xfff == 0 {
            let (fresh_y, fresh_val) = resync(&x);
            y = fresh_y;
            val = fresh_val;
        }
        if val > best {
            best = val;
            best_x.copy_from_slice(&x);
        }
    }
    (best, best_x)
}

/// Exact `‖M‖_{∞→1} = max_{x ∈ {±1}ⁿ} xᵀMx` for symmetric PSD `M`.
///
/// Fails with [`Error::DimensionTooLarge`] when a connected block of the
/// nonzero pattern has more than [`EXACT_LIMIT`] coordinates.
pub fn op_inf_to_1_exact(m: &DMatrix<f64>) -> Result<NormCertificate> {
    op_inf_to_1_exact_limited(m, EXACT_LIMIT)
}

fn op_inf_to_1_exact_limited(m: &DMatrix<f64>, limit: usize) -> Result<NormCertificate> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!("expected square matrix, got {}x{}", n, m.ncols())));
    }
    let blocks = nonzero_blocks(m);
    if let Some(big) = blocks.iter().map(|b| b.len()).max() {
        if big > limit {
            return Err(Error::DimensionTooLarge(big));
        }
    }
    let mut x = DVector::from_element(n, 1.0);
    for idx in &blocks {
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        let (_, signs) = max_quadratic_sign(&sub);
        for (k, &i) in idx.iter().enumerate() {
            x[i] = signs[k];
        }
    }
    let value = x.dot(&(m * &x));
    Ok(NormCertificate { value, witness_y: Some(x.clone()), witness_x: x, exact: true })
}

/// Greedy single-coordinate flips from a starting sign vector.
fn local_search(m: &DMatrix<f64>, x: &mut DVector<f64>) -> f64 {
    let n = m.nrows();
    let mut y = m * &*x;
    let mut val = x.dot(&y);
    for _ in 0..(100 * n.max(1)) {
        let mut best_gain = 0.0;
        let mut best_i = None;
        for i in 0..n {
            let gain = -4.0 * x[i] * y[i] + 4.0 * m[(i, i)];
            if gain > best_gain {
                best_gain = gain;
                best_i = Some(i);
            }
        }
        match best_i {
            Some(i) if best_gain > 1e-12 * val.abs().max(1.0) => {
                let xi = x[i];
                y.axpy(-2.0 * xi, &m.column(i), 1.0);
                x[i] = -xi;
                val += best_gain;
            }
            _ => break,
        }
    }
    x.dot(&(m * &*x))
}

/// Randomized lower bound on `‖M‖_{∞→1}` for symmetric PSD `M`.
///
/// Each round draws `g ~ N(0, I)`, takes `x = sign(M^{1/2} g)` and runs
/// single-flip local search. The best of `rounds` rounds is returned; since
/// rounds consume the generator in order, more rounds never lower the value.
pub fn op_inf_to_1_heuristic<R: Rng + ?Sized>(m: &DMatrix<f64>, rounds: usize, rng: &mut R) -> NormCertificate {
    let n = m.nrows();
    let root = linalg::psd_sqrt(m);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..rounds.max(1) {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = (&root * g).map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        let val = local_search(m, &mut x);
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, x));
        }
    }
    let (value, x) = best.expect("at least one round");
    NormCertificate { value, witness_y: Some(x.clone()), witness_x: x, exact: false }
}

/// `x` with `‖x‖_q = 1` maximizing `⟨x, z⟩`.
fn dual_direction(z: &DVector<f64>, q: f64) -> DVector<f64> {
    let qs = q / (q - 1.0);
    let raw = z.map(|v| v.signum() * v.abs().powf(qs - 1.0));
    let norm = vector_norm(raw.as_slice(), NormIndex::Finite(q));
    if norm == 0.0 {
        raw
    } else {
        raw / norm
    }
}

/// Power-type iteration for `max xᵀMx` over the unit `ℓq` ball, `q` finite.
fn q_ball_heuristic<R: Rng + ?Sized>(m: &DMatrix<f64>, q: f64, rounds: usize, rng: &mut R) -> NormCertificate {
    let n = m.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..rounds.max(1) {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = dual_direction(&g, q);
        let mut val = x.dot(&(m * &x));
        for _ in 0..500 {
            let z = m * &x;
            if z.norm() == 0.0 {
                break;
            }
            let next = dual_direction(&z, q);
            let next_val = next.dot(&(m * &next));
            let improved = next_val > val + 1e-14 * val.abs().max(1e-300);
            if next_val >= val {
                x = next;
                val = next_val;
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, x));
        }
    }
    let (value, x) = best.expect("at least one round");
    NormCertificate { value, witness_y: Some(x.clone()), witness_x: x, exact: false }
}

/// `‖M‖_{q→q*}` for symmetric PSD `M`: exact enumeration when `q = ∞` and the
/// blocks fit, otherwise a certified heuristic lower bound.
pub fn op_q_to_qstar_psd(m: &DMatrix<f64>, q: NormIndex, opts: &OracleOptions) -> Result<NormEstimate> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch("q -> q* oracle needs a square matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cert = match q {
        NormIndex::Infinity => match op_inf_to_1_exact_limited(m, opts.exact_limit) {
            Ok(c) => c,
            Err(Error::DimensionTooLarge(_)) => op_inf_to_1_heuristic(m, opts.rounds, &mut rng),
            Err(e) => return Err(e),
        },
        NormIndex::Finite(qv) => {
            q.ensure_robust_range()?;
            q_ball_heuristic(m, qv, opts.rounds, &mut rng)
        }
    };
    Ok(NormEstimate { value: cert.value, exact: cert.exact, certificate: Some(cert) })
}

/// `‖M‖_{q→2} = sqrt(‖MᵀM‖_{q→q*})` for any `n × k` matrix.
///
/// For an orthogonal projector `Π` this is the robustness parameter
/// `κ = ‖Π‖_{q→2}`; with `q = ∞` it equals `‖Π‖_{2→1}`. The certificate
/// refers to `MᵀM`.
pub fn op_q_to_2(m: &DMatrix<f64>, q: NormIndex, opts: &OracleOptions) -> Result<NormEstimate> {
    let gram = linalg::symmetrize(&(m.transpose() * m));
    let inner = op_q_to_qstar_psd(&gram, q, opts)?;
    Ok(NormEstimate { value: inner.value.max(0.0).sqrt(), ..inner })
}

/// `‖Π‖_{2→1}` of the projector `U Uᵀ` computed from its orthonormal basis as
/// `max_s ‖Uᵀ s‖₂` over sign vectors on the support of `U`.
///
/// This route never forms `Π`, so it serves as an independent check of
/// [`op_q_to_2`] on projectors.
pub fn op_2_to_1_projector(basis: &DMatrix<f64>) -> Result<f64> {
    let support: Vec<usize> = (0..basis.nrows()).filter(|&i| basis.row(i).iter().any(|&v| v != 0.0)).collect();
    if support.len() > EXACT_LIMIT {
        return Err(Error::DimensionTooLarge(support.len()));
    }
    if support.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<DVector<f64>> = support.iter().map(|&i| basis.row(i).transpose()).collect();
    let mut signs = vec![1.0; rows.len()];
    let mut w = rows.iter().fold(DVector::zeros(basis.ncols()), |acc, r| acc + r);
    let mut best = w.norm_squared();
    let steps: u64 = 1u64 << (rows.len() - 1);
    for t in 1..steps {
        let i = t.trailing_zeros() as usize + 1;
        w.axpy(-2.0 * signs[i], &rows[i], 1.0);
        signs[i] = -signs[i];
        best = best.max(w.norm_squared());
    }
    Ok(best.sqrt())
}

/// Checks `‖A + B‖_{∞→1} ≥ ‖A‖_{∞→1}` with exact oracles.
pub fn check_psd_monotonicity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let sum = op_inf_to_1_exact(&(a + b))?;
    let base = op_inf_to_1_exact(a)?;
    Ok(sum.value >= base.value - 1e-12 * base.value.abs().max(1.0))
}

/// The sandwich `λ_min(A) tr(B) ≤ ⟨A, B⟩ ≤ λ_max(A) tr(B)` for PSD `A`, `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBounds {
    pub lo: f64,
    pub hi: f64,
    pub inner: f64,
}

pub fn trace_inner_product_bounds(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<TraceBounds> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ea, _) = linalg::sym_eigen(a);
    let (eb, _) = linalg::sym_eigen(b);
    for e in [&ea, &eb] {
        let scale = e.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 * scale {
            return Err(Error::NotPsd { min_eig: min });
        }
    }
    let trace_b = b.trace();
    let lo = ea[ea.len() - 1] * trace_b;
    let hi = ea[0] * trace_b;
    Ok(TraceBounds { lo, hi, inner: linalg::frob_inner(a, b) })
}
