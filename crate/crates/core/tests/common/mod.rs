#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `G Gᵀ` with `G` an `n × rank` Gaussian matrix.
pub fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(n, rank, rng);
    let m = &g * g.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, rng);
    (&g + g.transpose()) * 0.5
}

/// Orthonormal `n × r` basis of a Gaussian subspace.
pub fn random_basis(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(n, r, rng).qr().q().columns(0, r).into_owned()
}

pub fn random_projector(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = random_basis(n, r, rng);
    &b * b.transpose()
}

/// A random point of `{tr X = r, 0 ⪯ X ⪯ I}` built as a convex combination of
/// rank-`r` projectors, without touching the library's projection code.
pub fn random_fantope_point(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let parts = 1 + rng.random_range(0..4);
    let w: Vec<f64> = (0..parts).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut x = DMatrix::zeros(n, n);
    for wi in w {
        x += random_projector(n, r, rng) * (wi / total);
    }
    x
}

/// `max_{x ∈ {±1}^n} ‖M x‖₂` by plain enumeration.
pub fn brute_inf_to_2(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    let mut best = 0.0f64;
    for bits in 0u32..(1 << n) {
        let x = nalgebra::DVector::from_fn(n, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 });
        best = best.max((m * x).norm());
    }
    best
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
