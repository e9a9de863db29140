//! Dense symmetric helpers shared by the other modules.
//!
//! Matrices are plain `nalgebra::DMatrix<f64>`. Eigenpairs are always
//! returned with eigenvalues sorted in descending order.

use nalgebra::{DMatrix, DVector};

/// Descending eigendecomposition of a symmetric matrix.
///
/// Only the lower triangle is trusted; the input is symmetrized first.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rebuild `Q diag(values) Qᵀ`.
pub fn recompose(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Square root of the PSD part of a symmetric matrix (negative eigenvalues clamped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    recompose(&roots, &vectors)
}

/// Trace inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(m);
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Empirical second moment `(1/m) A Aᵀ` of an `n × m` sample matrix.
pub fn second_moment(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let m = samples.ncols().max(1) as f64;
    symmetrize(&(samples * samples.transpose())) / m
}

/// Orthogonal projector `U Uᵀ` onto the span of orthonormal columns `U`.
pub fn projector_from_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(basis * basis.transpose()))
}

/// Largest deviation of `UᵀU` from the identity.
pub fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let k = gram.nrows();
    let mut worst = 0.0_f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Extend orthonormal columns to a full orthonormal basis of ℝⁿ.
///
/// The completion runs modified Gram-Schmidt over the standard basis vectors
/// in index order, so it is deterministic.
pub fn complete_basis(partial: &DMatrix<f64>) -> DMatrix<f64> {
    let n = partial.nrows();
    let mut cols: Vec<DVector<f64>> = partial.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut cand = DVector::zeros(n);
        cand[e] = 1.0;
        // two passes keep the result orthogonal to machine precision
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&cand);
                cand.axpy(-proj, c, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            cols.push(cand / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Sign convention for eigenvectors: first entry with magnitude above
/// `1e-12` is made positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Top-`r` eigenvectors of a symmetric matrix with the canonical sign applied.
pub fn top_eigenvectors(m: &DMatrix<f64>, r: usize) -> (DVector<f64>, DMatrix<f64>) {
    let (values, vectors) = sym_eigen(m);
    let n = m.nrows();
    let mut basis = DMatrix::zeros(n, r);
    for j in 0..r {
        let mut v = vectors.column(j).into_owned();
        canonical_sign(&mut v);
        basis.set_column(j, &v);
    }
    (values, basis)
}
