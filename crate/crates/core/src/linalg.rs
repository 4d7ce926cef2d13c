//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// (A + A^H) / 2.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Real part of tr(A^H B), the real inner product on complex matrices.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn frob_sq(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// Eigendecomposition of a Hermitian matrix: ascending-agnostic (values, vectors as columns).
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let e = hermitize(a).symmetric_eigen();
    (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
}

/// U diag(v) U^H.
pub fn from_eig(values: &[f64], vectors: &CMat) -> CMat {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*v);
    }
    let mut out = &scaled * vectors.adjoint();
    for i in 0..n {
        out[(i, i)].im = 0.0;
    }
    hermitize(&out)
}

/// Natural log-determinant of a Hermitian positive-definite matrix.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    let ch = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite in log-determinant".into()))?;
    let l = ch.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        acc += l[(i, i)].re.ln();
    }
    let v = 2.0 * acc;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("non-finite log-determinant".into()))
    }
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn inv_hpd(a: &CMat) -> Result<CMat> {
    let ch = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite in inversion".into()))?;
    Ok(hermitize(&ch.inverse()))
}

/// Principal square root of a Hermitian PSD matrix; negative eigenvalues are clamped to 0.
pub fn sqrt_psd(a: &CMat) -> CMat {
    let (vals, vecs) = eigh(a);
    let roots: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    from_eig(&roots, &vecs)
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clamped to zero).
pub fn project_psd(a: &CMat) -> CMat {
    let (vals, vecs) = eigh(a);
    let clamped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    from_eig(&clamped, &vecs)
}

/// Smallest `nu >= 0` such that `sum_g w_g * sum_i max(0, e_gi - nu) <= budget`.
pub fn water_level(groups: &[(&[f64], f64)], budget: f64) -> f64 {
    let total = |nu: f64| -> f64 {
        groups
            .iter()
            .map(|(vals, w)| w * vals.iter().map(|e| (e - nu).max(0.0)).sum::<f64>())
            .sum()
    };
    if total(0.0) <= budget {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = groups
        .iter()
        .flat_map(|(vals, w)| vals.iter().map(move |&e| (e, *w)))
        .filter(|(e, _)| *e > 0.0)
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut sw, mut swe) = (0.0, 0.0);
    for (j, &(e, w)) in pts.iter().enumerate() {
        sw += w;
        swe += w * e;
        let floor = pts.get(j + 1).map_or(0.0, |p| p.0.max(0.0));
        let nu = (swe - budget) / sw;
        if nu >= floor && nu <= e {
            return nu;
        }
    }
    // Unreachable for a positive budget; fall back to the largest breakpoint.
    pts.first().map_or(0.0, |p| p.0)
}

/// Euclidean projection of a list of Hermitian matrices onto {Q_i PSD, sum tr Q_i <= budget}.
pub fn project_psd_budget(mats: &[CMat], budget: f64) -> Vec<CMat> {
    let eigs: Vec<(Vec<f64>, CMat)> = mats.iter().map(eigh).collect();
    let groups: Vec<(&[f64], f64)> = eigs.iter().map(|(v, _)| (v.as_slice(), 1.0)).collect();
    let nu = water_level(&groups, budget);
    eigs.iter()
        .map(|(v, u)| {
            let shifted: Vec<f64> = v.iter().map(|e| (e - nu).max(0.0)).collect();
            from_eig(&shifted, u)
        })
        .collect()
}

pub fn min_eig(a: &CMat) -> f64 {
    eigh(a).0.into_iter().fold(f64::INFINITY, f64::min)
}

/// Inverse of a 2x2 complex matrix, or None if it is numerically singular.
pub fn inv2(m: &CMat) -> Option<CMat> {
    let (a, b, cc, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let det = a * d - b * cc;
    let scale = (a.norm() * d.norm()).max(b.norm() * cc.norm()).max(f64::MIN_POSITIVE);
    if !(det.norm() > 1e-13 * scale) {
        return None;
    }
    Some(CMat::from_row_slice(2, 2, &[d / det, -b / det, -cc / det, a / det]))
}
