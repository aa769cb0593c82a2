//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{BltError, Result};

/// Absolute tolerance for rank and transversality decisions on
/// normalized matrices.
pub const RANK_TOL: f64 = 1e-10;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        return Err(BltError::EmptyMatrix);
    }
    let c = rows[0].len();
    if c == 0 {
        return Err(BltError::EmptyMatrix);
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(BltError::DimensionMismatch { expected: c, found: bad.len() });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// The coordinate projection that keeps the listed coordinates in order.
pub fn selection_matrix(d: usize, keep: &[usize]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(keep.len(), d);
    for (r, &k) in keep.iter().enumerate() {
        p[(r, k)] = 1.0;
    }
    p
}

pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(BltError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let normalized_det = (m / scale).determinant();
    if !normalized_det.is_finite() || normalized_det.abs() < 1e-14 {
        return Err(BltError::Singular(format!(
            "{}x{} matrix with normalized determinant {normalized_det:e}",
            m.nrows(),
            m.ncols()
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| BltError::Singular(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Full row rank test on the matrix scaled to unit largest entry.
pub fn has_full_row_rank(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() > m.ncols() {
        return false;
    }
    let scale = m.amax();
    if scale == 0.0 {
        return false;
    }
    let s = singular_values(&(m / scale));
    s.len() == m.nrows() && s[m.nrows() - 1] > tol
}

/// Right inverse `Bᵀ(BBᵀ)⁻¹` of a full-row-rank matrix.
pub fn right_inverse(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bbt = b * b.transpose();
    Ok(b.transpose() * inverse(&bbt)?)
}

/// Orthonormal basis of `ker b`, as the columns of a `d × (d - rank)` matrix.
///
/// The spanning set is the columns of the orthogonal projector onto the
/// kernel; modified Gram–Schmidt with largest-residual pivoting picks the
/// basis, and each vector's largest entry is made positive.
pub fn kernel_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = b.ncols();
    if !has_full_row_rank(b, RANK_TOL) {
        return Err(BltError::Precondition("map is not surjective".into()));
    }
    let k = d - b.nrows();
    if k == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    let proj = DMatrix::identity(d, d) - right_inverse(b)? * b;
    let mut cols: Vec<DVector<f64>> = (0..d).map(|j| proj.column(j).into_owned()).collect();
    let mut basis = Vec::with_capacity(k);
    for _ in 0..k {
        let (best, norm) = cols
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if norm < 1e-12 {
            return Err(BltError::Singular("kernel basis collapsed".into()));
        }
        let mut v = cols.swap_remove(best) / norm;
        let lead = v.iter().copied().fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v = -v;
        }
        for c in cols.iter_mut() {
            let dot = c.dot(&v);
            *c -= &v * dot;
        }
        basis.push(v);
    }
    Ok(DMatrix::from_columns(&basis))
}

/// Frobenius distance between the orthogonal projectors onto the column
/// spans of `a` and `b` (zero iff the spans agree).
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let pa = column_projector(a)?;
    let pb = column_projector(b)?;
    Ok((pa - pb).norm())
}

fn column_projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ata = a.transpose() * a;
    Ok(a * inverse(&ata)? * a.transpose())
}

/// Neumaier-compensated sum, independent of evaluation grouping up to
/// rounding of the compensation term.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
