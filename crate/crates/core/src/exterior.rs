//! Exterior algebra of ℝ^d for d ≤ 12.
//!
//! Basis k-vectors are indexed by strictly increasing index tuples, stored
//! internally as bitmasks. Indices are 0-based in this API.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{BltError, Result};

pub const MAX_DIM: usize = 12;

/// A homogeneous element of Λ^k(ℝ^d).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVector {
    d: usize,
    grade: usize,
    coeffs: BTreeMap<u16, f64>,
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(BltError::Input("dimension must be positive".into()));
    }
    if d > MAX_DIM {
        return Err(BltError::DimensionTooLarge(d));
    }
    Ok(())
}

fn mask_of(d: usize, idx: &[usize]) -> Result<u16> {
    let mut mask = 0u16;
    for w in idx.windows(2) {
        if w[0] >= w[1] {
            return Err(BltError::Input(format!("basis key {idx:?} is not strictly increasing")));
        }
    }
    for &i in idx {
        if i >= d {
            return Err(BltError::Input(format!("index {i} out of range for dimension {d}")));
        }
        mask |= 1 << i;
    }
    Ok(mask)
}

fn indices_of(mask: u16) -> Vec<usize> {
    (0..16).filter(|i| mask & (1 << i) != 0).collect()
}

/// Sign of e_a ∧ e_b relative to the sorted basis element of a ∪ b, for
/// disjoint index sets: the parity of inversions in the concatenation.
fn wedge_sign(a: u16, b: u16) -> f64 {
    let mut inversions = 0u32;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        inversions += (a >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl MultiVector {
    pub fn zero(d: usize, grade: usize) -> Result<Self> {
        check_dim(d)?;
        if grade > d {
            return Err(BltError::GradeOverflow { a: grade, b: 0, d });
        }
        Ok(Self { d, grade, coeffs: BTreeMap::new() })
    }

    pub fn scalar(d: usize, c: f64) -> Result<Self> {
        let mut s = Self::zero(d, 0)?;
        s.insert(0, c);
        Ok(s)
    }

    /// The basis element e_{i₁}∧…∧e_{i_k} for strictly increasing indices.
    pub fn basis(d: usize, idx: &[usize]) -> Result<Self> {
        Self::from_terms(d, idx.len(), &[(idx.to_vec(), 1.0)])
    }

    pub fn volume(d: usize) -> Result<Self> {
        let all: Vec<usize> = (0..d).collect();
        Self::basis(d, &all)
    }

    pub fn vector(v: &[f64]) -> Result<Self> {
        let d = v.len();
        let mut m = Self::zero(d, 1)?;
        for (i, &c) in v.iter().enumerate() {
            m.insert(1 << i, c);
        }
        Ok(m)
    }

    pub fn from_terms(d: usize, grade: usize, terms: &[(Vec<usize>, f64)]) -> Result<Self> {
        let mut m = Self::zero(d, grade)?;
        for (idx, c) in terms {
            if idx.len() != grade {
                return Err(BltError::DimensionMismatch { expected: grade, found: idx.len() });
            }
            let key = mask_of(d, idx)?;
            let prev = m.coeffs.get(&key).copied().unwrap_or(0.0);
            m.insert(key, prev + c);
        }
        Ok(m)
    }

    fn insert(&mut self, key: u16, c: f64) {
        if c == 0.0 {
            self.coeffs.remove(&key);
        } else {
            self.coeffs.insert(key, c);
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn grade(&self) -> usize {
        self.grade
    }

    pub fn coefficient(&self, idx: &[usize]) -> f64 {
        mask_of(self.d, idx).ok().and_then(|k| self.coeffs.get(&k).copied()).unwrap_or(0.0)
    }

    /// Nonzero terms in lexicographic order of their index tuples.
    pub fn terms(&self) -> Vec<(Vec<usize>, f64)> {
        let mut t: Vec<(Vec<usize>, f64)> =
            self.coeffs.iter().map(|(&k, &c)| (indices_of(k), c)).collect();
        t.sort_by(|a, b| a.0.cmp(&b.0));
        t
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient of the grade-0 part (zero for other grades).
    pub fn scalar_part(&self) -> f64 {
        if self.grade == 0 {
            self.coeffs.get(&0).copied().unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// Coordinates of a grade-1 element.
    pub fn to_vector(&self) -> Option<DVector<f64>> {
        (self.grade == 1).then(|| DVector::from_fn(self.d, |i, _| self.coefficient(&[i])))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self { d: self.d, grade: self.grade, coeffs: BTreeMap::new() };
        for (&k, &c) in &self.coeffs {
            out.insert(k, c * s);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_space(self, other)?;
        let mut out = self.clone();
        for (&k, &c) in &other.coeffs {
            let prev = out.coeffs.get(&k).copied().unwrap_or(0.0);
            out.insert(k, prev + c);
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Largest coefficient difference against another element of the same space.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_space(self, other)?;
        let diff = self.add(&other.scale(-1.0))?;
        Ok(diff.coeffs.values().fold(0.0, |a, c| a.max(c.abs())))
    }
}

fn same_space(u: &MultiVector, v: &MultiVector) -> Result<()> {
    if u.d != v.d {
        return Err(BltError::DimensionMismatch { expected: u.d, found: v.d });
    }
    if u.grade != v.grade {
        return Err(BltError::DimensionMismatch { expected: u.grade, found: v.grade });
    }
    Ok(())
}

pub fn wedge(u: &MultiVector, v: &MultiVector) -> Result<MultiVector> {
    if u.d != v.d {
        return Err(BltError::DimensionMismatch { expected: u.d, found: v.d });
    }
    if u.grade + v.grade > u.d {
        return Err(BltError::GradeOverflow { a: u.grade, b: v.grade, d: u.d });
    }
    let mut acc: BTreeMap<u16, f64> = BTreeMap::new();
    for (&a, &ca) in &u.coeffs {
        for (&b, &cb) in &v.coeffs {
            if a & b != 0 {
                continue;
            }
            *acc.entry(a | b).or_insert(0.0) += wedge_sign(a, b) * ca * cb;
        }
    }
    acc.retain(|_, c| *c != 0.0);
    Ok(MultiVector { d: u.d, grade: u.grade + v.grade, coeffs: acc })
}

/// ⋆e_S = ε·e_{Sᶜ} with ε chosen so that e_S ∧ ⋆e_S = e₁∧…∧e_d.
pub fn hodge_star(u: &MultiVector) -> MultiVector {
    let full: u16 = ((1u32 << u.d) - 1) as u16;
    let mut coeffs = BTreeMap::new();
    for (&s, &c) in &u.coeffs {
        let comp = full & !s;
        coeffs.insert(comp, wedge_sign(s, comp) * c);
    }
    MultiVector { d: u.d, grade: u.d - u.grade, coeffs }
}

/// The inner product induced on Λ^k by the Euclidean one; on decomposable
/// elements it is the Gram determinant.
pub fn inner_product(u: &MultiVector, v: &MultiVector) -> Result<f64> {
    same_space(u, v)?;
    Ok(u.coeffs.iter().filter_map(|(k, cu)| v.coeffs.get(k).map(|cv| cu * cv)).sum())
}

/// X(B): the wedge product of the rows of `b`, whose coefficients are the
/// maximal minors of `b`.
pub fn rows_wedge(b: &DMatrix<f64>) -> Result<MultiVector> {
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(BltError::EmptyMatrix);
    }
    let d = b.ncols();
    if b.nrows() > d {
        return Err(BltError::GradeOverflow { a: b.nrows(), b: 0, d });
    }
    let mut acc = MultiVector::scalar(d, 1.0)?;
    for r in 0..b.nrows() {
        let row: Vec<f64> = b.row(r).iter().copied().collect();
        acc = wedge(&acc, &MultiVector::vector(&row)?)?;
    }
    Ok(acc)
}

/// ⋆(⋆X(B₁) ∧ … ∧ ⋆X(B_m)), nonzero exactly when the kernels of the B_j
/// form a direct sum decomposition of ℝ^d.
pub fn transversality_quantity(maps: &[DMatrix<f64>]) -> Result<f64> {
    let first = maps.first().ok_or(BltError::EmptyMatrix)?;
    let d = first.ncols();
    let mut kernel_sum = 0;
    for b in maps {
        if b.ncols() != d {
            return Err(BltError::DimensionMismatch { expected: d, found: b.ncols() });
        }
        if b.nrows() > d {
            return Err(BltError::GradeOverflow { a: b.nrows(), b: 0, d });
        }
        kernel_sum += d - b.nrows();
    }
    if kernel_sum != d {
        return Err(BltError::KernelDimensionMismatch { sum: kernel_sum, d });
    }
    let mut acc = MultiVector::scalar(d, 1.0)?;
    for b in maps {
        acc = wedge(&acc, &hodge_star(&rows_wedge(b)?))?;
    }
    Ok(hodge_star(&acc).scalar_part())
}

/// ⋆(v₁ ∧ … ∧ v_{d-1}): the generalized cross product, normal to the span.
pub fn generalized_cross(vectors: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = vectors.first().ok_or(BltError::EmptyMatrix)?;
    let d = first.len();
    if vectors.len() + 1 != d {
        return Err(BltError::DimensionMismatch { expected: d - 1, found: vectors.len() });
    }
    let mut acc = MultiVector::scalar(d, 1.0)?;
    for v in vectors {
        if v.len() != d {
            return Err(BltError::DimensionMismatch { expected: d, found: v.len() });
        }
        acc = wedge(&acc, &MultiVector::vector(v.as_slice())?)?;
    }
    Ok(hodge_star(&acc).to_vector().expect("grade one"))
}
