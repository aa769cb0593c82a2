//! Brascamp–Lieb data: class detection, the closed-form constant for the
//! direct-sum class, equivalence transforms, reduction to coordinate
//! projections, gaussian inputs and lifting constructions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BltError, Result};
use crate::exterior::{rows_wedge, transversality_quantity};
use crate::linalg::{self, RANK_TOL};

/// Tolerance on the equality p_j = 1/(m-1).
pub const EXPONENT_TOL: f64 = 1e-12;

/// A family of linear surjections B_j : ℝ^d → ℝ^{d_j} with exponents p_j.
#[derive(Debug, Clone, PartialEq)]
pub struct BLDatum {
    d: usize,
    maps: Vec<DMatrix<f64>>,
    p: Vec<f64>,
}

impl BLDatum {
    pub fn new(maps: Vec<DMatrix<f64>>, p: Vec<f64>) -> Result<Self> {
        if maps.len() < 2 {
            return Err(BltError::Input(format!("need at least two maps, got {}", maps.len())));
        }
        if p.len() != maps.len() {
            return Err(BltError::DimensionMismatch { expected: maps.len(), found: p.len() });
        }
        let d = maps[0].ncols();
        if d == 0 {
            return Err(BltError::EmptyMatrix);
        }
        for (j, b) in maps.iter().enumerate() {
            if b.ncols() != d {
                return Err(BltError::DimensionMismatch { expected: d, found: b.ncols() });
            }
            if b.nrows() == 0 {
                return Err(BltError::EmptyMatrix);
            }
            if !linalg::has_full_row_rank(b, RANK_TOL) {
                return Err(BltError::Input(format!("map {j} is not surjective")));
            }
        }
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(BltError::Input(format!("exponent {bad} outside [0, 1]")));
        }
        Ok(Self { d, maps, p })
    }

    /// Maps with the direct-sum-class exponents 1/(m-1).
    pub fn with_class_exponents(maps: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = maps.len();
        let p = vec![1.0 / (m.max(2) - 1) as f64; m];
        Self::new(maps, p)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[DMatrix<f64>] {
        &self.maps
    }

    pub fn exponents(&self) -> &[f64] {
        &self.p
    }

    pub fn target_dims(&self) -> Vec<usize> {
        self.maps.iter().map(|b| b.nrows()).collect()
    }

    pub fn kernel_dims(&self) -> Vec<usize> {
        self.maps.iter().map(|b| self.d - b.nrows()).collect()
    }
}

/// Blocks 𝒦_1,…,𝒦_m partitioning {0,…,d-1}; Π_j deletes the
/// coordinates of 𝒦_j.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionScheme {
    d: usize,
    blocks: Vec<Vec<usize>>,
}

impl ProjectionScheme {
    /// Blocks of the given sizes, laid out left to right.
    pub fn from_kernel_dims(kernel_dims: &[usize]) -> Result<Self> {
        let d: usize = kernel_dims.iter().sum();
        if kernel_dims.len() < 2 || d == 0 {
            return Err(BltError::Input("a scheme needs at least two blocks".into()));
        }
        let mut start = 0;
        let blocks = kernel_dims
            .iter()
            .map(|&k| {
                let b: Vec<usize> = (start..start + k).collect();
                start += k;
                b
            })
            .collect();
        Ok(Self { d, blocks })
    }

    /// Arbitrary disjoint blocks covering {0,…,d-1}.
    pub fn from_blocks(d: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(BltError::Input("a scheme needs at least two blocks".into()));
        }
        let mut seen = vec![false; d];
        for &i in blocks.iter().flatten() {
            if i >= d || seen[i] {
                return Err(BltError::Input(format!("index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            let sum = blocks.iter().map(Vec::len).sum();
            return Err(BltError::KernelDimensionMismatch { sum, d });
        }
        Ok(Self { d, blocks })
    }

    /// The Loomis–Whitney scheme 𝒦_j = {j} on ℝ^d.
    pub fn loomis_whitney(d: usize) -> Result<Self> {
        Self::from_kernel_dims(&vec![1; d])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Index j with i ∈ 𝒦_j.
    pub fn block_of(&self, i: usize) -> usize {
        self.blocks.iter().position(|b| b.contains(&i)).expect("index in range")
    }

    /// Coordinates kept by Π_j, in increasing order.
    pub fn kept(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|i| !self.blocks[j].contains(i)).collect()
    }

    pub fn projection(&self, j: usize) -> DMatrix<f64> {
        linalg::selection_matrix(self.d, &self.kept(j))
    }

    pub fn projections(&self) -> Vec<DMatrix<f64>> {
        (0..self.m()).map(|j| self.projection(j)).collect()
    }

    /// The coordinate-projection datum (Π_j) with exponents 1/(m-1).
    pub fn datum(&self) -> Result<BLDatum> {
        BLDatum::with_class_exponents(self.projections())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCReport {
    pub is_class_c: bool,
    pub transversality: Option<f64>,
    pub failure: Option<String>,
}

pub fn is_class_c(datum: &BLDatum) -> ClassCReport {
    let d = datum.d();
    let sum: usize = datum.kernel_dims().iter().sum();
    if sum != d {
        return ClassCReport {
            is_class_c: false,
            transversality: None,
            failure: Some(format!("kernel dimensions sum to {sum}, expected {d}")),
        };
    }
    let t = match transversality_quantity(datum.maps()) {
        Ok(t) => t,
        Err(e) => {
            return ClassCReport { is_class_c: false, transversality: None, failure: Some(e.to_string()) }
        }
    };
    if t.abs() <= RANK_TOL {
        return ClassCReport {
            is_class_c: false,
            transversality: Some(t),
            failure: Some(format!("kernels are not in direct sum (transversality {t:e})")),
        };
    }
    let target = 1.0 / (datum.m() - 1) as f64;
    if let Some((j, p)) = datum.exponents().iter().enumerate().find(|(_, p)| (**p - target).abs() > EXPONENT_TOL) {
        return ClassCReport {
            is_class_c: false,
            transversality: Some(t),
            failure: Some(format!("exponent p_{} = {p} differs from 1/(m-1) = {target}", j + 1)),
        };
    }
    ClassCReport { is_class_c: true, transversality: Some(t), failure: None }
}

fn require_class_c(datum: &BLDatum) -> Result<f64> {
    let r = is_class_c(datum);
    if r.is_class_c {
        Ok(r.transversality.expect("present when class C"))
    } else {
        Err(BltError::NotClassC(r.failure.unwrap_or_default()))
    }
}

/// |⋆⋀⋆X_j(B_j)|^{-1/(m-1)}.
pub fn bl_constant_classc(datum: &BLDatum) -> Result<f64> {
    let t = require_class_c(datum)?;
    Ok(t.abs().powf(-1.0 / (datum.m() - 1) as f64))
}

/// The equivalent datum C_j⁻¹ B_j C and the factor relating the constants:
/// BL(B′, p) = scale · BL(B, p).
pub fn transform_datum(datum: &BLDatum, c: &DMatrix<f64>, cj: &[DMatrix<f64>]) -> Result<(BLDatum, f64)> {
    let d = datum.d();
    if c.nrows() != d || c.ncols() != d {
        return Err(BltError::DimensionMismatch { expected: d, found: c.nrows() });
    }
    if cj.len() != datum.m() {
        return Err(BltError::DimensionMismatch { expected: datum.m(), found: cj.len() });
    }
    let det_c = c.determinant();
    linalg::inverse(c)?;
    let mut maps = Vec::with_capacity(datum.m());
    let mut log_scale = -det_c.abs().ln();
    for ((b, cjm), p) in datum.maps().iter().zip(cj).zip(datum.exponents()) {
        if cjm.nrows() != b.nrows() || cjm.ncols() != b.nrows() {
            return Err(BltError::DimensionMismatch { expected: b.nrows(), found: cjm.nrows() });
        }
        let inv = linalg::inverse(cjm)?;
        maps.push(inv * b * c);
        log_scale += p * cjm.determinant().abs().ln();
    }
    Ok((BLDatum::new(maps, datum.exponents().to_vec())?, log_scale.exp()))
}

/// Witness that a class-𝒞 datum is equivalent to its coordinate-projection
/// datum: C_j⁻¹ B_j A = Π_j.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionCertificate {
    pub a: DMatrix<f64>,
    pub cj: Vec<DMatrix<f64>>,
    pub scheme: ProjectionScheme,
    pub det_a: f64,
    pub det_cj: Vec<f64>,
    /// max_j ‖C_j⁻¹ B_j A − Π_j‖.
    pub projection_residual: f64,
    /// Relative error of |⋆⋀⋆X_j| = |det A| ∏‖X_j‖.
    pub det_a_identity_error: f64,
    /// Max relative error of |det C_j| = ‖X_j‖ |det A|.
    pub det_cj_identity_error: f64,
}

pub fn reduce_to_projections(datum: &BLDatum) -> Result<ReductionCertificate> {
    let t = require_class_c(datum)?;
    let d = datum.d();
    let scheme = ProjectionScheme::from_kernel_dims(&datum.kernel_dims())?;
    let mut a = DMatrix::zeros(d, d);
    for (j, b) in datum.maps().iter().enumerate() {
        let kb = linalg::kernel_basis(b)?;
        for (col, &k) in scheme.block(j).iter().enumerate() {
            a.set_column(k, &kb.column(col));
        }
    }
    let det_a = a.determinant();
    if det_a.abs() <= RANK_TOL {
        return Err(BltError::Singular(format!("kernel frame has determinant {det_a:e}")));
    }
    let mut cj = Vec::with_capacity(datum.m());
    let mut det_cj = Vec::with_capacity(datum.m());
    let mut projection_residual: f64 = 0.0;
    let mut det_cj_identity_error: f64 = 0.0;
    let mut norm_prod = 1.0;
    for (j, b) in datum.maps().iter().enumerate() {
        let kept = scheme.kept(j);
        let aj = DMatrix::from_fn(d, kept.len(), |r, c| a[(r, kept[c])]);
        let c = b * aj;
        let inv = linalg::inverse(&c)?;
        let res = (&inv * b * &a - scheme.projection(j)).norm();
        projection_residual = projection_residual.max(res);
        let xnorm = rows_wedge(b)?.norm();
        norm_prod *= xnorm;
        let dc = c.determinant();
        let expect = xnorm * det_a.abs();
        det_cj_identity_error = det_cj_identity_error.max((dc.abs() - expect).abs() / expect);
        det_cj.push(dc);
        cj.push(c);
    }
    let rhs = det_a.abs() * norm_prod;
    let det_a_identity_error = (t.abs() - rhs).abs() / rhs;
    Ok(ReductionCertificate {
        a,
        cj,
        scheme,
        det_a,
        det_cj,
        projection_residual,
        det_a_identity_error,
        det_cj_identity_error,
    })
}

fn scaling_sum(datum: &BLDatum) -> f64 {
    datum.exponents().iter().zip(datum.target_dims()).map(|(p, dj)| p * dj as f64).sum()
}

fn check_scaling(datum: &BLDatum) -> Result<()> {
    let lhs = scaling_sum(datum);
    if (lhs - datum.d() as f64).abs() > 1e-9 * datum.d() as f64 {
        return Err(BltError::ScalingCondition { lhs, d: datum.d() });
    }
    Ok(())
}

/// BL(B, p; f) for f_j(y) = exp(-π⟨A_j y, y⟩), in closed form:
/// det(Σ p_j B_jᵀ A_j B_j)^{-1/2} ∏ det(A_j)^{p_j/2}.
pub fn gaussian_ratio(datum: &BLDatum, covariances: &[DMatrix<f64>]) -> Result<f64> {
    check_scaling(datum)?;
    if covariances.len() != datum.m() {
        return Err(BltError::DimensionMismatch { expected: datum.m(), found: covariances.len() });
    }
    let d = datum.d();
    let mut m = DMatrix::zeros(d, d);
    let mut log_num = 0.0;
    for (j, ((b, aj), p)) in datum.maps().iter().zip(covariances).zip(datum.exponents()).enumerate() {
        if aj.nrows() != b.nrows() || aj.ncols() != b.nrows() {
            return Err(BltError::DimensionMismatch { expected: b.nrows(), found: aj.nrows() });
        }
        let chol = aj
            .clone()
            .cholesky()
            .ok_or_else(|| BltError::NotPositiveDefinite(format!("covariance {j}")))?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        log_num += 0.5 * p * logdet;
        m += (b.transpose() * aj * b) * *p;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| BltError::NotPositiveDefinite("sum of p_j B_jᵀA_jB_j".into()))?;
    let logdet_m: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok((log_num - 0.5 * logdet_m).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub estimate: f64,
    pub covariances: Vec<DMatrix<f64>>,
    pub accepted: usize,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

/// Seeded derivative-free ascent of `gaussian_ratio` over lower-triangular
/// factors L_j (A_j = L_j L_jᵀ). Each proposal right-multiplies one factor
/// by I + t·E_{rc} for a single index r ≥ c, which keeps it lower
/// triangular; a proposal is kept only if it improves the ratio by more
/// than rounding noise.
pub fn search_bl_constant(datum: &BLDatum, budget: usize, seed: u64) -> Result<SearchResult> {
    if budget == 0 {
        return Err(BltError::Input("search budget must be positive".into()));
    }
    check_scaling(datum)?;
    let dims = datum.target_dims();
    let mut factors: Vec<DMatrix<f64>> = dims.iter().map(|&k| DMatrix::identity(k, k)).collect();
    let covs = |f: &[DMatrix<f64>]| f.iter().map(|l| l * l.transpose()).collect::<Vec<_>>();
    let mut best = gaussian_ratio(datum, &covs(&factors))?;
    let coords: Vec<(usize, usize, usize)> = dims
        .iter()
        .enumerate()
        .flat_map(|(j, &k)| (0..k).flat_map(move |r| (0..=r).map(move |c| (j, r, c))))
        .collect();
    let mut steps = vec![0.5_f64; coords.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    let mut trace = Vec::with_capacity(budget);
    for _ in 0..budget {
        let which = rng.random_range(0..coords.len());
        let (j, r, c) = coords[which];
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t = sign * steps[which] * rng.random_range(0.5..1.5);
        let mut e = DMatrix::identity(dims[j], dims[j]);
        e[(r, c)] += if r == c { t.exp() - 1.0 } else { t };
        let mut cand = factors.clone();
        cand[j] = &factors[j] * e;
        match gaussian_ratio(datum, &covs(&cand)) {
            Ok(v) if v > best * (1.0 + 1e-12) => {
                best = v;
                factors = cand;
                accepted += 1;
                steps[which] = (steps[which] * 1.5).min(4.0);
            }
            _ => steps[which] = (steps[which] * 0.7).max(1e-6),
        }
        trace.push(best);
    }
    Ok(SearchResult { estimate: best, covariances: covs(&factors), accepted, trace })
}

/// How lifted inputs are assembled: f̃_j is the tensor product of the
/// source inputs listed in `tuples[j]`, each raised to `power`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftRecipe {
    pub tuples: Vec<Vec<usize>>,
    pub power: f64,
}

/// Stack the selected maps: the j-th lifted map is (B_{t_1}; …; B_{t_k})
/// for t = scheme[j]. Exponents are set to 1/(m-1).
pub fn tensor_lift(maps: &[DMatrix<f64>], scheme: &[Vec<usize>]) -> Result<(BLDatum, LiftRecipe)> {
    let d = maps.first().ok_or(BltError::EmptyMatrix)?.ncols();
    let mut lifted = Vec::with_capacity(scheme.len());
    let mut rows: Option<usize> = None;
    for tuple in scheme {
        if tuple.is_empty() {
            return Err(BltError::Input("empty lift tuple".into()));
        }
        for (a, &i) in tuple.iter().enumerate() {
            if i >= maps.len() {
                return Err(BltError::Input(format!("lift index {i} out of range")));
            }
            if tuple[..a].contains(&i) {
                return Err(BltError::Input(format!("repeated index {i} in lift tuple {tuple:?}")));
            }
        }
        let blocks: Vec<&DMatrix<f64>> = tuple.iter().map(|&i| &maps[i]).collect();
        let total: usize = blocks.iter().map(|b| b.nrows()).sum();
        if let Some(prev) = rows {
            if prev != total {
                return Err(BltError::Input(format!("lifted maps have {prev} and {total} rows")));
            }
        }
        rows = Some(total);
        let mut stacked = DMatrix::zeros(total, d);
        let mut r0 = 0;
        for b in blocks {
            if b.ncols() != d {
                return Err(BltError::DimensionMismatch { expected: d, found: b.ncols() });
            }
            stacked.view_mut((r0, 0), (b.nrows(), d)).copy_from(b);
            r0 += b.nrows();
        }
        lifted.push(stacked);
    }
    let k = scheme.iter().map(|t| t.len()).max().unwrap_or(1);
    let datum = BLDatum::with_class_exponents(lifted)?;
    Ok((datum, LiftRecipe { tuples: scheme.to_vec(), power: 1.0 / k as f64 }))
}

/// S^(j) = (j+2, …, j+d−1) mod d: every index but j and j+1, in cyclic
/// order starting after j+1.
pub fn deletion_tuples(d: usize) -> Vec<Vec<usize>> {
    (0..d).map(|j| (2..d).map(|t| (j + t) % d).collect()).collect()
}

/// Seeded random datum of the direct-sum class: a random invertible frame A
/// and random invertible C_j applied to the projection datum of the
/// given kernel dimensions.
pub fn random_class_c<R: Rng>(kernel_dims: &[usize], rng: &mut R) -> Result<BLDatum> {
    let scheme = ProjectionScheme::from_kernel_dims(kernel_dims)?;
    let d = scheme.d();
    let a = well_conditioned(d, rng);
    let a_inv = linalg::inverse(&a)?;
    let maps = (0..scheme.m())
        .map(|j| {
            let k = d - kernel_dims[j];
            well_conditioned(k, rng) * scheme.projection(j) * &a_inv
        })
        .collect();
    BLDatum::with_class_exponents(maps)
}

fn well_conditioned<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + rng.random_range(-0.6..0.6)
        });
        let s = linalg::singular_values(&m);
        if s[n - 1] > 0.2 {
            return m;
        }
    }
}
