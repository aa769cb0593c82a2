//! Nonnegative input functions, the multilinear functional
//! ∫ ∏ f_j(B_j x)^{p_j} dx and its normalized ratio, the discrete
//! Finner inequality, parallelepiped extremizers and Ball's convolution
//! inequality.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datum::{reduce_to_projections, BLDatum, ProjectionScheme};
use crate::error::{BltError, Result};
use crate::linalg::{self, compensated_sum};

/// Piecewise constant function on a cubic lattice: the cell with
/// multi-index i is origin + spacing·(i + [0,1)^k). Values are row-major
/// (last axis fastest); the function vanishes outside the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    origin: Vec<f64>,
    spacing: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(origin: Vec<f64>, spacing: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if origin.len() != shape.len() || shape.is_empty() {
            return Err(BltError::DimensionMismatch { expected: shape.len(), found: origin.len() });
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(BltError::Input(format!("grid spacing must be positive, got {spacing}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(BltError::DimensionMismatch { expected: n, found: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(BltError::Input(format!("grid values must be finite and nonnegative, got {v}")));
        }
        Ok(Self { origin, spacing, shape, values })
    }

    /// A constant function on the box origin + [0, shape·spacing).
    pub fn constant(origin: Vec<f64>, spacing: f64, shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(origin, spacing, shape, vec![value; n])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn cell_value(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut flat = 0;
        for (a, (&ya, &n)) in y.iter().zip(&self.shape).enumerate() {
            let t = ((ya - self.origin[a]) / self.spacing).floor();
            if !(t >= 0.0 && t < n as f64) {
                return 0.0;
            }
            flat = flat * n + t as usize;
        }
        self.values[flat]
    }

    pub fn integrate(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.spacing.powi(self.dim() as i32)
    }

    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        let hi = self.origin.iter().zip(&self.shape).map(|(o, &n)| o + self.spacing * n as f64).collect();
        (self.origin.clone(), hi)
    }
}

/// a·exp(-π⟨A y, y⟩) with A positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFunction {
    form: DMatrix<f64>,
    amplitude: f64,
}

impl GaussianFunction {
    pub fn new(form: DMatrix<f64>, amplitude: f64) -> Result<Self> {
        if form.nrows() != form.ncols() {
            return Err(BltError::DimensionMismatch { expected: form.nrows(), found: form.ncols() });
        }
        if form.clone().cholesky().is_none() {
            return Err(BltError::NotPositiveDefinite("gaussian form".into()));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(BltError::Input(format!("gaussian amplitude must be nonnegative, got {amplitude}")));
        }
        Ok(Self { form, amplitude })
    }

    pub fn standard(k: usize) -> Self {
        Self { form: DMatrix::identity(k, k), amplitude: 1.0 }
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let v = DVector::from_column_slice(y);
        self.amplitude * (-std::f64::consts::PI * v.dot(&(&self.form * &v))).exp()
    }

    pub fn integrate(&self) -> f64 {
        self.amplitude / self.form.determinant().sqrt()
    }
}

/// Indicator of the parallelepiped M·[0,1)^k + b.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxIndicator {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    inverse: DMatrix<f64>,
}

impl BoxIndicator {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(BltError::DimensionMismatch { expected: matrix.nrows(), found: offset.len() });
        }
        let inverse = linalg::inverse(&matrix)?;
        Ok(Self { matrix, offset, inverse })
    }

    /// Indicator of the axis-parallel box lo + [0, side)^k.
    pub fn cube(lo: &[f64], side: f64) -> Result<Self> {
        let k = lo.len();
        Self::new(DMatrix::identity(k, k) * side, DVector::from_column_slice(lo))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let v = DVector::from_column_slice(y) - &self.offset;
        let t = &self.inverse * v;
        if t.iter().all(|&s| (0.0..1.0).contains(&s)) {
            1.0
        } else {
            0.0
        }
    }

    pub fn integrate(&self) -> f64 {
        self.matrix.determinant().abs()
    }

    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.matrix.nrows();
        let mut lo = self.offset.iter().copied().collect::<Vec<_>>();
        let mut hi = lo.clone();
        for r in 0..k {
            for c in 0..k {
                let e = self.matrix[(r, c)];
                if e < 0.0 {
                    lo[r] += e;
                } else {
                    hi[r] += e;
                }
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputFunction {
    Grid(GridFunction),
    Gaussian(GaussianFunction),
    Box(BoxIndicator),
}

impl InputFunction {
    pub fn dim(&self) -> usize {
        match self {
            InputFunction::Grid(g) => g.dim(),
            InputFunction::Gaussian(g) => g.form.nrows(),
            InputFunction::Box(b) => b.matrix.nrows(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            InputFunction::Grid(g) => g.eval(y),
            InputFunction::Gaussian(g) => g.eval(y),
            InputFunction::Box(b) => b.eval(y),
        }
    }

    /// Exact for every representation.
    pub fn integrate(&self) -> f64 {
        match self {
            InputFunction::Grid(g) => g.integrate(),
            InputFunction::Gaussian(g) => g.integrate(),
            InputFunction::Box(b) => b.integrate(),
        }
    }

    pub fn support_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            InputFunction::Grid(g) => Some(g.support_box()),
            InputFunction::Gaussian(_) => None,
            InputFunction::Box(b) => Some(b.support_box()),
        }
    }
}

/// Axis-parallel box [lo, hi].
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(BltError::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(BltError::Input("region must satisfy lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(center: &[f64], side: f64) -> Result<Self> {
        Self::new(center.iter().map(|c| c - side / 2.0).collect(), center.iter().map(|c| c + side / 2.0).collect())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadratureSpec {
    /// Tensor midpoint rule with `resolution` cells per axis.
    Midpoint { resolution: usize },
    /// Uniform Monte Carlo with `samples` points drawn from `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadratureSpec {
    /// Midpoint at 64 per axis up to dimension 3, Monte Carlo with 10⁶
    /// samples above.
    pub fn default_for(d: usize, seed: u64) -> Self {
        if d <= 3 {
            QuadratureSpec::Midpoint { resolution: 64 }
        } else {
            QuadratureSpec::MonteCarlo { samples: 1_000_000, seed }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            QuadratureSpec::Midpoint { resolution } if resolution == 0 => {
                Err(BltError::Input("quadrature resolution must be positive".into()))
            }
            QuadratureSpec::MonteCarlo { samples, .. } if samples == 0 => {
                Err(BltError::Input("sample count must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

const MC_CHUNK: usize = 4096;

/// ∫_region f with an error estimate. The midpoint estimate is the change
/// against half the resolution; the Monte Carlo estimate is the standard
/// error. Results do not depend on the rayon thread count.
pub fn integrate_region<F>(f: F, region: &Region, spec: &QuadratureSpec) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    match *spec {
        QuadratureSpec::Midpoint { resolution } => {
            let fine = midpoint(&f, region, resolution);
            let coarse = if resolution >= 2 { midpoint(&f, region, resolution / 2) } else { fine };
            Ok((fine, (fine - coarse).abs()))
        }
        QuadratureSpec::MonteCarlo { samples, seed } => Ok(monte_carlo(&f, region, samples, seed)),
    }
}

fn midpoint<F>(f: &F, region: &Region, n: usize) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = region.dim();
    let h: Vec<f64> = (0..d).map(|a| (region.hi[a] - region.lo[a]) / n as f64).collect();
    let inner: usize = n.pow(d as u32 - 1);
    let slices: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut x = vec![0.0; d];
            x[0] = region.lo[0] + (i0 as f64 + 0.5) * h[0];
            let mut vals = Vec::with_capacity(inner);
            for t in 0..inner {
                let mut rest = t;
                for a in (1..d).rev() {
                    let i = rest % n;
                    rest /= n;
                    x[a] = region.lo[a] + (i as f64 + 0.5) * h[a];
                }
                vals.push(f(&x));
            }
            compensated_sum(vals)
        })
        .collect();
    compensated_sum(slices) * region.volume() / (n as f64).powi(d as i32)
}

fn monte_carlo<F>(f: &F, region: &Region, samples: usize, seed: u64) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = region.dim();
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0.0; d];
            let mut vals = Vec::with_capacity(count);
            for _ in 0..count {
                for a in 0..d {
                    x[a] = rng.random_range(region.lo[a]..region.hi[a]);
                }
                vals.push(f(&x));
            }
            let s = compensated_sum(vals.iter().copied());
            let s2 = compensated_sum(vals.iter().map(|v| v * v));
            (s, s2)
        })
        .collect();
    let n = samples as f64;
    let mean = compensated_sum(parts.iter().map(|p| p.0)) / n;
    let mean2 = compensated_sum(parts.iter().map(|p| p.1)) / n;
    let var = (mean2 - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    let vol = region.volume();
    (mean * vol, vol * (var / n).sqrt())
}

/// ∏_j f_j(B_j x)^{p_j}, with 0^p = 0.
pub fn multilinear_integrand(datum: &BLDatum, inputs: &[InputFunction], x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let mut acc = 1.0;
    for ((b, f), p) in datum.maps().iter().zip(inputs).zip(datum.exponents()) {
        let y = b * &xv;
        let v = f.eval(y.as_slice());
        if v <= 0.0 {
            return 0.0;
        }
        acc *= v.powf(*p);
    }
    acc
}

fn check_inputs(datum: &BLDatum, inputs: &[InputFunction]) -> Result<Vec<f64>> {
    if inputs.len() != datum.m() {
        return Err(BltError::DimensionMismatch { expected: datum.m(), found: inputs.len() });
    }
    let mut masses = Vec::with_capacity(inputs.len());
    for (j, (f, b)) in inputs.iter().zip(datum.maps()).enumerate() {
        if f.dim() != b.nrows() {
            return Err(BltError::DimensionMismatch { expected: b.nrows(), found: f.dim() });
        }
        let mass = f.integrate();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(BltError::Precondition(format!("input {j} has mass {mass}")));
        }
        masses.push(mass);
    }
    Ok(masses)
}

/// Bounding box of {x : B_j x ∈ supp f_j for all j}, when every input has
/// compact support and the stacked map is injective.
pub fn numerator_support(datum: &BLDatum, inputs: &[InputFunction]) -> Result<Region> {
    let d = datum.d();
    let total: usize = datum.target_dims().iter().sum();
    let mut stacked = DMatrix::zeros(total, d);
    let mut center = DVector::zeros(total);
    let mut half = DVector::zeros(total);
    let mut r0 = 0;
    for (b, f) in datum.maps().iter().zip(inputs) {
        let (lo, hi) = f.support_box().ok_or_else(|| {
            BltError::Precondition("numerator domain is unbounded; supply a region".into())
        })?;
        stacked.view_mut((r0, 0), (b.nrows(), d)).copy_from(b);
        for a in 0..b.nrows() {
            center[r0 + a] = 0.5 * (lo[a] + hi[a]);
            half[r0 + a] = 0.5 * (hi[a] - lo[a]);
        }
        r0 += b.nrows();
    }
    let s = linalg::singular_values(&stacked);
    if s.len() < d || s[d - 1] <= linalg::RANK_TOL * s[0] {
        return Err(BltError::Precondition(
            "maps share a kernel direction; numerator domain is unbounded".into(),
        ));
    }
    let pinv = linalg::inverse(&(stacked.transpose() * &stacked))? * stacked.transpose();
    let c = &pinv * center;
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for i in 0..d {
        let w: f64 = (0..total).map(|r| pinv[(i, r)].abs() * half[r]).sum::<f64>();
        let w = w.max(1e-300) * (1.0 + 1e-12);
        lo.push(c[i] - w);
        hi.push(c[i] + w);
    }
    Region::new(lo, hi)
}

/// BL(B, p; f) = ∫ ∏ f_j(B_j x)^{p_j} dx / ∏ (∫ f_j)^{p_j}, with the
/// numerator by quadrature over `region` (or the support box when all
/// inputs are compactly supported) and exact denominators.
pub fn bl_ratio(
    datum: &BLDatum,
    inputs: &[InputFunction],
    region: Option<&Region>,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    let masses = check_inputs(datum, inputs)?;
    let owned;
    let region = match region {
        Some(r) => {
            if r.dim() != datum.d() {
                return Err(BltError::DimensionMismatch { expected: datum.d(), found: r.dim() });
            }
            r
        }
        None => {
            owned = numerator_support(datum, inputs)?;
            &owned
        }
    };
    let denom: f64 = masses.iter().zip(datum.exponents()).map(|(m, p)| m.powf(*p)).product();
    let (num, err) = integrate_region(|x| multilinear_integrand(datum, inputs, x), region, spec)?;
    Ok((num / denom, err / denom))
}

/// A nonnegative array on the lattice box ∏ [0, shape_a).
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl LatticeArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(BltError::DimensionMismatch { expected: n, found: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(BltError::Input(format!("lattice value {v} is not finite")));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(BltError::Input(format!("negative lattice value {v}")));
        }
        Ok(Self { shape, values })
    }

    fn get(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            if i >= n {
                return 0.0;
            }
            flat = flat * n + i;
        }
        self.values[flat]
    }
}

/// Both sides of Σ_n ∏ F_j(Π_j n)^{1/(m-1)} ≤ ∏ (Σ_ℓ F_j(ℓ))^{1/(m-1)};
/// entries outside an array's box count as zero.
pub fn discrete_finner(inputs: &[LatticeArray], scheme: &ProjectionScheme) -> Result<(f64, f64)> {
    let m = scheme.m();
    if inputs.len() != m {
        return Err(BltError::DimensionMismatch { expected: m, found: inputs.len() });
    }
    let d = scheme.d();
    let kept: Vec<Vec<usize>> = (0..m).map(|j| scheme.kept(j)).collect();
    let mut extent = vec![0usize; d];
    for (f, keep) in inputs.iter().zip(&kept) {
        if f.shape.len() != keep.len() {
            return Err(BltError::DimensionMismatch { expected: keep.len(), found: f.shape.len() });
        }
        for (&k, &n) in keep.iter().zip(&f.shape) {
            extent[k] = extent[k].max(n);
        }
    }
    let p = 1.0 / (m - 1) as f64;
    let total: usize = extent.iter().product();
    let mut n = vec![0usize; d];
    let mut idx = Vec::with_capacity(d);
    let mut terms = Vec::with_capacity(total);
    for t in 0..total {
        let mut rest = t;
        for a in (0..d).rev() {
            n[a] = rest % extent[a];
            rest /= extent[a];
        }
        let mut acc = 1.0;
        for (f, keep) in inputs.iter().zip(&kept) {
            idx.clear();
            idx.extend(keep.iter().map(|&k| n[k]));
            let v = f.get(&idx);
            if v <= 0.0 {
                acc = 0.0;
                break;
            }
            acc *= v.powf(p);
        }
        terms.push(acc);
    }
    let lhs = compensated_sum(terms);
    let rhs = inputs.iter().map(|f| compensated_sum(f.values.iter().copied()).powf(p)).product();
    Ok((lhs, rhs))
}

/// Indicators of C_j([0,1]^{d_j}) from the reduction certificate, with the
/// exactly computed ratio |det A| / ∏ |det C_j|^{1/(m-1)}.
pub fn canonical_extremizer(datum: &BLDatum) -> Result<(Vec<BoxIndicator>, f64)> {
    let cert = reduce_to_projections(datum)?;
    let p = 1.0 / (datum.m() - 1) as f64;
    let inputs = cert
        .cj
        .iter()
        .map(|c| BoxIndicator::new(c.clone(), DVector::zeros(c.nrows())))
        .collect::<Result<Vec<_>>>()?;
    let log_ratio = cert.det_a.abs().ln() - p * cert.det_cj.iter().map(|d| d.abs().ln()).sum::<f64>();
    Ok((inputs, log_ratio.exp()))
}

/// A function on ℝ^k that is constant on the cells of a product partition
/// whose breakpoints along each axis are known.
pub trait AxisPiecewise {
    fn dim(&self) -> usize;
    /// Sorted breakpoints along `axis`; the function vanishes outside
    /// [first, last].
    fn breakpoints(&self, axis: usize) -> Vec<f64>;
    fn value(&self, y: &[f64]) -> f64;
}

impl AxisPiecewise for GridFunction {
    fn dim(&self) -> usize {
        GridFunction::dim(self)
    }

    fn breakpoints(&self, axis: usize) -> Vec<f64> {
        (0..=self.shape[axis]).map(|i| self.origin[axis] + self.spacing * i as f64).collect()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.eval(y)
    }
}

/// g(y) = f(c − y)·f′(y) for grid functions f, f′.
pub struct ShiftedProduct<'a> {
    pub f: &'a GridFunction,
    pub f_prime: &'a GridFunction,
    pub c: Vec<f64>,
}

impl AxisPiecewise for ShiftedProduct<'_> {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let mut b = self.f_prime.breakpoints(axis);
        b.extend(self.f.breakpoints(axis).iter().map(|t| self.c[axis] - t));
        sort_dedup(&mut b);
        b
    }

    fn value(&self, y: &[f64]) -> f64 {
        let v = self.f_prime.eval(y);
        if v == 0.0 {
            return 0.0;
        }
        let reflected: Vec<f64> = self.c.iter().zip(y).map(|(c, y)| c - y).collect();
        v * self.f.eval(&reflected)
    }
}

fn sort_dedup(b: &mut Vec<f64>) {
    b.sort_by(f64::total_cmp);
    let scale = b.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * scale);
}

/// Exact ∫_{ℝ^d} ∏_j g_j(x_{sel_j})^{p_j} dx for coordinate-selection maps
/// and piecewise constant inputs, summing over the common refinement.
pub fn exact_selection_integral(d: usize, sels: &[Vec<usize>], funcs: &[&dyn AxisPiecewise], p: &[f64]) -> f64 {
    let mut lo = vec![f64::NEG_INFINITY; d];
    let mut hi = vec![f64::INFINITY; d];
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (sel, g) in sels.iter().zip(funcs) {
        for (a, &k) in sel.iter().enumerate() {
            let b = g.breakpoints(a);
            lo[k] = lo[k].max(b[0]);
            hi[k] = hi[k].min(b[b.len() - 1]);
            cuts[k].extend(b);
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        if !(lo[k] < hi[k]) {
            return 0.0;
        }
        let mut b: Vec<f64> = cuts[k].iter().copied().filter(|t| *t > lo[k] && *t < hi[k]).collect();
        b.push(lo[k]);
        b.push(hi[k]);
        sort_dedup(&mut b);
        axes.push(b);
    }
    let counts: Vec<usize> = axes.iter().map(|b| b.len() - 1).collect();
    let total: usize = counts.iter().product();
    let mut mid = vec![0.0; d];
    let mut y = Vec::new();
    let mut terms = Vec::with_capacity(total);
    for t in 0..total {
        let mut rest = t;
        let mut vol = 1.0;
        for k in (0..d).rev() {
            let i = rest % counts[k];
            rest /= counts[k];
            mid[k] = 0.5 * (axes[k][i] + axes[k][i + 1]);
            vol *= axes[k][i + 1] - axes[k][i];
        }
        let mut acc = vol;
        for ((sel, g), pj) in sels.iter().zip(funcs).zip(p) {
            y.clear();
            y.extend(sel.iter().map(|&k| mid[k]));
            let v = g.value(&y);
            if v <= 0.0 {
                acc = 0.0;
                break;
            }
            acc *= v.powf(*pj);
        }
        terms.push(acc);
    }
    compensated_sum(terms)
}

fn exact_mass(g: &dyn AxisPiecewise) -> f64 {
    let k = g.dim();
    exact_selection_integral(k, &[(0..k).collect()], &[g], &[1.0])
}

/// f * f′ for grid functions of equal spacing, stored as its exact nodal
/// values; the convolution is multilinear on each lattice cell.
#[derive(Debug, Clone)]
pub struct GridConvolution {
    origin: Vec<f64>,
    spacing: f64,
    cells: Vec<usize>,
    nodes: Vec<f64>,
}

impl GridConvolution {
    pub fn new(f: &GridFunction, g: &GridFunction) -> Result<Self> {
        if f.dim() != g.dim() {
            return Err(BltError::DimensionMismatch { expected: f.dim(), found: g.dim() });
        }
        if (f.spacing - g.spacing).abs() > 1e-12 * f.spacing {
            return Err(BltError::Input("convolved grids must share a spacing".into()));
        }
        let k = f.dim();
        if k > 8 {
            return Err(BltError::DimensionTooLarge(k));
        }
        let h = f.spacing;
        let origin: Vec<f64> = (0..k).map(|a| f.origin[a] + g.origin[a]).collect();
        let cells: Vec<usize> = (0..k).map(|a| f.shape[a] + g.shape[a]).collect();
        let node_shape: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        let total: usize = node_shape.iter().product();
        let mut nodes = vec![0.0; total];
        let hk = h.powi(k as i32);
        // At node origin + h·n the overlap of cell i of f with the reflected
        // cell i′ of g has length h on axis a iff i_a + i′_a + 1 = n_a.
        let fcells: usize = f.values.len();
        let gcells: usize = g.values.len();
        let mut fi = vec![0usize; k];
        let mut gi = vec![0usize; k];
        for a_flat in 0..fcells {
            let fv = f.values[a_flat];
            if fv == 0.0 {
                continue;
            }
            unflatten(a_flat, &f.shape, &mut fi);
            for b_flat in 0..gcells {
                let gv = g.values[b_flat];
                if gv == 0.0 {
                    continue;
                }
                unflatten(b_flat, &g.shape, &mut gi);
                let flat = (0..k).fold(0, |acc, a| acc * node_shape[a] + fi[a] + gi[a] + 1);
                nodes[flat] += fv * gv * hk;
            }
        }
        Ok(Self { origin, spacing: h, cells, nodes })
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let k = self.cells.len();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for a in 0..k {
            let t = (y[a] - self.origin[a]) / self.spacing;
            if !(t >= 0.0 && t <= self.cells[a] as f64) {
                return 0.0;
            }
            let i = (t.floor() as usize).min(self.cells[a] - 1);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..k {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * (self.cells[a] + 1) + base[a] + bit;
            }
            if w != 0.0 {
                acc += w * self.nodes[flat];
            }
        }
        acc.max(0.0)
    }

    pub fn integrate(&self) -> f64 {
        let k = self.cells.len();
        compensated_sum(self.nodes.iter().copied()) * self.spacing.powi(k as i32)
    }

    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        (0..=self.cells[axis]).map(|i| self.origin[axis] + self.spacing * i as f64).collect()
    }
}

fn unflatten(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = flat % shape[a];
        flat /= shape[a];
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

fn convolution_numerator(d: usize, sels: &[Vec<usize>], convs: &[GridConvolution], p: f64) -> f64 {
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut lo = vec![f64::NEG_INFINITY; d];
    let mut hi = vec![f64::INFINITY; d];
    for (sel, c) in sels.iter().zip(convs) {
        for (a, &k) in sel.iter().enumerate() {
            let b = c.breakpoints(a);
            lo[k] = lo[k].max(b[0]);
            hi[k] = hi[k].min(b[b.len() - 1]);
            axes[k].extend(b);
        }
    }
    let mut nodes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
    for k in 0..d {
        if !(lo[k] < hi[k]) {
            return 0.0;
        }
        let mut b: Vec<f64> = axes[k].iter().copied().filter(|t| *t > lo[k] && *t < hi[k]).collect();
        b.push(lo[k]);
        b.push(hi[k]);
        sort_dedup(&mut b);
        let mut pts = Vec::new();
        for w in b.windows(2) {
            let (c, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            pts.extend(GAUSS4.iter().map(|(t, wt)| (c + r * t, r * wt)));
        }
        nodes.push(pts);
    }
    let counts: Vec<usize> = nodes.iter().map(Vec::len).collect();
    let inner: usize = counts[1..].iter().product();
    let slices: Vec<f64> = (0..counts[0])
        .into_par_iter()
        .map(|i0| {
            let mut x = vec![0.0; d];
            let mut y = Vec::new();
            let mut terms = Vec::with_capacity(inner);
            for t in 0..inner {
                let mut rest = t;
                let mut w = nodes[0][i0].1;
                x[0] = nodes[0][i0].0;
                for k in (1..d).rev() {
                    let i = rest % counts[k];
                    rest /= counts[k];
                    x[k] = nodes[k][i].0;
                    w *= nodes[k][i].1;
                }
                let mut acc = w;
                for (sel, c) in sels.iter().zip(convs) {
                    y.clear();
                    y.extend(sel.iter().map(|&k| x[k]));
                    let v = c.eval(&y);
                    if v <= 0.0 {
                        acc = 0.0;
                        break;
                    }
                    acc *= v.powf(p);
                }
                terms.push(acc);
            }
            compensated_sum(terms)
        })
        .collect();
    compensated_sum(slices)
}

/// Terms of Ball's inequality BL(f)·BL(f′) ≤ sup_x BL(g^x)·BL(f*f′).
#[derive(Debug, Clone, PartialEq)]
pub struct BallReport {
    pub bl_f: f64,
    pub bl_f_prime: f64,
    /// BL(f)·BL(f′).
    pub lhs: f64,
    /// max over the finite x-grid of BL(g^x).
    pub sup_term: f64,
    pub argmax: Vec<f64>,
    /// BL(f * f′).
    pub conv_term: f64,
    /// sup_term·conv_term / lhs − 1.
    pub slack: f64,
    pub points_used: usize,
    pub points_skipped: usize,
    /// Negative slack beyond the tolerance: the finite grid under-resolves
    /// the supremum and the check is inconclusive.
    pub inconclusive: bool,
}

/// Tolerance below which negative slack is flagged as inconclusive.
pub const BALL_SLACK_TOL: f64 = 5e-2;

/// Coordinates selected by each map, when every row is a standard basis
/// covector.
pub fn coordinate_selections(datum: &BLDatum) -> Option<Vec<Vec<usize>>> {
    datum
        .maps()
        .iter()
        .map(|b| {
            (0..b.nrows())
                .map(|r| {
                    let row: Vec<f64> = b.row(r).iter().copied().collect();
                    let ones: Vec<usize> = (0..row.len()).filter(|&c| row[c] == 1.0).collect();
                    let zeros = row.iter().filter(|v| **v == 0.0).count();
                    (ones.len() == 1 && zeros == row.len() - 1).then(|| ones[0])
                })
                .collect::<Option<Vec<usize>>>()
        })
        .collect()
}

/// Evaluates every term of Ball's inequality for grid inputs on a datum of
/// coordinate projections. BL(f), BL(f′) and BL(g^x) are exact sums over
/// common refinements; BL(f*f′) uses four-point Gauss rules on each cell of
/// the convolution lattice.
pub fn ball_inequality_report(
    datum: &BLDatum,
    f: &[GridFunction],
    f_prime: &[GridFunction],
    x_grid: &[Vec<f64>],
) -> Result<BallReport> {
    let sels = coordinate_selections(datum)
        .ok_or_else(|| BltError::Input("ball check needs coordinate-projection maps".into()))?;
    let m = datum.m();
    if f.len() != m || f_prime.len() != m {
        return Err(BltError::DimensionMismatch { expected: m, found: f.len().min(f_prime.len()) });
    }
    let p = datum.exponents().to_vec();
    let d = datum.d();
    let bl_exact = |funcs: &[&dyn AxisPiecewise]| -> Result<f64> {
        let mut denom = 1.0;
        for (g, pj) in funcs.iter().zip(&p) {
            let mass = exact_mass(*g);
            if mass <= 0.0 {
                return Err(BltError::Precondition("zero-mass input".into()));
            }
            denom *= mass.powf(*pj);
        }
        Ok(exact_selection_integral(d, &sels, funcs, &p) / denom)
    };
    let fr: Vec<&dyn AxisPiecewise> = f.iter().map(|g| g as &dyn AxisPiecewise).collect();
    let fpr: Vec<&dyn AxisPiecewise> = f_prime.iter().map(|g| g as &dyn AxisPiecewise).collect();
    let bl_f = bl_exact(&fr)?;
    let bl_f_prime = bl_exact(&fpr)?;
    let lhs = bl_f * bl_f_prime;

    let evals: Vec<Option<f64>> = x_grid
        .par_iter()
        .map(|x| {
            let prods: Vec<ShiftedProduct> = (0..m)
                .map(|j| ShiftedProduct {
                    f: &f[j],
                    f_prime: &f_prime[j],
                    c: sels[j].iter().map(|&k| x[k]).collect(),
                })
                .collect();
            let refs: Vec<&dyn AxisPiecewise> = prods.iter().map(|g| g as &dyn AxisPiecewise).collect();
            bl_exact(&refs).ok()
        })
        .collect();
    let mut sup_term = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    let mut used = 0;
    for (x, v) in x_grid.iter().zip(&evals) {
        if let Some(v) = v {
            used += 1;
            if *v > sup_term {
                sup_term = *v;
                argmax = x.clone();
            }
        }
    }
    if used == 0 {
        return Err(BltError::Precondition("every grid point gives a zero-mass g^x".into()));
    }

    let convs = (0..m).map(|j| GridConvolution::new(&f[j], &f_prime[j])).collect::<Result<Vec<_>>>()?;
    let denom: f64 = convs.iter().zip(&p).map(|(c, pj)| c.integrate().powf(*pj)).product();
    let pc = p[0];
    if p.iter().any(|q| (q - pc).abs() > 0.0) {
        return Err(BltError::Input("ball check expects equal exponents".into()));
    }
    let conv_term = convolution_numerator(d, &sels, &convs, pc) / denom;
    let slack = sup_term * conv_term / lhs - 1.0;
    Ok(BallReport {
        bl_f,
        bl_f_prime,
        lhs,
        sup_term,
        argmax,
        conv_term,
        slack,
        points_used: used,
        points_skipped: x_grid.len() - used,
        inconclusive: slack < -BALL_SLACK_TOL,
    })
}

/// The n^d grid lo + (hi − lo)(i + 1)/n over the box where g^x can be
/// nonzero, including its upper corner.
pub fn ball_grid(datum: &BLDatum, f: &[GridFunction], f_prime: &[GridFunction], n: usize) -> Result<Vec<Vec<f64>>> {
    let sels = coordinate_selections(datum)
        .ok_or_else(|| BltError::Input("ball check needs coordinate-projection maps".into()))?;
    let d = datum.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (j, sel) in sels.iter().enumerate() {
        let (flo, fhi) = f[j].support_box();
        let (glo, ghi) = f_prime[j].support_box();
        for (a, &k) in sel.iter().enumerate() {
            lo[k] = lo[k].min(flo[a] + glo[a]);
            hi[k] = hi[k].max(fhi[a] + ghi[a]);
        }
    }
    let total = n.pow(d as u32);
    Ok((0..total)
        .map(|t| {
            let mut rest = t;
            let mut x = vec![0.0; d];
            for k in (0..d).rev() {
                let i = rest % n;
                rest /= n;
                x[k] = lo[k] + (hi[k] - lo[k]) * (i + 1) as f64 / n as f64;
            }
            x
        })
        .collect())
}

/// Random grid function with values uniform in [0, 1).
pub fn random_grid<R: Rng>(origin: Vec<f64>, spacing: f64, shape: Vec<usize>, rng: &mut R) -> GridFunction {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random::<f64>()).collect();
    GridFunction::new(origin, spacing, shape, values).expect("valid random grid")
}
