//! Singular convolution integrals against δ(F(u)), the block lift of the
//! convolution maps, convolutions of hypersurface measures, the Fourier
//! extension operator, and the Plancherel bridge between them.
//!
//! Fourier convention: Eg(ξ) = ∫_U g(x) e^{+i⟨ξ, Σ(x)⟩} dx, so that
//! ‖ĥ‖_{L²} = (2π)^{d/2} ‖h‖_{L²}.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::datum::{deletion_tuples, BLDatum, LiftRecipe};
use crate::error::{BltError, Result};
use crate::exterior::transversality_quantity;
use crate::ift::{eta_gradient, ift_radii, solve_level, ScalarField};
use crate::linalg::{self, compensated_sum, subspace_distance};
use crate::poly::Polynomial;
use crate::quadrature::{integrate_region, GridFunction, InputFunction, QuadratureSpec, Region};

/// The graph {(x′, φ(x′)) : x′ ∈ U} of a polynomial over a box U ⊂ ℝ^{d−1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypersurface {
    domain: Region,
    phi: Polynomial,
    beta: f64,
    kappa: f64,
}

impl Hypersurface {
    pub fn new(domain: Region, phi: Polynomial, beta: f64, kappa: f64) -> Result<Self> {
        if phi.nvars() != domain.dim() {
            return Err(BltError::DimensionMismatch { expected: domain.dim(), found: phi.nvars() });
        }
        if !(beta > 0.0 && beta <= 1.0 && kappa > 0.0) {
            return Err(BltError::Input(format!("need β ∈ (0,1] and κ > 0, got β = {beta}, κ = {kappa}")));
        }
        Ok(Self { domain, phi, beta, kappa })
    }

    /// The graph of x′ ↦ c + ⟨a, x′⟩.
    pub fn flat(domain: Region, c: f64, a: &[f64], kappa: f64) -> Result<Self> {
        Self::new(domain, Polynomial::affine(c, a), 1.0, kappa)
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.domain.dim() + 1
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn phi(&self) -> &Polynomial {
        &self.phi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn point(&self, x: &[f64]) -> Vec<f64> {
        let mut p = x.to_vec();
        p.push(self.phi.eval(x));
        p
    }

    /// Largest |x| over the corners of U.
    fn domain_radius(&self) -> f64 {
        self.domain
            .lo
            .iter()
            .zip(&self.domain.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Upper bound for sup_U |∇φ|.
    pub fn gradient_bound(&self) -> f64 {
        let r = self.domain_radius();
        let g0 = self.phi.gradient(&vec![0.0; self.domain.dim()]);
        let g0 = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let amax = self.domain.lo.iter().chain(&self.domain.hi).fold(0.0f64, |a, b| a.max(b.abs()));
        g0 + self.phi.hessian_bound(amax) * r
    }

    /// Bounding box of Σ(U).
    pub fn bounding_box(&self) -> Region {
        let k = self.domain.dim();
        let center: Vec<f64> = self.domain.lo.iter().zip(&self.domain.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half_diag = self
            .domain
            .lo
            .iter()
            .zip(&self.domain.hi)
            .map(|(a, b)| (0.5 * (b - a)).powi(2))
            .sum::<f64>()
            .sqrt();
        let (lo_phi, hi_phi) = if self.phi.degree() <= 1 {
            let mut lo = self.phi.eval(&center);
            let mut hi = lo;
            let g = self.phi.gradient(&center);
            for a in 0..k {
                let w = g[a].abs() * 0.5 * (self.domain.hi[a] - self.domain.lo[a]);
                lo -= w;
                hi += w;
            }
            (lo, hi)
        } else {
            let c = self.phi.eval(&center);
            let w = self.gradient_bound() * half_diag;
            (c - w, c + w)
        };
        let mut lo = self.domain.lo.clone();
        let mut hi = self.domain.hi.clone();
        lo.push(lo_phi);
        hi.push(hi_phi);
        Region { lo, hi }
    }
}

/// A density on a hypersurface: g on U, vanishing outside U.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFunction {
    pub surface: Hypersurface,
    pub g: InputFunction,
}

impl SurfaceFunction {
    pub fn new(surface: Hypersurface, g: InputFunction) -> Result<Self> {
        if g.dim() != surface.domain.dim() {
            return Err(BltError::DimensionMismatch { expected: surface.domain.dim(), found: g.dim() });
        }
        Ok(Self { surface, g })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = &self.surface.domain;
        if x.iter().zip(d.lo.iter().zip(&d.hi)).any(|(v, (a, b))| v < a || v > b) {
            return 0.0;
        }
        self.g.eval(x)
    }

    /// (∫_U |g|^q)^{1/q} by midpoint quadrature, exact for grid g inside U.
    pub fn lq_norm(&self, q: f64, spec: &QuadratureSpec) -> Result<f64> {
        if let InputFunction::Grid(g) = &self.g {
            let h = g.spacing().powi(g.dim() as i32);
            let s: f64 = compensated_sum(g.values().iter().map(|v| v.powf(q) * h));
            return Ok(s.powf(1.0 / q));
        }
        let (v, _) = integrate_region(|x| self.eval(x).powf(q), &self.surface.domain, spec)?;
        Ok(v.powf(1.0 / q))
    }
}

const LEVEL_TOL: f64 = 1e-14;

/// ∫_W g(x, η(x)) / |∂_ηF(x, η(x))| dx: the co-area realization of
/// ∫ g δ(F), where W is the base of the window and only the part of the
/// zero set inside the window counts. Needs ∂_ηF(0,0) = 1.
pub fn delta_integral<G>(field: &ScalarField, g: G, window: &Region, spec: &QuadratureSpec) -> Result<(f64, f64)>
where
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    let n = field.n();
    if window.dim() != n + 1 {
        return Err(BltError::DimensionMismatch { expected: n + 1, found: window.dim() });
    }
    if !field.has_unit_slope() {
        return Err(BltError::Precondition("need ∂_ηF(0,0) = 1".into()));
    }
    let (r1, _) = ift_radii(field.beta(), field.kappa())?;
    let corner: f64 = (0..n).map(|a| window.lo[a].abs().max(window.hi[a].abs()).powi(2)).sum::<f64>().sqrt();
    if corner >= r1 {
        return Err(BltError::Precondition(format!("window reaches |x| = {corner:e}, outside B(0, R₁ = {r1:e})")));
    }
    let (elo, ehi) = (window.lo[n], window.hi[n]);
    let failure: Mutex<Option<BltError>> = Mutex::new(None);
    let value = |x: &[f64]| -> f64 {
        let sol = match solve_level(field, x, LEVEL_TOL) {
            Ok(s) => s,
            Err(e) => {
                failure.lock().expect("lock").get_or_insert(e);
                return 0.0;
            }
        };
        if sol.eta < elo || sol.eta > ehi {
            return 0.0;
        }
        let den = field.d_eta(x, sol.eta).abs();
        if den < 0.5 {
            failure
                .lock()
                .expect("lock")
                .get_or_insert(BltError::Precondition(format!("|∂_ηF| = {den:e} < ½ on the window")));
            return 0.0;
        }
        g(x, sol.eta) / den
    };
    let out = if n == 0 {
        (value(&[]), 0.0)
    } else {
        let base = Region { lo: window.lo[..n].to_vec(), hi: window.hi[..n].to_vec() };
        integrate_region(value, &base, spec)?
    };
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    Ok(out)
}

/// The reduced field of a surface convolution and the data needed to
/// evaluate its integrand.
struct ConvolutionSetup {
    field: ScalarField,
    window: Region,
    /// Original variable index of each reordered variable.
    order: Vec<usize>,
    eta0: f64,
    slope: f64,
}

fn convolution_setup(funcs: &[SurfaceFunction], y: &[f64], eps: f64) -> Result<ConvolutionSetup> {
    let d = funcs.len();
    if d < 2 {
        return Err(BltError::Input("need at least two surfaces".into()));
    }
    if y.len() != d {
        return Err(BltError::DimensionMismatch { expected: d, found: y.len() });
    }
    if let Some(f) = funcs.iter().find(|f| f.surface.dim() != d) {
        return Err(BltError::DimensionMismatch { expected: d, found: f.surface.dim() });
    }
    let k = d - 1;
    let nv = k * k;
    // F(u) = Σ_{j<d} φ_j(x_j′) + φ_d(y′ − Σ x_j′) − y_d with u = (x_1′, …, x_{d−1}′).
    let mut poly = Polynomial::constant(nv, -y[k]);
    for (j, f) in funcs.iter().take(k).enumerate() {
        let a = DMatrix::from_fn(k, nv, |r, c| if c == j * k + r { 1.0 } else { 0.0 });
        poly = poly.add(&f.surface.phi.compose_affine(&a, &DVector::zeros(k))?)?;
    }
    let a_last = DMatrix::from_fn(k, nv, |r, c| if c % k == r { -1.0 } else { 0.0 });
    let shift = DVector::from_column_slice(&y[..k]);
    poly = poly.add(&funcs[k].surface.phi.compose_affine(&a_last, &shift)?)?;

    let origin = vec![0.0; nv];
    let grad = poly.gradient(&origin);
    let m = DMatrix::from_fn(k, k, |r, c| grad[c * k + r]);
    let det = m.determinant();
    if det.abs() < eps {
        return Err(BltError::Precondition(format!("transversality determinant {det:e} is below ε = {eps:e}")));
    }
    let q = (0..nv).max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())).expect("nonempty");
    let mut order: Vec<usize> = (0..nv).filter(|&v| v != q).collect();
    order.push(q);
    let mut perm = vec![0; nv];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    let reordered = poly.permute(&perm);

    let mut eta0 = 0.0;
    let mut base = vec![0.0; nv];
    let mut converged = false;
    for _ in 0..200 {
        base[nv - 1] = eta0;
        let fv = reordered.eval(&base);
        let dv = reordered.partial(&base, nv - 1);
        if dv == 0.0 {
            break;
        }
        let next = eta0 - fv / dv;
        if (next - eta0).abs() <= 1e-15 * (1.0 + eta0.abs()) {
            eta0 = next;
            converged = true;
            break;
        }
        eta0 = next;
    }
    base[nv - 1] = eta0;
    if !converged || reordered.eval(&base).abs() > 1e-10 {
        return Err(BltError::Precondition("y is outside the validity neighbourhood: no zero on the η axis".into()));
    }
    let slope = reordered.partial(&base, nv - 1);
    let a = DMatrix::identity(nv, nv);
    let mut b = DVector::zeros(nv);
    b[nv - 1] = eta0;
    let normalized = reordered.compose_affine(&a, &b)?.scale(1.0 / slope);

    let beta = funcs.iter().map(|f| f.surface.beta).fold(1.0, f64::min);
    let kappa_sum: f64 = funcs.iter().take(k).map(|f| f.surface.kappa).sum::<f64>()
        + funcs[k].surface.kappa * (k as f64).powf(0.5 * (1.0 + beta));
    let field = ScalarField::new(normalized, beta, kappa_sum / slope.abs())?;

    let mut lo = Vec::with_capacity(nv);
    let mut hi = Vec::with_capacity(nv);
    for &old in &order {
        let (j, a) = (old / k, old % k);
        lo.push(funcs[j].surface.domain.lo[a]);
        hi.push(funcs[j].surface.domain.hi[a]);
    }
    lo[nv - 1] -= eta0;
    hi[nv - 1] -= eta0;
    Ok(ConvolutionSetup { field, window: Region { lo, hi }, order, eta0, slope })
}

/// f_1dσ_1 * ⋯ * f_ddσ_d (y) as the δ-integral of
/// F(x′) = Σ_{j<d} φ_j(x_j′) + φ_d(y′ − Σ x_j′) − y_d against
/// ∏_{j<d} g_j(x_j′) · g_d(y′ − Σ x_j′). The coordinate with the largest
/// ∂F(0) plays η.
pub fn surface_convolution(funcs: &[SurfaceFunction], y: &[f64], eps: f64, spec: &QuadratureSpec) -> Result<(f64, f64)> {
    let setup = convolution_setup(funcs, y, eps)?;
    let d = funcs.len();
    let k = d - 1;
    let nv = k * k;
    let integrand = |x: &[f64], eta: f64| -> f64 {
        let mut u = vec![0.0; nv];
        for (new, &old) in setup.order.iter().enumerate().take(nv - 1) {
            u[old] = x[new];
        }
        u[setup.order[nv - 1]] = setup.eta0 + eta;
        let mut acc = 1.0;
        let mut rest: Vec<f64> = y[..k].to_vec();
        for (j, f) in funcs.iter().take(k).enumerate() {
            let xj = &u[j * k..(j + 1) * k];
            let v = f.eval(xj);
            if v == 0.0 {
                return 0.0;
            }
            acc *= v;
            for a in 0..k {
                rest[a] -= xj[a];
            }
        }
        acc * funcs[k].eval(&rest)
    };
    let (v, e) = delta_integral(&setup.field, integrand, &setup.window, spec)?;
    Ok((v / setup.slope.abs(), e / setup.slope.abs()))
}

/// Kernels and tensor recipe of the lifted maps B_j^⊕.
#[derive(Debug, Clone)]
pub struct BlockLift {
    /// dB_j^⊕(0), with exponents 1/(d − 1).
    pub datum: BLDatum,
    pub recipe: LiftRecipe,
    /// Computed kernel bases of dB_j^⊕(0).
    pub kernels: Vec<DMatrix<f64>>,
    /// Spanning sets of the displayed kernel list.
    pub expected: Vec<DMatrix<f64>>,
    pub kernel_errors: Vec<f64>,
    pub kernel_dim_sum: usize,
    pub transversality: f64,
}

fn expected_kernels(d: usize) -> Vec<DMatrix<f64>> {
    let k = d - 1;
    let n = d * (d - 2);
    let tail = (d - 2) * k;
    // Orthogonal complement of e_a − e_b (or of e_a when b is None) in ℝ^k.
    let complement = |a: usize, b: Option<usize>| -> Vec<DVector<f64>> {
        let mut c = DMatrix::zeros(1, k);
        c[(0, a)] = 1.0;
        if let Some(b) = b {
            c[(0, b)] = -1.0;
        }
        let kb = linalg::kernel_basis(&c).expect("rank one");
        (0..kb.ncols()).map(|i| kb.column(i).into_owned()).collect()
    };
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let cols: Vec<DVector<f64>> = if j + 3 < d {
            complement(j, Some(j + 1))
                .into_iter()
                .map(|u| {
                    let mut v = DVector::zeros(n);
                    for a in 0..k {
                        v[j * k + a] = u[a];
                        v[(j + 1) * k + a] = -u[a];
                    }
                    v
                })
                .collect()
        } else if j == d - 3 {
            complement(d - 3, Some(d - 2))
                .into_iter()
                .map(|u| {
                    let mut v = DVector::zeros(n);
                    for a in 0..k {
                        v[(d - 3) * k + a] = u[a];
                    }
                    for a in 0..d - 2 {
                        v[tail + a] = -u[a];
                    }
                    v
                })
                .collect()
        } else if j == d - 2 {
            (0..d - 2)
                .map(|a| {
                    let mut v = DVector::zeros(n);
                    v[tail + a] = 1.0;
                    v
                })
                .collect()
        } else {
            complement(0, None)
                .into_iter()
                .map(|u| {
                    let mut v = DVector::zeros(n);
                    for a in 0..k {
                        v[a] = u[a];
                    }
                    v
                })
                .collect()
        };
        out.push(DMatrix::from_columns(&cols));
    }
    out
}

/// Builds B_1, …, B_d on ℝ^{d(d−2)} from F (coordinate blocks, the η-graph
/// map and the sum map), lifts them with the tuples S^(j), and checks the
/// kernels of dB_j^⊕(0) against the closed-form list. F must satisfy
/// F(0) = 0 and ∇_{u_j}F(0) = e_j.
pub fn block_lift(field: &ScalarField, d: usize) -> Result<BlockLift> {
    if d < 3 {
        return Err(BltError::Input("block lift needs d ≥ 3".into()));
    }
    let k = d - 1;
    if field.n() + 1 != k * k {
        return Err(BltError::DimensionMismatch { expected: k * k, found: field.n() + 1 });
    }
    if !field.is_normalized() {
        return Err(BltError::Precondition("field is not normalized at the origin".into()));
    }
    let n = field.n();
    let origin = vec![0.0; n];
    let mut full = field.grad_x(&origin, 0.0);
    full.push(field.d_eta(&origin, 0.0));
    for j in 0..k {
        for a in 0..k {
            let want = if a == j { 1.0 } else { 0.0 };
            if (full[j * k + a] - want).abs() > 1e-9 {
                return Err(BltError::Precondition("need ∇_{u_j}F(0) = e_j for every block".into()));
            }
        }
    }
    let deta = eta_gradient(field, &origin, 0.0)?;
    let mut base: Vec<DMatrix<f64>> = Vec::with_capacity(d);
    for j in 0..k - 1 {
        base.push(DMatrix::from_fn(k, n, |r, c| if c == j * k + r { 1.0 } else { 0.0 }));
    }
    let tail = (d - 2) * k;
    let mut last = DMatrix::from_fn(k, n, |r, c| if r < k - 1 && c == tail + r { 1.0 } else { 0.0 });
    for c in 0..n {
        last[(k - 1, c)] = deta[c];
    }
    base.push(last);
    let sum = base.iter().fold(DMatrix::zeros(k, n), |acc, b| acc + b);
    base.push(sum);

    let tuples = deletion_tuples(d);
    let lifted: Vec<DMatrix<f64>> = tuples
        .iter()
        .map(|t| {
            let rows: Vec<_> = t.iter().flat_map(|&s| base[s].row_iter().map(|r| r.into_owned()).collect::<Vec<_>>()).collect();
            DMatrix::from_rows(&rows)
        })
        .collect();
    let transversality = transversality_quantity(&lifted)?;
    if transversality.abs() <= linalg::RANK_TOL {
        return Err(BltError::NotClassC(format!("lifted kernels are not in direct sum ({transversality:e})")));
    }
    let kernels = lifted.iter().map(linalg::kernel_basis).collect::<Result<Vec<_>>>()?;
    let expected = expected_kernels(d);
    let kernel_errors = kernels
        .iter()
        .zip(&expected)
        .map(|(a, b)| subspace_distance(a, b))
        .collect::<Result<Vec<_>>>()?;
    let kernel_dim_sum = kernels.iter().map(|m| m.ncols()).sum();
    let datum = BLDatum::with_class_exponents(lifted)?;
    Ok(BlockLift {
        datum,
        recipe: LiftRecipe { tuples, power: 1.0 / (d - 2) as f64 },
        kernels,
        expected,
        kernel_errors,
        kernel_dim_sum,
        transversality,
    })
}

const POINTS_PER_WAVELENGTH: f64 = 64.0;
const EXTENSION_BUDGET: f64 = (1u64 << 26) as f64;

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Eg(ξ) = ∫_U g(x) e^{i⟨ξ, (x, φ(x))⟩} dx for a grid function g. Affine φ
/// is integrated exactly cell by cell; otherwise each cell gets a midpoint
/// sub-grid with at least 64 points per wavelength and one Richardson step.
pub fn extension_operator(surface: &Hypersurface, g: &GridFunction, xi: &[f64]) -> Result<Complex64> {
    let k = surface.domain.dim();
    if g.dim() != k {
        return Err(BltError::DimensionMismatch { expected: k, found: g.dim() });
    }
    if xi.len() != k + 1 {
        return Err(BltError::DimensionMismatch { expected: k + 1, found: xi.len() });
    }
    let h = g.spacing();
    let shape = g.shape().to_vec();
    let cells: usize = shape.iter().product();
    let origin = g.origin().to_vec();
    let phi = &surface.phi;
    let xd = xi[k];
    if phi.degree() <= 1 {
        let zero = vec![0.0; k];
        let c0 = phi.eval(&zero);
        let grad = phi.gradient(&zero);
        let omega: Vec<f64> = (0..k).map(|a| xi[a] + xd * grad[a]).collect();
        let parts: Vec<Complex64> = (0..cells)
            .into_par_iter()
            .map(|t| {
                let v = g.values()[t];
                if v == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let mut rest = t;
                let mut phase = xd * c0;
                let mut amp = v;
                for a in (0..k).rev() {
                    let i = rest % shape[a];
                    rest /= shape[a];
                    let mid = origin[a] + (i as f64 + 0.5) * h;
                    phase += omega[a] * mid;
                    amp *= h * sinc(0.5 * omega[a] * h);
                }
                Complex64::from_polar(amp, phase)
            })
            .collect();
        return Ok(sum_complex(parts));
    }
    let xi_norm = xi[..k].iter().map(|v| v * v).sum::<f64>().sqrt();
    let omega = xi_norm + xd.abs() * surface.gradient_bound();
    let sub = ((h * POINTS_PER_WAVELENGTH * omega / (2.0 * std::f64::consts::PI)).ceil() as usize).max(2);
    let fine_points = cells as f64 * ((2 * sub) as f64).powi(k as i32);
    if fine_points > EXTENSION_BUDGET {
        return Err(BltError::Refused(format!(
            "|ξ| = {:e} needs {fine_points:e} quadrature points, above the budget {EXTENSION_BUDGET:e}",
            (xi_norm * xi_norm + xd * xd).sqrt()
        )));
    }
    let coarse = midpoint_extension(g, phi, xi, sub);
    let fine = midpoint_extension(g, phi, xi, 2 * sub);
    Ok((fine * 4.0 - coarse) / 3.0)
}

fn sum_complex(parts: Vec<Complex64>) -> Complex64 {
    Complex64::new(compensated_sum(parts.iter().map(|c| c.re)), compensated_sum(parts.iter().map(|c| c.im)))
}

fn midpoint_extension(g: &GridFunction, phi: &Polynomial, xi: &[f64], sub: usize) -> Complex64 {
    let k = g.dim();
    let h = g.spacing();
    let hs = h / sub as f64;
    let shape = g.shape().to_vec();
    let cells: usize = shape.iter().product();
    let per_cell = sub.pow(k as u32);
    let w = hs.powi(k as i32);
    let parts: Vec<Complex64> = (0..cells)
        .into_par_iter()
        .map(|t| {
            let v = g.values()[t];
            if v == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let mut idx = vec![0usize; k];
            let mut rest = t;
            for a in (0..k).rev() {
                idx[a] = rest % shape[a];
                rest /= shape[a];
            }
            let mut x = vec![0.0; k];
            let mut re = Vec::with_capacity(per_cell);
            let mut im = Vec::with_capacity(per_cell);
            for s in 0..per_cell {
                let mut r = s;
                let mut lin = 0.0;
                for a in (0..k).rev() {
                    let i = r % sub;
                    r /= sub;
                    x[a] = g.origin()[a] + idx[a] as f64 * h + (i as f64 + 0.5) * hs;
                }
                for a in 0..k {
                    lin += xi[a] * x[a];
                }
                let phase = lin + xi[k] * phi.eval(&x);
                re.push(phase.cos());
                im.push(phase.sin());
            }
            Complex64::new(compensated_sum(re), compensated_sum(im)) * (v * w)
        })
        .collect();
    sum_complex(parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeReport {
    /// ‖∏ E_j g_j‖_{L²} over the frequency box.
    pub lhs: f64,
    /// ‖f_1dσ_1 * ⋯ * f_ddσ_d‖_{L²} over the spatial box.
    pub convolution_norm: f64,
    /// (2π)^{−d/2}.
    pub convention_constant: f64,
    /// |lhs · (2π)^{−d/2} − convolution_norm| / convolution_norm.
    pub bridge_error: f64,
    /// ∏ ‖g_j‖_{L^q}, q = (2d−2)/(2d−3).
    pub norm_product: f64,
    pub exponent: f64,
    /// lhs / norm_product.
    pub ratio: f64,
    pub resolution: usize,
    /// Half-width R of the frequency box [−R, R]^d.
    pub frequency_half_width: f64,
    pub frequency_spacing: f64,
    pub spatial_box: Region,
}

/// Bridge errors above this refuse the run.
pub const BRIDGE_REFUSAL: f64 = 0.2;

/// Both sides of the Plancherel identity for ∏ E_j g_j: the frequency-side
/// L² norm on a grid of spacing π/(2D) (D the extent of the spatial
/// support) with `resolution` points per axis, and the spatial L² norm of
/// the surface-measure convolution on a midpoint grid of the same size.
pub fn verify_extension_bridge(funcs: &[SurfaceFunction], resolution: usize, eps: f64, spec: &QuadratureSpec) -> Result<BridgeReport> {
    let d = funcs.len();
    if resolution < 2 {
        return Err(BltError::Input("resolution must be at least 2".into()));
    }
    let grids = funcs
        .iter()
        .map(|f| match &f.g {
            InputFunction::Grid(g) => Ok(g.clone()),
            _ => Err(BltError::Input("extension inputs must be grid functions".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for f in funcs {
        let b = f.surface.bounding_box();
        for a in 0..d {
            lo[a] += b.lo[a];
            hi[a] += b.hi[a];
        }
    }
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let spacing = std::f64::consts::PI / (2.0 * extent);
    let half = resolution as f64 * spacing / 2.0;
    let total = resolution.pow(d as u32);
    let freq: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rest = t;
            let mut xi = vec![0.0; d];
            for a in (0..d).rev() {
                xi[a] = -half + ((rest % resolution) as f64 + 0.5) * spacing;
                rest /= resolution;
            }
            let mut prod = Complex64::new(1.0, 0.0);
            for (f, g) in funcs.iter().zip(&grids) {
                prod *= extension_operator(&f.surface, g, &xi)?;
            }
            Ok(prod.norm_sqr())
        })
        .collect::<Result<Vec<_>>>()?;
    let lhs = (compensated_sum(freq) * spacing.powi(d as i32)).sqrt();

    let steps: Vec<f64> = (0..d).map(|a| (hi[a] - lo[a]) / resolution as f64).collect();
    let cell: f64 = steps.iter().product();
    let spatial: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rest = t;
            let mut y = vec![0.0; d];
            for a in (0..d).rev() {
                y[a] = lo[a] + ((rest % resolution) as f64 + 0.5) * steps[a];
                rest /= resolution;
            }
            let (h, _) = surface_convolution(funcs, &y, eps, spec)?;
            Ok(h * h)
        })
        .collect::<Result<Vec<_>>>()?;
    let convolution_norm = (compensated_sum(spatial) * cell).sqrt();
    let convention_constant = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
    let bridged = lhs * convention_constant;
    let bridge_error = if convolution_norm > 0.0 {
        (bridged - convolution_norm).abs() / convolution_norm
    } else if bridged == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if bridge_error > BRIDGE_REFUSAL {
        return Err(BltError::Refused(format!(
            "bridge error {bridge_error:.3} exceeds {BRIDGE_REFUSAL}: truncation box too small"
        )));
    }
    let exponent = (2.0 * d as f64 - 2.0) / (2.0 * d as f64 - 3.0);
    let norm_product = funcs.iter().map(|f| f.lq_norm(exponent, spec)).product::<Result<f64>>()?;
    let ratio = if norm_product > 0.0 { lhs / norm_product } else { 0.0 };
    Ok(BridgeReport {
        lhs,
        convolution_norm,
        convention_constant,
        bridge_error,
        norm_product,
        exponent,
        ratio,
        resolution,
        frequency_half_width: half,
        frequency_spacing: spacing,
        spatial_box: Region { lo, hi },
    })
}
