//! Induction on scales for nonlinear Brascamp–Lieb data: canonical
//! coordinates, the scale δ₀, pigeonholed buffer zones, the slab
//! decomposition of a cube into cells P(n, χ), the Φ_j factorization, and
//! empirical certificates of the induction step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datum::{reduce_to_projections, BLDatum, ProjectionScheme};
use crate::error::{BltError, Result};
use crate::exterior::{generalized_cross, transversality_quantity};
use crate::linalg::{self, compensated_sum, spectral_norm};
use crate::poly::{PolyMap, Polynomial};
use crate::quadrature::{
    discrete_finner, integrate_region, GridFunction, InputFunction, LatticeArray, QuadratureSpec, Region,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFamily {
    Linear,
    PolynomialPerturbation,
}

/// x ↦ post · P(pre · x) for a polynomial map P, with a declared
/// C^{1,β} bound κ on the Hölder constant of the derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearMap {
    pre: DMatrix<f64>,
    poly: PolyMap,
    post: DMatrix<f64>,
    beta: f64,
    kappa: f64,
}

impl NonlinearMap {
    pub fn new(poly: PolyMap, beta: f64, kappa: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(BltError::Input(format!("β must lie in (0, 1], got {beta}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(BltError::Input(format!("κ must be positive, got {kappa}")));
        }
        let n = poly.input_dim();
        let k = poly.output_dim();
        if k > n {
            return Err(BltError::DimensionMismatch { expected: n, found: k });
        }
        Ok(Self { pre: DMatrix::identity(n, n), poly, post: DMatrix::identity(k, k), beta, kappa })
    }

    pub fn linear(b: &DMatrix<f64>, beta: f64, kappa: f64) -> Result<Self> {
        Self::new(PolyMap::linear(b), beta, kappa)
    }

    pub fn input_dim(&self) -> usize {
        self.pre.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.post.nrows()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn poly(&self) -> &PolyMap {
        &self.poly
    }

    pub fn pre(&self) -> &DMatrix<f64> {
        &self.pre
    }

    pub fn post(&self) -> &DMatrix<f64> {
        &self.post
    }

    pub fn family(&self) -> MapFamily {
        if self.poly.degree() <= 1 {
            MapFamily::Linear
        } else {
            MapFamily::PolynomialPerturbation
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let u = &self.pre * DVector::from_column_slice(x);
        &self.post * self.poly.eval(u.as_slice())
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let u = &self.pre * DVector::from_column_slice(x);
        &self.post * self.poly.jacobian(u.as_slice()) * &self.pre
    }

    /// x ↦ C⁻¹ B(A x), with κ′ = κ ‖C⁻¹‖ ‖A‖^{1+β}.
    pub fn conjugate(&self, a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let c_inv = linalg::inverse(c)?;
        let kappa = self.kappa * spectral_norm(&c_inv) * spectral_norm(a).powf(1.0 + self.beta);
        Ok(Self {
            pre: &self.pre * a,
            poly: self.poly.clone(),
            post: c_inv * &self.post,
            beta: self.beta,
            kappa,
        })
    }

    /// Analytic bound on sup ‖dB(x) − dB(y)‖ / |x − y|^β over the ball of
    /// the given radius.
    pub fn hoelder_bound(&self, center: &[f64], radius: f64) -> f64 {
        let pre_norm = spectral_norm(&self.pre);
        let u = &self.pre * DVector::from_column_slice(center);
        let r = u.amax() + pre_norm * radius;
        let lip = spectral_norm(&self.post) * pre_norm * pre_norm * self.poly.jacobian_lipschitz_bound(r);
        lip * (2.0 * radius).powf(1.0 - self.beta)
    }

    /// Largest sampled Hölder quotient over random pairs in the ball.
    pub fn sampled_hoelder(&self, center: &[f64], radius: f64, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..pairs {
            let x = sample_ball(center, radius, &mut rng);
            let y = sample_ball(center, radius, &mut rng);
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let q = spectral_norm(&(self.jacobian(&x) - self.jacobian(&y))) / dist.powf(self.beta);
            best = best.max(q);
        }
        best
    }

    /// Smallest singular value of dB over sampled points of the ball.
    pub fn min_singular_value(&self, center: &[f64], radius: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.output_dim();
        let mut best = f64::INFINITY;
        for t in 0..samples.max(1) {
            let x = if t == 0 { center.to_vec() } else { sample_ball(center, radius, &mut rng) };
            let s = linalg::singular_values(&self.jacobian(&x));
            best = best.min(s.get(k - 1).copied().unwrap_or(0.0));
        }
        best
    }
}

fn sample_ball<R: Rng>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = center.iter().map(|c| c + radius * rng.random_range(-1.0..1.0)).collect();
        let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
        if r2 <= radius * radius {
            return x;
        }
    }
}

/// The Loomis–Whitney maps on ℝ^3 with quadratic perturbations of size ε:
/// B_1 = (x₂ + εx₁², x₃ + εx₁x₂) and its cyclic images, each output listed
/// in increasing order of the coordinate it perturbs. Declared β = 1, κ = 1.
pub fn perturbed_loomis_whitney(eps: f64) -> Result<Vec<NonlinearMap>> {
    let mut maps = Vec::with_capacity(3);
    for j in 0..3 {
        let a = (j + 1) % 3;
        let b = (j + 2) % 3;
        let comp = |lead: usize, quad_with: usize| -> Result<Polynomial> {
            let mut lin = vec![0.0; 3];
            lin[lead] = 1.0;
            let mut powers = vec![0u32; 3];
            powers[j] += 1;
            powers[quad_with] += 1;
            Polynomial::affine(0.0, &lin).with_term(eps, powers)
        };
        // B_j perturbs x_a by εx_j² and x_b by εx_j x_a.
        let pa = comp(a, j)?;
        let pb = comp(b, a)?;
        let comps = if a < b { vec![pa, pb] } else { vec![pb, pa] };
        maps.push(NonlinearMap::new(PolyMap::new(comps)?, 1.0, 1.0)?);
    }
    Ok(maps)
}

/// Maps conjugated to canonical form dB̃_j(x̃₀) = Π_j.
#[derive(Debug, Clone)]
pub struct Canonicalization {
    pub maps: Vec<NonlinearMap>,
    pub a: DMatrix<f64>,
    pub cj: Vec<DMatrix<f64>>,
    /// A⁻¹ x₀.
    pub x0: Vec<f64>,
    pub scheme: ProjectionScheme,
    /// max_j ‖dB̃_j(x̃₀) − Π_j‖.
    pub residual: f64,
}

pub fn canonicalize_nonlinear(maps: &[NonlinearMap], x0: &[f64]) -> Result<Canonicalization> {
    let jac: Vec<DMatrix<f64>> = maps.iter().map(|b| b.jacobian(x0)).collect();
    let t = transversality_quantity(&jac)?;
    if t.abs() <= linalg::RANK_TOL {
        return Err(BltError::NotClassC(format!("degenerate transversality {t:e} at x₀")));
    }
    let cert = reduce_to_projections(&BLDatum::with_class_exponents(jac)?)?;
    let conj = maps
        .iter()
        .zip(&cert.cj)
        .map(|(b, c)| b.conjugate(&cert.a, c))
        .collect::<Result<Vec<_>>>()?;
    let a_inv = linalg::inverse(&cert.a)?;
    let x0t: Vec<f64> = (&a_inv * DVector::from_column_slice(x0)).iter().copied().collect();
    let residual = conj
        .iter()
        .enumerate()
        .map(|(j, b)| (b.jacobian(&x0t) - cert.scheme.projection(j)).norm())
        .fold(0.0, f64::max);
    Ok(Canonicalization { maps: conj, a: cert.a, cj: cert.cj, x0: x0t, scheme: cert.scheme, residual })
}

/// Reads the blocks 𝒦_j off derivatives close to coordinate projections:
/// k ∈ 𝒦_j when column k of dB_j is below ½ in norm.
pub fn infer_scheme(jacobians: &[DMatrix<f64>]) -> Result<ProjectionScheme> {
    let d = jacobians.first().ok_or(BltError::EmptyMatrix)?.ncols();
    let blocks = jacobians
        .iter()
        .map(|dj| (0..d).filter(|&k| dj.column(k).norm() < 0.5).collect())
        .collect();
    ProjectionScheme::from_blocks(d, blocks).map_err(|_| {
        BltError::Precondition("maps are not close to coordinate projections; canonicalize first".into())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleParams {
    pub beta: f64,
    pub kappa: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub c_d: f64,
    pub delta0: f64,
    pub d: usize,
    pub m: usize,
    /// Constancy scale M of the inputs, when prescribed.
    pub constancy_scale: Option<f64>,
}

impl ScaleParams {
    /// δ^{α₀}, δ^{α₁} and the candidate count N = ⌊½δ^{α₀−α₁}⌋.
    pub fn widths(&self, delta: f64) -> (f64, f64, usize) {
        let coarse = delta.powf(self.alpha0);
        let fine = delta.powf(self.alpha1);
        (coarse, fine, (0.5 * delta.powf(self.alpha0 - self.alpha1)).floor() as usize)
    }

    /// (α₁ − α₀)/(m − 1).
    pub fn gain_exponent(&self) -> f64 {
        (self.alpha1 - self.alpha0) / (self.m - 1) as f64
    }

    /// 1 + 10^d δ^{(α₁−α₀)/(m−1)}.
    pub fn step_factor(&self, delta: f64) -> f64 {
        1.0 + 10f64.powi(self.d as i32) * delta.powf(self.gain_exponent())
    }

    /// ln of 10^d exp(10^d δ₀^γ / (1 − 2^{−γ})), γ = (α₁ − α₀)/(m − 1).
    pub fn log_global_bound(&self) -> f64 {
        let g = self.gain_exponent();
        let tend = 10f64.powi(self.d as i32);
        tend.ln() + tend * self.delta0.powf(g) / (1.0 - 2f64.powf(-g))
    }

    fn check_delta(&self, delta: f64) -> Result<(f64, f64, usize)> {
        if !(delta > 0.0) || delta > self.delta0 * (1.0 + 1e-12) {
            return Err(BltError::Refused(format!("scale δ = {delta:e} exceeds δ₀ = {:e}", self.delta0)));
        }
        let (coarse, fine, n) = self.widths(delta);
        if n < 1 {
            return Err(BltError::Refused("no room for a buffer zone: ⌊½δ^{α₀−α₁}⌋ = 0".into()));
        }
        Ok((coarse, fine, n))
    }
}

/// c_d as the largest value in (0, κ) meeting κδ^β ≤ 100^{−d},
/// 24dκδ^{1+β−α₁} < 1 and 4dκδ^{1+β} ≤ δ^{α₁}/3 at δ = (c_d/κ)^{1/(1+β−α₁)},
/// then δ₀ = min{(c_d/κ)^{1/(1+β−α₁)}, (¼)^{1/min{α₀−1, α₁−α₀}}}.
pub fn compute_delta0(beta: f64, kappa: f64, alpha0: f64, alpha1: f64, d: usize, m: usize) -> Result<ScaleParams> {
    if !(beta > 0.0 && beta <= 1.0 && kappa > 0.0) {
        return Err(BltError::Input(format!("need β ∈ (0,1] and κ > 0, got β = {beta}, κ = {kappa}")));
    }
    if !(1.0 < alpha0 && alpha0 < alpha1 && alpha1 < 1.0 + beta) {
        return Err(BltError::Input(format!(
            "need 1 < α₀ < α₁ < 1 + β, got α₀ = {alpha0}, α₁ = {alpha1}, β = {beta}"
        )));
    }
    if d < 2 || m < 2 {
        return Err(BltError::Input("need d ≥ 2 and m ≥ 2".into()));
    }
    let e = 1.0 + beta - alpha1;
    let df = d as f64;
    let ln_a = (-df * 100f64.ln() - kappa.ln()) / beta;
    let ln_b = -(24.0 * df * kappa).ln() / e + (1.0 - 1e-9f64).ln();
    let ln_c = -(12.0 * df * kappa).ln() / e;
    let ln_star = ln_a.min(ln_b).min(ln_c);
    let c_d = (kappa.ln() + e * ln_star).exp().min(kappa * (1.0 - 1e-12));
    let first = ((c_d / kappa).ln() / e).exp();
    let second = 0.25f64.powf(1.0 / (alpha0 - 1.0).min(alpha1 - alpha0));
    Ok(ScaleParams { beta, kappa, alpha0, alpha1, c_d, delta0: first.min(second), d, m, constancy_scale: None })
}

/// σ(i) = j + 1 (mod m) for i ∈ 𝒦_j, as 0-based indices.
pub fn sigma_map(scheme: &ProjectionScheme) -> Vec<usize> {
    (0..scheme.d()).map(|i| (scheme.block_of(i) + 1) % scheme.m()).collect()
}

/// Axis-parallel cube with the given centre and sidelength.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, side: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(BltError::EmptyMatrix);
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(BltError::Input(format!("cube side must be positive, got {side}")));
        }
        Ok(Self { center, side })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Half the diagonal.
    pub fn radius(&self) -> f64 {
        0.5 * self.side * (self.dim() as f64).sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.center).all(|(a, c)| (a - c).abs() <= 0.5 * self.side)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.center.iter().map(|c| c + self.side * (rng.random::<f64>() - 0.5)).collect()
    }

    pub fn region(&self) -> Region {
        Region {
            lo: self.center.iter().map(|c| c - 0.5 * self.side).collect(),
            hi: self.center.iter().map(|c| c + 0.5 * self.side).collect(),
        }
    }
}

/// Kernel vectors a_k of dB_j(x_Q), k ∈ 𝒦_j, normalised so a_k − e_k has
/// no components in 𝒦_j, and the normals n_i = ⋆⋀_{k≠i} a_k oriented so
/// that ⟨a_i, n_i⟩ > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub center: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub normals: Vec<DVector<f64>>,
    /// max_k |a_k − e_k|.
    pub deviation: f64,
}

impl Frame {
    pub fn new(maps: &[NonlinearMap], scheme: &ProjectionScheme, center: &[f64]) -> Result<Self> {
        let d = scheme.d();
        let mut vectors = vec![DVector::zeros(d); d];
        for (j, map) in maps.iter().enumerate() {
            let dj = map.jacobian(center);
            let kept = scheme.kept(j);
            let itilde = DMatrix::from_fn(dj.nrows(), kept.len(), |r, c| dj[(r, kept[c])]);
            let lu = itilde.lu();
            for &k in scheme.block(j) {
                let rhs = -dj.column(k);
                let w = lu
                    .solve(&rhs)
                    .ok_or_else(|| BltError::Singular(format!("reduced derivative of map {j}")))?;
                let mut a = DVector::zeros(d);
                a[k] = 1.0;
                for (c, &l) in kept.iter().enumerate() {
                    a[l] = w[c];
                }
                vectors[k] = a;
            }
        }
        let mut normals = Vec::with_capacity(d);
        for i in 0..d {
            let others: Vec<DVector<f64>> = (0..d).filter(|&k| k != i).map(|k| vectors[k].clone()).collect();
            let mut n = generalized_cross(&others)?;
            if n.dot(&vectors[i]) < 0.0 {
                n = -n;
            }
            normals.push(n);
        }
        let deviation = (0..d)
            .map(|k| {
                let mut e = vectors[k].clone();
                e[k] -= 1.0;
                e.norm()
            })
            .fold(0.0, f64::max);
        Ok(Self { center: center.to_vec(), vectors, normals, deviation })
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// s_i(x) = ⟨x − x_Q, n_i⟩ / |n_i|².
    pub fn slab_coordinate(&self, i: usize, x: &[f64]) -> f64 {
        let n = &self.normals[i];
        let dot: f64 = x.iter().zip(&self.center).zip(n.iter()).map(|((a, c), b)| (a - c) * b).sum();
        dot / n.norm_squared()
    }

    /// The point with slab coordinates s.
    pub fn point(&self, s: &[f64]) -> Vec<f64> {
        let mut x = self.center.clone();
        for (i, si) in s.iter().enumerate() {
            let scale = si * self.normals[i].norm_squared() / self.normals[i].dot(&self.vectors[i]);
            for (xa, va) in x.iter_mut().zip(self.vectors[i].iter()) {
                *xa += scale * va;
            }
        }
        x
    }

    /// Linear range of s_i over the cube.
    pub fn range_over(&self, i: usize, cube: &Cube) -> (f64, f64) {
        let n = &self.normals[i];
        let off: f64 = cube.center.iter().zip(&self.center).zip(n.iter()).map(|((a, c), b)| (a - c) * b).sum();
        let half: f64 = n.iter().map(|v| v.abs()).sum::<f64>() * 0.5 * cube.side;
        let n2 = n.norm_squared();
        ((off - half) / n2, (off + half) / n2)
    }
}

/// g with s̃(y) = ⟨y − B_j(x_Q), g⟩ = s_i(x) for y = dB_j(x_Q)(x − x_Q) + B_j(x_Q).
fn image_functional(jac: &DMatrix<f64>, normal: &DVector<f64>) -> Result<DVector<f64>> {
    let rinv = linalg::right_inverse(jac)?;
    Ok(rinv.transpose() * normal / normal.norm_squared())
}

fn effective_kappa(map: &NonlinearMap, cube: &Cube) -> f64 {
    map.kappa.max(map.hoelder_bound(&cube.center, cube.radius()))
}

/// One pigeonhole step: s_{n+1} = ζ_{r−1} for the lightest candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PigeonholeStep {
    pub s_n: f64,
    pub s_next: f64,
    /// 0-based index r − 1 of the chosen candidate [ζ_{r−1}, ζ_r].
    pub chosen: usize,
    pub candidate_masses: Vec<f64>,
    pub chosen_mass: f64,
    /// Mass over [s_n + ½δ^{α₀}, s_n + δ^{α₀}].
    pub reference_mass: f64,
    pub spacing_ok: bool,
    pub mass_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PigeonholeSequence {
    pub axis: usize,
    pub map: usize,
    pub points: Vec<f64>,
    pub steps: Vec<PigeonholeStep>,
    pub candidates: usize,
    /// 4δ^{α₁−α₀}.
    pub factor: f64,
    /// Bounding box of B_{σ(i)}(Q) carrying the masses.
    pub region: Region,
    pub functional: DVector<f64>,
    pub image_center: DVector<f64>,
    /// Mass of f χ_R below which ⟨·, g⟩ ≤ s.
    pub total_mass: f64,
}

impl PigeonholeSequence {
    pub fn all_certified(&self) -> bool {
        self.steps.iter().all(|s| s.spacing_ok && s.mass_ok)
    }
}

/// Distribution function at t of a sum of independent uniforms on [0, w_a].
fn uniform_sum_cdf(widths: &[f64], t: f64) -> f64 {
    let total: f64 = widths.iter().sum();
    if t <= 0.0 {
        return 0.0;
    }
    if t >= total {
        return 1.0;
    }
    let maxw = widths.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut w: Vec<f64> = widths.iter().copied().filter(|&x| x > 1e-7 * maxw).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = w.iter().sum();
    if t >= total {
        return 1.0;
    }
    match w.len() {
        0 => 1.0,
        1 => t / w[0],
        2 => {
            let (u, v) = (w[0], w[1]);
            if t <= v {
                t * t / (2.0 * u * v)
            } else if t <= u {
                (t - 0.5 * v) / u
            } else {
                let r = u + v - t;
                1.0 - r * r / (2.0 * u * v)
            }
        }
        k => {
            if t > 0.5 * total {
                return 1.0 - uniform_sum_cdf(&w, total - t);
            }
            let mut acc = 0.0;
            let mut fact = 1.0;
            for q in 1..=k {
                fact *= q as f64;
            }
            let prod: f64 = w.iter().product();
            for mask in 0u32..(1 << k) {
                let shift: f64 = (0..k).filter(|a| mask >> a & 1 == 1).map(|a| w[a]).sum();
                let r = t - shift;
                if r > 0.0 {
                    let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * r.powi(k as i32);
                }
            }
            (acc / (fact * prod)).clamp(0.0, 1.0)
        }
    }
}

/// f restricted to a box, as pieces (weight, min of the functional,
/// widths) ready for slab masses.
struct SlabMasses {
    pieces: Vec<(f64, f64, Vec<f64>)>,
}

impl SlabMasses {
    fn new(f: &GridFunction, region: &Region, g: &DVector<f64>, y0: &DVector<f64>) -> Self {
        let k = f.dim();
        let h = f.spacing();
        let mut ranges = Vec::with_capacity(k);
        for a in 0..k {
            let lo = ((region.lo[a] - f.origin()[a]) / h).floor().max(0.0) as usize;
            let hi = (((region.hi[a] - f.origin()[a]) / h).ceil().max(0.0) as usize).min(f.shape()[a]);
            ranges.push((lo, hi));
        }
        let mut pieces = Vec::new();
        if ranges.iter().any(|(lo, hi)| lo >= hi) {
            return Self { pieces };
        }
        let counts: Vec<usize> = ranges.iter().map(|(lo, hi)| hi - lo).collect();
        let total: usize = counts.iter().product();
        let mut idx = vec![0usize; k];
        for t in 0..total {
            let mut rest = t;
            for a in (0..k).rev() {
                idx[a] = ranges[a].0 + rest % counts[a];
                rest /= counts[a];
            }
            let v = f.cell_value(&idx);
            if v == 0.0 {
                continue;
            }
            let mut vol = 1.0;
            let mut base = 0.0;
            let mut widths = Vec::with_capacity(k);
            for a in 0..k {
                let lo = (f.origin()[a] + h * idx[a] as f64).max(region.lo[a]);
                let hi = (f.origin()[a] + h * (idx[a] + 1) as f64).min(region.hi[a]);
                if hi <= lo {
                    vol = 0.0;
                    break;
                }
                vol *= hi - lo;
                let e0 = g[a] * (lo - y0[a]);
                let e1 = g[a] * (hi - y0[a]);
                base += e0.min(e1);
                widths.push((e1 - e0).abs());
            }
            if vol > 0.0 {
                pieces.push((v * vol, base, widths));
            }
        }
        Self { pieces }
    }

    fn below(&self, t: f64) -> f64 {
        compensated_sum(self.pieces.iter().map(|(w, base, widths)| w * uniform_sum_cdf(widths, t - base)))
    }

    fn between(&self, a: f64, b: f64) -> f64 {
        compensated_sum(self.pieces.iter().map(|(w, base, widths)| {
            w * (uniform_sum_cdf(widths, b - base) - uniform_sum_cdf(widths, a - base))
        }))
        .max(0.0)
    }

    fn total(&self) -> f64 {
        compensated_sum(self.pieces.iter().map(|p| p.0))
    }
}

const MAX_STEPS: usize = 1 << 20;

/// Buffer-zone placement along axis i for the input f = f_{σ(i)}: s₁ sits
/// δ^{α₁} below the image of Q, and each s_{n+1} starts the lightest of the
/// N candidate intervals of width δ^{α₁} in [s_n + ½δ^{α₀}, s_n + δ^{α₀}],
/// lowest index on ties.
#[allow(clippy::too_many_arguments)]
pub fn pigeonhole_sequence(
    f: &GridFunction,
    maps: &[NonlinearMap],
    cube: &Cube,
    i: usize,
    frame: &Frame,
    sigma: &[usize],
    params: &ScaleParams,
    delta: f64,
) -> Result<PigeonholeSequence> {
    let (coarse, fine, n_cand) = params.check_delta(delta)?;
    let j = sigma[i];
    let map = &maps[j];
    if f.dim() != map.output_dim() {
        return Err(BltError::DimensionMismatch { expected: map.output_dim(), found: f.dim() });
    }
    let jac = map.jacobian(&frame.center);
    let y0 = map.eval(&frame.center);
    let g = image_functional(&jac, &frame.normals[i])?;
    let taylor = effective_kappa(map, cube) * cube.radius().powf(1.0 + map.beta);
    let (qlo, qhi) = frame.range_over(i, cube);
    let drift = g.norm() * taylor;
    let lb = qlo - drift;
    let ub = qhi + drift;

    let x_off = DVector::from_iterator(cube.dim(), cube.center.iter().zip(&frame.center).map(|(a, c)| a - c));
    let yc = &y0 + &jac * x_off;
    let mut lo = Vec::with_capacity(jac.nrows());
    let mut hi = Vec::with_capacity(jac.nrows());
    for a in 0..jac.nrows() {
        let hw: f64 = jac.row(a).iter().map(|v| v.abs()).sum::<f64>() * 0.5 * cube.side + taylor;
        let hw = hw * (1.0 + 1e-9) + 1e-300;
        lo.push(yc[a] - hw);
        hi.push(yc[a] + hw);
    }
    let region = Region { lo, hi };
    let masses = SlabMasses::new(f, &region, &g, &y0);
    let factor = 4.0 * delta.powf(params.alpha1 - params.alpha0);

    let mut points = vec![lb - fine];
    let mut steps = Vec::new();
    while *points.last().expect("nonempty") < ub {
        if steps.len() >= MAX_STEPS {
            return Err(BltError::Refused("pigeonhole sequence exceeds the step budget".into()));
        }
        let s = *points.last().expect("nonempty");
        let start = s + 0.5 * coarse;
        let zeta: Vec<f64> = (0..=n_cand).map(|r| start + r as f64 * fine).collect();
        let cum: Vec<f64> = zeta.iter().map(|&z| masses.below(z)).collect();
        let candidate_masses: Vec<f64> = cum.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        let reference_mass = masses.between(start, s + coarse);
        let min = candidate_masses.iter().copied().fold(f64::INFINITY, f64::min);
        let tie = 1e-12 * reference_mass.max(min);
        let chosen = candidate_masses.iter().position(|&v| v <= min + tie).expect("some candidate");
        let mut s_next = zeta[chosen];
        while !(s + 0.5 * coarse <= s_next) {
            s_next = s_next.next_up();
        }
        while !(s_next <= s + coarse) {
            s_next = s_next.next_down();
        }
        let chosen_mass = masses.between(s_next, s_next + fine);
        let spacing_ok = s + 0.5 * coarse <= s_next && s_next <= s + coarse;
        let mass_ok = chosen_mass <= factor * reference_mass;
        steps.push(PigeonholeStep {
            s_n: s,
            s_next,
            chosen,
            candidate_masses,
            chosen_mass,
            reference_mass,
            spacing_ok,
            mass_ok,
        });
        points.push(s_next);
    }
    Ok(PigeonholeSequence {
        axis: i,
        map: j,
        points,
        steps,
        candidates: n_cand,
        factor,
        region,
        functional: g,
        image_center: y0,
        total_mass: masses.total(),
    })
}

/// Mass of f χ_R over the image slab s̃ ∈ [a, b] of a sequence's axis.
pub fn slab_mass(f: &GridFunction, seq: &PigeonholeSequence, a: f64, b: f64) -> f64 {
    SlabMasses::new(f, &seq.region, &seq.functional, &seq.image_center).between(a, b)
}

/// Q split into the cells P(n, χ) = ⋂_i {s_i ∈ J(i, n_i, χ_i)} ∩ Q with
/// J(i,n,1) = (s_n + ⅓δ^{α₁}, s_n + ⅔δ^{α₁}] and
/// J(i,n,0) = (s_n + ⅔δ^{α₁}, s_{n+1} + ⅓δ^{α₁}].
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub cube: Cube,
    pub delta: f64,
    pub params: ScaleParams,
    pub frame: Frame,
    pub sigma: Vec<usize>,
    pub scheme: ProjectionScheme,
    pub sequences: Vec<PigeonholeSequence>,
    fine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionCheck {
    pub frame_deviation: f64,
    pub frame_ok: bool,
    pub spacing_ok: bool,
    pub mass_ok: bool,
    /// Smallest and largest χ = 0 slab width.
    pub width0_range: (f64, f64),
    pub width0_ok: bool,
    /// Largest deviation of a χ = 1 slab width from δ^{α₁}/3.
    pub width1_error: f64,
    pub width1_ok: bool,
}

impl DecompositionCheck {
    pub fn holds(&self) -> bool {
        self.frame_ok && self.spacing_ok && self.mass_ok && self.width0_ok && self.width1_ok
    }
}

impl Decomposition {
    pub fn new(
        cube: Cube,
        frame: Frame,
        sigma: Vec<usize>,
        scheme: ProjectionScheme,
        sequences: Vec<PigeonholeSequence>,
        params: &ScaleParams,
        delta: f64,
    ) -> Result<Self> {
        let d = cube.dim();
        params.check_delta(delta)?;
        let limit = 10f64.powi(-(d as i32));
        if frame.deviation > limit {
            return Err(BltError::Precondition(format!(
                "frame deviates from the standard basis by {:e} > 10^-{d}",
                frame.deviation
            )));
        }
        if sequences.len() != d || sigma.len() != d {
            return Err(BltError::DimensionMismatch { expected: d, found: sequences.len() });
        }
        if let Some(s) = sequences.iter().find(|s| s.points.len() < 2) {
            return Err(BltError::Precondition(format!("axis {} has fewer than two points", s.axis)));
        }
        let fine = delta.powf(params.alpha1);
        Ok(Self { cube, delta, params: params.clone(), frame, sigma, scheme, sequences, fine })
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    /// Number of indices n along axis i for the given χ_i.
    pub fn count(&self, i: usize, chi: u8) -> usize {
        let l = self.sequences[i].points.len();
        if chi == 1 {
            l
        } else {
            l - 1
        }
    }

    /// J(i, n, χ) as (lo, hi], in slab coordinates.
    pub fn interval(&self, i: usize, n: usize, chi: u8) -> (f64, f64) {
        let p = &self.sequences[i].points;
        let third = self.fine / 3.0;
        let two_thirds = 2.0 * self.fine / 3.0;
        if chi == 1 {
            (p[n] + third, p[n] + two_thirds)
        } else {
            (p[n] + two_thirds, p[n + 1] + third)
        }
    }

    pub fn locate_axis(&self, i: usize, t: f64) -> Option<(usize, u8)> {
        let p = &self.sequences[i].points;
        let third = self.fine / 3.0;
        let two_thirds = 2.0 * self.fine / 3.0;
        let count = p.partition_point(|&s| s + third < t);
        if count == 0 {
            return None;
        }
        let n = count - 1;
        if t <= p[n] + two_thirds {
            Some((n, 1))
        } else if n + 1 < p.len() && t <= p[n + 1] + third {
            Some((n, 0))
        } else {
            None
        }
    }

    /// The cell (n, χ) containing x, for x in Q.
    pub fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<u8>)> {
        if !self.cube.contains(x) {
            return None;
        }
        let d = self.dim();
        let mut n = Vec::with_capacity(d);
        let mut chi = Vec::with_capacity(d);
        for i in 0..d {
            let (ni, ci) = self.locate_axis(i, self.frame.slab_coordinate(i, x))?;
            n.push(ni);
            chi.push(ci);
        }
        Some((n, chi))
    }

    /// Volume of the parallelepiped cell before clipping to Q.
    pub fn cell_volume(&self, n: &[usize], chi: &[u8]) -> f64 {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = self.interval(i, n[i], chi[i]);
                let nv = &self.frame.normals[i];
                (hi - lo) * nv.norm_squared() / nv.dot(&self.frame.vectors[i])
            })
            .product()
    }

    /// Uniform point of P(n, χ), or None after repeated misses of Q.
    pub fn sample_in_cell<R: Rng>(&self, n: &[usize], chi: &[u8], rng: &mut R) -> Option<Vec<f64>> {
        for _ in 0..64 {
            let s: Vec<f64> = (0..self.dim())
                .map(|i| {
                    let (lo, hi) = self.interval(i, n[i], chi[i]);
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect();
            let x = self.frame.point(&s);
            if self.cube.contains(&x) {
                return Some(x);
            }
        }
        None
    }

    /// Indices n along axis i whose slab J(i, n, χ_i) meets Q.
    pub fn indices_meeting_cube(&self, i: usize, chi: u8) -> Vec<usize> {
        let (qlo, qhi) = self.frame.range_over(i, &self.cube);
        (0..self.count(i, chi))
            .filter(|&n| {
                let (lo, hi) = self.interval(i, n, chi);
                hi >= qlo && lo <= qhi
            })
            .collect()
    }

    pub fn check(&self) -> DecompositionCheck {
        let (coarse, fine, _) = self.params.widths(self.delta);
        let d = self.dim();
        let frame_ok = self.frame.deviation <= 10f64.powi(-(d as i32));
        let mut spacing_ok = true;
        let mut mass_ok = true;
        let mut wmin = f64::INFINITY;
        let mut wmax = f64::NEG_INFINITY;
        let mut w1err: f64 = 0.0;
        for (i, seq) in self.sequences.iter().enumerate() {
            for w in seq.points.windows(2) {
                spacing_ok &= w[0] + 0.5 * coarse <= w[1] && w[1] <= w[0] + coarse;
            }
            mass_ok &= seq.steps.iter().all(|s| s.mass_ok);
            for n in 0..self.count(i, 0) {
                let (lo, hi) = self.interval(i, n, 0);
                wmin = wmin.min(hi - lo);
                wmax = wmax.max(hi - lo);
            }
            for n in 0..self.count(i, 1) {
                let (lo, hi) = self.interval(i, n, 1);
                w1err = w1err.max(((hi - lo) - fine / 3.0).abs());
            }
        }
        DecompositionCheck {
            frame_deviation: self.frame.deviation,
            frame_ok,
            spacing_ok,
            mass_ok,
            width0_range: (wmin, wmax),
            width0_ok: wmin > 0.5 * coarse - fine && wmax < coarse + fine,
            width1_error: w1err,
            width1_ok: w1err <= 1e-9 * fine,
        }
    }
}

/// Frame at the centre of Q, σ, and one pigeonholed sequence per axis.
pub fn decompose_cube(
    maps: &[NonlinearMap],
    inputs: &[GridFunction],
    cube: &Cube,
    params: &ScaleParams,
    delta: f64,
) -> Result<Decomposition> {
    let d = cube.dim();
    if maps.len() != inputs.len() {
        return Err(BltError::DimensionMismatch { expected: maps.len(), found: inputs.len() });
    }
    if let Some(b) = maps.iter().find(|b| b.input_dim() != d) {
        return Err(BltError::DimensionMismatch { expected: d, found: b.input_dim() });
    }
    params.check_delta(delta)?;
    let jac: Vec<DMatrix<f64>> = maps.iter().map(|b| b.jacobian(&cube.center)).collect();
    let scheme = infer_scheme(&jac)?;
    let frame = Frame::new(maps, &scheme, &cube.center)?;
    let sigma = sigma_map(&scheme);
    let sequences = (0..d)
        .map(|i| pigeonhole_sequence(&inputs[sigma[i]], maps, cube, i, &frame, &sigma, params, delta))
        .collect::<Result<Vec<_>>>()?;
    Decomposition::new(cube.clone(), frame, sigma, scheme, sequences, params, delta)
}

/// B_j = dB_j(x_Q) ∘ Φ_j in coordinates centred at x_Q.
#[derive(Debug, Clone)]
pub struct PhiFactorization {
    center: Vec<f64>,
    kernel: Vec<usize>,
    kept: Vec<usize>,
    jac: DMatrix<f64>,
    itilde_inv: DMatrix<f64>,
    image_center: DVector<f64>,
    /// ‖dB_j(x_Q) − Π_j‖.
    pub projection_error: f64,
}

impl PhiFactorization {
    pub fn new(map: &NonlinearMap, scheme: &ProjectionScheme, j: usize, center: &[f64]) -> Result<Self> {
        let jac = map.jacobian(center);
        let kept = scheme.kept(j);
        let itilde = DMatrix::from_fn(jac.nrows(), kept.len(), |r, c| jac[(r, kept[c])]);
        let dev = spectral_norm(&(&itilde - DMatrix::identity(kept.len(), kept.len())));
        if dev > 0.1 {
            return Err(BltError::Precondition(format!("reduced derivative is {dev:e} from the identity")));
        }
        let itilde_inv = linalg::inverse(&itilde)?;
        let projection_error = spectral_norm(&(&jac - scheme.projection(j)));
        Ok(Self {
            center: center.to_vec(),
            kernel: scheme.block(j).to_vec(),
            kept,
            image_center: map.eval(center),
            jac,
            itilde_inv,
            projection_error,
        })
    }

    /// Φ_j(x) − x_Q for x in global coordinates.
    pub fn eval(&self, map: &NonlinearMap, x: &[f64]) -> DVector<f64> {
        let d = x.len();
        let local = DVector::from_iterator(d, x.iter().zip(&self.center).map(|(a, c)| a - c));
        let mut rhs = map.eval(x) - &self.image_center;
        for &k in &self.kernel {
            rhs -= self.jac.column(k) * local[k];
        }
        let rest = &self.itilde_inv * rhs;
        let mut out = DVector::zeros(d);
        for &k in &self.kernel {
            out[k] = local[k];
        }
        for (c, &l) in self.kept.iter().enumerate() {
            out[l] = rest[c];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiCheck {
    pub samples: usize,
    pub projection_error: f64,
    /// max |B_j(x) − B_j(x_Q) − dB_j(x_Q) Φ_j(x)|.
    pub factor_residual: f64,
    /// |Φ_j(x_Q)|.
    pub center_value: f64,
    /// ‖dΦ_j(x_Q) − I‖ by central differences.
    pub jacobian_error: f64,
    /// max |(x − x_Q) − Φ_j(x)| over the samples.
    pub max_offset: f64,
    /// 2dκδ^{1+β}.
    pub offset_bound: f64,
    pub holds: bool,
}

/// Samples Q and checks B_j = dB_j ∘ Φ_j, Φ_j(x_Q) = 0, dΦ_j(x_Q) = I and
/// |x − Φ_j(x)| ≤ 2dκδ^{1+β}.
pub fn phi_factorization(
    map: &NonlinearMap,
    scheme: &ProjectionScheme,
    j: usize,
    cube: &Cube,
    params: &ScaleParams,
    samples: usize,
    seed: u64,
) -> Result<(PhiFactorization, PhiCheck)> {
    let phi = PhiFactorization::new(map, scheme, j, &cube.center)?;
    let d = cube.dim();
    let c = &cube.center;
    let center_value = phi.eval(map, c).norm();
    let h = cube.side * 1e-3;
    let mut jd = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut xp = c.clone();
        let mut xm = c.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (phi.eval(map, &xp) - phi.eval(map, &xm)) / (2.0 * h);
        jd.set_column(k, &col);
    }
    let jacobian_error = spectral_norm(&(jd - DMatrix::identity(d, d)));
    let offset_bound = 2.0 * d as f64 * params.kappa * cube.side.powf(1.0 + params.beta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..samples).map(|_| cube.sample(&mut rng)).collect();
    let (factor_residual, max_offset) = pts
        .par_iter()
        .map(|x| {
            let p = phi.eval(map, x);
            let res = (map.eval(x) - &phi.image_center - &phi.jac * &p).norm();
            let local = DVector::from_iterator(d, x.iter().zip(c).map(|(a, b)| a - b));
            (res, (local - p).norm())
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let scale = map.eval(c).amax().max(cube.side);
    let holds = max_offset <= offset_bound
        && center_value <= 1e-12 * scale
        && jacobian_error <= 1e-6
        && factor_residual <= 1e-9 * cube.side;
    let check = PhiCheck {
        samples,
        projection_error: phi.projection_error,
        factor_residual,
        center_value,
        jacobian_error,
        max_offset,
        offset_bound,
        holds,
    };
    Ok((phi, check))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisjointnessReport {
    pub map: usize,
    pub chi: Vec<u8>,
    pub pairs: usize,
    pub skipped: usize,
    /// Pairs whose best separating margin is not positive.
    pub violations: usize,
    /// Smallest over pairs of max_i (|⟨x − y, n_i⟩| − 4dκδ^{1+β}|n_i|).
    pub min_margin: f64,
    /// min_i ⅓δ^{α₁}|n_i|² − 4dκδ^{1+β}|n_i|.
    pub theoretical_margin: f64,
    /// Smallest |B_j(x) − B_j(y)| observed.
    pub min_image_distance: f64,
}

/// Samples x ∈ T_j(ℓ, χ), y ∈ T_j(ℓ′, χ) with ℓ ≠ ℓ′ (usually adjacent)
/// and evaluates the separating functional of each pair.
pub fn verify_disjointness(
    maps: &[NonlinearMap],
    decomposition: &Decomposition,
    j: usize,
    chi: &[u8],
    pairs: usize,
    seed: u64,
) -> Result<DisjointnessReport> {
    let dec = decomposition;
    let d = dec.dim();
    if chi.len() != d || chi.iter().any(|&c| c > 1) {
        return Err(BltError::Input("χ must be a 0/1 vector of length d".into()));
    }
    let kept = dec.scheme.kept(j);
    let fine = dec.fine;
    let allowance = 4.0 * d as f64 * dec.params.kappa * dec.delta.powf(1.0 + dec.params.beta);
    let theoretical_margin = kept
        .iter()
        .map(|&i| {
            let n = &dec.frame.normals[i];
            fine / 3.0 * n.norm_squared() - allowance * n.norm()
        })
        .fold(f64::INFINITY, f64::min);
    let ranges: Vec<Vec<usize>> = (0..d).map(|i| dec.indices_meeting_cube(i, chi[i])).collect();
    if ranges.iter().any(Vec::is_empty) {
        return Err(BltError::Precondition("no cell of this type meets Q".into()));
    }
    let results: Vec<Option<(f64, f64)>> = (0..pairs)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let n: Vec<usize> = ranges.iter().map(|r| r[rng.random_range(0..r.len())]).collect();
            let mut n2 = n.clone();
            if rng.random_bool(0.75) {
                let i = kept[rng.random_range(0..kept.len())];
                let pos = ranges[i].iter().position(|&v| v == n[i]).expect("index from range");
                let len = ranges[i].len();
                if len < 2 {
                    return None;
                }
                let step = if pos == 0 || (pos + 1 < len && rng.random_bool(0.5)) { 1isize } else { -1 };
                n2[i] = ranges[i][(pos as isize + step) as usize];
            } else {
                for &i in &kept {
                    n2[i] = ranges[i][rng.random_range(0..ranges[i].len())];
                }
                for k in 0..d {
                    if !kept.contains(&k) {
                        n2[k] = ranges[k][rng.random_range(0..ranges[k].len())];
                    }
                }
            }
            if kept.iter().all(|&i| n[i] == n2[i]) {
                return None;
            }
            let x = dec.sample_in_cell(&n, chi, &mut rng)?;
            let y = dec.sample_in_cell(&n2, chi, &mut rng)?;
            let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let margin = kept
                .iter()
                .filter(|&&i| n[i] != n2[i])
                .map(|&i| {
                    let nv = &dec.frame.normals[i];
                    let dot: f64 = diff.iter().zip(nv.iter()).map(|(a, b)| a * b).sum();
                    dot.abs() - allowance * nv.norm()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let dist = (maps[j].eval(&x) - maps[j].eval(&y)).norm();
            Some((margin, dist))
        })
        .collect();
    let mut used = 0;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut min_dist = f64::INFINITY;
    for (margin, dist) in results.iter().flatten() {
        used += 1;
        if *margin <= 0.0 {
            violations += 1;
        }
        min_margin = min_margin.min(*margin);
        min_dist = min_dist.min(*dist);
    }
    Ok(DisjointnessReport {
        map: j,
        chi: chi.to_vec(),
        pairs: used,
        skipped: pairs - used,
        violations,
        min_margin,
        theoretical_margin,
        min_image_distance: min_dist,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest distance of s̃(B_{σ(i)}(x)) inside [s_n, s_n + δ^{α₁}].
    pub min_slack: f64,
}

/// For x in a χ_i = 1 slab of Q, checks B_{σ(i)}(x) lies in the image slab
/// [s_n, s_n + δ^{α₁}].
pub fn verify_slab_containment(
    maps: &[NonlinearMap],
    decomposition: &Decomposition,
    samples: usize,
    seed: u64,
) -> ContainmentReport {
    let dec = decomposition;
    let d = dec.dim();
    let results: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let i = rng.random_range(0..d);
            let mut chi: Vec<u8> = (0..d).map(|_| rng.random_range(0..2u8)).collect();
            chi[i] = 1;
            let mut n = Vec::with_capacity(d);
            for k in 0..d {
                let r = dec.indices_meeting_cube(k, chi[k]);
                if r.is_empty() {
                    return None;
                }
                n.push(r[rng.random_range(0..r.len())]);
            }
            let x = dec.sample_in_cell(&n, &chi, &mut rng)?;
            let seq = &dec.sequences[i];
            let y = maps[seq.map].eval(&x) - &seq.image_center;
            let s = y.dot(&seq.functional);
            let lo = seq.points[n[i]];
            Some((s - lo).min(lo + dec.fine - s))
        })
        .collect();
    let vals: Vec<f64> = results.into_iter().flatten().collect();
    ContainmentReport {
        samples: vals.len(),
        violations: vals.iter().filter(|v| **v < 0.0).count(),
        min_slack: vals.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Upper bound for ∫_P f over P = {y : ⟨y − y₀, g_r⟩ ∈ [lo_r, hi_r]} by
/// adaptive bisection of the parameter box; pieces still straddling cells
/// of different values at the depth limit take their largest value.
fn parallelepiped_mass(
    f: &GridFunction,
    y0: &DVector<f64>,
    g_inv: &DMatrix<f64>,
    det: f64,
    lo: &[f64],
    hi: &[f64],
    depth: usize,
) -> f64 {
    let k = lo.len();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let c = y0 + g_inv * DVector::from_column_slice(&mid);
    let h = f.spacing();
    let mut ranges = Vec::with_capacity(k);
    for a in 0..k {
        let w: f64 = (0..k).map(|r| g_inv[(a, r)].abs() * half[r]).sum();
        let lo_i = ((c[a] - w - f.origin()[a]) / h).floor();
        let hi_i = ((c[a] + w - f.origin()[a]) / h).floor();
        let n = f.shape()[a] as f64;
        if hi_i < 0.0 || lo_i >= n {
            return 0.0;
        }
        ranges.push((lo_i.max(0.0) as usize, hi_i.min(n - 1.0) as usize));
    }
    let counts: Vec<usize> = ranges.iter().map(|(a, b)| b - a + 1).collect();
    let total: usize = counts.iter().product();
    let mut vmin = f64::INFINITY;
    let mut vmax: f64 = 0.0;
    let mut idx = vec![0usize; k];
    for t in 0..total {
        let mut rest = t;
        for a in (0..k).rev() {
            idx[a] = ranges[a].0 + rest % counts[a];
            rest /= counts[a];
        }
        let v = f.cell_value(&idx);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let vol = det * half.iter().map(|w| 2.0 * w).product::<f64>();
    if vmax == 0.0 {
        return 0.0;
    }
    if vmin == vmax || depth == 0 {
        return vmax * vol;
    }
    let mut acc = Vec::with_capacity(1 << k);
    for corner in 0..(1usize << k) {
        let (sl, sh): (Vec<f64>, Vec<f64>) = (0..k)
            .map(|a| if corner >> a & 1 == 1 { (mid[a], hi[a]) } else { (lo[a], mid[a]) })
            .unzip();
        acc.push(parallelepiped_mass(f, y0, g_inv, det, &sl, &sh, depth - 1));
    }
    compensated_sum(acc)
}

const TUBE_DEPTH: usize = 6;

/// Certified upper bounds F̂_j(ℓ) ≥ ∫_{B_j(T_j(ℓ,χ))} f_j on the lattice of
/// slab indices of the axes kept by Π_j, from the superset in which each
/// image slab is widened by the nonlinear drift.
fn tube_masses(
    dec: &Decomposition,
    map: &NonlinearMap,
    f: &GridFunction,
    j: usize,
    chi: &[u8],
) -> Result<LatticeArray> {
    let d = dec.dim();
    let kept = dec.scheme.kept(j);
    let c = &dec.frame.center;
    let jac = map.jacobian(c);
    let y0 = map.eval(c);
    let taylor = effective_kappa(map, &dec.cube) * dec.cube.radius().powf(1.0 + map.beta);
    let offset_bound = 2.0 * d as f64 * dec.params.kappa * dec.delta.powf(1.0 + dec.params.beta);
    let mut gmat = DMatrix::zeros(kept.len(), kept.len());
    let mut eps = Vec::with_capacity(kept.len());
    for (r, &i) in kept.iter().enumerate() {
        let g = image_functional(&jac, &dec.frame.normals[i])?;
        gmat.set_row(r, &g.transpose());
        eps.push((offset_bound / dec.frame.normals[i].norm()).max(g.norm() * taylor));
    }
    let g_inv = linalg::inverse(&gmat)?;
    let det = g_inv.determinant().abs();
    let shape: Vec<usize> = kept.iter().map(|&i| dec.count(i, chi[i])).collect();
    let meets: Vec<Vec<bool>> = kept
        .iter()
        .map(|&i| {
            let mut v = vec![false; dec.count(i, chi[i])];
            for n in dec.indices_meeting_cube(i, chi[i]) {
                v[n] = true;
            }
            v
        })
        .collect();
    let total: usize = shape.iter().product();
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|t| {
            let mut rest = t;
            let mut ell = vec![0usize; kept.len()];
            for r in (0..kept.len()).rev() {
                ell[r] = rest % shape[r];
                rest /= shape[r];
            }
            if (0..kept.len()).any(|r| !meets[r][ell[r]]) {
                return 0.0;
            }
            let mut lo = Vec::with_capacity(kept.len());
            let mut hi = Vec::with_capacity(kept.len());
            for (r, &i) in kept.iter().enumerate() {
                let (a, b) = dec.interval(i, ell[r], chi[i]);
                lo.push(a - eps[r]);
                hi.push(b + eps[r]);
            }
            parallelepiped_mass(f, &y0, &g_inv, det, &lo, &hi, TUBE_DEPTH)
        })
        .collect();
    LatticeArray::new(shape, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferBound {
    pub chi: Vec<u8>,
    /// First axis with χ_i = 1.
    pub axis: usize,
    pub map: usize,
    /// ‖F̂_{σ(i)}‖_{ℓ¹} for this χ.
    pub tube_norm: f64,
    /// Σ_n of the pigeonhole reference masses along axis i.
    pub reference: f64,
    /// 4δ^{α₁−α₀}.
    pub factor: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductionStepReport {
    pub delta: f64,
    pub constancy_scale: f64,
    /// ∫_Q ∏ f_j(B_j x)^{1/(m−1)} dx.
    pub lhs: f64,
    pub lhs_error: f64,
    /// The same integral split over χ.
    pub lhs_by_chi: Vec<(Vec<u8>, f64)>,
    /// Share of the χ = 0 cells in the LHS.
    pub main_share: f64,
    pub masses: Vec<f64>,
    /// Σ_n ∏ F̂⁰_j(Π_j n)^{1/(m−1)}.
    pub finner_lhs: f64,
    /// ∏ ‖F̂⁰_j‖^{1/(m−1)}.
    pub finner_rhs: f64,
    pub main_norms: Vec<f64>,
    pub buffers: Vec<BufferBound>,
    /// ∏‖F̂⁰‖^p + Σ_{χ≠0} ‖F̂^χ_{σ(i)}‖^p ∏_{j≠σ(i)} (∫f_j)^p.
    pub bracket: f64,
    /// bracket / ∏ (∫f_j)^p.
    pub certified_factor: f64,
    /// 1 + 10^d δ^{(α₁−α₀)/(m−1)}.
    pub target: f64,
    /// lhs / bracket; at most C(2δ^{α₀}, M) when the step is sound.
    pub lhs_over_bracket: f64,
    pub certified: bool,
}

/// Runs the induction step on Q for grid inputs: decomposes Q, integrates
/// the LHS by quadrature, bounds the χ = 0 term by the discrete Finner
/// inequality over tube masses and every χ ≠ 0 term by its buffer mass.
pub fn verify_induction_step(
    maps: &[NonlinearMap],
    cube: &Cube,
    inputs: &[GridFunction],
    params: &ScaleParams,
    spec: &QuadratureSpec,
) -> Result<(Decomposition, InductionStepReport)> {
    let delta = cube.side;
    let spacing = inputs.iter().map(GridFunction::spacing).fold(0.0, f64::max);
    let m_scale = match params.constancy_scale {
        Some(m) => {
            if spacing > 1.0 / m * (1.0 + 1e-12) {
                return Err(BltError::Refused(format!("input spacing {spacing:e} exceeds 1/M = {:e}", 1.0 / m)));
            }
            m
        }
        None => 1.0 / spacing,
    };
    let dec = decompose_cube(maps, inputs, cube, params, delta)?;
    let d = cube.dim();
    let m = maps.len();
    let p = 1.0 / (m - 1) as f64;
    let masses: Vec<f64> = inputs.iter().map(GridFunction::integrate).collect();
    let denom: f64 = masses.iter().map(|v| v.powf(p)).product();

    let integrand = |x: &[f64]| -> f64 {
        let mut acc = 1.0;
        for (b, f) in maps.iter().zip(inputs) {
            let v = f.eval(b.eval(x).as_slice());
            if v <= 0.0 {
                return 0.0;
            }
            acc *= v.powf(p);
        }
        acc
    };
    let region = cube.region();
    let (lhs, lhs_error) = integrate_region(integrand, &region, spec)?;
    let chis: Vec<Vec<u8>> = (0..1usize << d).map(|t| (0..d).map(|i| (t >> i & 1) as u8).collect()).collect();
    let mut lhs_by_chi = Vec::with_capacity(chis.len());
    for chi in &chis {
        let piece = integrate_region(
            |x: &[f64]| match dec.locate(x) {
                Some((_, c)) if &c == chi => integrand(x),
                _ => 0.0,
            },
            &region,
            spec,
        )?
        .0;
        lhs_by_chi.push((chi.clone(), piece));
    }
    let main_share = if lhs > 0.0 { lhs_by_chi[0].1 / lhs } else { 1.0 };

    let zero = vec![0u8; d];
    let f0 = (0..m).map(|j| tube_masses(&dec, &maps[j], &inputs[j], j, &zero)).collect::<Result<Vec<_>>>()?;
    let (finner_lhs, finner_rhs) = discrete_finner(&f0, &dec.scheme)?;
    let main_norms: Vec<f64> = f0.iter().map(|a| compensated_sum(a.values.iter().copied())).collect();

    let mut buffers = Vec::new();
    let mut bracket_terms = vec![finner_rhs];
    for chi in chis.iter().skip(1) {
        let i = chi.iter().position(|&c| c == 1).expect("nonzero χ");
        let j = dec.sigma[i];
        let arr = tube_masses(&dec, &maps[j], &inputs[j], j, chi)?;
        let tube_norm = compensated_sum(arr.values.iter().copied());
        let seq = &dec.sequences[i];
        let reference = compensated_sum(seq.steps.iter().map(|s| s.reference_mass));
        let holds = tube_norm <= seq.factor * reference;
        let others: f64 = (0..m).filter(|&k| k != j).map(|k| masses[k].powf(p)).product();
        bracket_terms.push(tube_norm.powf(p) * others);
        buffers.push(BufferBound { chi: chi.clone(), axis: i, map: j, tube_norm, reference, factor: seq.factor, holds });
    }
    let bracket = compensated_sum(bracket_terms);
    let certified_factor = if denom > 0.0 { bracket / denom } else { 0.0 };
    let target = params.step_factor(delta);
    let lhs_over_bracket = if bracket > 0.0 { lhs / bracket } else { 0.0 };
    let certified = certified_factor <= target
        && buffers.iter().all(|b| b.holds)
        && finner_lhs <= finner_rhs * (1.0 + 1e-12)
        && dec.check().holds();
    let report = InductionStepReport {
        delta,
        constancy_scale: m_scale,
        lhs,
        lhs_error,
        lhs_by_chi,
        main_share,
        masses,
        finner_lhs,
        finner_rhs,
        main_norms,
        buffers,
        bracket,
        certified_factor,
        target,
        lhs_over_bracket,
        certified,
    };
    Ok((dec, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearBlReport {
    pub delta0: f64,
    pub ratio: f64,
    pub ratio_error: f64,
    /// 10^d exp(10^d δ₀^γ / (1 − 2^{−γ})); may overflow to infinity.
    pub bound: f64,
    pub log_bound: f64,
    /// log_bound − ln(ratio).
    pub log_margin: f64,
    pub holds: bool,
}

/// The ratio ∫_{Q(x₀,δ₀)} ∏ f_j(B_j x)^{1/(m−1)} / ∏ (∫f_j)^{1/(m−1)} for
/// canonical maps, against the global constant.
pub fn verify_nonlinear_bl(
    maps: &[NonlinearMap],
    x0: &[f64],
    inputs: &[InputFunction],
    params: &ScaleParams,
    spec: &QuadratureSpec,
) -> Result<NonlinearBlReport> {
    let m = maps.len();
    if inputs.len() != m {
        return Err(BltError::DimensionMismatch { expected: m, found: inputs.len() });
    }
    let jac: Vec<DMatrix<f64>> = maps.iter().map(|b| b.jacobian(x0)).collect();
    let scheme = infer_scheme(&jac)?;
    let residual = jac.iter().enumerate().map(|(j, dj)| (dj - scheme.projection(j)).norm()).fold(0.0, f64::max);
    if residual > 1e-9 {
        return Err(BltError::Precondition(format!("maps are not canonical at x₀ (residual {residual:e})")));
    }
    let p = 1.0 / (m - 1) as f64;
    let mut denom = 1.0;
    for (j, f) in inputs.iter().enumerate() {
        let mass = f.integrate();
        if !(mass > 0.0) {
            return Err(BltError::Precondition(format!("input {j} has zero mass")));
        }
        denom *= mass.powf(p);
    }
    let cube = Cube::new(x0.to_vec(), params.delta0)?;
    let (num, err) = integrate_region(
        |x: &[f64]| {
            let mut acc = 1.0;
            for (b, f) in maps.iter().zip(inputs) {
                let v = f.eval(b.eval(x).as_slice());
                if v <= 0.0 {
                    return 0.0;
                }
                acc *= v.powf(p);
            }
            acc
        },
        &cube.region(),
        spec,
    )?;
    let ratio = num / denom;
    let log_bound = params.log_global_bound();
    let log_margin = log_bound - ratio.ln();
    Ok(NonlinearBlReport {
        delta0: params.delta0,
        ratio,
        ratio_error: err / denom,
        bound: log_bound.exp(),
        log_bound,
        log_margin,
        holds: log_margin > 0.0,
    })
}
