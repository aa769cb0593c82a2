//! Quantitative implicit function theorem for F(x, η) = 0 near the origin
//! with F(0,0) = 0 and ∂_ηF(0,0) = 1: explicit radii, the contraction
//! η ↦ η − F(x, η), and the derivative of the solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{BltError, Result};
use crate::poly::Polynomial;

const NORMALIZATION_TOL: f64 = 1e-12;

/// A polynomial F on ℝ^{n+1} whose last variable is η, with a declared
/// Hölder bound κ for dF of exponent β.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    poly: Polynomial,
    beta: f64,
    kappa: f64,
    zero_at_origin: bool,
    unit_slope: bool,
}

impl ScalarField {
    pub fn new(poly: Polynomial, beta: f64, kappa: f64) -> Result<Self> {
        if poly.nvars() == 0 {
            return Err(BltError::Input("a field needs at least the η variable".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(BltError::Input(format!("β must lie in (0, 1], got {beta}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(BltError::Input(format!("κ must be positive, got {kappa}")));
        }
        let origin = vec![0.0; poly.nvars()];
        let zero_at_origin = poly.eval(&origin).abs() <= NORMALIZATION_TOL;
        let unit_slope = (poly.partial(&origin, poly.nvars() - 1) - 1.0).abs() <= NORMALIZATION_TOL;
        Ok(Self { poly, beta, kappa, zero_at_origin, unit_slope })
    }

    /// Base dimension n.
    pub fn n(&self) -> usize {
        self.poly.nvars() - 1
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    /// F(0,0) = 0 and ∂_ηF(0,0) = 1.
    pub fn is_normalized(&self) -> bool {
        self.zero_at_origin && self.unit_slope
    }

    pub fn has_unit_slope(&self) -> bool {
        self.unit_slope
    }

    fn point(x: &[f64], eta: f64) -> Vec<f64> {
        let mut u = x.to_vec();
        u.push(eta);
        u
    }

    pub fn eval(&self, x: &[f64], eta: f64) -> f64 {
        self.poly.eval(&Self::point(x, eta))
    }

    pub fn grad_x(&self, x: &[f64], eta: f64) -> Vec<f64> {
        let u = Self::point(x, eta);
        (0..self.n()).map(|k| self.poly.partial(&u, k)).collect()
    }

    pub fn d_eta(&self, x: &[f64], eta: f64) -> f64 {
        self.poly.partial(&Self::point(x, eta), self.n())
    }

    /// Analytic Hölder bound of dF on the ball of radius r in ℝ^{n+1}.
    pub fn hoelder_bound(&self, r: f64) -> f64 {
        self.poly.hessian_bound(r) * (2.0 * r).powf(1.0 - self.beta)
    }

    /// Largest sampled |dF(u) − dF(v)| / |u − v|^β on the ball of radius r.
    pub fn sampled_hoelder(&self, r: f64, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.poly.nvars();
        let mut best: f64 = 0.0;
        for _ in 0..pairs {
            let u = sample_ball(k, r, &mut rng);
            let v = sample_ball(k, r, &mut rng);
            let dist = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let gu = self.poly.gradient(&u);
            let gv = self.poly.gradient(&v);
            let diff = gu.iter().zip(&gv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            best = best.max(diff / dist.powf(self.beta));
        }
        best
    }
}

pub(crate) fn sample_ball<R: Rng>(k: usize, r: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..k).map(|_| r * rng.random_range(-1.0..1.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() < r * r {
            return x;
        }
    }
}

/// R₂ = (100κ)^{−1/β} and R₁ = R₂ · min{1, 1/(10κ)}.
pub fn ift_radii(beta: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && kappa > 0.0) {
        return Err(BltError::Input(format!("need β, κ > 0, got β = {beta}, κ = {kappa}")));
    }
    let r2 = (100.0 * kappa).powf(-1.0 / beta);
    Ok((r2 * (1.0f64).min(1.0 / (10.0 * kappa)), r2))
}

/// ⌈log₂(R₂ / tol)⌉ + 1.
pub fn iteration_cap(r2: f64, tol: f64) -> usize {
    ((r2 / tol).log2().ceil().max(0.0) as usize) + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSolution {
    pub eta: f64,
    pub residual: f64,
    pub iterations: usize,
    pub cap: usize,
    /// Largest |η_k| over the iterates.
    pub max_abs_iterate: f64,
    /// Largest |η_{k+1} − η_k| / |η_k − η_{k−1}| observed.
    pub max_ratio: f64,
}

fn iterate(field: &ScalarField, x: &[f64], tol: f64, cap: usize, bound: f64) -> Result<EtaSolution> {
    let mut eta = 0.0;
    let mut residual = field.eval(x, eta);
    let mut prev_step: Option<f64> = None;
    let mut max_ratio: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut iterations = 0;
    while residual.abs() > tol {
        if iterations >= cap {
            return Err(BltError::Refused(format!(
                "no convergence within {cap} iterations (residual {residual:e}); the declared (β, κ) fails"
            )));
        }
        let next = eta - residual;
        let step = (next - eta).abs();
        if let Some(p) = prev_step {
            if p > 1e-15 {
                max_ratio = max_ratio.max(step / p);
            }
        }
        prev_step = Some(step);
        eta = next;
        iterations += 1;
        max_abs = max_abs.max(eta.abs());
        if eta.abs() > bound {
            return Err(BltError::Refused(format!("iterate {eta:e} left the closed ball of radius {bound:e}")));
        }
        residual = field.eval(x, eta);
    }
    Ok(EtaSolution { eta, residual: residual.abs(), iterations, cap, max_abs_iterate: max_abs, max_ratio })
}

/// Fixed point of Ψ_x(η) = η − F(x, η) from η = 0, stopping once
/// |F(x, η)| ≤ tol. The cap defaults to ⌈log₂(R₂/tol)⌉ + 1.
pub fn solve_eta(field: &ScalarField, x: &[f64], tol: f64, max_iter: Option<usize>) -> Result<EtaSolution> {
    if x.len() != field.n() {
        return Err(BltError::DimensionMismatch { expected: field.n(), found: x.len() });
    }
    if !(tol > 0.0) {
        return Err(BltError::Input("tolerance must be positive".into()));
    }
    if !field.is_normalized() {
        return Err(BltError::Precondition("field is not normalized: need F(0,0) = 0, ∂_ηF(0,0) = 1".into()));
    }
    let (r1, r2) = ift_radii(field.beta, field.kappa)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm >= r1 {
        return Err(BltError::Precondition(format!("|x| = {norm:e} is outside B(0, R₁ = {r1:e})")));
    }
    let cap = max_iter.unwrap_or_else(|| iteration_cap(r2, tol));
    iterate(field, x, tol, cap, r2)
}

/// η(x) for fields with ∂_ηF(0,0) = 1 but F(0,0) possibly nonzero, by the
/// same contraction without the radius restrictions.
pub(crate) fn solve_level(field: &ScalarField, x: &[f64], tol: f64) -> Result<EtaSolution> {
    iterate(field, x, tol, 400, f64::INFINITY)
}

/// ∇η(x) = −∇_xF(x, η) / ∂_ηF(x, η).
pub fn eta_gradient(field: &ScalarField, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    if x.len() != field.n() {
        return Err(BltError::DimensionMismatch { expected: field.n(), found: x.len() });
    }
    let den = field.d_eta(x, eta);
    if den.abs() < 0.75 {
        return Err(BltError::Refused(format!("∂_ηF = {den:e} is below 3/4; the field violates its declaration")));
    }
    Ok(field.grad_x(x, eta).into_iter().map(|g| -g / den).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoelderEstimate {
    /// sup|η| + sup|∇η| + sup |∇η(x) − ∇η(y)| / |x − y|^β.
    pub estimate: f64,
    pub sup_eta: f64,
    pub sup_gradient: f64,
    pub hoelder_quotient: f64,
    pub samples: usize,
}

const MAX_PAIR_SAMPLES: usize = 4096;

/// Empirical lower bound for ‖η‖_{C^{1,β}} on B(0, R₁) from seeded samples.
pub fn hoelder_estimate(field: &ScalarField, samples: usize, seed: u64) -> Result<HoelderEstimate> {
    let (r1, _) = ift_radii(field.beta, field.kappa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = field.n();
    let pts: Vec<Vec<f64>> = (0..samples.max(1)).map(|_| sample_ball(n, r1 * (1.0 - 1e-12), &mut rng)).collect();
    let sols = pts
        .par_iter()
        .map(|x| {
            let s = solve_eta(field, x, 1e-15, Some(200))?;
            let g = eta_gradient(field, x, s.eta)?;
            Ok((s.eta, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let sup_eta = sols.iter().map(|s| s.0.abs()).fold(0.0, f64::max);
    let gnorm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sup_gradient = sols.iter().map(|s| gnorm(&s.1)).fold(0.0, f64::max);
    let k = sols.len().min(MAX_PAIR_SAMPLES);
    let beta = field.beta;
    let hoelder_quotient = (0..k)
        .into_par_iter()
        .map(|a| {
            let mut best: f64 = 0.0;
            for b in (a + 1)..k {
                let dist = pts[a].iter().zip(&pts[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                if dist == 0.0 {
                    continue;
                }
                let diff: Vec<f64> = sols[a].1.iter().zip(&sols[b].1).map(|(p, q)| p - q).collect();
                best = best.max(gnorm(&diff) / dist.powf(beta));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(HoelderEstimate {
        estimate: sup_eta + sup_gradient + hoelder_quotient,
        sup_eta,
        sup_gradient,
        hoelder_quotient,
        samples: sols.len(),
    })
}
