//! Multivariate polynomials with analytic gradients.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{BltError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(coef: f64, powers: Vec<u32>) -> Self {
        Self { coef, powers }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.powers.iter().zip(x).fold(self.coef, |acc, (&p, &xi)| acc * xi.powi(p as i32))
    }

    fn partial(&self, x: &[f64], k: usize) -> f64 {
        let pk = self.powers[k];
        if pk == 0 {
            return 0.0;
        }
        let mut acc = self.coef * pk as f64;
        for (i, (&p, &xi)) in self.powers.iter().zip(x).enumerate() {
            let e = if i == k { p - 1 } else { p };
            acc *= xi.powi(e as i32);
        }
        acc
    }

    fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<Monomial>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.powers.len() != nvars) {
            return Err(BltError::DimensionMismatch { expected: nvars, found: t.powers.len() });
        }
        Ok(Self { nvars, terms })
    }

    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: Vec::new() }
    }

    /// c₀ + Σ c_k x_k.
    pub fn affine(constant: f64, coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        let mut terms = Vec::new();
        if constant != 0.0 {
            terms.push(Monomial::new(constant, vec![0; n]));
        }
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                let mut p = vec![0; n];
                p[k] = 1;
                terms.push(Monomial::new(c, p));
            }
        }
        Self { nvars: n, terms }
    }

    pub fn with_term(mut self, coef: f64, powers: Vec<u32>) -> Result<Self> {
        if powers.len() != self.nvars {
            return Err(BltError::DimensionMismatch { expected: self.nvars, found: powers.len() });
        }
        self.terms.push(Monomial::new(coef, powers));
        Ok(self)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn partial(&self, x: &[f64], k: usize) -> f64 {
        self.terms.iter().map(|t| t.partial(x, k)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nvars).map(|k| self.partial(x, k)).collect()
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::affine(c, &vec![0.0; nvars])
    }

    /// Like terms merged and zero coefficients dropped.
    pub fn simplified(&self) -> Self {
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in &self.terms {
            *map.entry(t.powers.clone()).or_insert(0.0) += t.coef;
        }
        let terms = map.into_iter().filter(|(_, c)| *c != 0.0).map(|(p, c)| Monomial::new(c, p)).collect();
        Self { nvars: self.nvars, terms }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if other.nvars != self.nvars {
            return Err(BltError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self { nvars: self.nvars, terms }.simplified())
    }

    pub fn scale(&self, c: f64) -> Self {
        let terms = self.terms.iter().map(|t| Monomial::new(t.coef * c, t.powers.clone())).collect();
        Self { nvars: self.nvars, terms }.simplified()
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if other.nvars != self.nvars {
            return Err(BltError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let powers = a.powers.iter().zip(&b.powers).map(|(p, q)| p + q).collect();
                terms.push(Monomial::new(a.coef * b.coef, powers));
            }
        }
        Ok(Self { nvars: self.nvars, terms }.simplified())
    }

    /// x ↦ P(A x + b) as a polynomial in the new variables.
    pub fn compose_affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.nrows() != self.nvars || b.len() != self.nvars {
            return Err(BltError::DimensionMismatch { expected: self.nvars, found: a.nrows() });
        }
        let m = a.ncols();
        let forms: Vec<Polynomial> = (0..self.nvars)
            .map(|i| Polynomial::affine(b[i], &a.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let mut out = Polynomial::zero(m);
        for t in &self.terms {
            let mut acc = Polynomial::constant(m, t.coef);
            for (i, &p) in t.powers.iter().enumerate() {
                for _ in 0..p {
                    acc = acc.mul(&forms[i])?;
                }
            }
            out = out.add(&acc)?;
        }
        Ok(out)
    }

    /// Renames variable k to perm[k].
    pub fn permute(&self, perm: &[usize]) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut powers = vec![0; self.nvars];
                for (k, &p) in t.powers.iter().enumerate() {
                    powers[perm[k]] = p;
                }
                Monomial::new(t.coef, powers)
            })
            .collect();
        Self { nvars: self.nvars, terms }
    }

    /// Sum of |coef| · degree · (degree - 1) · r^{degree-2} over terms of
    /// degree ≥ 2: bounds the operator norm of the Hessian on the ball of
    /// radius r, hence the Lipschitz constant of the gradient there.
    pub fn hessian_bound(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.degree() >= 2)
            .map(|t| {
                let n = t.degree() as f64;
                t.coef.abs() * n * (n - 1.0) * r.powi(t.degree() as i32 - 2)
            })
            .sum()
    }
}

/// A polynomial map ℝ^n → ℝ^k, one polynomial per output component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    comps: Vec<Polynomial>,
}

impl PolyMap {
    pub fn new(comps: Vec<Polynomial>) -> Result<Self> {
        let n = comps.first().ok_or(BltError::EmptyMatrix)?.nvars();
        if let Some(c) = comps.iter().find(|c| c.nvars() != n) {
            return Err(BltError::DimensionMismatch { expected: n, found: c.nvars() });
        }
        Ok(Self { comps })
    }

    /// The linear map x ↦ Lx.
    pub fn linear(l: &DMatrix<f64>) -> Self {
        let comps = (0..l.nrows())
            .map(|i| Polynomial::affine(0.0, &l.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        Self { comps }
    }

    pub fn input_dim(&self) -> usize {
        self.comps[0].nvars()
    }

    pub fn output_dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.comps
    }

    pub fn component_mut(&mut self, i: usize) -> &mut Polynomial {
        &mut self.comps[i]
    }

    pub fn degree(&self) -> u32 {
        self.comps.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.comps.len(), self.comps.iter().map(|c| c.eval(x)))
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.input_dim();
        DMatrix::from_fn(self.comps.len(), n, |i, k| self.comps[i].partial(x, k))
    }

    /// Frobenius bound on the Lipschitz constant of the Jacobian on the
    /// ball of radius r.
    pub fn jacobian_lipschitz_bound(&self, r: f64) -> f64 {
        self.comps.iter().map(|c| c.hessian_bound(r).powi(2)).sum::<f64>().sqrt()
    }
}
