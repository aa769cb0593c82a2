//! Input documents. Every index a user writes or reads is 1-based; the
//! conversions below shift to the 0-based library convention.

use blt_core::datum::ProjectionScheme;
use blt_core::scales::compute_delta0;
use blt_core::{
    BLDatum, BoxIndicator, Cube, GaussianFunction, GridFunction, Hypersurface, InputFunction, Monomial, NonlinearMap,
    PolyMap, Polynomial, QuadratureSpec, Region, ScalarField, ScaleParams, SurfaceFunction,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::RunError;

type Result<T> = std::result::Result<T, RunError>;

pub type Rows = Vec<Vec<f64>>;

pub fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(RunError::schema(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(RunError::schema(field, "rows have different lengths"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn to_zero_based(field: &str, idx: &[usize]) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| i.checked_sub(1).ok_or_else(|| RunError::schema(field, "indices start at 1")))
        .collect()
}

pub fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|i| i + 1).collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumDoc {
    pub d: usize,
    pub maps: Vec<Rows>,
    /// Defaults to 1/(m-1) for every map.
    pub p: Option<Vec<f64>>,
}

impl DatumDoc {
    pub fn build(&self) -> Result<BLDatum> {
        let maps = self
            .maps
            .iter()
            .enumerate()
            .map(|(j, b)| matrix(&format!("maps[{}]", j + 1), b))
            .collect::<Result<Vec<_>>>()?;
        if let Some(b) = maps.iter().find(|b| b.ncols() != self.d) {
            return Err(RunError::schema("maps", format!("map has {} columns but d = {}", b.ncols(), self.d)));
        }
        Ok(match &self.p {
            Some(p) => BLDatum::new(maps, p.clone())?,
            None => BLDatum::with_class_exponents(maps)?,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeDoc {
    pub d: usize,
    /// Kernel coordinate blocks, 1-based.
    pub blocks: Vec<Vec<usize>>,
}

impl SchemeDoc {
    pub fn build(&self) -> Result<ProjectionScheme> {
        let blocks = self.blocks.iter().map(|b| to_zero_based("scheme.blocks", b)).collect::<Result<Vec<_>>>()?;
        Ok(ProjectionScheme::from_blocks(self.d, blocks)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridDoc {
    pub fn build(&self) -> Result<GridFunction> {
        Ok(GridFunction::new(self.origin.clone(), self.spacing, self.shape.clone(), self.values.clone())?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputDoc {
    Grid {
        origin: Vec<f64>,
        spacing: f64,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    /// Indicator of matrix·[0,1)^k + offset.
    Box { matrix: Rows, offset: Vec<f64> },
    /// amplitude · exp(−π⟨form y, y⟩).
    Gaussian { form: Rows, amplitude: f64 },
}

impl InputDoc {
    pub fn build(&self) -> Result<InputFunction> {
        Ok(match self {
            InputDoc::Grid { origin, spacing, shape, values } => {
                InputFunction::Grid(GridFunction::new(origin.clone(), *spacing, shape.clone(), values.clone())?)
            }
            InputDoc::Box { matrix: m, offset } => {
                InputFunction::Box(BoxIndicator::new(matrix("matrix", m)?, DVector::from_vec(offset.clone()))?)
            }
            InputDoc::Gaussian { form, amplitude } => {
                InputFunction::Gaussian(GaussianFunction::new(matrix("form", form)?, *amplitude)?)
            }
        })
    }

    pub fn grid(&self, field: &str) -> Result<GridFunction> {
        match self.build()? {
            InputFunction::Grid(g) => Ok(g),
            _ => Err(RunError::schema(field, "expected a grid input")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDoc {
    pub c: f64,
    pub pow: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyDoc {
    pub nvars: usize,
    pub terms: Vec<TermDoc>,
}

impl PolyDoc {
    pub fn build(&self) -> Result<Polynomial> {
        let terms = self.terms.iter().map(|t| Monomial::new(t.c, t.pow.clone())).collect();
        Ok(Polynomial::new(self.nvars, terms)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDoc {
    /// F(x, η) with η the last variable.
    pub poly: PolyDoc,
    pub beta: f64,
    pub kappa: f64,
}

impl FieldDoc {
    pub fn build(&self) -> Result<ScalarField> {
        Ok(ScalarField::new(self.poly.build()?, self.beta, self.kappa)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDoc {
    /// Either a linear matrix or polynomial components, not both.
    pub matrix: Option<Rows>,
    pub components: Option<Vec<PolyDoc>>,
    pub beta: f64,
    pub kappa: f64,
}

impl MapDoc {
    pub fn build(&self, field: &str) -> Result<NonlinearMap> {
        match (&self.matrix, &self.components) {
            (Some(m), None) => Ok(NonlinearMap::linear(&matrix(field, m)?, self.beta, self.kappa)?),
            (None, Some(c)) => {
                let comps = c.iter().map(PolyDoc::build).collect::<Result<Vec<_>>>()?;
                Ok(NonlinearMap::new(PolyMap::new(comps)?, self.beta, self.kappa)?)
            }
            _ => Err(RunError::schema(field, "give exactly one of `matrix` and `components`")),
        }
    }
}

pub fn build_maps(maps: &[MapDoc]) -> Result<Vec<NonlinearMap>> {
    maps.iter().enumerate().map(|(j, m)| m.build(&format!("maps[{}]", j + 1))).collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesDoc {
    pub beta: f64,
    pub kappa: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Constancy scale M of the inputs.
    pub constancy_scale: Option<f64>,
}

impl ScalesDoc {
    pub fn build(&self, d: usize, m: usize) -> Result<ScaleParams> {
        let mut p = compute_delta0(self.beta, self.kappa, self.alpha0, self.alpha1, d, m)?;
        p.constancy_scale = self.constancy_scale;
        Ok(p)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeDoc {
    pub center: Vec<f64>,
    /// Defaults to δ₀.
    pub side: Option<f64>,
}

impl CubeDoc {
    pub fn build(&self, params: &ScaleParams) -> Result<Cube> {
        Ok(Cube::new(self.center.clone(), self.side.unwrap_or(params.delta0))?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RegionDoc {
    pub fn build(&self) -> Result<Region> {
        Ok(Region::new(self.lo.clone(), self.hi.clone())?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceDoc {
    #[serde(rename = "U")]
    pub domain: RegionDoc,
    pub phi: PolyDoc,
    pub beta: f64,
    pub kappa: f64,
}

impl SurfaceDoc {
    pub fn build(&self) -> Result<Hypersurface> {
        Ok(Hypersurface::new(self.domain.build()?, self.phi.build()?, self.beta, self.kappa)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceFunctionDoc {
    pub surface: SurfaceDoc,
    pub g: InputDoc,
}

impl SurfaceFunctionDoc {
    pub fn build(&self) -> Result<SurfaceFunction> {
        Ok(SurfaceFunction::new(self.surface.build()?, self.g.build()?)?)
    }
}

pub fn build_surface_functions(funcs: &[SurfaceFunctionDoc]) -> Result<Vec<SurfaceFunction>> {
    funcs.iter().map(SurfaceFunctionDoc::build).collect()
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureDoc {
    Midpoint { resolution: usize },
    MonteCarlo { samples: usize },
}

impl QuadratureDoc {
    pub fn with_seed(self, seed: Option<u64>) -> Result<QuadratureSpec> {
        Ok(match self {
            QuadratureDoc::Midpoint { resolution } => QuadratureSpec::Midpoint { resolution },
            QuadratureDoc::MonteCarlo { samples } => QuadratureSpec::MonteCarlo {
                samples,
                seed: seed.ok_or_else(|| RunError::Usage("Monte Carlo quadrature needs --seed or BLT_DEFAULT_SEED".into()))?,
            },
        })
    }
}
