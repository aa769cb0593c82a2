//! Numerical toolkit for Brascamp–Lieb inequalities of direct-sum type.
//!
//! * [`exterior`]: wedge products, Hodge star and the transversality determinant.
//! * [`datum`]: data, the closed-form constant, reductions and gaussian search.
//! * [`quadrature`]: input representations, the BL functional and discrete checks.
//! * [`scales`]: the induction-on-scales decomposition for nonlinear maps.
//! * [`ift`]: a quantitative implicit function solver.
//! * [`convext`]: singular convolutions and Fourier extension estimates.

pub mod convext;
pub mod datum;
pub mod error;
pub mod exterior;
pub mod ift;
pub mod linalg;
pub mod poly;
pub mod quadrature;
pub mod scales;

pub use datum::{BLDatum, ProjectionScheme, ReductionCertificate};
pub use error::{BltError, Result};
pub use convext::{Hypersurface, SurfaceFunction};
pub use exterior::MultiVector;
pub use ift::ScalarField;
pub use poly::{Monomial, PolyMap, Polynomial};
pub use quadrature::{BoxIndicator, GaussianFunction, GridFunction, InputFunction, QuadratureSpec, Region};
pub use scales::{Cube, Decomposition, NonlinearMap, ScaleParams};
