//! Fixtures shared by the benchmarks.

use blt_core::quadrature::random_grid;
use blt_core::scales::{compute_delta0, perturbed_loomis_whitney};
use blt_core::{Cube, GridFunction, Hypersurface, InputFunction, NonlinearMap, Region, ScaleParams, SurfaceFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct ScalesFixture {
    pub params: ScaleParams,
    pub maps: Vec<NonlinearMap>,
    pub cube: Cube,
    pub inputs: Vec<GridFunction>,
}

/// Perturbed Loomis–Whitney at δ₀ with seeded 16×16 grid inputs.
pub fn scales_fixture() -> ScalesFixture {
    let params = compute_delta0(1.0, 1.0, 1.25, 1.5, 3, 3).unwrap();
    let maps = perturbed_loomis_whitney(0.25).unwrap();
    let delta = params.delta0;
    let cube = Cube::new(vec![0.0; 3], delta).unwrap();
    let mut r = rng(7);
    let inputs = (0..3).map(|_| random_grid(vec![-delta, -delta], delta / 8.0, vec![16, 16], &mut r)).collect();
    ScalesFixture { params, maps, cube, inputs }
}

/// Segments of slope ±1 over [0, 1] carrying the constant 1.
pub fn crossing_segments() -> Vec<SurfaceFunction> {
    [1.0, -1.0]
        .iter()
        .map(|&a| {
            let dom = Region::new(vec![0.0], vec![1.0]).unwrap();
            let g = GridFunction::constant(vec![0.0], 1.0, vec![1], 1.0).unwrap();
            SurfaceFunction::new(Hypersurface::flat(dom, 0.0, &[a], 1e-6).unwrap(), InputFunction::Grid(g)).unwrap()
        })
        .collect()
}
