mod common;

use approx::assert_relative_eq;
use blt_core::convext::*;
use blt_core::datum::bl_constant_classc;
use blt_core::{BLDatum, BltError, BoxIndicator, GridFunction, InputFunction, Polynomial, QuadratureSpec, Region, ScalarField};
use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn mc(samples: usize, seed: u64) -> QuadratureSpec {
    QuadratureSpec::MonteCarlo { samples, seed }
}

fn interval(a: f64, b: f64) -> Region {
    Region::new(vec![a], vec![b]).unwrap()
}

fn segment(slope: f64, g: GridFunction) -> SurfaceFunction {
    SurfaceFunction::new(Hypersurface::flat(interval(0.0, 1.0), 0.0, &[slope], 1e-6).unwrap(), InputFunction::Grid(g)).unwrap()
}

fn unit_grid(value: f64) -> GridFunction {
    GridFunction::constant(vec![0.0], 1.0, vec![1], value).unwrap()
}

#[test]
fn polytope_oracle_sanity() {
    let cube = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
    assert_relative_eq!(polytope_volume_3d(&cube, &[1.0, 0.0, 2.0, 0.0, 0.5, 0.0]), 1.0, max_relative = 1e-12);
    let simplex = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 1.0, 1.0]];
    assert_relative_eq!(polytope_volume_3d(&simplex, &[0.0, 0.0, 0.0, 1.0]), 1.0 / 6.0, max_relative = 1e-12);
}

#[test]
fn delta_of_eta_gives_base_volume() {
    let f = ScalarField::new(Polynomial::affine(0.0, &[0.0, 0.0, 1.0]), 1.0, 1e-3).unwrap();
    let w = Region::new(vec![0.0, 0.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
    let (v, _) = delta_integral(&f, |_, _| 1.0, &w, &QuadratureSpec::Midpoint { resolution: 16 }).unwrap();
    assert_relative_eq!(v, 1.0, max_relative = 1e-14);
}

#[test]
fn delta_misses_the_level_set() {
    let f = ScalarField::new(Polynomial::affine(-2.0, &[0.0, 0.0, 1.0]), 1.0, 1e-3).unwrap();
    let w = Region::new(vec![0.0, 0.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
    let (v, _) = delta_integral(&f, |_, _| 1.0, &w, &QuadratureSpec::Midpoint { resolution: 16 }).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn delta_integral_preconditions() {
    let spec = QuadratureSpec::Midpoint { resolution: 8 };
    let f = ScalarField::new(Polynomial::affine(0.0, &[0.0, 1.0]), 1.0, 1.0).unwrap();
    let w = Region::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
    assert!(matches!(delta_integral(&f, |_, _| 1.0, &w, &spec), Err(BltError::Precondition(_))));
    let steep = ScalarField::new(Polynomial::affine(0.0, &[0.0, 2.0]), 1.0, 1e-3).unwrap();
    assert!(matches!(delta_integral(&steep, |_, _| 1.0, &w, &spec), Err(BltError::Precondition(_))));
    // ∂_ηF = 1 − x drops below ½ inside the window.
    let sagging = ScalarField::new(
        Polynomial::affine(0.0, &[0.0, 1.0]).with_term(-1.0, vec![1, 1]).unwrap(),
        1.0,
        1e-3,
    )
    .unwrap();
    let w = Region::new(vec![0.0, -1.0], vec![0.9, 1.0]).unwrap();
    assert!(matches!(delta_integral(&sagging, |_, _| 1.0, &w, &spec), Err(BltError::Precondition(_))));
    let bad = Region::new(vec![0.0], vec![1.0]).unwrap();
    assert!(matches!(delta_integral(&f, |_, _| 1.0, &bad, &spec), Err(BltError::DimensionMismatch { .. })));
}

/// ∫ f₁(u₁) f₂(u₂) f₃(u₁ + u₂) δ(⟨g, u⟩ + c0) du with box indicators.
fn linear_slice_case() -> ([f64; 4], f64, f64, [f64; 2]) {
    ([0.3, -0.2, 0.5, 1.0], 0.05, 0.5, [0.1, -0.1])
}

fn box_product(h: f64, s: [f64; 2]) -> impl Fn(&[f64]) -> f64 + Sync {
    move |u: &[f64]| {
        let inside = u.iter().all(|v| v.abs() <= h)
            && (u[0] + u[2] - s[0]).abs() <= h
            && (u[1] + u[3] - s[1]).abs() <= h;
        if inside {
            1.0
        } else {
            0.0
        }
    }
}

#[test]
fn linear_delta_integral_matches_slice_and_mollifier() {
    let (g, c0, h, s) = linear_slice_case();
    let exact = linear_slice_integral(g, c0, &convolution_constraints(h, s));
    let field = ScalarField::new(Polynomial::affine(c0, &g), 1.0, 1e-3).unwrap();
    let window = Region::new(vec![-h; 4], vec![h; 4]).unwrap();
    let ind = box_product(h, s);
    let (v, err) = delta_integral(&field, |x, eta| ind(&[x[0], x[1], x[2], eta]), &window, &mc(1_000_000, 3)).unwrap();
    assert!(rel_err(v, exact) <= 0.01, "{v} vs {exact}");
    assert!((v - exact).abs() <= 3.0 * err + 1e-12);
    let lin = |u: &[f64]| g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + c0;
    let moll = mollified_delta(lin, &ind, &[-h; 4], &[h; 4], 0.02, 4_000_000, 9);
    assert!(rel_err(moll, exact) <= 0.01, "{moll} vs {exact}");
    assert!(rel_err(v, moll) <= 0.01);
}

#[test]
fn orthogonal_planes_match_closed_form() {
    let half = 0.5;
    let funcs = orthogonal_planes(half);
    let a = orthogonal_plane_slopes();
    for y in [[0.0, 0.0, 0.0], [0.1, -0.05, 0.02]] {
        let exact = flat_convolution_oracle(a, half, y);
        let (v, err) = surface_convolution(&funcs, &y, 1e-3, &mc(1_000_000, 1)).unwrap();
        assert!(rel_err(v, exact) <= 0.01, "{y:?}: {v} vs {exact}");
        assert!((v - exact).abs() <= 3.0 * err, "{y:?}: {v} ± {err} vs {exact}");
    }
}

#[test]
fn zero_input_gives_zero_convolution() {
    let mut funcs = orthogonal_planes(0.5);
    funcs[1].g = InputFunction::Grid(GridFunction::constant(vec![-0.5, -0.5], 0.5, vec![2, 2], 0.0).unwrap());
    let (v, _) = surface_convolution(&funcs, &[0.0; 3], 1e-3, &mc(100_000, 1)).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn convolution_is_translation_covariant() {
    let half = 0.5;
    let a = orthogonal_plane_slopes();
    let shifts = [[0.05, -0.02, 0.01], [-0.03, 0.04, 0.02], [0.01, 0.01, -0.03]];
    let moved: Vec<SurfaceFunction> = a
        .iter()
        .zip(&shifts)
        .map(|(aj, v)| {
            let lo = vec![-half + v[0], -half + v[1]];
            let dom = Region::new(lo.clone(), vec![half + v[0], half + v[1]]).unwrap();
            let c = v[2] - aj[0] * v[0] - aj[1] * v[1];
            let s = Hypersurface::flat(dom, c, aj, 1e-6).unwrap();
            SurfaceFunction::new(s, InputFunction::Box(BoxIndicator::cube(&lo, 2.0 * half).unwrap())).unwrap()
        })
        .collect();
    let y = [0.05, 0.0, -0.02];
    let total: Vec<f64> = (0..3).map(|k| y[k] + shifts.iter().map(|v| v[k]).sum::<f64>()).collect();
    let spec = QuadratureSpec::Midpoint { resolution: 48 };
    let (base, e0) = surface_convolution(&orthogonal_planes(half), &y, 1e-3, &spec).unwrap();
    let (shifted, e1) = surface_convolution(&moved, &total, 1e-3, &spec).unwrap();
    assert!((base - shifted).abs() <= 2.0 * (e0 + e1) + 1e-3 * base, "{base} vs {shifted}");
}

#[test]
fn convolution_requires_transversality() {
    let dom = Region::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
    let g = InputFunction::Box(BoxIndicator::cube(&[-0.5, -0.5], 1.0).unwrap());
    let same: Vec<_> = (0..3)
        .map(|_| SurfaceFunction::new(Hypersurface::flat(dom.clone(), 0.0, &[0.0, 0.0], 1e-6).unwrap(), g.clone()).unwrap())
        .collect();
    let r = surface_convolution(&same, &[0.0; 3], 1e-3, &mc(1000, 1));
    assert!(matches!(r, Err(BltError::Precondition(_))));
    let r = surface_convolution(&orthogonal_planes(0.5), &[0.0; 2], 1e-3, &mc(1000, 1));
    assert!(matches!(r, Err(BltError::DimensionMismatch { .. })));
}

/// The δ-integral of three flat planes, written as ∫_{ℝ³} ∏ f_j(B_j x) dx / |g_q|
/// after solving ⟨g, u⟩ + c0 = 0 for the coordinate q.
fn flat_reduction_datum(a: [[f64; 2]; 3]) -> (BLDatum, f64) {
    let g = [a[0][0] - a[2][0], a[0][1] - a[2][1], a[1][0] - a[2][0], a[1][1] - a[2][1]];
    let q = (0..4).max_by(|&x, &y| g[x].abs().total_cmp(&g[y].abs())).unwrap();
    let free: Vec<usize> = (0..4).filter(|&k| k != q).collect();
    let u = DMatrix::from_fn(4, 3, |r, c| if r == q { -g[free[c]] / g[q] } else if r == free[c] { 1.0 } else { 0.0 });
    let b1 = u.rows(0, 2).into_owned();
    let b2 = u.rows(2, 2).into_owned();
    let b3 = &b1 + &b2;
    (BLDatum::with_class_exponents(vec![b1, b2, b3]).unwrap(), g[q].abs())
}

#[test]
fn pointwise_convolution_within_flat_bound() {
    let half = 0.5;
    let a = orthogonal_plane_slopes();
    let (datum, slope) = flat_reduction_datum(a);
    let c = bl_constant_classc(&datum).unwrap();
    let norms = (4.0 * half * half as f64).sqrt().powi(3);
    let bound = 2.0 * c * norms;
    let funcs = orthogonal_planes(half);
    let spec = QuadratureSpec::Midpoint { resolution: 32 };
    for y in [[0.0, 0.0, 0.0], [0.2, 0.1, 0.0], [-0.3, 0.2, 0.1], [0.0, 0.0, 0.3]] {
        let (v, _) = surface_convolution(&funcs, &y, 1e-3, &spec).unwrap();
        assert!(v * slope <= bound, "{y:?}: {} > {bound}", v * slope);
    }
}

fn lift_field(d: usize, extra: &[(f64, Vec<u32>)]) -> ScalarField {
    let k = d - 1;
    let nv = k * k;
    let mut p = Polynomial::zero(nv);
    for j in 0..k {
        let mut pw = vec![0; nv];
        pw[j * k + j] = 1;
        p = p.with_term(1.0, pw).unwrap();
    }
    for (c, pw) in extra {
        p = p.with_term(*c, pw.clone()).unwrap();
    }
    ScalarField::new(p, 1.0, 1.0).unwrap()
}

#[test]
fn block_lift_d4_reproduces_kernel_list() {
    let f = lift_field(4, &[(0.3, vec![1, 1, 0, 0, 0, 0, 0, 0, 0]), (-0.2, vec![0, 0, 0, 2, 0, 0, 0, 0, 0])]);
    let b = block_lift(&f, 4).unwrap();
    assert_eq!(b.recipe.tuples, vec![vec![2, 3], vec![3, 0], vec![0, 1], vec![1, 2]]);
    assert_relative_eq!(b.recipe.power, 0.5);
    assert!(b.kernel_errors.iter().all(|&e| e <= 1e-8), "{:?}", b.kernel_errors);
    assert_eq!(b.kernel_dim_sum, 8);
    assert!(b.transversality.abs() > 1e-6);
    for (ker, map) in b.kernels.iter().zip(b.datum.maps()) {
        assert!((map * ker).abs().max() <= 1e-12);
    }
}

#[test]
fn block_lift_d3_is_the_original_maps() {
    let f = lift_field(3, &[(0.4, vec![1, 1, 0, 0])]);
    let b = block_lift(&f, 3).unwrap();
    assert_eq!(b.recipe.tuples, vec![vec![2], vec![0], vec![1]]);
    // B₁ = u₁, B₂ = (u₂,₁, η(x)) with ∇η(0) = −∇ₓF(0), B₃ = B₁ + B₂.
    let b1 = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let b2 = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, -1.0, 0.0, 0.0]);
    let b3 = &b1 + &b2;
    let maps = b.datum.maps();
    assert!((&maps[0] - &b3).abs().max() <= 1e-12);
    assert!((&maps[1] - &b1).abs().max() <= 1e-12);
    assert!((&maps[2] - &b2).abs().max() <= 1e-12);
    assert_eq!(b.kernel_dim_sum, 3);
}

#[test]
fn flat_block_lift_is_exact() {
    for d in 3..=4 {
        let b = block_lift(&lift_field(d, &[]), d).unwrap();
        assert!(b.kernel_errors.iter().all(|&e| e <= 1e-12), "d = {d}: {:?}", b.kernel_errors);
        assert_eq!(b.kernel_dim_sum, d * (d - 2));
    }
}

#[test]
fn block_lift_errors() {
    let f = lift_field(4, &[]);
    assert!(matches!(block_lift(&f, 2), Err(BltError::Input(_))));
    assert!(matches!(block_lift(&f, 3), Err(BltError::DimensionMismatch { .. })));
    let skew = ScalarField::new(Polynomial::affine(0.0, &[1.0, 0.5, 0.0, 1.0]), 1.0, 1.0).unwrap();
    assert!(matches!(block_lift(&skew, 3), Err(BltError::Precondition(_))));
}

fn flat_line() -> Hypersurface {
    Hypersurface::flat(interval(0.0, 1.0), 0.0, &[0.0], 1e-6).unwrap()
}

#[test]
fn extension_of_flat_segment() {
    let g = GridFunction::constant(vec![0.0], 0.1, vec![10], 1.0).unwrap();
    let e0 = extension_operator(&flat_line(), &g, &[0.0, 0.0]).unwrap();
    assert_relative_eq!(e0.re, 1.0, epsilon = 1e-14);
    assert!(e0.im.abs() <= 1e-14);
    let e = extension_operator(&flat_line(), &g, &[2.0 * std::f64::consts::PI, 0.0]).unwrap();
    assert!(e.norm() <= 1e-14, "{e}");
}

#[test]
fn extension_of_tilted_square_has_closed_form() {
    let dom = Region::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let s = Hypersurface::flat(dom, 0.3, &[0.5, -1.0], 1e-6).unwrap();
    let g = GridFunction::constant(vec![0.0, 0.0], 0.25, vec![4, 4], 1.0).unwrap();
    let xi = [3.0, -2.0, 1.5];
    let e = extension_operator(&s, &g, &xi).unwrap();
    let i = Complex64::new(0.0, 1.0);
    let mut expect = (i * xi[2] * 0.3).exp();
    for w in [xi[0] + xi[2] * 0.5, xi[1] - xi[2]] {
        expect *= ((i * w).exp() - 1.0) / (i * w);
    }
    assert!((e - expect).norm() <= 1e-13, "{e} vs {expect}");
}

fn parabola() -> Hypersurface {
    Hypersurface::new(interval(0.0, 1.0), Polynomial::zero(1).with_term(1.0, vec![2]).unwrap(), 1.0, 2.0).unwrap()
}

#[test]
fn extension_of_parabola_matches_refinement_oracle() {
    let g = GridFunction::constant(vec![0.0], 0.1, vec![10], 1.0).unwrap();
    for lam in [1.0, 5.0, 20.0, 50.0] {
        let e = extension_operator(&parabola(), &g, &[0.0, lam]).unwrap();
        let oracle = simpson(&|x: f64| Complex64::from_polar(1.0, lam * x * x), 0.0, 1.0, 1e-12);
        assert!((e - oracle).norm() <= 1e-6, "λ = {lam}: {e} vs {oracle}");
    }
    assert_relative_eq!(extension_operator(&parabola(), &g, &[0.0, 1.0]).unwrap().re, 0.904_524_237_9, epsilon = 1e-9);
}

#[test]
fn extension_with_varying_density() {
    let mut r = rng(6);
    let values: Vec<f64> = (0..8).map(|_| rand::Rng::random::<f64>(&mut r)).collect();
    let g = GridFunction::new(vec![0.0], 0.125, vec![8], values.clone()).unwrap();
    let xi = [3.0, 30.0];
    let e = extension_operator(&parabola(), &g, &xi).unwrap();
    let mut oracle = Complex64::new(0.0, 0.0);
    for (c, v) in values.iter().enumerate() {
        let a = 0.125 * c as f64;
        oracle += simpson(&|x: f64| Complex64::from_polar(1.0, xi[0] * x + xi[1] * x * x), a, a + 0.125, 1e-13) * *v;
    }
    assert!((e - oracle).norm() <= 1e-6, "{e} vs {oracle}");
}

#[test]
fn extension_refuses_huge_frequencies() {
    let g = GridFunction::constant(vec![0.0], 0.1, vec![10], 1.0).unwrap();
    assert!(matches!(extension_operator(&parabola(), &g, &[0.0, 1e9]), Err(BltError::Refused(_))));
    assert!(matches!(extension_operator(&parabola(), &g, &[0.0]), Err(BltError::DimensionMismatch { .. })));
}

fn crossing_segments(g2: f64) -> Vec<SurfaceFunction> {
    vec![segment(1.0, unit_grid(1.0)), segment(-1.0, unit_grid(g2))]
}

#[test]
fn bridge_bridge_shrinks() {
    let spec = QuadratureSpec::Midpoint { resolution: 8 };
    let coarse = verify_extension_bridge(&crossing_segments(1.0), 128, 1e-3, &spec).unwrap();
    let fine = verify_extension_bridge(&crossing_segments(1.0), 256, 1e-3, &spec).unwrap();
    assert!(fine.bridge_error <= 0.05, "{fine:?}");
    assert!(fine.bridge_error < coarse.bridge_error);
    // |h|² = 1/2 on a unit-area diamond for slopes ±1.
    assert_relative_eq!(fine.convolution_norm, 0.5f64.sqrt(), max_relative = 1e-6);
    assert_relative_eq!(fine.exponent, 2.0);
    assert_relative_eq!(fine.convention_constant, 1.0 / (2.0 * std::f64::consts::PI));
    let change = rel_err(coarse.ratio, fine.ratio);
    assert!(change < 0.10, "ratio moved by {change}");
}

#[test]
fn bridge_with_zero_input() {
    let spec = QuadratureSpec::Midpoint { resolution: 8 };
    let r = verify_extension_bridge(&crossing_segments(0.0), 32, 1e-3, &spec).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert_eq!(r.convolution_norm, 0.0);
    assert_eq!(r.ratio, 0.0);
}

#[test]
fn bridge_refuses_tiny_boxes_and_box_inputs() {
    let spec = QuadratureSpec::Midpoint { resolution: 8 };
    assert!(matches!(verify_extension_bridge(&crossing_segments(1.0), 4, 1e-3, &spec), Err(BltError::Refused(_))));
    let boxed = vec![
        SurfaceFunction::new(
            Hypersurface::flat(interval(0.0, 1.0), 0.0, &[1.0], 1e-6).unwrap(),
            InputFunction::Box(BoxIndicator::cube(&[0.0], 1.0).unwrap()),
        )
        .unwrap(),
        segment(-1.0, unit_grid(1.0)),
    ];
    assert!(matches!(verify_extension_bridge(&boxed, 64, 1e-3, &spec), Err(BltError::Input(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segment_convolution_is_inverse_slope_gap(a1 in 0.2f64..2.0, a2 in -2.0f64..-0.2, t in 0.2f64..0.8) {
        // Two lines through the origin over [0,1]; at y on the diagonal of the
        // parameter square the convolution is 1/|a1 − a2|.
        let funcs = vec![segment(a1, unit_grid(1.0)), segment(a2, unit_grid(1.0))];
        let y = [2.0 * t, (a1 + a2) * t];
        let (v, _) = surface_convolution(&funcs, &y, 1e-3, &QuadratureSpec::Midpoint { resolution: 4 }).unwrap();
        prop_assert!((v - 1.0 / (a1 - a2).abs()).abs() <= 1e-12);
    }

    #[test]
    fn extension_is_linear_in_g(seed in any::<u64>(), x0 in -5.0f64..5.0, x1 in -20.0f64..20.0, c in 0.0f64..2.0) {
        let mut r = rng(seed);
        let mk = |r: &mut rand_chacha::ChaCha8Rng| {
            let v: Vec<f64> = (0..4).map(|_| rand::Rng::random::<f64>(r)).collect();
            GridFunction::new(vec![0.0], 0.25, vec![4], v).unwrap()
        };
        let (g1, g2) = (mk(&mut r), mk(&mut r));
        let sum: Vec<f64> = g1.values().iter().zip(g2.values()).map(|(a, b)| a + c * b).collect();
        let g3 = GridFunction::new(vec![0.0], 0.25, vec![4], sum).unwrap();
        let xi = [x0, x1];
        let e = |g: &GridFunction| extension_operator(&parabola(), g, &xi).unwrap();
        prop_assert!((e(&g3) - (e(&g1) + e(&g2) * c)).norm() <= 1e-10);
    }
}
