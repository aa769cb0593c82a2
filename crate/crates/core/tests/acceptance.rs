//! The acceptance criteria, one line per criterion. Run with
//! `cargo test --test acceptance`; exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use blt_core::convext::{surface_convolution, verify_extension_bridge, Hypersurface, SurfaceFunction};
use blt_core::datum::*;
use blt_core::ift::{eta_gradient, ift_radii, solve_eta};
use blt_core::quadrature::*;
use blt_core::scales::*;
use common::*;
use nalgebra::DMatrix;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn class_c_dims<R: Rng>(rng: &mut R) -> Vec<usize> {
    let d = rng.random_range(3..=5);
    loop {
        let mut dims = Vec::new();
        let mut left = d;
        while left > 0 {
            let k = rng.random_range(1..=left.min(d - 1));
            dims.push(k);
            left -= k;
        }
        if dims.len() >= 2 {
            return dims;
        }
    }
}

fn finner() -> Check {
    let scheme = ProjectionScheme::loomis_whitney(3).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let mut r = rng(1000 + trial);
        let arrays: Vec<LatticeArray> = (0..3)
            .map(|_| LatticeArray::new(vec![4, 4], (0..16).map(|_| r.random::<f64>()).collect()).unwrap())
            .collect();
        let (lhs, rhs) = discrete_finner(&arrays, &scheme).map_err(|e| e.to_string())?;
        ensure(lhs <= rhs * (1.0 + 1e-12), || format!("trial {trial}: {lhs} > {rhs}"))?;
        worst = worst.max(lhs / rhs);
    }
    let ones = LatticeArray::new(vec![4, 4], vec![1.0; 16]).unwrap();
    let (lhs, rhs) = discrete_finner(&[ones.clone(), ones.clone(), ones], &scheme).map_err(|e| e.to_string())?;
    ensure(rel_err(lhs, rhs) <= 1e-14, || format!("constant inputs: {lhs} vs {rhs}"))?;
    Ok(format!("200 trials, max lhs/rhs {worst:.6}; constants {lhs} = {rhs}"))
}

fn extremizers() -> Check {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let dims = class_c_dims(&mut r);
        let d = random_class_c(&dims, &mut r).map_err(|e| e.to_string())?;
        let (_, ratio) = canonical_extremizer(&d).map_err(|e| e.to_string())?;
        let c = bl_constant_classc(&d).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(ratio, c));
    }
    ensure(worst <= 1e-10, || format!("relative error {worst:e}"))?;
    Ok(format!("50 data, max relative error {worst:.2e}"))
}

fn gaussians() -> Check {
    for dims in [vec![1, 1, 1], vec![1, 2], vec![1, 1, 1, 1], vec![2, 1, 2]] {
        let datum = ProjectionScheme::from_kernel_dims(&dims).and_then(|s| s.datum()).map_err(|e| e.to_string())?;
        let eye: Vec<_> = datum.target_dims().iter().map(|&k| DMatrix::identity(k, k)).collect();
        let g = gaussian_ratio(&datum, &eye).map_err(|e| e.to_string())?;
        ensure((g - 1.0).abs() <= 1e-10, || format!("{dims:?}: gaussian ratio {g}"))?;
    }
    let mut r = rng(3);
    let mut lowest = f64::INFINITY;
    let mut highest = f64::NEG_INFINITY;
    for t in 0..20 {
        let dims = class_c_dims(&mut r);
        let d = random_class_c(&dims, &mut r).map_err(|e| e.to_string())?;
        let c = bl_constant_classc(&d).map_err(|e| e.to_string())?;
        let s = search_bl_constant(&d, 2000, 100 + t).map_err(|e| e.to_string())?;
        let q = s.estimate / c;
        lowest = lowest.min(q);
        highest = highest.max(q);
        ensure(q >= 0.99, || format!("datum {t} {dims:?}: search reached {q:.4} of the constant"))?;
        ensure(s.estimate <= c * (1.0 + 1e-9), || format!("datum {t}: estimate {} exceeds {c}", s.estimate))?;
    }
    Ok(format!("identity ratio 1; search/constant in [{lowest:.4}, {highest:.10}]"))
}

fn scaling() -> Check {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dims = class_c_dims(&mut r);
        let d = random_class_c(&dims, &mut r).map_err(|e| e.to_string())?;
        let c = random_invertible(d.d(), &mut r);
        let cj: Vec<_> = d.target_dims().iter().map(|&k| random_invertible(k, &mut r)).collect();
        let (t, scale) = transform_datum(&d, &c, &cj).map_err(|e| e.to_string())?;
        let ratio = bl_constant_classc(&t).map_err(|e| e.to_string())? / bl_constant_classc(&d).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(scale, ratio));
    }
    ensure(worst <= 1e-9, || format!("relative error {worst:e}"))?;
    Ok(format!("100 transforms, max relative error {worst:.2e}"))
}

fn r5_lift() -> Check {
    let maps: Vec<DMatrix<f64>> = (0..5)
        .map(|j| {
            let keep = [(j + 3) % 5, (j + 4) % 5];
            DMatrix::from_fn(2, 5, |row, col| if keep[row] == col { 1.0 } else { 0.0 })
        })
        .collect();
    let scheme: Vec<Vec<usize>> = (0..5).map(|j| vec![j, (j + 2) % 5]).collect();
    let (lifted, _) = tensor_lift(&maps, &scheme).map_err(|e| e.to_string())?;
    ensure(is_class_c(&lifted).is_class_c, || "lifted datum is not class C".into())?;
    let mut worst: f64 = 0.0;
    for (j, b) in lifted.maps().iter().enumerate() {
        let k = (j + 2) % 5;
        worst = worst.max(b.column(k).norm());
        let sv = b.clone().svd(false, false).singular_values;
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(b.nrows() == 4 && smallest > 1e-10, || format!("map {j} has rank below 4"))?;
    }
    ensure(worst <= 1e-10, || format!("kernel residual {worst:e}"))?;
    Ok(format!("kernels ⟨e_(j+2 mod 5)⟩, residual {worst:.1e}"))
}

fn instance() -> (ScaleParams, Vec<NonlinearMap>, Cube, Vec<GridFunction>) {
    let p = compute_delta0(1.0, 1.0, 1.25, 1.5, 3, 3).unwrap();
    let maps = perturbed_loomis_whitney(0.25).unwrap();
    let cube = Cube::new(vec![0.0; 3], p.delta0).unwrap();
    let mut r = rng(7);
    let inputs = (0..3).map(|_| random_grid(vec![-p.delta0, -p.delta0], p.delta0 / 8.0, vec![16, 16], &mut r)).collect();
    (p, maps, cube, inputs)
}

fn decomposition() -> Check {
    let (p, maps, cube, inputs) = instance();
    let dec = decompose_cube(&maps, &inputs, &cube, &p, p.delta0).map_err(|e| e.to_string())?;
    let check = dec.check();
    ensure(check.holds(), || format!("{check:?}"))?;
    let steps: usize = dec.sequences.iter().map(|s| s.steps.len()).sum();
    for s in &dec.sequences {
        for st in &s.steps {
            let (coarse, fine, _) = p.widths(p.delta0);
            ensure(st.s_n + 0.5 * coarse <= st.s_next && st.s_next <= st.s_n + coarse, || "spacing".into())?;
            let direct = slab_mass(&inputs[s.map], s, st.s_next, st.s_next + fine);
            ensure(direct <= s.factor * st.reference_mass, || format!("axis {}: mass {direct:e}", s.axis))?;
        }
    }
    let mut r = rng(11);
    for _ in 0..10_000 {
        let x = cube.sample(&mut r);
        let (n, chi) = dec.locate(&x).ok_or("a point of Q has no cell")?;
        for i in 0..3 {
            let s = dec.frame.slab_coordinate(i, &x);
            let hits = (0..2u8)
                .flat_map(|c| (0..dec.count(i, c)).map(move |k| (k, c)))
                .filter(|&(k, c)| {
                    let (lo, hi) = dec.interval(i, k, c);
                    lo < s && s <= hi
                })
                .count();
            ensure(hits == 1, || format!("axis {i}: {hits} intervals contain {s:e}"))?;
        }
        ensure(dec.cell_volume(&n, &chi) > 0.0, || "empty cell".into())?;
    }
    let mut offset: f64 = 0.0;
    for j in 0..3 {
        let (_, c) = phi_factorization(&maps[j], &dec.scheme, j, &cube, &p, 10_000, 20 + j as u64).map_err(|e| e.to_string())?;
        ensure(c.holds && c.max_offset <= c.offset_bound, || format!("Φ_{j}: {c:?}"))?;
        offset = offset.max(c.max_offset / c.offset_bound);
    }
    let mut pairs = 0;
    for j in 0..3 {
        let rep = verify_disjointness(&maps, &dec, j, &[0, 0, 0], 100_000, 30 + j as u64).map_err(|e| e.to_string())?;
        ensure(rep.violations == 0, || format!("map {j}: {} violations", rep.violations))?;
        pairs += rep.pairs;
    }
    let cont = verify_slab_containment(&maps, &dec, 10_000, 5);
    ensure(cont.violations == 0, || format!("{} slab violations", cont.violations))?;
    Ok(format!(
        "{steps} pigeonhole steps certified; 10⁴ points covered once; Φ offset ≤ {offset:.3} of bound; {pairs} pairs disjoint"
    ))
}

fn nonlinear_bl() -> Check {
    let (p, maps, _, inputs) = instance();
    let inputs: Vec<InputFunction> = inputs.into_iter().map(InputFunction::Grid).collect();
    let rep = verify_nonlinear_bl(&maps, &[0.0; 3], &inputs, &p, &QuadratureSpec::Midpoint { resolution: 32 })
        .map_err(|e| e.to_string())?;
    let gamma = (p.alpha1 - p.alpha0) / (p.m - 1) as f64;
    let tend = 10f64.powi(p.d as i32);
    let log_bound = tend.ln() + tend * p.delta0.powf(gamma) / (1.0 - 2f64.powf(-gamma));
    ensure(rel_err(rep.log_bound, log_bound) <= 1e-12, || format!("bound {} vs {log_bound}", rep.log_bound))?;
    ensure(rep.ratio.ln() < log_bound && rep.log_margin > 0.0, || format!("{rep:?}"))?;
    Ok(format!("ratio {:.6} against ln bound {:.3}, margin {:.3}", rep.ratio, rep.log_bound, rep.log_margin))
}

fn ift() -> Check {
    let tol = 1e-12;
    let mut r = rng(8);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for (k, f) in ift_fields().iter().enumerate() {
        let (r1, r2) = ift_radii(f.beta(), f.kappa()).map_err(|e| e.to_string())?;
        let cap = (r2 / tol).log2().ceil() as usize + 1;
        for _ in 0..20 {
            let x = sample_ball(f.n(), r1, &mut r);
            let s = solve_eta(f, &x, tol, None).map_err(|e| format!("field {k}: {e}"))?;
            ensure(s.cap == cap && s.iterations <= cap, || format!("field {k}: {} iterations, cap {cap}", s.iterations))?;
            ensure(s.residual <= tol, || format!("field {k}: residual {:e}", s.residual))?;
            ensure(s.max_abs_iterate <= r2, || format!("field {k}: iterate {:e} outside R2", s.max_abs_iterate))?;
            ensure(s.max_ratio <= 0.5 + 1e-9, || format!("field {k}: ratio {}", s.max_ratio))?;
            worst_ratio = worst_ratio.max(s.max_ratio);
            let eta = |y: &[f64]| solve_eta(f, y, 1e-18, Some(400)).map(|s| s.eta).unwrap_or(f64::NAN);
            let fd = central_difference(eta, &x, 1e-3 * r1);
            let g = eta_gradient(f, &x, eta(&x)).map_err(|e| e.to_string())?;
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst_fd = worst_fd.max(err / scale);
        }
    }
    ensure(worst_fd <= 1e-6, || format!("gradient vs differences {worst_fd:e}"))?;
    Ok(format!("5 fields × 20 points; max ratio {worst_ratio:.2e}; gradient error {worst_fd:.2e}"))
}

fn planes() -> Check {
    let half = 0.5;
    let exact = flat_convolution_oracle(orthogonal_plane_slopes(), half, [0.0; 3]);
    let spec = QuadratureSpec::MonteCarlo { samples: 1_000_000, seed: 9 };
    let (v, err) = surface_convolution(&orthogonal_planes(half), &[0.0; 3], 1e-3, &spec).map_err(|e| e.to_string())?;
    let rel = rel_err(v, exact);
    ensure(rel <= 0.01 && (v - exact).abs() <= 3.0 * err, || format!("{v} ± {err} vs {exact}"))?;
    Ok(format!("{v:.6} ± {err:.1e} vs exact {exact:.6} ({:.2}%)", 100.0 * rel))
}

fn bridge() -> Check {
    let seg = |slope: f64| {
        let dom = Region::new(vec![0.0], vec![1.0]).unwrap();
        let g = GridFunction::constant(vec![0.0], 1.0, vec![1], 1.0).unwrap();
        SurfaceFunction::new(Hypersurface::flat(dom, 0.0, &[slope], 1e-6).unwrap(), InputFunction::Grid(g)).unwrap()
    };
    let funcs = [seg(1.0), seg(-1.0)];
    let spec = QuadratureSpec::Midpoint { resolution: 8 };
    let a = verify_extension_bridge(&funcs, 256, 1e-3, &spec).map_err(|e| e.to_string())?;
    let b = verify_extension_bridge(&funcs, 512, 1e-3, &spec).map_err(|e| e.to_string())?;
    ensure(a.bridge_error <= 0.05, || format!("bridge {} at 256", a.bridge_error))?;
    ensure(b.bridge_error < a.bridge_error, || format!("bridge {} at 512 vs {}", b.bridge_error, a.bridge_error))?;
    Ok(format!("bridge {:.4} at 256, {:.4} at 512", a.bridge_error, b.bridge_error))
}

fn ball() -> Check {
    let datum = lw_datum(3);
    let mut worst = f64::INFINITY;
    for trial in 0..50 {
        let mut r = rng(500 + trial);
        let mut grids = || -> Vec<GridFunction> { (0..3).map(|_| random_grid(vec![0.0, 0.0], 0.25, vec![4, 4], &mut r)).collect() };
        let f = grids();
        let fp = grids();
        let x = ball_grid(&datum, &f, &fp, 8).map_err(|e| e.to_string())?;
        let rep = ball_inequality_report(&datum, &f, &fp, &x).map_err(|e| e.to_string())?;
        ensure(rep.slack >= -5e-2, || format!("trial {trial}: slack {}", rep.slack))?;
        worst = worst.min(rep.slack);
        let ext = vec![GridFunction::constant(vec![0.0, 0.0], 0.25, vec![4, 4], 1.0).unwrap(); 3];
        let x = ball_grid(&datum, &f, &ext, 8).map_err(|e| e.to_string())?;
        let rep = ball_inequality_report(&datum, &f, &ext, &x).map_err(|e| e.to_string())?;
        ensure(rep.lhs <= rep.sup_term * (1.0 + 1e-12), || format!("trial {trial}: extremizer variant {} > {}", rep.lhs, rep.sup_term))?;
    }
    Ok(format!("50/50 trials, smallest slack {worst:.4}; extremizer variant holds"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, fn() -> Check); 11] = [
        ("discrete Finner", Some(Duration::from_secs(1)), finner),
        ("closed form vs extremizer", Some(Duration::from_secs(5)), extremizers),
        ("gaussian extremality", Some(Duration::from_secs(30)), gaussians),
        ("scaling law", None, scaling),
        ("R^5 tensor lift", None, r5_lift),
        ("decomposition certificates", Some(Duration::from_secs(60)), decomposition),
        ("nonlinear BL bound", Some(Duration::from_secs(60)), nonlinear_bl),
        ("quantitative IFT", Some(Duration::from_secs(5)), ift),
        ("flat singular convolution", None, planes),
        ("Plancherel bridge", Some(Duration::from_secs(120)), bridge),
        ("Ball check", None, ball),
    ];
    let mut failed = 0;
    for (k, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let over = limit.is_some_and(|l| elapsed > l);
        let (status, detail) = match (&outcome, over) {
            (Ok(msg), false) => ("PASS", msg.clone()),
            (Ok(msg), true) => ("FAIL", format!("{msg}; over the {:?} limit", limit.unwrap())),
            (Err(msg), _) => ("FAIL", msg.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {:>2} {name:<28} {:>8.2}s  {detail}", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
