//! Independent oracles shared by the integration tests. Nothing here calls
//! into the algorithms it is used to check.

#![allow(dead_code)]

use blt_core::convext::{Hypersurface, SurfaceFunction};
use blt_core::{BLDatum, BoxIndicator, InputFunction, Polynomial, Region, ScalarField};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Coordinate projection deleting coordinate `k` of ℝ^d.
pub fn delete_coordinate(d: usize, k: usize) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..d).filter(|&i| i != k).collect();
    DMatrix::from_fn(d - 1, d, |r, c| if keep[r] == c { 1.0 } else { 0.0 })
}

pub fn lw_maps(d: usize) -> Vec<DMatrix<f64>> {
    (0..d).map(|k| delete_coordinate(d, k)).collect()
}

pub fn lw_datum(d: usize) -> BLDatum {
    BLDatum::with_class_exponents(lw_maps(d)).unwrap()
}

/// Haar-ish random orthogonal matrix from Gram–Schmidt on uniform entries.
pub fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for c in 0..d {
            let mut v = m.column(c).into_owned();
            for q in &cols {
                v -= q * q.dot(&v);
            }
            let n = v.norm();
            if n < 1e-3 {
                break;
            }
            cols.push(v / n);
        }
        if cols.len() == d {
            return DMatrix::from_columns(&cols);
        }
    }
}

pub fn random_invertible<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |i, j| if i == j { 1.5 } else { 0.0 } + rng.random_range(-1.0..1.0));
        if leibniz_det(&m).abs() > 0.1 {
            return m;
        }
    }
}

/// Determinant by the permutation expansion.
pub fn leibniz_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    permutations(&mut perm, 0, &mut |p| {
        let mut inv = 0;
        for a in 0..n {
            for b in a + 1..n {
                if p[a] > p[b] {
                    inv += 1;
                }
            }
        }
        let sign = if inv % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (0..n).map(|i| m[(i, p[i])]).product::<f64>();
    });
    total
}

fn permutations(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// The minor of `b` on the listed columns.
pub fn minor(b: &DMatrix<f64>, cols: &[usize]) -> f64 {
    let sub = DMatrix::from_fn(b.nrows(), cols.len(), |r, c| b[(r, cols[c])]);
    leibniz_det(&sub)
}

/// All strictly increasing k-subsets of 0..d.
pub fn subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << d) {
        if mask.count_ones() as usize == k {
            out.push((0..d).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// Σ_n ∏_j f_j(π_j n)^{1/(m−1)} over the full lattice box, with f_j a
/// closure on the kept coordinates.
pub fn brute_force_finner(d: usize, side: usize, blocks: &[Vec<usize>], f: &[Vec<f64>]) -> (f64, f64) {
    let m = blocks.len();
    let p = 1.0 / (m as f64 - 1.0);
    let kept: Vec<Vec<usize>> = blocks.iter().map(|b| (0..d).filter(|i| !b.contains(i)).collect()).collect();
    let mut lhs = 0.0;
    let total = side.pow(d as u32);
    for t in 0..total {
        let n: Vec<usize> = (0..d).map(|a| (t / side.pow((d - 1 - a) as u32)) % side).collect();
        let mut prod = 1.0;
        for j in 0..m {
            let mut idx = 0;
            for &k in &kept[j] {
                idx = idx * side + n[k];
            }
            prod *= f[j][idx].powf(p);
        }
        lhs += prod;
    }
    let rhs = f.iter().map(|v| v.iter().sum::<f64>().powf(p)).product();
    (lhs, rhs)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for c in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        x[c] = det(m) / d;
    }
    Some(x)
}

/// Volume of the bounded polytope {x ∈ ℝ³ : ⟨a_i, x⟩ ≤ b_i} by vertex
/// enumeration and a fan of pyramids over its facets.
pub fn polytope_volume_3d(a: &[[f64; 3]], b: &[f64]) -> f64 {
    let tol = 1e-9;
    let n = a.len();
    let mut verts: Vec<[f64; 3]> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let Some(x) = solve3([a[i], a[j], a[k]], [b[i], b[j], b[k]]) else { continue };
                let feasible = (0..n).all(|r| dot3(a[r], x) <= b[r] + tol);
                if feasible && !verts.iter().any(|v| dist3(*v, x) < 1e-9) {
                    verts.push(x);
                }
            }
        }
    }
    if verts.len() < 4 {
        return 0.0;
    }
    let c = verts.iter().fold([0.0; 3], |acc, v| [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]);
    let c = [c[0] / verts.len() as f64, c[1] / verts.len() as f64, c[2] / verts.len() as f64];
    let mut vol = 0.0;
    let mut seen: Vec<([f64; 3], f64)> = Vec::new();
    for i in 0..n {
        let norm = dot3(a[i], a[i]).sqrt();
        let unit = [a[i][0] / norm, a[i][1] / norm, a[i][2] / norm];
        let off = b[i] / norm;
        if seen.iter().any(|(u, o)| dist3(*u, unit) < 1e-12 && (o - off).abs() < 1e-12) {
            continue;
        }
        seen.push((unit, off));
        let face: Vec<[f64; 3]> = verts.iter().copied().filter(|v| (dot3(unit, *v) - off).abs() < 1e-8).collect();
        if face.len() < 3 {
            continue;
        }
        let fc = face.iter().fold([0.0; 3], |acc, v| [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]);
        let fc = [fc[0] / face.len() as f64, fc[1] / face.len() as f64, fc[2] / face.len() as f64];
        let e1 = normalize(sub3(face[0], fc));
        let e2 = cross3(unit, e1);
        let mut angled: Vec<(f64, [f64; 2])> = face
            .iter()
            .map(|v| {
                let w = sub3(*v, fc);
                let p = [dot3(w, e1), dot3(w, e2)];
                (p[1].atan2(p[0]), p)
            })
            .collect();
        angled.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut area = 0.0;
        for t in 0..angled.len() {
            let p = angled[t].1;
            let q = angled[(t + 1) % angled.len()].1;
            area += p[0] * q[1] - p[1] * q[0];
        }
        area = 0.5 * area.abs();
        vol += area * (off - dot3(unit, c)) / 3.0;
    }
    vol
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    dot3(sub3(a, b), sub3(a, b)).sqrt()
}

/// ∫_{ℝ⁴} δ(⟨g, u⟩ + c0) ∏ 1[⟨w_i, u⟩ ≤ r_i] du for a bounded constraint
/// set: the 3-volume of the slice projected along the coordinate with the
/// largest |g_k|, divided by that |g_k|.
pub fn linear_slice_integral(g: [f64; 4], c0: f64, constraints: &[([f64; 4], f64)]) -> f64 {
    let q = (0..4).max_by(|&x, &y| g[x].abs().total_cmp(&g[y].abs())).unwrap();
    let rest: Vec<usize> = (0..4).filter(|&k| k != q).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (w, r) in constraints {
        // u_q = −(c0 + Σ_{k≠q} g_k u_k)/g_q
        let mut row = [0.0; 3];
        for (t, &k) in rest.iter().enumerate() {
            row[t] = w[k] - w[q] * g[k] / g[q];
        }
        a.push(row);
        b.push(r + w[q] * c0 / g[q]);
    }
    polytope_volume_3d(&a, &b) / g[q].abs()
}

/// Constraints |u_k| ≤ h_k on each coordinate of ℝ⁴ and
/// |s_a − (u_a + u_{2+a})| ≤ h_s for a = 0, 1.
pub fn convolution_constraints(half: f64, shift: [f64; 2]) -> Vec<([f64; 4], f64)> {
    let mut out = Vec::new();
    for k in 0..4 {
        let mut w = [0.0; 4];
        w[k] = 1.0;
        out.push((w, half));
        w[k] = -1.0;
        out.push((w, half));
    }
    for a in 0..2 {
        let mut w = [0.0; 4];
        w[a] = 1.0;
        w[2 + a] = 1.0;
        out.push((w, half + shift[a]));
        out.push(([-w[0], -w[1], -w[2], -w[3]], half - shift[a]));
    }
    out
}

/// Orthonormal frame whose vectors all make angle arccos(1/√3) with e₃:
/// the Householder reflection taking (1,1,1)/√3 to e₃.
pub fn tilted_frame() -> [[f64; 3]; 3] {
    let s = 1.0 / 3f64.sqrt();
    let v = [s, s, s - 1.0];
    let vv = dot3(v, v);
    let mut n = [[0.0; 3]; 3];
    for (j, col) in n.iter_mut().enumerate() {
        for i in 0..3 {
            col[i] = if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vv;
        }
    }
    n
}

/// Slopes a_j of the three planes ⟂ the tilted frame, as graphs
/// x₃ = ⟨a_j, x′⟩.
pub fn orthogonal_plane_slopes() -> [[f64; 2]; 3] {
    let n = tilted_frame();
    let mut a = [[0.0; 2]; 3];
    for j in 0..3 {
        a[j] = [-n[j][0] / n[j][2], -n[j][1] / n[j][2]];
    }
    a
}

/// Three mutually orthogonal planes through 0 carrying the indicator of
/// [−h, h]² in their parameter domains.
pub fn orthogonal_planes(half: f64) -> Vec<SurfaceFunction> {
    orthogonal_plane_slopes()
        .iter()
        .map(|a| {
            let dom = Region::new(vec![-half; 2], vec![half; 2]).unwrap();
            let s = Hypersurface::flat(dom, 0.0, a, 1e-6).unwrap();
            let g = InputFunction::Box(BoxIndicator::cube(&[-half, -half], 2.0 * half).unwrap());
            SurfaceFunction::new(s, g).unwrap()
        })
        .collect()
}

/// Closed form of f₁dσ₁ * f₂dσ₂ * f₃dσ₃ (y) for three flat graphs
/// x₃ = ⟨a_j, x′⟩ carrying indicators of [−h, h]².
pub fn flat_convolution_oracle(a: [[f64; 2]; 3], half: f64, y: [f64; 3]) -> f64 {
    // F(x₁′, x₂′) = ⟨a₁,x₁′⟩ + ⟨a₂,x₂′⟩ + ⟨a₃, y′ − x₁′ − x₂′⟩ − y₃
    let g = [a[0][0] - a[2][0], a[0][1] - a[2][1], a[1][0] - a[2][0], a[1][1] - a[2][1]];
    let c0 = a[2][0] * y[0] + a[2][1] * y[1] - y[2];
    linear_slice_integral(g, c0, &convolution_constraints(half, [y[0], y[1]]))
}

/// Gaussian-mollified δ: ∫_W g(u) φ_ε(F(u)) du by seeded Monte Carlo,
/// extrapolated to ε → 0 from ε and ε/2 (the mollifier error is O(ε²)).
pub fn mollified_delta<F, G>(f: F, g: G, lo: &[f64], hi: &[f64], eps: f64, samples: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let mut r = rng(seed);
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let phi = |t: f64, e: f64| (-0.5 * (t / e).powi(2)).exp() / (e * (2.0 * std::f64::consts::PI).sqrt());
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut u = vec![0.0; lo.len()];
    for _ in 0..samples {
        for k in 0..lo.len() {
            u[k] = r.random_range(lo[k]..hi[k]);
        }
        let w = g(&u);
        if w == 0.0 {
            continue;
        }
        let t = f(&u);
        s1 += w * phi(t, eps);
        s2 += w * phi(t, 0.5 * eps);
    }
    let i1 = s1 * vol / samples as f64;
    let i2 = s2 * vol / samples as f64;
    (4.0 * i2 - i1) / 3.0
}

/// Adaptive Simpson for a complex integrand on [a, b].
pub fn simpson<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, tol: f64) -> Complex64 {
    fn rec<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, fa: Complex64, fm: Complex64, fb: Complex64, whole: Complex64, tol: f64, depth: u32) -> Complex64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
        let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
        let delta = left + right - whole;
        if depth == 0 || delta.norm() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (fa + fm * 4.0 + fb) * ((b - a) / 6.0);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[k] += h;
            q[k] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

/// Root of a continuous function with a sign change on [lo, hi].
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn sample_ball<R: Rng>(n: usize, r: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() < r * r {
            return x;
        }
    }
}

/// Five normalized fields in (x, η), each with a declared Hölder bound on dF
/// that the Hessian respects on the relevant ball.
pub fn ift_fields() -> Vec<ScalarField> {
    let field = |p: Polynomial, kappa: f64| ScalarField::new(p, 1.0, kappa).unwrap();
    vec![
        field(Polynomial::affine(0.0, &[-0.3, 0.7, 1.0]), 0.1),
        field(Polynomial::affine(0.0, &[0.0, 0.0, 1.0]).with_term(1.0, vec![2, 0, 0]).unwrap(), 2.0),
        field(
            Polynomial::affine(0.0, &[0.0, 0.0, 1.0])
                .with_term(1.0, vec![1, 1, 0])
                .unwrap()
                .with_term(0.1, vec![0, 0, 2])
                .unwrap(),
            1.0,
        ),
        field(
            Polynomial::affine(0.0, &[0.3, -0.2, 0.0, 1.0])
                .with_term(1.0, vec![1, 0, 0, 1])
                .unwrap()
                .with_term(0.5, vec![0, 0, 2, 0])
                .unwrap(),
            1.0,
        ),
        field(
            Polynomial::affine(0.0, &[0.5, 1.0]).with_term(0.5, vec![0, 2]).unwrap().with_term(1.0, vec![3, 0]).unwrap(),
            1.5,
        ),
    ]
}
