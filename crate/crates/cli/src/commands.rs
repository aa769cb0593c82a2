//! One function per subcommand. Each parses its document, calls the
//! matching library operation and shapes the result as JSON.

use blt_core::convext::{extension_operator, surface_convolution, verify_extension_bridge, BRIDGE_REFUSAL};
use blt_core::datum::{bl_constant_classc, is_class_c, reduce_to_projections, search_bl_constant};
use blt_core::ift::{eta_gradient, ift_radii, solve_eta};
use blt_core::quadrature::{ball_grid, ball_inequality_report, canonical_extremizer, discrete_finner, LatticeArray};
use blt_core::scales::{compute_delta0, decompose_cube, verify_induction_step, verify_nonlinear_bl, Decomposition};
use blt_core::{convext::delta_integral, BLDatum, InputFunction, ScaleParams};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::schema::*;
use crate::{Command, Context, RunError, Status};

type Outcome = Result<(Status, Value), RunError>;

pub fn dispatch(ctx: &mut Context) -> Outcome {
    match ctx.config.command.clone() {
        Command::BlConstant => bl_constant(ctx),
        Command::CheckClassC => check_class_c(ctx),
        Command::Reduce => reduce(ctx),
        Command::GaussianSearch { budget } => gaussian_search(ctx, budget),
        Command::FinnerDiscrete => finner(ctx),
        Command::Extremizer => extremizer(ctx),
        Command::BallCheck => ball_check(ctx),
        Command::Delta0 { beta, kappa, alpha0, alpha1, d, m } => delta0(ctx, beta, kappa, alpha0, alpha1, d, m),
        Command::Decompose => decompose(ctx),
        Command::VerifyStep => verify_step(ctx),
        Command::VerifyNonlinear => verify_nonlinear(ctx),
        Command::IftSolve => ift_solve(ctx),
        Command::DeltaIntegral => delta_integral_cmd(ctx),
        Command::ConvolveSurfaces => convolve(ctx),
        Command::Extension => extension(ctx),
        Command::VerifyThm74 => bridge(ctx),
    }
}

fn datum(ctx: &mut Context) -> Result<BLDatum, RunError> {
    ctx.input::<DatumDoc>()?.build()
}

fn bl_constant(ctx: &mut Context) -> Outcome {
    let d = datum(ctx)?;
    let constant = bl_constant_classc(&d)?;
    let t = is_class_c(&d).transversality;
    Ok((Status::Computed, json!({"constant": constant, "transversality": t, "d": d.d(), "m": d.m()})))
}

fn check_class_c(ctx: &mut Context) -> Outcome {
    let d = datum(ctx)?;
    let r = is_class_c(&d);
    let result = json!({
        "is_class_c": r.is_class_c,
        "transversality": r.transversality,
        "failure": r.failure,
        "kernel_dims": d.kernel_dims(),
        "p": d.exponents(),
    });
    Ok((Status::verdict(r.is_class_c), result))
}

fn reduce(ctx: &mut Context) -> Outcome {
    let c = reduce_to_projections(&datum(ctx)?)?;
    let blocks: Vec<Vec<usize>> = c.scheme.blocks().iter().map(|b| one_based(b)).collect();
    Ok((
        Status::Computed,
        json!({
            "a": rows(&c.a),
            "cj": c.cj.iter().map(rows).collect::<Vec<_>>(),
            "scheme": {"d": c.scheme.d(), "blocks": blocks},
            "det_a": c.det_a,
            "det_cj": c.det_cj,
            "projection_residual": c.projection_residual,
            "det_a_identity_error": c.det_a_identity_error,
            "det_cj_identity_error": c.det_cj_identity_error,
        }),
    ))
}

fn gaussian_search(ctx: &mut Context, budget: usize) -> Outcome {
    let d = datum(ctx)?;
    let seed = ctx.seed()?;
    let s = search_bl_constant(&d, budget, seed)?;
    let constant = bl_constant_classc(&d).ok();
    Ok((
        Status::Computed,
        json!({
            "estimate": s.estimate,
            "constant": constant,
            "estimate_over_constant": constant.map(|c| s.estimate / c),
            "accepted": s.accepted,
            "budget": budget,
            "covariances": s.covariances.iter().map(rows).collect::<Vec<_>>(),
            "trace": s.trace,
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinnerDoc {
    scheme: SchemeDoc,
    arrays: Vec<LatticeDoc>,
}

fn finner(ctx: &mut Context) -> Outcome {
    let doc: FinnerDoc = ctx.input()?;
    let scheme = doc.scheme.build()?;
    let arrays = doc
        .arrays
        .iter()
        .map(|a| LatticeArray::new(a.shape.clone(), a.values.clone()))
        .collect::<blt_core::Result<Vec<_>>>()?;
    let tol = ctx.tol(1e-12);
    let (lhs, rhs) = discrete_finner(&arrays, &scheme)?;
    let holds = lhs <= rhs * (1.0 + tol);
    Ok((Status::verdict(holds), json!({"lhs": lhs, "rhs": rhs, "holds": holds})))
}

fn extremizer(ctx: &mut Context) -> Outcome {
    let d = datum(ctx)?;
    let (boxes, ratio) = canonical_extremizer(&d)?;
    let constant = bl_constant_classc(&d)?;
    let inputs: Vec<Value> = boxes
        .iter()
        .map(|b| json!({"kind": "box", "matrix": rows(b.matrix()), "offset": b.offset().as_slice()}))
        .collect();
    Ok((
        Status::Computed,
        json!({
            "inputs": inputs,
            "ratio": ratio,
            "constant": constant,
            "relative_difference": (ratio - constant).abs() / constant,
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BallDoc {
    datum: DatumDoc,
    f: Vec<GridDoc>,
    f_prime: Vec<GridDoc>,
}

fn ball_check(ctx: &mut Context) -> Outcome {
    let doc: BallDoc = ctx.input()?;
    let d = doc.datum.build()?;
    let f = doc.f.iter().map(GridDoc::build).collect::<Result<Vec<_>, _>>()?;
    let fp = doc.f_prime.iter().map(GridDoc::build).collect::<Result<Vec<_>, _>>()?;
    let n = ctx.config.resolution.unwrap_or(8);
    ctx.resolve("x_grid_per_axis", json!(n));
    let grid = ball_grid(&d, &f, &fp, n)?;
    let r = ball_inequality_report(&d, &f, &fp, &grid)?;
    let status = if r.inconclusive { Status::Inconclusive } else { Status::Certified };
    Ok((
        status,
        json!({
            "bl_f": r.bl_f,
            "bl_f_prime": r.bl_f_prime,
            "lhs": r.lhs,
            "sup_term": r.sup_term,
            "argmax": r.argmax,
            "conv_term": r.conv_term,
            "slack": r.slack,
            "points_used": r.points_used,
            "points_skipped": r.points_skipped,
            "inconclusive": r.inconclusive,
            "slack_tolerance": blt_core::quadrature::BALL_SLACK_TOL,
        }),
    ))
}

fn params_json(p: &ScaleParams) -> Value {
    let (coarse, fine, n) = p.widths(p.delta0);
    json!({
        "beta": p.beta,
        "kappa": p.kappa,
        "alpha0": p.alpha0,
        "alpha1": p.alpha1,
        "c_d": p.c_d,
        "delta0": p.delta0,
        "d": p.d,
        "m": p.m,
        "constancy_scale": p.constancy_scale,
        "coarse_width": coarse,
        "fine_width": fine,
        "candidates": n,
        "gain_exponent": p.gain_exponent(),
        "step_factor": p.step_factor(p.delta0),
        "log_global_bound": p.log_global_bound(),
    })
}

fn delta0(ctx: &mut Context, beta: f64, kappa: f64, alpha0: f64, alpha1: f64, d: usize, m: Option<usize>) -> Outcome {
    let m = m.unwrap_or(d);
    ctx.resolve("m", json!(m));
    let p = compute_delta0(beta, kappa, alpha0, alpha1, d, m)?;
    Ok((Status::Computed, params_json(&p)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalesInput {
    maps: Vec<MapDoc>,
    inputs: Vec<GridDoc>,
    scales: ScalesDoc,
    cube: CubeDoc,
    quadrature: Option<QuadratureDoc>,
}

impl ScalesInput {
    fn build(
        &self,
    ) -> Result<(Vec<blt_core::NonlinearMap>, Vec<blt_core::GridFunction>, ScaleParams, blt_core::Cube), RunError> {
        let maps = build_maps(&self.maps)?;
        let inputs = self.inputs.iter().map(GridDoc::build).collect::<Result<Vec<_>, _>>()?;
        let d = self.cube.center.len();
        let params = self.scales.build(d, maps.len())?;
        let cube = self.cube.build(&params)?;
        Ok((maps, inputs, params, cube))
    }
}

/// Cells are listed individually up to this count.
const CELL_LIST_LIMIT: usize = 4096;

fn decomposition_json(dec: &Decomposition) -> Value {
    let d = dec.dim();
    let check = dec.check();
    let sequences: Vec<Value> = dec
        .sequences
        .iter()
        .map(|s| {
            let steps: Vec<Value> = s
                .steps
                .iter()
                .map(|st| {
                    json!({
                        "s_n": st.s_n,
                        "s_next": st.s_next,
                        "r": st.chosen + 1,
                        "candidate_masses": st.candidate_masses,
                        "chosen_mass": st.chosen_mass,
                        "reference_mass": st.reference_mass,
                        "spacing_ok": st.spacing_ok,
                        "mass_ok": st.mass_ok,
                    })
                })
                .collect();
            json!({
                "axis": s.axis + 1,
                "map": s.map + 1,
                "points": s.points,
                "candidates": s.candidates,
                "factor": s.factor,
                "region": {"lo": s.region.lo, "hi": s.region.hi},
                "functional": s.functional.as_slice(),
                "image_center": s.image_center.as_slice(),
                "total_mass": s.total_mass,
                "certified": s.all_certified(),
                "steps": steps,
            })
        })
        .collect();
    let meeting: Vec<[Vec<usize>; 2]> =
        (0..d).map(|i| [dec.indices_meeting_cube(i, 0), dec.indices_meeting_cube(i, 1)]).collect();
    let slabs: Vec<Value> = (0..d)
        .map(|i| {
            let list = |chi: u8| -> Vec<Value> {
                meeting[i][chi as usize]
                    .iter()
                    .map(|&n| {
                        let (lo, hi) = dec.interval(i, n, chi);
                        json!({"n": n, "lo": lo, "hi": hi})
                    })
                    .collect()
            };
            json!({"axis": i + 1, "chi0": list(0), "chi1": list(1)})
        })
        .collect();
    let cell_count: usize = meeting.iter().map(|m| m[0].len() + m[1].len()).product();
    // Cell volumes factor over axes, so each χ class sums in closed form.
    let axis_volume = |i: usize, chi: u8| -> f64 {
        let nv = &dec.frame.normals[i];
        let scale = nv.norm_squared() / nv.dot(&dec.frame.vectors[i]);
        meeting[i][chi as usize]
            .iter()
            .map(|&n| {
                let (lo, hi) = dec.interval(i, n, chi);
                (hi - lo) * scale
            })
            .sum()
    };
    let by_chi: Vec<Value> = (0..1usize << d)
        .map(|bits| {
            let chi: Vec<u8> = (0..d).map(|i| ((bits >> i) & 1) as u8).collect();
            let count: usize = (0..d).map(|i| meeting[i][chi[i] as usize].len()).product();
            let volume: f64 = (0..d).map(|i| axis_volume(i, chi[i])).product();
            json!({"chi": chi, "count": count, "volume": volume})
        })
        .collect();
    let cells = (cell_count <= CELL_LIST_LIMIT).then(|| {
        let mut out = Vec::with_capacity(cell_count);
        let per_axis: Vec<Vec<(usize, u8)>> = meeting
            .iter()
            .map(|m| m[0].iter().map(|&n| (n, 0u8)).chain(m[1].iter().map(|&n| (n, 1u8))).collect())
            .collect();
        let mut idx = vec![0usize; d];
        loop {
            let n: Vec<usize> = (0..d).map(|i| per_axis[i][idx[i]].0).collect();
            let chi: Vec<u8> = (0..d).map(|i| per_axis[i][idx[i]].1).collect();
            let bounds: Vec<[f64; 2]> = (0..d)
                .map(|i| {
                    let (lo, hi) = dec.interval(i, n[i], chi[i]);
                    [lo, hi]
                })
                .collect();
            out.push(json!({"n": n, "chi": chi, "slab_bounds": bounds, "volume": dec.cell_volume(&n, &chi)}));
            let mut axis = 0;
            while axis < d {
                idx[axis] += 1;
                if idx[axis] < per_axis[axis].len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == d {
                break;
            }
        }
        out
    });
    json!({
        "delta": dec.delta,
        "cube": {"center": dec.cube.center, "side": dec.cube.side},
        "frame": {
            "center": dec.frame.center,
            "vectors": dec.frame.vectors.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
            "normals": dec.frame.normals.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
            "deviation": dec.frame.deviation,
        },
        "sigma": one_based(&dec.sigma),
        "scheme": {"d": d, "blocks": dec.scheme.blocks().iter().map(|b| one_based(b)).collect::<Vec<_>>()},
        "check": {
            "frame_deviation": check.frame_deviation,
            "frame_ok": check.frame_ok,
            "spacing_ok": check.spacing_ok,
            "mass_ok": check.mass_ok,
            "width0_range": [check.width0_range.0, check.width0_range.1],
            "width0_ok": check.width0_ok,
            "width1_error": check.width1_error,
            "width1_ok": check.width1_ok,
            "holds": check.holds(),
        },
        "sequences": sequences,
        "slabs": slabs,
        "cell_count": cell_count,
        "cells_by_chi": by_chi,
        "cells": cells,
    })
}

fn decompose(ctx: &mut Context) -> Outcome {
    let doc: ScalesInput = ctx.input()?;
    let (maps, inputs, params, cube) = doc.build()?;
    let dec = decompose_cube(&maps, &inputs, &cube, &params, cube.side)?;
    let ok = dec.check().holds() && dec.sequences.iter().all(|s| s.all_certified());
    let mut result = decomposition_json(&dec);
    result["params"] = params_json(&params);
    Ok((Status::verdict(ok), result))
}

fn verify_step(ctx: &mut Context) -> Outcome {
    let doc: ScalesInput = ctx.input()?;
    let (maps, inputs, params, cube) = doc.build()?;
    let spec = ctx.quadrature(doc.quadrature, 16)?;
    let (_, r) = verify_induction_step(&maps, &cube, &inputs, &params, &spec)?;
    let buffers: Vec<Value> = r
        .buffers
        .iter()
        .map(|b| {
            json!({
                "chi": b.chi,
                "axis": b.axis + 1,
                "map": b.map + 1,
                "tube_norm": b.tube_norm,
                "reference": b.reference,
                "factor": b.factor,
                "holds": b.holds,
            })
        })
        .collect();
    let by_chi: Vec<Value> = r.lhs_by_chi.iter().map(|(chi, v)| json!({"chi": chi, "value": v})).collect();
    Ok((
        Status::verdict(r.certified),
        json!({
            "params": params_json(&params),
            "delta": r.delta,
            "constancy_scale": r.constancy_scale,
            "lhs": r.lhs,
            "lhs_error": r.lhs_error,
            "lhs_by_chi": by_chi,
            "main_share": r.main_share,
            "masses": r.masses,
            "finner_lhs": r.finner_lhs,
            "finner_rhs": r.finner_rhs,
            "main_norms": r.main_norms,
            "buffers": buffers,
            "bracket": r.bracket,
            "certified_factor": r.certified_factor,
            "target": r.target,
            "lhs_over_bracket": r.lhs_over_bracket,
            "certified": r.certified,
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NonlinearDoc {
    maps: Vec<MapDoc>,
    x0: Vec<f64>,
    inputs: Vec<InputDoc>,
    scales: ScalesDoc,
    quadrature: Option<QuadratureDoc>,
}

fn verify_nonlinear(ctx: &mut Context) -> Outcome {
    let doc: NonlinearDoc = ctx.input()?;
    let maps = build_maps(&doc.maps)?;
    let inputs = doc.inputs.iter().map(InputDoc::build).collect::<Result<Vec<_>, _>>()?;
    let params = doc.scales.build(doc.x0.len(), maps.len())?;
    let spec = ctx.quadrature(doc.quadrature, 32)?;
    let r = verify_nonlinear_bl(&maps, &doc.x0, &inputs, &params, &spec)?;
    Ok((
        Status::verdict(r.holds),
        json!({
            "params": params_json(&params),
            "delta0": r.delta0,
            "ratio": r.ratio,
            "ratio_error": r.ratio_error,
            "bound": r.bound,
            "log_bound": r.log_bound,
            "log_margin": r.log_margin,
            "holds": r.holds,
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IftDoc {
    field: FieldDoc,
    points: Vec<Vec<f64>>,
}

fn ift_solve(ctx: &mut Context) -> Outcome {
    let doc: IftDoc = ctx.input()?;
    let field = doc.field.build()?;
    let tol = ctx.tol(1e-12);
    let (r1, r2) = ift_radii(field.beta(), field.kappa())?;
    let solutions = doc
        .points
        .iter()
        .map(|x| {
            let s = solve_eta(&field, x, tol, None)?;
            let g = eta_gradient(&field, x, s.eta)?;
            Ok(json!({
                "x": x,
                "eta": s.eta,
                "residual": s.residual,
                "iterations": s.iterations,
                "cap": s.cap,
                "max_abs_iterate": s.max_abs_iterate,
                "max_ratio": s.max_ratio,
                "gradient": g,
            }))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok((Status::Computed, json!({"r1": r1, "r2": r2, "solutions": solutions})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeltaDoc {
    field: FieldDoc,
    window: RegionDoc,
    /// Evaluated at (x, η); the constant 1 when absent.
    g: Option<InputDoc>,
    quadrature: Option<QuadratureDoc>,
}

fn delta_integral_cmd(ctx: &mut Context) -> Outcome {
    let doc: DeltaDoc = ctx.input()?;
    let field = doc.field.build()?;
    let window = doc.window.build()?;
    let g: Option<InputFunction> = doc.g.as_ref().map(InputDoc::build).transpose()?;
    if let Some(g) = &g {
        if g.dim() != field.n() + 1 {
            return Err(RunError::schema("g", format!("needs dimension {}, got {}", field.n() + 1, g.dim())));
        }
    }
    let spec = ctx.quadrature(doc.quadrature, 64)?;
    let (value, error) = delta_integral(
        &field,
        |x: &[f64], eta: f64| match &g {
            Some(g) => {
                let mut p = x.to_vec();
                p.push(eta);
                g.eval(&p)
            }
            None => 1.0,
        },
        &window,
        &spec,
    )?;
    Ok((Status::Computed, json!({"value": value, "error": error})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvolveDoc {
    functions: Vec<SurfaceFunctionDoc>,
    y: Vec<f64>,
    eps: Option<f64>,
    quadrature: Option<QuadratureDoc>,
}

fn convolve(ctx: &mut Context) -> Outcome {
    let doc: ConvolveDoc = ctx.input()?;
    let funcs = build_surface_functions(&doc.functions)?;
    let eps = doc.eps.unwrap_or(1e-3);
    ctx.resolve("eps", json!(eps));
    let spec = ctx.quadrature(doc.quadrature, 48)?;
    let (value, error) = surface_convolution(&funcs, &doc.y, eps, &spec)?;
    Ok((Status::Computed, json!({"value": value, "error": error})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtensionDoc {
    surface: SurfaceDoc,
    g: GridDoc,
    xi: Vec<Vec<f64>>,
}

fn extension(ctx: &mut Context) -> Outcome {
    let doc: ExtensionDoc = ctx.input()?;
    let surface = doc.surface.build()?;
    let g = doc.g.build()?;
    let values = doc
        .xi
        .iter()
        .map(|xi| {
            let v = extension_operator(&surface, &g, xi)?;
            Ok(json!({"xi": xi, "re": v.re, "im": v.im, "abs": v.norm()}))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok((Status::Computed, json!({"values": values})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeDoc {
    functions: Vec<SurfaceFunctionDoc>,
    eps: Option<f64>,
    /// Quadrature for the L^q norms of the g_j.
    quadrature: Option<QuadratureDoc>,
}

fn bridge(ctx: &mut Context) -> Outcome {
    let doc: BridgeDoc = ctx.input()?;
    let funcs = build_surface_functions(&doc.functions)?;
    let eps = doc.eps.unwrap_or(1e-3);
    let resolution = ctx.config.resolution.unwrap_or(128);
    ctx.resolve("eps", json!(eps));
    ctx.resolve("frequency_resolution", json!(resolution));
    let spec = match (ctx.config.samples, doc.quadrature) {
        (Some(samples), _) => QuadratureDoc::MonteCarlo { samples }.with_seed(Some(ctx.seed()?))?,
        (None, Some(q)) => q.with_seed(ctx.config.seed)?,
        (None, None) => blt_core::QuadratureSpec::Midpoint { resolution: 8 },
    };
    ctx.resolve("quadrature", crate::quadrature_json(&spec));
    let r = verify_extension_bridge(&funcs, resolution, eps, &spec)?;
    Ok((
        Status::Computed,
        json!({
            "lhs": r.lhs,
            "convolution_norm": r.convolution_norm,
            "convention_constant": r.convention_constant,
            "bridge_error": r.bridge_error,
            "bridge_refusal": BRIDGE_REFUSAL,
            "norm_product": r.norm_product,
            "exponent": r.exponent,
            "ratio": r.ratio,
            "resolution": r.resolution,
            "frequency_half_width": r.frequency_half_width,
            "frequency_spacing": r.frequency_spacing,
            "spatial_box": {"lo": r.spatial_box.lo, "hi": r.spatial_box.hi},
        }),
    ))
}
