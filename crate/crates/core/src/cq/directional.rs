//! First- and second-order sufficient conditions for metric subregularity,
//! checked face by face on the critical cone.

use rand::Rng;
use rand_distr::StandardNormal;

use super::multiplier::{search_combos, Output, Slots};
use super::{guard_pieces, single, ConstraintSystem, CqName, CqOptions, CqStatus, CqVerdict, PointCtx, Witness};
use crate::error::CqError;
use crate::exec::stream_rng;
use crate::linalg::{null_space, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::lp::{lp_solve, LpProblem, LpStatus};
use crate::polyhedra::{ActivePiece, PolyCone, DEFAULT_SET_TOL};

const FACE_SLACK: f64 = 1e-7;

/// For a representative `d` of every nonzero face of the critical cone
/// `{d : J d ∈ T_K(map(z)), d_u ∈ T_U(u)}`, the cone
/// `{λ ∈ N_K(map(z); J d) : Jᵀλ + (0, η, 0) = 0, η ∈ N_U(u; d_u)}` is `{0}`.
pub fn check_foscms(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    directional_check(sys, point, opts, false)
}

/// FOSCMS with the extra constraint `Σ λᵢ dᵀ∇²mapᵢ d ≥ 0`. Besides each face
/// representative, `opts.soscms_samples` random directions per face are tried,
/// since the quadratic term varies inside a face.
pub fn check_soscms(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    directional_check(sys, point, opts, true)
}

struct Face {
    rep: Vector,
    span: Matrix,
    strict: Vec<Vector>,
}

fn directional_check(
    sys: &ConstraintSystem,
    point: &Vector,
    opts: &CqOptions,
    second: bool,
) -> Result<CqVerdict, CqError> {
    guard_pieces(sys)?;
    let name = if second { CqName::Soscms } else { CqName::Foscms };
    let ctx = PointCtx::new(sys, point, opts)?;
    let n = ctx.n();
    if n > opts.face_dim_cap {
        return Ok(CqVerdict::new(name, CqStatus::Inconclusive).note(format!(
            "critical cone dimension {n} exceeds the face-enumeration cap {}",
            opts.face_dim_cap
        )));
    }
    let target_pieces = active_pieces(&ctx, true)?;
    let control_pieces = active_pieces(&ctx, false)?;
    let mut rng = stream_rng(opts.seed, opts.stream.wrapping_mul(16).wrapping_add(4));
    let mut candidate: Option<Witness> = None;
    let mut faces = 0usize;
    for tp in &target_pieces {
        for cp in &control_pieces {
            let (le, eq) = critical_rows(&ctx, tp.as_ref(), cp.as_ref());
            let k = le.len();
            if k >= usize::BITS as usize || (1usize << k) > opts.subset_cap {
                return Ok(CqVerdict::new(name, CqStatus::Inconclusive).note(format!(
                    "2^{k} active-set subsets exceed the cap {}",
                    opts.subset_cap
                )));
            }
            for mask in 0..(1usize << k) {
                let Some(face) = face_of(&le, &eq, mask)? else { continue };
                faces += 1;
                let mut dirs = vec![face.rep.clone()];
                if second {
                    dirs.extend(sample_face(&face, opts.soscms_samples, &mut rng));
                }
                for d in dirs {
                    if let Some((w, outer)) = direction_witness(&ctx, &d, second)? {
                        if !outer {
                            return Ok(CqVerdict::new(name, CqStatus::Refuted).with_witness(w));
                        }
                        candidate.get_or_insert(w);
                    }
                }
            }
        }
    }
    if let Some(w) = candidate {
        return Ok(CqVerdict::new(name, CqStatus::CandidateRefuted)
            .with_witness(w)
            .note("witness found only in the outer approximation of a directional limiting cone"));
    }
    let v = CqVerdict::new(name, CqStatus::Certified).note(format!("{faces} critical-cone faces"));
    Ok(if second { v.note("sampled face directions") } else { v })
}

fn active_pieces(ctx: &PointCtx, target: bool) -> Result<Vec<Option<ActivePiece>>, CqError> {
    let (set, x) = if target {
        (ctx.sys.target(), &ctx.value)
    } else {
        (ctx.sys.control_set(), &ctx.u)
    };
    if x.is_empty() {
        return Ok(vec![None]);
    }
    Ok(set.contains(x, DEFAULT_SET_TOL)?.pieces.into_iter().map(Some).collect())
}

/// Inequality and equality rows (in `d`-space) of the critical cone for one
/// combination of active pieces.
fn critical_rows(ctx: &PointCtx, tp: Option<&ActivePiece>, cp: Option<&ActivePiece>) -> (Vec<Vector>, Vec<Vector>) {
    let n = ctx.n();
    let mut le = Vec::new();
    let mut eq = Vec::new();
    if let Some(tp) = tp {
        let piece = &ctx.sys.target().pieces()[tp.index];
        for &r in &tp.rows {
            le.push((piece.a().row(r) * &ctx.jac).transpose());
        }
        for r in piece.g().row_iter() {
            eq.push((r * &ctx.jac).transpose());
        }
    }
    if let Some(cp) = cp {
        let piece = &ctx.sys.control_set().pieces()[cp.index];
        let embed = |coeffs: Vec<f64>| {
            let mut v = Vector::zeros(n);
            for (k, &j) in ctx.controls.iter().enumerate() {
                v[j] = coeffs[k];
            }
            v
        };
        for &r in &cp.rows {
            le.push(embed(piece.a().row(r).iter().copied().collect()));
        }
        for r in piece.g().row_iter() {
            eq.push(embed(r.iter().copied().collect()));
        }
    }
    let unit = |v: Vector| {
        let s = v.norm();
        if s > 0.0 { v / s } else { v }
    };
    (le.into_iter().map(unit).collect(), eq.into_iter().map(unit).collect())
}

/// Relative-interior point of the face where exactly the `mask` inequalities are tight.
fn face_of(le: &[Vector], eq: &[Vector], mask: usize) -> Result<Option<Face>, CqError> {
    let n = le.first().or(eq.first()).map_or(0, Vector::len);
    let n = if n == 0 { return Ok(None) } else { n };
    let mut tight: Vec<&Vector> = eq.iter().collect();
    let mut strict = Vec::new();
    for (k, r) in le.iter().enumerate() {
        if mask & (1 << k) != 0 {
            tight.push(r);
        } else {
            strict.push(r.clone());
        }
    }
    let m = Matrix::from_fn(tight.len(), n, |i, j| tight[i][j]);
    let span = null_space(&m, DEFAULT_RANK_TOL);
    if span.ncols() == 0 {
        return Ok(None);
    }
    if strict.is_empty() {
        let d = span.column(0).into_owned();
        let s = d.amax();
        return Ok(Some(Face { rep: d / s, span, strict }));
    }
    // max t  s.t.  tight·d = 0, strict·d + t ≤ 0, |d|∞ ≤ 1, 0 ≤ t ≤ 1
    let mut c = Vector::zeros(n + 1);
    c[n] = 1.0;
    let a = Matrix::from_fn(strict.len(), n + 1, |i, j| if j < n { strict[i][j] } else { 1.0 });
    let g = Matrix::from_fn(m.nrows(), n + 1, |i, j| if j < n { m[(i, j)] } else { 0.0 });
    let mut lower = vec![-1.0; n + 1];
    lower[n] = 0.0;
    let lp = LpProblem::new(c)
        .with_inequalities(a, Vector::zeros(strict.len()))
        .with_equalities(g, Vector::zeros(m.nrows()))
        .with_bounds(lower, vec![1.0; n + 1]);
    let res = lp_solve(&lp)?;
    if res.status != LpStatus::Optimal || res.objective <= FACE_SLACK {
        return Ok(None);
    }
    let d = Vector::from_column_slice(&res.x[..n]);
    let s = d.amax();
    Ok(Some(Face { rep: d / s, span, strict }))
}

fn sample_face(face: &Face, count: usize, rng: &mut impl Rng) -> Vec<Vector> {
    let r = face.span.ncols();
    let mut out = Vec::new();
    for _ in 0..count {
        let g = Vector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = &face.span * g;
        let scale = w.amax();
        if scale == 0.0 {
            continue;
        }
        let tau: f64 = rng.random_range(0.05..2.0);
        let d = &face.rep + w * (tau / scale);
        if face.strict.iter().all(|s| s.dot(&d) < -FACE_SLACK) && d.amax() > 1e-9 {
            let s = d.amax();
            out.push(d / s);
        }
    }
    out
}

/// A nonzero multiplier for direction `d`, flagged when it comes from an outer approximation.
fn direction_witness(ctx: &PointCtx, d: &Vector, second: bool) -> Result<Option<(Witness, bool)>, CqError> {
    let jd = &ctx.jac * d;
    let du = ctx.sys.controls_of(d);
    let targets = if ctx.m() == 0 {
        single(PolyCone::zero(0))
    } else {
        ctx.sys.target().directional_normal_cone(&ctx.value, &jd)?
    };
    let controls = if ctx.u.is_empty() {
        single(PolyCone::zero(0))
    } else {
        ctx.sys.control_set().directional_normal_cone(&ctx.u, &du)?
    };
    if targets.cones.is_empty() || controls.cones.is_empty() {
        return Ok(None);
    }
    let extra = if second {
        let q = ctx.sys.map().hessian_quadratic_form(ctx.point.as_slice(), d.as_slice())?;
        Some(q.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, -v)).collect())
    } else {
        None
    };
    let found = search_combos(ctx, &targets, &controls, Slots::All, Output::Lambda, extra.as_ref())?;
    Ok(found.map(|mut w| {
        w.direction = Some(d.iter().copied().collect());
        (w, targets.outer || controls.outer)
    }))
}
