//! Conditions decided by a single multiplier cone per piece combination:
//! NNAMCQ, MFC, WBCQ, CCQ, plus the syntactic linear CQ.

use super::lpcone::{dense_row, eval_row, negate, ConeSystem, Row};
use super::{
    guard_pieces, ConstraintSystem, CqName, CqOptions, CqStatus, CqVerdict, PointCtx, Role, Witness,
};
use crate::error::CqError;
use crate::linalg::Vector;
use crate::polyhedra::{ConeUnion, PolyCone};

/// Which blocks of `Jᵀλ + (0, η, 0)` are forced to vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slots {
    All,
    NonState,
}

/// Quantity that must be nonzero for a witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Output {
    Lambda,
    StateBlock,
}

pub(crate) struct Assembly {
    pub sys: ConeSystem,
    pub lam: usize,
    pub eta: usize,
}

/// Row of `(Jᵀλ)_j + η_k` where `k` is the control index of variable `j`.
pub(crate) fn slot_row(ctx: &PointCtx, lam: usize, eta: usize, j: usize) -> Row {
    let mut row = dense_row(lam, ctx.jac.column(j).iter());
    if let Some(k) = ctx.controls.iter().position(|&c| c == j) {
        row.push((eta + k, 1.0));
    }
    row
}

fn zeroed(ctx: &PointCtx, slots: Slots, j: usize) -> bool {
    slots == Slots::All || ctx.sys.roles()[j] != Role::State
}

pub(crate) fn assemble(
    ctx: &PointCtx,
    lam_cone: &PolyCone,
    eta_cone: &PolyCone,
    slots: Slots,
) -> Result<Assembly, CqError> {
    let mut sys = ConeSystem::new();
    let lam = sys.add_vars(ctx.m(), false);
    let eta = sys.add_vars(ctx.u.len(), false);
    sys.constrain(lam, lam_cone)?;
    sys.constrain(eta, eta_cone)?;
    for j in 0..ctx.n() {
        if zeroed(ctx, slots, j) {
            sys.add_eq(slot_row(ctx, lam, eta, j));
        }
    }
    Ok(Assembly { sys, lam, eta })
}

pub(crate) fn outputs(ctx: &PointCtx, asm: &Assembly, out: Output) -> Vec<Row> {
    match out {
        Output::Lambda => (0..ctx.m()).map(|i| vec![(asm.lam + i, 1.0)]).collect(),
        Output::StateBlock => ctx
            .sys
            .indices(Role::State)
            .into_iter()
            .map(|j| slot_row(ctx, asm.lam, asm.eta, j))
            .collect(),
    }
}

pub(crate) fn witness_from(ctx: &PointCtx, asm: &Assembly, z: &[f64], out: Output) -> Witness {
    let states = ctx.sys.indices(Role::State);
    let alpha: Vec<f64> = states
        .iter()
        .map(|&j| eval_row(&slot_row(ctx, asm.lam, asm.eta, j), z))
        .collect();
    let lam = &z[asm.lam..asm.lam + ctx.m()];
    let eta = &z[asm.eta..asm.eta + ctx.u.len()];
    let scale = match out {
        Output::Lambda => lam.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        Output::StateBlock => alpha.iter().fold(0.0f64, |a, v| a.max(v.abs())),
    };
    let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
    let scaled = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
    Witness {
        lambda: Some(scaled(lam)),
        eta: Some(scaled(eta)),
        alpha: (!states.is_empty()).then(|| scaled(&alpha)),
        ..Witness::default()
    }
}

/// Searches every combination of target and control cones for a nonzero
/// output. `extra` rows (over λ indices) are added as `row·λ ≤ 0`.
pub(crate) fn search_combos(
    ctx: &PointCtx,
    targets: &ConeUnion,
    controls: &ConeUnion,
    slots: Slots,
    out: Output,
    extra: Option<&Row>,
) -> Result<Option<Witness>, CqError> {
    for tc in &targets.cones {
        for cc in &controls.cones {
            let mut asm = assemble(ctx, tc, cc, slots)?;
            if let Some(r) = extra {
                let shifted = r.iter().map(|&(i, v)| (asm.lam + i, v)).collect();
                asm.sys.add_le(shifted, 0.0);
            }
            let outs = outputs(ctx, &asm, out);
            if let Some(z) = asm.sys.find_nonzero(&outs)? {
                return Ok(Some(witness_from(ctx, &asm, &z, out)));
            }
        }
    }
    Ok(None)
}

/// Nonzero multipliers of the NNAMCQ cone, at most two per coordinate and combination.
pub(crate) fn abnormal_multipliers(ctx: &PointCtx) -> Result<Vec<Vector>, CqError> {
    let targets = ctx.target_normals()?;
    let controls = ctx.control_normals()?;
    let mut found = Vec::new();
    for tc in &targets.cones {
        for cc in &controls.cones {
            let asm = assemble(ctx, tc, cc, Slots::All)?;
            let outs = outputs(ctx, &asm, Output::Lambda);
            for z in asm.sys.nonzero_points(&outs, 2 * ctx.m())? {
                let lam = Vector::from_column_slice(&z[asm.lam..asm.lam + ctx.m()]);
                let s = lam.amax();
                found.push(lam / s);
            }
        }
    }
    Ok(found)
}

fn multiplier_check(
    sys: &ConstraintSystem,
    point: &Vector,
    opts: &CqOptions,
    name: CqName,
    slots: Slots,
    out: Output,
) -> Result<CqVerdict, CqError> {
    guard_pieces(sys)?;
    let ctx = PointCtx::new(sys, point, opts)?;
    let targets = ctx.target_normals()?;
    let controls = ctx.control_normals()?;
    let Some(w) = search_combos(&ctx, &targets, &controls, slots, out, None)? else {
        return Ok(CqVerdict::new(name, CqStatus::Certified));
    };
    if !targets.outer && !controls.outer {
        return Ok(CqVerdict::new(name, CqStatus::Refuted).with_witness(w));
    }
    let exact = ctx.target_frechet().and_then(|t| {
        let c = ctx.control_frechet()?;
        search_combos(&ctx, &super::single(t), &super::single(c), slots, out, None)
    });
    Ok(match exact {
        Ok(Some(we)) => CqVerdict::new(name, CqStatus::Refuted)
            .with_witness(we)
            .note("witness lies in the Fréchet normal cones"),
        _ => CqVerdict::new(name, CqStatus::CandidateRefuted)
            .with_witness(w)
            .note("witness found only in the outer approximation of a limiting normal cone"),
    })
}

/// No nonzero abnormal multiplier: `λ ∈ N_K(map(z))`, `0 ∈ Jᵀλ + {0}×N_U(u)×{0}` forces `λ = 0`.
pub fn check_nnamcq(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    multiplier_check(sys, point, opts, CqName::Nnamcq, Slots::All, Output::Lambda)
}

/// As NNAMCQ with the state block of `Jᵀλ` left free.
pub fn check_mfc(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    multiplier_check(sys, point, opts, CqName::Mfc, Slots::NonState, Output::Lambda)
}

/// The state block `α` of `Jᵀλ` vanishes whenever the remaining blocks do.
pub fn check_wbcq(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    multiplier_check(sys, point, opts, CqName::Wbcq, Slots::NonState, Output::StateBlock)
}

/// MFC together with the calibration modulus
/// `sup { |λ|∞ : (Jᵀλ)_state free, non-state block = (β, γ) − (0, η, 0), |(β, γ)|₁ ≤ 1 }`.
pub fn check_ccq(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    let mfc = check_mfc(sys, point, opts)?;
    if !mfc.is_certified() {
        let mut v = CqVerdict::new(CqName::Ccq, mfc.status).note("MFC is not certified");
        v.witness = mfc.witness;
        return Ok(v);
    }
    let ctx = PointCtx::new(sys, point, opts)?;
    let targets = ctx.target_normals()?;
    let controls = ctx.control_normals()?;
    let free: Vec<usize> = (0..ctx.n()).filter(|&j| zeroed(&ctx, Slots::NonState, j)).collect();
    let mut modulus: f64 = 0.0;
    for tc in &targets.cones {
        for cc in &controls.cones {
            let mut sys = ConeSystem::new();
            let lam = sys.add_vars(ctx.m(), false);
            let eta = sys.add_vars(ctx.u.len(), false);
            let t = sys.add_vars(free.len(), true);
            sys.constrain(lam, tc)?;
            sys.constrain(eta, cc)?;
            // |slot_j| ≤ t_j with Σ t ≤ 1
            for (k, &j) in free.iter().enumerate() {
                let row = slot_row(&ctx, lam, eta, j);
                for mut r in [row.clone(), negate(&row)] {
                    r.push((t + k, -1.0));
                    sys.add_le(r, 0.0);
                }
            }
            sys.add_le((0..free.len()).map(|k| (t + k, 1.0)).collect(), 1.0);
            for i in 0..ctx.m() {
                for s in [1.0, -1.0] {
                    match sys.maximize(&vec![(lam + i, s)])? {
                        Some((v, _)) => modulus = modulus.max(v),
                        None => {
                            return Ok(CqVerdict::new(CqName::Ccq, CqStatus::Inconclusive)
                                .note("modulus LP is unbounded although MFC is certified"))
                        }
                    }
                }
            }
        }
    }
    let mut v = CqVerdict::new(CqName::Ccq, CqStatus::Certified);
    v.modulus = Some(modulus);
    Ok(v)
}

/// Every map component affine (both sets are finite unions of polyhedra by construction).
pub fn check_linear_cq(sys: &ConstraintSystem) -> CqVerdict {
    match sys.map().is_affine().iter().position(|a| !a) {
        None => CqVerdict::new(CqName::LinearCq, CqStatus::Certified),
        Some(c) => CqVerdict::new(CqName::LinearCq, CqStatus::Refuted)
            .with_witness(Witness {
                component: Some(c),
                ..Witness::default()
            })
            .note(format!("component {c} is not affine")),
    }
}

/// Largest violation of the defining system by a multiplier (and direction) witness.
pub(crate) fn residual(ctx: &PointCtx, name: CqName, w: &Witness) -> Result<f64, CqError> {
    let lam = w.lambda.clone().unwrap_or_default();
    let eta = w.eta.clone().unwrap_or_default();
    if lam.len() != ctx.m() || eta.len() != ctx.u.len() {
        return Ok(f64::INFINITY);
    }
    let lam_v = Vector::from_column_slice(&lam);
    let eta_v = Vector::from_column_slice(&eta);
    let mut worst: f64 = 0.0;
    let (targets, controls) = match &w.direction {
        Some(d) => {
            let d = Vector::from_column_slice(d);
            let jd = &ctx.jac * &d;
            let du = ctx.sys.controls_of(&d);
            if ctx.m() > 0 {
                worst = worst.max(ctx.sys.target().tangent_cone(&ctx.value)?.member(&jd, 0.0)?.1);
            }
            if !ctx.u.is_empty() {
                worst = worst.max(ctx.sys.control_set().tangent_cone(&ctx.u)?.member(&du, 0.0)?.1);
            }
            if d.amax() < 1e-6 {
                return Ok(f64::INFINITY);
            }
            let t = if ctx.m() > 0 {
                ctx.sys.target().directional_normal_cone(&ctx.value, &jd)?
            } else {
                super::single(PolyCone::zero(0))
            };
            let c = if ctx.u.is_empty() {
                super::single(PolyCone::zero(0))
            } else {
                ctx.sys.control_set().directional_normal_cone(&ctx.u, &du)?
            };
            if name == CqName::Soscms {
                let q = ctx.sys.map().hessian_quadratic_form(ctx.point.as_slice(), d.as_slice())?;
                worst = worst.max(-q.dot(&lam_v));
            }
            (t, c)
        }
        None => (ctx.target_normals()?, ctx.control_normals()?),
    };
    if targets.cones.is_empty() || controls.cones.is_empty() {
        return Ok(f64::INFINITY);
    }
    worst = worst.max(targets.member(&lam_v, 0.0)?.1);
    worst = worst.max(controls.member(&eta_v, 0.0)?.1);
    let slots = match name {
        CqName::Mfc | CqName::Wbcq | CqName::Ccq => Slots::NonState,
        _ => Slots::All,
    };
    let mut z = lam.clone();
    z.extend_from_slice(&eta);
    let mut alpha_norm: f64 = 0.0;
    for j in 0..ctx.n() {
        let v = eval_row(&slot_row(ctx, 0, ctx.m(), j), &z);
        if zeroed(ctx, slots, j) {
            worst = worst.max(v.abs());
        } else {
            alpha_norm = alpha_norm.max(v.abs());
        }
    }
    let size = if name == CqName::Wbcq { alpha_norm } else { lam_v.amax() };
    if size < 1e-6 {
        return Ok(f64::INFINITY);
    }
    Ok(worst)
}
