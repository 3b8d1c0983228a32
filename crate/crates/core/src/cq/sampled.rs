//! Conditions that quantify over neighbourhoods: RCPLD, CRCQ and the
//! quasinormality refuter. All of them sample, so certified verdicts carry a
//! `sampled` note. Also the index-one rank report for semi-explicit DAEs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::multiplier::{abnormal_multipliers, check_nnamcq};
use super::{ConstraintSystem, CqName, CqOptions, CqStatus, CqVerdict, PointCtx, Role, Witness};
use crate::error::CqError;
use crate::exec::stream_rng;
use crate::linalg::{rank, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::lp::cone_is_trivial;
use crate::polyhedra::CoordKind;

/// Uniform sample from the ball `B(center, radius)`.
fn ball_sample(center: &Vector, radius: f64, rng: &mut impl Rng) -> Vector {
    let n = center.len();
    let g = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = g.norm();
    if norm == 0.0 {
        return center.clone();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center + g * (r / norm)
}

/// RCPLD and CRCQ need the control constraint inactive and a target that is a
/// product of `{0}`, `ℝ₋`, `ℝ`.
fn premise(ctx: &PointCtx) -> Result<Vec<CoordKind>, CqError> {
    if !ctx.u.is_empty() && !ctx.sys.control_set().is_whole_space() {
        let normals = ctx.control_normals()?;
        for c in &normals.cones {
            if !c.is_zero()? {
                return Err(CqError::Structure(
                    "U is not the whole space and the control lies on its boundary".into(),
                ));
            }
        }
    }
    if ctx.m() == 0 {
        return Ok(Vec::new());
    }
    ctx.sys.target().coordinate_kinds().ok_or_else(|| {
        CqError::Structure("target is not a product of zeros, half-lines and lines".into())
    })
}

fn rows(jac: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), jac.ncols(), |i, j| jac[(idx[i], j)])
}

fn samples(ctx: &PointCtx, opts: &CqOptions, salt: u64) -> Vec<Vector> {
    let mut rng = stream_rng(opts.seed, opts.stream.wrapping_mul(16).wrapping_add(salt));
    (0..opts.samples).map(|_| ball_sample(&ctx.point, opts.delta, &mut rng)).collect()
}

fn sampled_note(opts: &CqOptions) -> String {
    format!("sampled: {} points in a ball of radius {:e}", opts.samples, opts.delta)
}

/// Relaxed constant positive linear dependence, checked on random points of
/// `B(z, δ)`: the equality gradients keep their rank, and every family
/// `basis ∪ I` (I ⊆ active inequalities) that is positively dependent at `z`
/// stays linearly dependent.
pub fn check_rcpld(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    let ctx = PointCtx::new(sys, point, opts)?;
    let kinds = premise(&ctx)?;
    let eq: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == CoordKind::Zero).collect();
    let active: Vec<usize> = (0..kinds.len())
        .filter(|&i| kinds[i] == CoordKind::Nonpositive && ctx.value[i].abs() <= opts.feas_tol)
        .collect();
    if active.len() >= 12 && (1usize << active.len()) > opts.subset_cap {
        return Ok(CqVerdict::new(CqName::Rcpld, CqStatus::Inconclusive)
            .note(format!("2^{} active subsets exceed the cap", active.len())));
    }
    let j0 = &ctx.jac;
    let eq_rank = rank(&rows(j0, &eq), DEFAULT_RANK_TOL);
    // greedy basis of the equality gradients
    let mut basis: Vec<usize> = Vec::new();
    for &i in &eq {
        let mut trial = basis.clone();
        trial.push(i);
        if rank(&rows(j0, &trial), DEFAULT_RANK_TOL) == trial.len() {
            basis = trial;
        }
    }
    let mut dependent: Vec<Vec<usize>> = Vec::new();
    for mask in 1usize..(1 << active.len()) {
        let sub: Vec<usize> = (0..active.len()).filter(|k| mask & (1 << k) != 0).map(|k| active[k]).collect();
        let family: Vec<usize> = basis.iter().chain(&sub).copied().collect();
        // {c : Σ c_j ∇_j = 0, c_I ≥ 0} ≠ {0}
        let g = rows(j0, &family).transpose();
        let a = Matrix::from_fn(sub.len(), family.len(), |r, c| if c == basis.len() + r { -1.0 } else { 0.0 });
        if !cone_is_trivial(&a, &g)?.trivial {
            dependent.push(family);
        }
    }
    for z in samples(&ctx, opts, 1) {
        let jz = sys.map().jacobian(z.as_slice())?;
        let bad_rank = rank(&rows(&jz, &eq), DEFAULT_RANK_TOL) != eq_rank;
        let bad_family = dependent
            .iter()
            .find(|f| rank(&rows(&jz, f), DEFAULT_RANK_TOL) == f.len());
        if bad_rank || bad_family.is_some() {
            let note = match bad_family {
                Some(f) if !bad_rank => format!("family {f:?} becomes independent near the point"),
                _ => "rank of the equality gradients changes near the point".to_string(),
            };
            return Ok(CqVerdict::new(CqName::Rcpld, CqStatus::Refuted)
                .with_witness(Witness {
                    sample: Some(z.iter().copied().collect()),
                    ..Witness::default()
                })
                .note(note));
        }
    }
    Ok(CqVerdict::new(CqName::Rcpld, CqStatus::Certified).note(sampled_note(opts)))
}

/// Constant rank of the full Jacobian on random points of `B(z, δ)`; needs an
/// equality target.
pub fn check_crcq(sys: &ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<CqVerdict, CqError> {
    let ctx = PointCtx::new(sys, point, opts)?;
    let kinds = premise(&ctx)?;
    if kinds.iter().any(|&k| k != CoordKind::Zero) {
        return Err(CqError::Structure("CRCQ needs the target {0}".into()));
    }
    let r0 = rank(&ctx.jac, DEFAULT_RANK_TOL);
    for z in samples(&ctx, opts, 2) {
        let rz = rank(&sys.map().jacobian(z.as_slice())?, DEFAULT_RANK_TOL);
        if rz != r0 {
            return Ok(CqVerdict::new(CqName::Crcq, CqStatus::Refuted)
                .with_witness(Witness {
                    sample: Some(z.iter().copied().collect()),
                    ..Witness::default()
                })
                .note(format!("Jacobian rank {r0} at the point, {rz} nearby")));
        }
    }
    Ok(CqVerdict::new(CqName::Crcq, CqStatus::Certified).note(format!("rank {r0}; {}", sampled_note(opts))))
}

const QN_SCALES: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Refutation-only search: for nonzero abnormal multipliers `λ`, looks for
/// feasible-control points `z_k → z` and target points `y_k → map(z)` with
/// `λᵢ (mapᵢ(z_k) − y_kᵢ) > 0` whenever `λᵢ ≠ 0`, at every scale in a
/// decreasing sequence. Never certifies.
pub fn falsify_quasinormality(
    sys: &ConstraintSystem,
    point: &Vector,
    opts: &CqOptions,
) -> Result<CqVerdict, CqError> {
    let name = CqName::Quasinormality;
    if check_nnamcq(sys, point, opts)?.is_certified() {
        return Ok(CqVerdict::new(name, CqStatus::Inconclusive)
            .note("no nonzero abnormal multiplier exists; the refuter has nothing to test"));
    }
    let ctx = PointCtx::new(sys, point, opts)?;
    let mut rng = stream_rng(opts.seed, opts.stream.wrapping_mul(16).wrapping_add(3));
    let per_scale = (opts.samples / QN_SCALES.len()).max(1);
    let controls = sys.indices(Role::Control);
    for lam in abnormal_multipliers(&ctx)? {
        let support: Vec<usize> = (0..lam.len()).filter(|&i| lam[i].abs() > 1e-9).collect();
        let mut last = None;
        for &eps in &QN_SCALES {
            let mut hit = None;
            for _ in 0..per_scale {
                let z = ball_sample(&ctx.point, eps, &mut rng);
                if !controls.is_empty()
                    && !sys.control_set().contains(&sys.controls_of(&z), 0.0)?.inside
                {
                    continue;
                }
                let v = sys.map().eval(z.as_slice())?;
                // y_k = map(z̄), which lies in the target
                if support.iter().all(|&i| lam[i] * (v[i] - ctx.value[i]) > 0.0) {
                    hit = Some(z);
                    break;
                }
            }
            match hit {
                Some(z) => last = Some(z),
                None => {
                    last = None;
                    break;
                }
            }
        }
        if let Some(z) = last {
            return Ok(CqVerdict::new(name, CqStatus::Refuted)
                .with_witness(Witness {
                    lambda: Some(lam.iter().copied().collect()),
                    sample: Some(z.iter().copied().collect()),
                    ..Witness::default()
                })
                .note(format!("sequence found at scales down to {:e}", QN_SCALES[QN_SCALES.len() - 1])));
        }
    }
    Ok(CqVerdict::new(name, CqStatus::Inconclusive).note(sampled_note(opts)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexOneReport {
    pub rank: usize,
    pub algebraic: usize,
    pub equations: usize,
    pub index_one: bool,
    pub smallest_singular_value: f64,
}

/// Rank of the algebraic block `∇_y h`; index one iff it is square and nonsingular.
pub fn check_index_one(sys: &ConstraintSystem, point: &Vector) -> Result<IndexOneReport, CqError> {
    let ys = sys.indices(Role::Algebraic);
    if ys.is_empty() {
        return Err(CqError::Structure("system has no algebraic variables".into()));
    }
    if point.len() != sys.dim() {
        return Err(CqError::Structure(format!(
            "point has {} entries, system expects {}",
            point.len(),
            sys.dim()
        )));
    }
    let jac = sys.map().jacobian(point.as_slice())?;
    let jy = Matrix::from_fn(jac.nrows(), ys.len(), |i, j| jac[(i, ys[j])]);
    let r = rank(&jy, DEFAULT_RANK_TOL);
    Ok(IndexOneReport {
        rank: r,
        algebraic: ys.len(),
        equations: jac.nrows(),
        index_one: r == ys.len() && jac.nrows() == ys.len(),
        smallest_singular_value: crate::linalg::smallest_singular_value(&jy),
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{gain_free, origin, sedae};
    use super::super::witness_residual;
    use super::*;
    use crate::expr::{Layout, VectorFunction};
    use crate::polyhedra::PolyUnion;

    fn opts() -> CqOptions {
        CqOptions::default()
    }

    fn xy_system(h: &[&str], target: PolyUnion) -> ConstraintSystem {
        let layout = Layout::new(&[("x", 1), ("y", 1)]);
        let map = VectorFunction::parse(h, &layout).unwrap();
        ConstraintSystem::new(map, target, PolyUnion::whole(0), vec![Role::State, Role::Algebraic]).unwrap()
    }

    #[test]
    fn rcpld_examples() {
        let affine = sedae(&["u - y", "x + y"], PolyUnion::whole(1));
        assert!(check_rcpld(&affine, &origin(), &opts()).unwrap().is_certified());
        let single = sedae(&["y - u"], PolyUnion::whole(1));
        let v = check_rcpld(&single, &origin(), &opts()).unwrap();
        assert!(v.is_certified());
        assert!(v.notes[0].starts_with("sampled"));
        // gradients (1, 0) and (1, 2y): rank 1 at the origin, 2 nearby
        let jump = xy_system(&["x", "x + y^2"], PolyUnion::zero(2));
        let v = check_rcpld(&jump, &Vector::zeros(2), &opts()).unwrap();
        assert!(v.is_refuted());
        assert!(witness_residual(&jump, &Vector::zeros(2), &v, &opts()).unwrap() == 0.0);
    }

    #[test]
    fn rcpld_positive_dependence() {
        // x ≤ 0 and −x + y² ≤ 0: positively dependent at 0, independent nearby
        let sys = xy_system(&["x", "-x + y^2"], PolyUnion::nonpositive(2));
        assert!(check_rcpld(&sys, &Vector::zeros(2), &opts()).unwrap().is_refuted());
        // x ≤ 0 and −x ≤ 0 with constant gradients
        let sys = xy_system(&["x", "-x"], PolyUnion::nonpositive(2));
        assert!(check_rcpld(&sys, &Vector::zeros(2), &opts()).unwrap().is_certified());
    }

    #[test]
    fn rcpld_needs_inactive_controls() {
        let sys = gain_free();
        let p = Vector::from_vec(vec![0.0, 1.0, 1.0]);
        assert!(matches!(check_rcpld(&sys, &p, &opts()), Err(CqError::Structure(_))));
        assert!(check_rcpld(&sys, &origin(), &opts()).unwrap().is_certified());
    }

    #[test]
    fn crcq_examples() {
        assert!(check_crcq(&gain_free(), &origin(), &opts()).unwrap().is_certified());
        let sq = sedae(&["y^2"], PolyUnion::whole(1));
        assert!(check_crcq(&sq, &origin(), &opts()).unwrap().is_refuted());
        let two = sedae(&["y", "u"], PolyUnion::whole(1));
        let v = check_crcq(&two, &origin(), &opts()).unwrap();
        assert!(v.is_certified());
        assert!(v.notes[0].starts_with("rank 2"));
    }

    #[test]
    fn quasinormality_refuter() {
        assert_eq!(
            falsify_quasinormality(&gain_free(), &origin(), &opts()).unwrap().status,
            CqStatus::Inconclusive
        );
        for h in ["y^2", "-y^2"] {
            let sys = sedae(&[h], PolyUnion::whole(1));
            let v = falsify_quasinormality(&sys, &origin(), &opts()).unwrap();
            assert!(v.is_refuted(), "{h}");
            assert_eq!(witness_residual(&sys, &origin(), &v, &opts()).unwrap(), 0.0);
        }
    }

    #[test]
    fn index_one_examples() {
        assert!(check_index_one(&gain_free(), &origin()).unwrap().index_one);
        let r = check_index_one(&sedae(&["x"], PolyUnion::whole(1)), &origin()).unwrap();
        assert!(!r.index_one);
        assert_eq!(r.rank, 0);
        let layout = Layout::new(&[("x", 1), ("y", 2), ("u", 1)]);
        let map = VectorFunction::parse(&["y1 - u", "y2"], &layout).unwrap();
        let sys = ConstraintSystem::new(
            map,
            PolyUnion::zero(2),
            PolyUnion::whole(1),
            vec![Role::State, Role::Algebraic, Role::Algebraic, Role::Control],
        )
        .unwrap();
        let r = check_index_one(&sys, &Vector::zeros(4)).unwrap();
        assert!(r.index_one && r.rank == 2);
    }
}
