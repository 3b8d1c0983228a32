//! The full ladder of conditions at a point, and along a trajectory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::directional::{check_foscms, check_soscms};
use super::multiplier::{check_ccq, check_linear_cq, check_mfc, check_nnamcq, check_wbcq};
use super::sampled::{check_crcq, check_index_one, check_rcpld, falsify_quasinormality, IndexOneReport};
use super::{ConstraintSystem, CqName, CqOptions, CqStatus, CqVerdict, Role, Witness};
use crate::error::CqError;
use crate::exec::{map_indexed, stream_rng};
use crate::linalg::{least_squares, Matrix, Vector};
use crate::polyhedra::CoordKind;

/// Order in which calmness-sufficient conditions are credited.
const SUFFICIENT: [CqName; 6] = [
    CqName::LinearCq,
    CqName::Nnamcq,
    CqName::Foscms,
    CqName::Soscms,
    CqName::Rcpld,
    CqName::Crcq,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderOutcome {
    /// WBCQ and a calmness-sufficient condition are both certified.
    Established,
    Inconclusive,
    /// WBCQ is refuted, or every calmness-sufficient condition is refuted or inapplicable.
    Refuted,
}

impl LadderOutcome {
    pub fn exit_code(self) -> i32 {
        match self {
            LadderOutcome::Established => 0,
            LadderOutcome::Refuted => 1,
            LadderOutcome::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedWitness {
    pub name: CqName,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqLadderReport {
    pub point: Vec<f64>,
    pub verdicts: Vec<CqVerdict>,
    pub witnesses: Vec<NamedWitness>,
    /// WBCQ certified together with a calmness-sufficient condition.
    pub sufficient: bool,
    pub via: Option<CqName>,
    pub outcome: LadderOutcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index_one: Option<IndexOneReport>,
    pub notes: Vec<String>,
}

impl CqLadderReport {
    pub fn verdict(&self, name: CqName) -> Option<&CqVerdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

fn guarded(name: CqName, r: Result<CqVerdict, CqError>) -> Result<CqVerdict, CqError> {
    match r {
        Ok(v) => Ok(v),
        Err(e @ CqError::Infeasible(_)) => Err(e),
        Err(CqError::Structure(m)) => Ok(CqVerdict::new(name, CqStatus::NotApplicable).note(m)),
        Err(e) => Ok(CqVerdict::new(name, CqStatus::Inconclusive).note(e.to_string())),
    }
}

/// Runs every checker at `point` and derives whether calmness together with
/// WBCQ is established.
pub fn check_calmness_sufficient(
    sys: &ConstraintSystem,
    point: &Vector,
    opts: &CqOptions,
) -> Result<CqLadderReport, CqError> {
    sys.check_feasible(point, opts.feas_tol)?;
    let verdicts = vec![
        check_linear_cq(sys),
        guarded(CqName::Ccq, check_ccq(sys, point, opts))?,
        guarded(CqName::Mfc, check_mfc(sys, point, opts))?,
        guarded(CqName::Nnamcq, check_nnamcq(sys, point, opts))?,
        guarded(CqName::Wbcq, check_wbcq(sys, point, opts))?,
        guarded(CqName::Quasinormality, falsify_quasinormality(sys, point, opts))?,
        guarded(CqName::Foscms, check_foscms(sys, point, opts))?,
        guarded(CqName::Soscms, check_soscms(sys, point, opts))?,
        guarded(CqName::Rcpld, check_rcpld(sys, point, opts))?,
        guarded(CqName::Crcq, check_crcq(sys, point, opts))?,
    ];
    let get = |n: CqName| verdicts.iter().find(|v| v.name == n).expect("ladder runs every condition");
    let wbcq = get(CqName::Wbcq);
    let via = SUFFICIENT.iter().copied().find(|&n| get(n).is_certified());
    let sufficient = wbcq.is_certified() && via.is_some();
    let hopeless = SUFFICIENT
        .iter()
        .all(|&n| matches!(get(n).status, CqStatus::Refuted | CqStatus::NotApplicable));
    let outcome = if sufficient {
        LadderOutcome::Established
    } else if wbcq.is_refuted() || hopeless {
        LadderOutcome::Refuted
    } else {
        LadderOutcome::Inconclusive
    };
    let witnesses = verdicts
        .iter()
        .filter_map(|v| v.witness.clone().map(|w| NamedWitness { name: v.name, witness: w }))
        .collect();
    let index_one = if sys.indices(Role::Algebraic).is_empty() {
        None
    } else {
        Some(check_index_one(sys, point)?)
    };
    let mut notes = Vec::new();
    if let Some(n) = via {
        notes.push(format!("calmness-sufficient condition: {n}"));
    }
    if let Some(r) = &index_one {
        if !r.index_one {
            notes.push(format!(
                "algebraic Jacobian has rank {} for {} algebraic variables: not index one",
                r.rank, r.algebraic
            ));
        }
    }
    Ok(CqLadderReport {
        point: point.iter().copied().collect(),
        verdicts,
        witnesses,
        sufficient,
        via: if sufficient { via } else { None },
        outcome,
        index_one,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// Mesh points only.
    Along,
    /// Mesh points plus feasible samples with `|x − x*| ≤ eps` and
    /// `|(y, u, v) − (y*, u*, v*)| ≤ radius`.
    Tube { samples: usize, eps: f64, radius: f64 },
}

/// One ladder report per mesh point, in mesh order. In tube mode each entry is
/// the worst report among the mesh point and its tube samples.
pub fn check_along_trajectory(
    sys: &ConstraintSystem,
    points: &[Vector],
    mode: TrajectoryMode,
    opts: &CqOptions,
) -> Result<Vec<CqLadderReport>, CqError> {
    for (index, p) in points.iter().enumerate() {
        sys.check_feasible(p, opts.feas_tol)
            .map_err(|e| CqError::InfeasibleAt { index, message: e.to_string() })?;
    }
    let results = map_indexed(opts.exec, points, |i, p| {
        let mut o = opts.clone();
        o.stream = opts.stream.wrapping_add(i as u64);
        o.exec = crate::exec::Exec::Sequential;
        point_report(sys, p, mode, &o)
    });
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| match r {
            Err(CqError::Infeasible(message)) => Err(CqError::InfeasibleAt { index, message }),
            other => other,
        })
        .collect()
}

fn point_report(
    sys: &ConstraintSystem,
    p: &Vector,
    mode: TrajectoryMode,
    opts: &CqOptions,
) -> Result<CqLadderReport, CqError> {
    let mut worst = check_calmness_sufficient(sys, p, opts)?;
    let TrajectoryMode::Tube { samples, eps, radius } = mode else {
        return Ok(worst);
    };
    if samples == 0 {
        return Ok(worst);
    }
    let mut rng = stream_rng(opts.seed ^ 0x7ab3, opts.stream);
    let mut checked = 0;
    for _ in 0..samples {
        let Some(z) = tube_sample(sys, p, eps, radius, opts.feas_tol, &mut rng) else { continue };
        checked += 1;
        let r = check_calmness_sufficient(sys, &z, opts)?;
        if r.outcome > worst.outcome {
            worst = r;
        }
    }
    worst.notes.push(format!(
        "tube: {checked} of {samples} samples feasible; compactness of the tube set is assumed"
    ));
    Ok(worst)
}

/// Random point of the tube, pulled back onto the equality part of the target
/// by Gauss-Newton steps in the non-state variables.
fn tube_sample(
    sys: &ConstraintSystem,
    p: &Vector,
    eps: f64,
    radius: f64,
    tol: f64,
    rng: &mut impl Rng,
) -> Option<Vector> {
    let free: Vec<usize> = (0..sys.dim()).filter(|&j| sys.roles()[j] != Role::State).collect();
    let mut z = p.clone();
    for j in 0..sys.dim() {
        let r = if sys.roles()[j] == Role::State { eps } else { radius };
        z[j] += rng.random_range(-r..=r);
    }
    let zero_rows: Vec<usize> = match sys.target().coordinate_kinds() {
        Some(k) => (0..k.len()).filter(|&i| k[i] == CoordKind::Zero).collect(),
        None => Vec::new(),
    };
    if !zero_rows.is_empty() && !free.is_empty() {
        for _ in 0..20 {
            let v = sys.map().eval(z.as_slice()).ok()?;
            let res = Vector::from_iterator(zero_rows.len(), zero_rows.iter().map(|&i| v[i]));
            if res.amax() <= 0.1 * tol {
                break;
            }
            let jac = sys.map().jacobian(z.as_slice()).ok()?;
            let jf = Matrix::from_fn(zero_rows.len(), free.len(), |i, j| jac[(zero_rows[i], free[j])]);
            let (step, _) = least_squares(&jf, &res);
            for (k, &j) in free.iter().enumerate() {
                z[j] -= step[k];
            }
        }
    }
    let inside = (0..sys.dim()).all(|j| {
        let r = if sys.roles()[j] == Role::State { eps } else { radius };
        (z[j] - p[j]).abs() <= r
    });
    (inside && sys.check_feasible(&z, tol).is_ok()).then_some(z)
}
