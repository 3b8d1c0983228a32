//! Pointwise constraint-qualification checkers for perturbed constraint maps
//! `{z : map(z) + θ ∈ target, z_u ∈ U}`.
//!
//! Every checker reduces to cone-triviality questions about the multiplier cone
//! `{λ ∈ N_target(map(z)) : Jᵀλ + (0, η, 0) has the stated zero blocks, η ∈ N_U(u)}`,
//! assembled piece by piece over the unions of cones returned by [`crate::polyhedra`].

mod directional;
mod ladder;
pub(crate) mod lpcone;
mod multiplier;
mod sampled;

use serde::{Deserialize, Serialize};

use crate::error::CqError;
use crate::exec::Exec;
use crate::expr::VectorFunction;
use crate::linalg::{Matrix, Vector};
use crate::polyhedra::{ConeUnion, PolyCone, PolyUnion};

pub use directional::{check_foscms, check_soscms};
pub use ladder::{check_along_trajectory, check_calmness_sufficient, CqLadderReport, LadderOutcome, NamedWitness, TrajectoryMode};
pub use multiplier::{check_ccq, check_linear_cq, check_mfc, check_nnamcq, check_wbcq};
pub use sampled::{check_crcq, check_index_one, check_rcpld, falsify_quasinormality, IndexOneReport};

/// What a variable of the constraint map stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    State,
    Algebraic,
    Control,
    Velocity,
}

/// `map(z) ∈ target` with the `Control` coordinates of `z` constrained to `control_set`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    map: VectorFunction,
    target: PolyUnion,
    control_set: PolyUnion,
    roles: Vec<Role>,
}

impl ConstraintSystem {
    pub fn new(
        map: VectorFunction,
        target: PolyUnion,
        control_set: PolyUnion,
        roles: Vec<Role>,
    ) -> Result<Self, CqError> {
        if map.output_dim() != target.dim() {
            return Err(CqError::Structure(format!(
                "map has {} components but the target set lives in dimension {}",
                map.output_dim(),
                target.dim()
            )));
        }
        if roles.len() != map.input_dim() {
            return Err(CqError::Structure(format!(
                "{} roles for {} variables",
                roles.len(),
                map.input_dim()
            )));
        }
        let nu = roles.iter().filter(|&&r| r == Role::Control).count();
        if nu != control_set.dim() {
            return Err(CqError::Structure(format!(
                "{nu} control variables but the control set lives in dimension {}",
                control_set.dim()
            )));
        }
        Ok(ConstraintSystem {
            map,
            target,
            control_set,
            roles,
        })
    }

    pub fn map(&self) -> &VectorFunction {
        &self.map
    }

    pub fn target(&self) -> &PolyUnion {
        &self.target
    }

    pub fn control_set(&self) -> &PolyUnion {
        &self.control_set
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn dim(&self) -> usize {
        self.roles.len()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn controls_of(&self, z: &Vector) -> Vector {
        Vector::from_iterator(
            self.control_set.dim(),
            self.indices(Role::Control).into_iter().map(|i| z[i]),
        )
    }

    /// Checks `map(z) ∈ target` and `z_u ∈ U` within `tol`.
    pub fn check_feasible(&self, z: &Vector, tol: f64) -> Result<(), CqError> {
        if z.len() != self.dim() {
            return Err(CqError::Infeasible(format!(
                "point has {} entries, system expects {}",
                z.len(),
                self.dim()
            )));
        }
        let value = self.map.eval(z.as_slice())?;
        let c = self.target.contains(&value, tol)?;
        if !c.inside {
            return Err(CqError::Infeasible(format!(
                "map value violates the target set by {:.3e}",
                c.violation
            )));
        }
        let c = self.control_set.contains(&self.controls_of(z), tol)?;
        if !c.inside {
            return Err(CqError::Infeasible(format!(
                "control violates U by {:.3e}",
                c.violation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CqOptions {
    pub seed: u64,
    /// Random stream; trajectory checks use the mesh index so points draw independent samples.
    pub stream: u64,
    pub samples: usize,
    pub delta: f64,
    pub feas_tol: f64,
    pub face_dim_cap: usize,
    pub subset_cap: usize,
    pub soscms_samples: usize,
    pub exec: Exec,
}

impl Default for CqOptions {
    fn default() -> Self {
        CqOptions {
            seed: 0x5eed,
            stream: 0,
            samples: 200,
            delta: 1e-3,
            feas_tol: 1e-6,
            face_dim_cap: 6,
            subset_cap: 1 << 12,
            soscms_samples: 16,
            exec: Exec::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqName {
    LinearCq,
    Ccq,
    Mfc,
    Nnamcq,
    Wbcq,
    Quasinormality,
    Foscms,
    Soscms,
    Rcpld,
    Crcq,
}

impl std::fmt::Display for CqName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CqName::LinearCq => "Linear CQ",
            CqName::Ccq => "CCQ",
            CqName::Mfc => "MFC",
            CqName::Nnamcq => "NNAMCQ",
            CqName::Wbcq => "WBCQ",
            CqName::Quasinormality => "quasinormality",
            CqName::Foscms => "FOSCMS",
            CqName::Soscms => "SOSCMS",
            CqName::Rcpld => "RCPLD",
            CqName::Crcq => "CRCQ",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqStatus {
    Certified,
    Refuted,
    /// Refuted only with a multiplier from an outer approximation of a limiting cone.
    CandidateRefuted,
    Inconclusive,
    /// The condition's structural premise does not hold for this system.
    NotApplicable,
}

/// Data exhibiting a violation. Which fields are set depends on the condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub component: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqVerdict {
    pub name: CqName,
    pub status: CqStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub modulus: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CqVerdict {
    pub(crate) fn new(name: CqName, status: CqStatus) -> Self {
        CqVerdict {
            name,
            status,
            witness: None,
            modulus: None,
            notes: Vec::new(),
        }
    }

    pub(crate) fn with_witness(mut self, w: Witness) -> Self {
        self.witness = Some(w);
        self
    }

    pub(crate) fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    pub fn is_certified(&self) -> bool {
        self.status == CqStatus::Certified
    }

    pub fn is_refuted(&self) -> bool {
        self.status == CqStatus::Refuted
    }
}

/// Evaluated data at one feasible point.
pub(crate) struct PointCtx<'a> {
    pub sys: &'a ConstraintSystem,
    pub point: Vector,
    pub value: Vector,
    pub jac: Matrix,
    pub u: Vector,
    pub controls: Vec<usize>,
}

impl<'a> PointCtx<'a> {
    pub fn new(sys: &'a ConstraintSystem, point: &Vector, opts: &CqOptions) -> Result<Self, CqError> {
        sys.check_feasible(point, opts.feas_tol)?;
        let raw = sys.map.eval(point.as_slice())?;
        let value = if sys.target.dim() == 0 {
            raw
        } else {
            sys.target.snap(&raw, opts.feas_tol).unwrap_or(raw)
        };
        let u_raw = sys.controls_of(point);
        let u = if u_raw.is_empty() {
            u_raw
        } else {
            sys.control_set.snap(&u_raw, opts.feas_tol).unwrap_or(u_raw)
        };
        Ok(PointCtx {
            sys,
            point: point.clone(),
            value,
            jac: sys.map.jacobian(point.as_slice())?,
            u,
            controls: sys.indices(Role::Control),
        })
    }

    pub fn m(&self) -> usize {
        self.value.len()
    }

    pub fn n(&self) -> usize {
        self.point.len()
    }

    pub fn target_normals(&self) -> Result<ConeUnion, CqError> {
        if self.m() == 0 {
            return Ok(single(PolyCone::zero(0)));
        }
        Ok(self.sys.target.limiting_normal_cone_outer(&self.value)?)
    }

    pub fn control_normals(&self) -> Result<ConeUnion, CqError> {
        if self.u.is_empty() {
            return Ok(single(PolyCone::zero(0)));
        }
        Ok(self.sys.control_set.limiting_normal_cone_outer(&self.u)?)
    }

    pub fn target_frechet(&self) -> Result<PolyCone, CqError> {
        if self.m() == 0 {
            return Ok(PolyCone::zero(0));
        }
        Ok(self.sys.target.frechet_normal_cone(&self.value)?)
    }

    pub fn control_frechet(&self) -> Result<PolyCone, CqError> {
        if self.u.is_empty() {
            return Ok(PolyCone::zero(0));
        }
        Ok(self.sys.control_set.frechet_normal_cone(&self.u)?)
    }
}

pub(crate) fn single(c: PolyCone) -> ConeUnion {
    ConeUnion {
        cones: vec![c],
        outer: false,
    }
}

const PIECE_GUARD: usize = 8;

pub(crate) fn guard_pieces(sys: &ConstraintSystem) -> Result<(), CqError> {
    let n = sys.target.pieces().len().max(sys.control_set.pieces().len());
    if n > PIECE_GUARD {
        return Err(CqError::Structure(format!(
            "{n} union pieces exceed the enumeration guard of {PIECE_GUARD}"
        )));
    }
    Ok(())
}

/// Re-checks a refutation witness against the cone system that defines the
/// condition, returning the largest residual.
///
/// Multiplier witnesses must satisfy `λ ∈ N_target`, `η ∈ N_U` (directional
/// cones when a direction is present), the zero-block equations and, for
/// SOSCMS, `Σ λᵢ qᵢ ≥ 0`. Directions must lie in the critical cone.
pub fn witness_residual(
    sys: &ConstraintSystem,
    point: &Vector,
    verdict: &CqVerdict,
    opts: &CqOptions,
) -> Result<f64, CqError> {
    let w = verdict
        .witness
        .as_ref()
        .ok_or_else(|| CqError::Structure("verdict carries no witness".into()))?;
    let ctx = PointCtx::new(sys, point, opts)?;
    match verdict.name {
        CqName::LinearCq => {
            let c = w.component.ok_or_else(|| CqError::Structure("missing component".into()))?;
            Ok(if sys.map.is_affine()[c] { 1.0 } else { 0.0 })
        }
        CqName::Rcpld | CqName::Crcq => Ok(if w.sample.is_some() { 0.0 } else { 1.0 }),
        CqName::Quasinormality => {
            let lam = vec_of(&w.lambda)?;
            let z = vec_of(&w.sample)?;
            let v = sys.map.eval(z.as_slice())?;
            let mut worst: f64 = 0.0;
            for i in 0..lam.len() {
                if lam[i].abs() > 1e-9 && lam[i] * (v[i] - ctx.value[i]) <= 0.0 {
                    worst = worst.max(1.0);
                }
            }
            Ok(worst)
        }
        _ => multiplier::residual(&ctx, verdict.name, w),
    }
}

fn vec_of(v: &Option<Vec<f64>>) -> Result<Vector, CqError> {
    v.as_ref()
        .map(|x| Vector::from_column_slice(x))
        .ok_or_else(|| CqError::Structure("witness is missing a field".into()))
}
