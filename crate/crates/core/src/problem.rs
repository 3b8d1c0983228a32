//! Optimal-control problem description: the JSON problem file and its parsed,
//! dimension-checked form.
//!
//! Variables are laid out state blocks first, then algebraic, then control
//! blocks, each group in declaration order. Endpoint expressions see blocks
//! `<state>_0` and `<state>_T`; the implicit form of a structured problem adds
//! velocity blocks `<state>_dot`.

use serde::{Deserialize, Serialize};

use crate::cq::{ConstraintSystem, Role};
use crate::error::{CqError, ExprError, ProblemError};
use crate::expr::{BinaryOp, Expr, Layout, VectorFunction};
use crate::linalg::{Matrix, Vector};
use crate::polyhedra::{parse_set, PolyUnion, Polyhedron};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    State,
    Algebraic,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub dim: usize,
    pub role: VarRole,
}

/// Scalar radius or a `[t, R]` table interpolated linearly in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Scalar(f64),
    Table(Vec<[f64; 2]>),
}

/// `E ẋ = g(x, u)` with `g` written over the ordinary variable layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredSpec {
    pub e: Vec<Vec<f64>>,
    pub g: Vec<String>,
}

/// Constant initial values per block group; missing groups use defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

/// The on-disk problem format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: String,
    pub variables: Vec<VariableDecl>,
    #[serde(default)]
    pub dynamics: Vec<String>,
    #[serde(default)]
    pub algebraic: Vec<String>,
    #[serde(default = "zero_text")]
    pub running_cost: String,
    #[serde(default = "zero_text")]
    pub endpoint_cost: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_set: Option<String>,
    pub horizon: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<RadiusSpec>,
    #[serde(rename = "structured_E", default, skip_serializing_if = "Option::is_none")]
    pub structured_e: Option<StructuredSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_piece: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_piece: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
}

fn zero_text() -> String {
    "0".to_string()
}

/// Radius of the local minimum, `Infinite` when not declared.
#[derive(Debug, Clone, PartialEq)]
pub enum Radius {
    Infinite,
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl Radius {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Radius::Infinite => f64::INFINITY,
            Radius::Constant(r) => *r,
            Radius::Table(rows) => {
                let (first, last) = (rows[0], rows[rows.len() - 1]);
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let k = rows.partition_point(|r| r.0 <= t);
                let (a, b) = (rows[k - 1], rows[k]);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        }
    }

    fn to_spec(&self) -> Option<RadiusSpec> {
        match self {
            Radius::Infinite => None,
            Radius::Constant(r) => Some(RadiusSpec::Scalar(*r)),
            Radius::Table(rows) => Some(RadiusSpec::Table(rows.iter().map(|&(t, r)| [t, r]).collect())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredE {
    pub e: Matrix,
    pub g: VectorFunction,
}

/// A parsed problem. Dynamics, algebraic map and running cost share
/// [`layout`](Self::layout); the endpoint cost uses
/// [`endpoint_layout`](Self::endpoint_layout).
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub name: String,
    pub variables: Vec<VariableDecl>,
    pub layout: Layout,
    pub endpoint_layout: Layout,
    pub nx: usize,
    pub ny: usize,
    pub nu: usize,
    /// `φ` in `ẋ = φ(x, y, u)`, or `g` in `E ẋ = g(x, u)` for structured problems.
    pub dynamics: VectorFunction,
    pub algebraic: Option<VectorFunction>,
    pub running_cost: VectorFunction,
    pub endpoint_cost: VectorFunction,
    pub control_set: PolyUnion,
    pub endpoint_set: PolyUnion,
    pub target_set: PolyUnion,
    pub horizon: (f64, f64),
    pub radius: Radius,
    pub structured: Option<StructuredE>,
    pub control_piece: Option<usize>,
    pub endpoint_piece: Option<usize>,
    pub init: InitSpec,
}

impl PartialEq for ControlProblem {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.variables == o.variables
            && self.dynamics == o.dynamics
            && self.algebraic == o.algebraic
            && self.running_cost == o.running_cost
            && self.endpoint_cost == o.endpoint_cost
            && self.control_set.to_string() == o.control_set.to_string()
            && self.endpoint_set.to_string() == o.endpoint_set.to_string()
            && self.target_set.to_string() == o.target_set.to_string()
            && self.horizon == o.horizon
            && self.radius == o.radius
            && self.structured == o.structured
            && self.control_piece == o.control_piece
            && self.endpoint_piece == o.endpoint_piece
            && self.init == o.init
    }
}

fn invalid(msg: impl Into<String>) -> ProblemError {
    ProblemError::Invalid(msg.into())
}

fn parse_fn(field: &str, texts: &[String], layout: &Layout) -> Result<VectorFunction, ProblemError> {
    VectorFunction::parse(texts, layout).map_err(|source| ProblemError::Expr {
        field: field.to_string(),
        source,
    })
}

fn parse_set_field(field: &str, text: Option<&str>, default: PolyUnion) -> Result<PolyUnion, ProblemError> {
    match text {
        None => Ok(default),
        Some(t) => parse_set(t).map_err(|source| ProblemError::Set {
            field: field.to_string(),
            source,
        }),
    }
}

fn check_dim(field: &str, set: &PolyUnion, dim: usize) -> Result<(), ProblemError> {
    if set.dim() != dim {
        return Err(invalid(format!("{field} lives in dimension {} but {dim} is required", set.dim())));
    }
    Ok(())
}

impl ControlProblem {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| ProblemError::Json(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("problem file serialises")
    }

    pub fn from_file(file: &ProblemFile) -> Result<Self, ProblemError> {
        let mut layout = Layout::default();
        let mut dims = [0usize; 3];
        for role in [VarRole::State, VarRole::Algebraic, VarRole::Control] {
            for v in file.variables.iter().filter(|v| v.role == role) {
                if v.name.is_empty() || layout.block(&v.name).is_some() {
                    return Err(invalid(format!("duplicate or empty variable name '{}'", v.name)));
                }
                layout.push(&v.name, v.dim);
                dims[role as usize] += v.dim;
            }
        }
        let [nx, ny, nu] = dims;
        if nx == 0 {
            return Err(invalid("at least one state variable is required"));
        }
        let states: Vec<&VariableDecl> = file.variables.iter().filter(|v| v.role == VarRole::State).collect();
        let mut endpoint_layout = Layout::default();
        for suffix in ["_0", "_T"] {
            for v in &states {
                endpoint_layout.push(&format!("{}{suffix}", v.name), v.dim);
            }
        }

        let structured = match &file.structured_e {
            None => None,
            Some(spec) => {
                if ny != 0 {
                    return Err(invalid("structured_E problems take no algebraic variables"));
                }
                if !file.dynamics.is_empty() || !file.algebraic.is_empty() {
                    return Err(invalid("structured_E replaces 'dynamics' and 'algebraic'"));
                }
                let m = spec.e.len();
                if m == 0 || spec.e.iter().any(|r| r.len() != nx) {
                    return Err(invalid(format!("E must be a non-empty matrix with {nx} columns")));
                }
                if spec.g.len() != m {
                    return Err(invalid(format!("E has {m} rows but g has {} components", spec.g.len())));
                }
                let e = Matrix::from_fn(m, nx, |i, j| spec.e[i][j]);
                let g = parse_fn("structured_E.g", &spec.g, &layout)?;
                Some(StructuredE { e, g })
            }
        };

        let dynamics = match &structured {
            Some(s) => s.g.clone(),
            None => {
                if file.dynamics.len() != nx {
                    return Err(invalid(format!(
                        "{} dynamics components for {nx} states",
                        file.dynamics.len()
                    )));
                }
                parse_fn("dynamics", &file.dynamics, &layout)?
            }
        };
        let algebraic = if file.algebraic.is_empty() {
            None
        } else {
            Some(parse_fn("algebraic", &file.algebraic, &layout)?)
        };
        let nh = algebraic.as_ref().map_or(0, |h| h.output_dim());
        if ny > 0 && nh == 0 {
            return Err(invalid("algebraic variables declared without algebraic equations"));
        }
        let running_cost = parse_fn("running_cost", std::slice::from_ref(&file.running_cost), &layout)?;
        let endpoint_cost = parse_fn("endpoint_cost", std::slice::from_ref(&file.endpoint_cost), &endpoint_layout)?;

        let control_set = parse_set_field("control_set", file.control_set.as_deref(), PolyUnion::whole(nu))?;
        check_dim("control_set", &control_set, nu)?;
        let endpoint_set =
            parse_set_field("endpoint_set", file.endpoint_set.as_deref(), PolyUnion::whole(2 * nx))?;
        check_dim("endpoint_set", &endpoint_set, 2 * nx)?;
        let target_set = parse_set_field("target_set", file.target_set.as_deref(), PolyUnion::zero(nh))?;
        check_dim("target_set", &target_set, nh)?;

        let [t0, t1] = file.horizon;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(invalid("horizon must satisfy t0 < t1"));
        }
        let radius = match &file.radius {
            None => Radius::Infinite,
            Some(RadiusSpec::Scalar(r)) => {
                if !(*r > 0.0) {
                    return Err(invalid("radius must be positive"));
                }
                Radius::Constant(*r)
            }
            Some(RadiusSpec::Table(rows)) => {
                if rows.is_empty()
                    || rows.iter().any(|r| !(r[1] > 0.0))
                    || rows.windows(2).any(|w| w[1][0] <= w[0][0])
                {
                    return Err(invalid("radius table needs increasing times and positive radii"));
                }
                Radius::Table(rows.iter().map(|r| (r[0], r[1])).collect())
            }
        };
        for (field, piece, set) in [
            ("control_piece", file.control_piece, &control_set),
            ("endpoint_piece", file.endpoint_piece, &endpoint_set),
        ] {
            if let Some(k) = piece {
                if k >= set.pieces().len() {
                    return Err(invalid(format!("{field} {k} out of range")));
                }
            }
        }
        let init = file.init.clone().unwrap_or_default();
        for (name, vals, dim) in [("x", &init.x, nx), ("y", &init.y, ny), ("u", &init.u, nu)] {
            if let Some(v) = vals {
                if v.len() != dim {
                    return Err(invalid(format!("init.{name} has length {} instead of {dim}", v.len())));
                }
            }
        }

        Ok(ControlProblem {
            name: file.name.clone(),
            variables: file.variables.clone(),
            layout,
            endpoint_layout,
            nx,
            ny,
            nu,
            dynamics,
            algebraic,
            running_cost,
            endpoint_cost,
            control_set,
            endpoint_set,
            target_set,
            horizon: (t0, t1),
            radius,
            structured,
            control_piece: file.control_piece,
            endpoint_piece: file.endpoint_piece,
            init,
        })
    }

    /// Canonical file form: expressions and sets are re-printed.
    pub fn to_file(&self) -> ProblemFile {
        let structured_e = self.structured.as_ref().map(|s| StructuredSpec {
            e: s.e.row_iter().map(|r| r.iter().copied().collect()).collect(),
            g: s.g.to_strings(),
        });
        ProblemFile {
            name: self.name.clone(),
            variables: self.variables.clone(),
            dynamics: if self.structured.is_some() { Vec::new() } else { self.dynamics.to_strings() },
            algebraic: self.algebraic.as_ref().map_or_else(Vec::new, |h| h.to_strings()),
            running_cost: self.running_cost.to_strings().remove(0),
            endpoint_cost: self.endpoint_cost.to_strings().remove(0),
            control_set: Some(self.control_set.to_string()),
            endpoint_set: Some(self.endpoint_set.to_string()),
            target_set: Some(self.target_set.to_string()),
            horizon: [self.horizon.0, self.horizon.1],
            radius: self.radius.to_spec(),
            structured_e,
            control_piece: self.control_piece,
            endpoint_piece: self.endpoint_piece,
            init: (self.init != InitSpec::default()).then(|| self.init.clone()),
        }
    }

    pub fn nh(&self) -> usize {
        self.algebraic.as_ref().map_or(0, |h| h.output_dim())
    }

    /// Width of one mesh node `(x, y, u)`.
    pub fn node_width(&self) -> usize {
        self.nx + self.ny + self.nu
    }

    /// Single polyhedron for the NLP, honouring a declared piece.
    pub fn control_polyhedron(&self) -> Option<&Polyhedron> {
        select_piece(&self.control_set, self.control_piece)
    }

    pub fn endpoint_polyhedron(&self) -> Option<&Polyhedron> {
        select_piece(&self.endpoint_set, self.endpoint_piece)
    }

    /// The pointwise constraint system whose qualification conditions matter.
    ///
    /// Explicit problems use `h(x, y, u) ∈ K` over `(x, y, u)`. Structured
    /// problems use `E v − g(x, u) = 0` over `(x, u, v)`.
    pub fn constraint_system(&self) -> Result<ConstraintSystem, CqError> {
        match &self.structured {
            None => {
                let roles: Vec<Role> = std::iter::repeat_n(Role::State, self.nx)
                    .chain(std::iter::repeat_n(Role::Algebraic, self.ny))
                    .chain(std::iter::repeat_n(Role::Control, self.nu))
                    .collect();
                let map = match &self.algebraic {
                    Some(h) => h.clone(),
                    None => VectorFunction::new(Vec::new(), self.layout.clone())?,
                };
                ConstraintSystem::new(map, self.target_set.clone(), self.control_set.clone(), roles)
            }
            Some(s) => {
                let map = self.implicit_map(s)?;
                let roles: Vec<Role> = std::iter::repeat_n(Role::State, self.nx)
                    .chain(std::iter::repeat_n(Role::Control, self.nu))
                    .chain(std::iter::repeat_n(Role::Velocity, self.nx))
                    .collect();
                ConstraintSystem::new(map, PolyUnion::zero(s.e.nrows()), self.control_set.clone(), roles)
            }
        }
    }

    /// `E v − g(x, u)` over the layout `(x, u, v)`.
    pub fn implicit_map(&self, s: &StructuredE) -> Result<VectorFunction, CqError> {
        let mut layout = self.layout.clone();
        for v in self.variables.iter().filter(|v| v.role == VarRole::State) {
            layout.push(&format!("{}_dot", v.name), v.dim);
        }
        let voff = self.nx + self.nu;
        let comps = s
            .g
            .components()
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let mut ev = Expr::constant(0.0);
                for j in 0..self.nx {
                    let c = s.e[(i, j)];
                    if c != 0.0 {
                        let term = Expr::binary(BinaryOp::Mul, Expr::constant(c), Expr::var(voff + j));
                        ev = Expr::binary(BinaryOp::Add, ev, term);
                    }
                }
                Expr::binary(BinaryOp::Sub, ev, gi.clone())
            })
            .collect();
        Ok(VectorFunction::new(comps, layout)?)
    }

    /// Splits a node vector into `(x, y, u)`.
    pub fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (x, rest) = z.split_at(self.nx);
        let (y, u) = rest.split_at(self.ny);
        (x, y, u)
    }

    pub fn join(&self, x: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.node_width());
        z.extend_from_slice(x);
        z.extend_from_slice(y);
        z.extend_from_slice(u);
        z
    }

    /// Point of [`constraint_system`](Self::constraint_system) for a mesh node:
    /// `(x, y, u)`, or `(x, u, v)` with `v = E⁺g(x, u)` for structured problems.
    pub fn cq_point(&self, x: &[f64], y: &[f64], u: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut z = self.join(x, y, u);
        if let Some(s) = &self.structured {
            let g = self.dynamics.eval(&z)?;
            let v = crate::linalg::pseudo_inverse(&s.e) * g;
            z.extend(v.iter());
        }
        Ok(z)
    }

    /// Residual of the algebraic constraint, measured as the distance-like
    /// violation of `h(z) ∈ K` (zero without algebraic equations).
    pub fn algebraic_violation(&self, z: &[f64]) -> Result<f64, ProblemError> {
        let Some(h) = &self.algebraic else {
            return Ok(0.0);
        };
        let hv = h.eval(z).map_err(|source| ProblemError::Expr {
            field: "algebraic".into(),
            source,
        })?;
        let c = self.target_set.contains(&hv, 0.0).map_err(|source| ProblemError::Set {
            field: "target_set".into(),
            source,
        })?;
        Ok(c.violation)
    }

    /// Default mesh initial guess: `x` interpolates the pinned endpoint
    /// coordinates of the endpoint set, `y` and `u` start at zero (clamped
    /// into the control bounds) unless overridden by `init`.
    pub fn initial_node(&self, s: f64) -> Vec<f64> {
        let bounds = self.endpoint_polyhedron().map(coordinate_bounds);
        let mut x = vec![0.0; self.nx];
        for (k, xk) in x.iter_mut().enumerate() {
            if let Some(v) = self.init.x.as_ref() {
                *xk = v[k];
                continue;
            }
            let Some((lo, hi)) = &bounds else { continue };
            let pick = |j: usize| (lo[j] == hi[j]).then_some(lo[j]);
            let (a, b) = match (pick(k), pick(self.nx + k)) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => {
                    let c = 0.0f64.max(lo[k]).min(hi[k]);
                    (c, c)
                }
            };
            *xk = a + s * (b - a);
        }
        let y = self.init.y.clone().unwrap_or_else(|| vec![0.0; self.ny]);
        let mut u = self.init.u.clone().unwrap_or_else(|| vec![0.0; self.nu]);
        if let Some(p) = self.control_polyhedron() {
            let (lo, hi) = coordinate_bounds(p);
            for (k, uk) in u.iter_mut().enumerate() {
                *uk = uk.max(lo[k]).min(hi[k]);
            }
        }
        self.join(&x, &y, &u)
    }
}

fn select_piece(set: &PolyUnion, piece: Option<usize>) -> Option<&Polyhedron> {
    match (set.pieces().len(), piece) {
        (_, Some(k)) => set.pieces().get(k),
        (1, None) => set.pieces().first(),
        _ => None,
    }
}

/// Per-coordinate bounds implied by single-coefficient rows.
pub fn coordinate_bounds(p: &Polyhedron) -> (Vec<f64>, Vec<f64>) {
    let n = p.dim();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for (row, rhs, eq) in p
        .a()
        .row_iter()
        .zip(p.b().iter())
        .map(|(r, b)| (r, *b, false))
        .chain(p.g().row_iter().zip(p.gv().iter()).map(|(r, b)| (r, *b, true)))
    {
        let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
        if nz.len() != 1 {
            continue;
        }
        let j = nz[0];
        let v = rhs / row[j];
        if eq {
            lo[j] = lo[j].max(v);
            hi[j] = hi[j].min(v);
        } else if row[j] > 0.0 {
            hi[j] = hi[j].min(v);
        } else {
            lo[j] = lo[j].max(v);
        }
    }
    (lo, hi)
}

/// Node vector as an nalgebra vector.
pub fn to_vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}
