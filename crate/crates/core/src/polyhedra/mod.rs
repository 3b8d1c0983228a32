//! Finite unions of convex polyhedra and their tangent and normal cones.

mod cone;
mod syntax;

pub use cone::{h_to_v, ConeUnion, HRep, PolyCone, VRep, DD_DIMENSION_CAP};
pub use syntax::parse_set;

use crate::error::SetError;
use crate::linalg::{Matrix, Vector};

pub const DEFAULT_SET_TOL: f64 = 1e-9;

/// `{x : A x ≤ b, G x = g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: Matrix,
    b: Vector,
    g: Matrix,
    gv: Vector,
}

/// Recognized shapes of a piece, inferred from its data.
#[derive(Debug, Clone, PartialEq)]
pub enum SetTag {
    Whole(usize),
    Zero(usize),
    Nonpositive(usize),
    Box { lo: Vec<f64>, hi: Vec<f64> },
    General,
}

/// Per-coordinate description of a product of `{0}`, `ℝ₋` and `ℝ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    Zero,
    Nonpositive,
    Free,
}

impl Polyhedron {
    pub fn new(a: Matrix, b: Vector, g: Matrix, gv: Vector) -> Result<Self, SetError> {
        let dim = a.ncols().max(g.ncols());
        let a = if a.nrows() == 0 { Matrix::zeros(0, dim) } else { a };
        let g = if g.nrows() == 0 { Matrix::zeros(0, dim) } else { g };
        if a.ncols() != dim || g.ncols() != dim {
            return Err(SetError::Dimension {
                expected: dim,
                found: a.ncols().min(g.ncols()),
            });
        }
        if a.nrows() != b.len() {
            return Err(SetError::Dimension {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        if g.nrows() != gv.len() {
            return Err(SetError::Dimension {
                expected: g.nrows(),
                found: gv.len(),
            });
        }
        Ok(Polyhedron { a, b, g, gv })
    }

    pub fn whole(n: usize) -> Self {
        Polyhedron {
            a: Matrix::zeros(0, n),
            b: Vector::zeros(0),
            g: Matrix::zeros(0, n),
            gv: Vector::zeros(0),
        }
    }

    pub fn zero(n: usize) -> Self {
        Polyhedron {
            a: Matrix::zeros(0, n),
            b: Vector::zeros(0),
            g: Matrix::identity(n, n),
            gv: Vector::zeros(n),
        }
    }

    pub fn nonpositive(n: usize) -> Self {
        Polyhedron {
            a: Matrix::identity(n, n),
            b: Vector::zeros(n),
            g: Matrix::zeros(0, n),
            gv: Vector::zeros(0),
        }
    }

    /// `lo ≤ x ≤ hi`; infinite bounds produce no row. Rows are ordered
    /// per coordinate as (upper, lower).
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::Dimension {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let n = lo.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            if hi[i].is_finite() {
                rows.push(unit_row(n, i, 1.0));
                rhs.push(hi[i]);
            }
            if lo[i].is_finite() {
                rows.push(unit_row(n, i, -1.0));
                rhs.push(-lo[i]);
            }
        }
        let a = if rows.is_empty() {
            Matrix::zeros(0, n)
        } else {
            Matrix::from_rows(&rows)
        };
        Ok(Polyhedron {
            a,
            b: Vector::from_vec(rhs),
            g: Matrix::zeros(0, n),
            gv: Vector::zeros(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn gv(&self) -> &Vector {
        &self.gv
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Polyhedron) -> Polyhedron {
        let (n1, n2) = (self.dim(), other.dim());
        let blockdiag = |x: &Matrix, y: &Matrix| {
            let mut m = Matrix::zeros(x.nrows() + y.nrows(), n1 + n2);
            m.view_mut((0, 0), (x.nrows(), n1)).copy_from(x);
            m.view_mut((x.nrows(), n1), (y.nrows(), n2)).copy_from(y);
            m
        };
        let cat = |x: &Vector, y: &Vector| Vector::from_iterator(x.len() + y.len(), x.iter().chain(y.iter()).copied());
        Polyhedron {
            a: blockdiag(&self.a, &other.a),
            b: cat(&self.b, &other.b),
            g: blockdiag(&self.g, &other.g),
            gv: cat(&self.gv, &other.gv),
        }
    }

    /// Largest constraint violation at `x`.
    pub fn violation(&self, x: &Vector) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a.nrows() > 0 {
            worst = worst.max((&self.a * x - &self.b).max());
        }
        if self.g.nrows() > 0 {
            worst = worst.max((&self.g * x - &self.gv).amax());
        }
        worst.max(0.0)
    }

    /// Inequality rows with `a_i x ≥ b_i − tol`.
    pub fn active_rows(&self, x: &Vector, tol: f64) -> Vec<usize> {
        (0..self.a.nrows())
            .filter(|&i| self.a.row(i).dot(&x.transpose()) >= self.b[i] - tol)
            .collect()
    }

    fn check_point(&self, x: &Vector, tol: f64) -> Result<(), SetError> {
        if x.len() != self.dim() {
            return Err(SetError::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let v = self.violation(x);
        if v > tol {
            return Err(SetError::NotInSet { violation: v });
        }
        Ok(())
    }

    /// Moves `x` onto the constraints that are active within `tol`, so that
    /// cone computations at the default tolerance see the same active set.
    pub fn snap(&self, x: &Vector, tol: f64) -> Vector {
        let act = self.active_rows(x, tol);
        let rows = cone::vstack(&self.rows_of(&act), &self.g, self.dim());
        if rows.nrows() == 0 {
            return x.clone();
        }
        let rhs = Vector::from_iterator(
            rows.nrows(),
            act.iter().map(|&i| self.b[i]).chain(self.gv.iter().copied()),
        );
        let (delta, _) = crate::linalg::least_squares(&rows, &(rhs - &rows * x));
        x + delta
    }

    fn rows_of(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), self.dim(), |r, c| self.a[(idx[r], c)])
    }

    /// `T_P(x) = {w : A_active w ≤ 0, G w = 0}`.
    pub fn tangent_cone(&self, x: &Vector) -> Result<PolyCone, SetError> {
        self.check_point(x, DEFAULT_SET_TOL)?;
        let act = self.active_rows(x, DEFAULT_SET_TOL);
        Ok(PolyCone::from_h(self.rows_of(&act), self.g.clone()))
    }

    /// `N_P(x) = cone(active rows) + span(equality rows)`.
    pub fn normal_cone(&self, x: &Vector) -> Result<PolyCone, SetError> {
        self.check_point(x, DEFAULT_SET_TOL)?;
        let act = self.active_rows(x, DEFAULT_SET_TOL);
        Ok(self.normal_cone_from_rows(&act))
    }

    pub(crate) fn normal_cone_from_rows(&self, act: &[usize]) -> PolyCone {
        let rays: Vec<Vector> = act.iter().map(|&i| self.a.row(i).transpose()).collect();
        let lin: Vec<Vector> = self.g.row_iter().map(|r| r.transpose()).collect();
        PolyCone::from_v(self.dim(), &rays, &lin)
    }

    /// `N_P(x; d)`: empty when `d ∉ T_P(x)`, else `N_P(x) ∩ d^⊥`.
    pub fn directional_normal_cone(&self, x: &Vector, d: &Vector) -> Result<Option<PolyCone>, SetError> {
        self.check_point(x, DEFAULT_SET_TOL)?;
        if d.len() != self.dim() {
            return Err(SetError::Dimension {
                expected: self.dim(),
                found: d.len(),
            });
        }
        let scale = 1.0 + d.amax();
        let act = self.active_rows(x, DEFAULT_SET_TOL);
        let ad: Vec<f64> = act.iter().map(|&i| self.a.row(i).transpose().dot(d)).collect();
        let gd = if self.g.nrows() > 0 { (&self.g * d).amax() } else { 0.0 };
        if ad.iter().any(|&v| v > DEFAULT_SET_TOL * scale) || gd > DEFAULT_SET_TOL * scale {
            return Ok(None);
        }
        let keep: Vec<usize> = act
            .iter()
            .zip(&ad)
            .filter(|(_, &v)| v.abs() <= DEFAULT_SET_TOL * scale)
            .map(|(&i, _)| i)
            .collect();
        Ok(Some(self.normal_cone_from_rows(&keep)))
    }

    pub fn tag(&self) -> SetTag {
        let n = self.dim();
        let (ma, mg) = (self.a.nrows(), self.g.nrows());
        if ma == 0 && mg == 0 {
            return SetTag::Whole(n);
        }
        if ma == 0 && self.g == Matrix::identity(n, n) && self.gv.iter().all(|&v| v == 0.0) {
            return SetTag::Zero(n);
        }
        if mg == 0 && self.a == Matrix::identity(n, n) && self.b.iter().all(|&v| v == 0.0) && n > 0 {
            return SetTag::Nonpositive(n);
        }
        if mg == 0 && ma > 0 {
            if let Some((lo, hi)) = self.box_bounds() {
                if Polyhedron::boxed(&lo, &hi).as_ref() == Ok(self) {
                    return SetTag::Box { lo, hi };
                }
            }
        }
        SetTag::General
    }

    fn box_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (i, row) in self.a.row_iter().enumerate() {
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            match row[j] {
                v if v == 1.0 => hi[j] = self.b[i],
                v if v == -1.0 => lo[j] = -self.b[i],
                _ => return None,
            }
        }
        Some((lo, hi))
    }

    /// Coordinate structure when the piece is a product of `{0}`, `ℝ₋` and `ℝ`.
    pub fn coordinate_kinds(&self) -> Option<Vec<CoordKind>> {
        let n = self.dim();
        let mut kinds = vec![CoordKind::Free; n];
        let single = |m: &Matrix, i: usize| -> Option<(usize, f64)> {
            let nz: Vec<usize> = (0..n).filter(|&j| m[(i, j)] != 0.0).collect();
            (nz.len() == 1).then(|| (nz[0], m[(i, nz[0])]))
        };
        for i in 0..self.g.nrows() {
            let (j, _) = single(&self.g, i)?;
            if self.gv[i] != 0.0 {
                return None;
            }
            kinds[j] = CoordKind::Zero;
        }
        for i in 0..self.a.nrows() {
            let (j, s) = single(&self.a, i)?;
            if s <= 0.0 || self.b[i] != 0.0 {
                return None;
            }
            if kinds[j] == CoordKind::Free {
                kinds[j] = CoordKind::Nonpositive;
            }
        }
        Some(kinds)
    }
}

fn unit_row(n: usize, i: usize, s: f64) -> nalgebra::RowDVector<f64> {
    let mut r = nalgebra::RowDVector::zeros(n);
    r[i] = s;
    r
}

/// A piece containing the queried point with its active inequality rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivePiece {
    pub index: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub inside: bool,
    pub pieces: Vec<ActivePiece>,
    /// Smallest violation over pieces.
    pub violation: f64,
}

/// Nonempty finite union of polyhedra in a common ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyUnion {
    pieces: Vec<Polyhedron>,
}

impl PolyUnion {
    pub fn new(pieces: Vec<Polyhedron>) -> Result<Self, SetError> {
        let Some(first) = pieces.first() else {
            return Err(SetError::Syntax("a set needs at least one piece".into()));
        };
        let n = first.dim();
        if let Some(p) = pieces.iter().find(|p| p.dim() != n) {
            return Err(SetError::Dimension {
                expected: n,
                found: p.dim(),
            });
        }
        Ok(PolyUnion { pieces })
    }

    pub fn single(p: Polyhedron) -> Self {
        PolyUnion { pieces: vec![p] }
    }

    pub fn whole(n: usize) -> Self {
        Self::single(Polyhedron::whole(n))
    }

    pub fn zero(n: usize) -> Self {
        Self::single(Polyhedron::zero(n))
    }

    pub fn nonpositive(n: usize) -> Self {
        Self::single(Polyhedron::nonpositive(n))
    }

    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        Ok(Self::single(Polyhedron::boxed(lo, hi)?))
    }

    pub fn pieces(&self) -> &[Polyhedron] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    /// Tag of a single-piece set; unions are `General`.
    pub fn tag(&self) -> SetTag {
        if self.pieces.len() == 1 {
            self.pieces[0].tag()
        } else {
            SetTag::General
        }
    }

    pub fn is_whole_space(&self) -> bool {
        self.pieces.iter().any(|p| p.tag() == SetTag::Whole(p.dim()))
    }

    /// Cartesian product; pieces combine pairwise.
    pub fn product(&self, other: &PolyUnion) -> PolyUnion {
        let mut pieces = Vec::new();
        for p in &self.pieces {
            for q in &other.pieces {
                pieces.push(p.product(q));
            }
        }
        PolyUnion { pieces }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<Containment, SetError> {
        if x.len() != self.dim() {
            return Err(SetError::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut pieces = Vec::new();
        let mut best = f64::INFINITY;
        for (index, p) in self.pieces.iter().enumerate() {
            let v = p.violation(x);
            best = best.min(v);
            if v <= tol {
                pieces.push(ActivePiece {
                    index,
                    rows: p.active_rows(x, tol),
                });
            }
        }
        Ok(Containment {
            inside: !pieces.is_empty(),
            pieces,
            violation: best,
        })
    }

    /// [`Polyhedron::snap`] onto the closest piece, `None` if every piece is
    /// violated by more than `tol`.
    pub fn snap(&self, x: &Vector, tol: f64) -> Option<Vector> {
        let (idx, v) = self
            .pieces
            .iter()
            .map(|p| p.violation(x))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (v <= tol).then(|| self.pieces[idx].snap(x, tol))
    }

    fn active(&self, x: &Vector) -> Result<Vec<ActivePiece>, SetError> {
        let c = self.contains(x, DEFAULT_SET_TOL)?;
        if !c.inside {
            return Err(SetError::NotInSet { violation: c.violation });
        }
        Ok(c.pieces)
    }

    /// Union of the active pieces' tangent cones (exact).
    pub fn tangent_cone(&self, x: &Vector) -> Result<ConeUnion, SetError> {
        let cones = self
            .active(x)?
            .iter()
            .map(|ap| self.pieces[ap.index].tangent_cone(x))
            .collect::<Result<_, _>>()?;
        Ok(ConeUnion { cones, outer: false })
    }

    /// Intersection of the active pieces' normal cones.
    pub fn frechet_normal_cone(&self, x: &Vector) -> Result<PolyCone, SetError> {
        let act = self.active(x)?;
        let mut cone = self.pieces[act[0].index].normal_cone(x)?;
        for ap in &act[1..] {
            cone = cone.intersect(&self.pieces[ap.index].normal_cone(x)?)?;
        }
        Ok(cone)
    }

    /// Union of the active pieces' normal cones. Exact for one active piece,
    /// flagged as an outer approximation otherwise.
    pub fn limiting_normal_cone_outer(&self, x: &Vector) -> Result<ConeUnion, SetError> {
        let act = self.active(x)?;
        let cones = act
            .iter()
            .map(|ap| self.pieces[ap.index].normal_cone(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConeUnion {
            outer: cones.len() > 1,
            cones,
        })
    }

    /// Conic hull of every limiting-normal generator.
    pub fn clarke_normal_cone(&self, x: &Vector) -> Result<PolyCone, SetError> {
        self.limiting_normal_cone_outer(x)?.hull(self.dim())
    }

    /// Union of the active pieces' directional normal cones (empty when `d`
    /// is tangent to no active piece).
    pub fn directional_normal_cone(&self, x: &Vector, d: &Vector) -> Result<ConeUnion, SetError> {
        let act = self.active(x)?;
        let mut cones = Vec::new();
        for ap in &act {
            if let Some(c) = self.pieces[ap.index].directional_normal_cone(x, d)? {
                cones.push(c);
            }
        }
        Ok(ConeUnion {
            outer: act.len() > 1,
            cones,
        })
    }

    /// Coordinate structure when the set is one product of `{0}`, `ℝ₋`, `ℝ`.
    pub fn coordinate_kinds(&self) -> Option<Vec<CoordKind>> {
        if self.pieces.len() == 1 {
            self.pieces[0].coordinate_kinds()
        } else {
            None
        }
    }
}

impl std::fmt::Display for PolyUnion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        syntax::write_set(self, f)
    }
}
