use std::sync::OnceLock;

use crate::error::SetError;
use crate::linalg::{Matrix, Vector};
use crate::lp::{lp_solve, LpProblem, LpStatus};

/// Generator enumeration is only attempted up to this ambient dimension.
pub const DD_DIMENSION_CAP: usize = 8;

const DD_EPS: f64 = 1e-10;

/// `{w : A w ≤ 0, G w = 0}` with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HRep {
    pub a: Matrix,
    pub g: Matrix,
}

/// `cone(rays) + span(lineality)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VRep {
    pub rays: Vec<Vector>,
    pub lineality: Vec<Vector>,
}

impl VRep {
    pub fn is_zero(&self) -> bool {
        self.rays.is_empty() && self.lineality.is_empty()
    }

    /// Every generator, with lineality directions in both orientations.
    pub fn all_generators(&self) -> Vec<Vector> {
        let mut out = self.rays.clone();
        for l in &self.lineality {
            out.push(l.clone());
            out.push(-l);
        }
        out
    }
}

/// Polyhedral cone holding an H- and/or V-representation; the missing one is
/// computed on first use by double description.
#[derive(Debug, Clone)]
pub struct PolyCone {
    dim: usize,
    h: OnceLock<Result<HRep, SetError>>,
    v: OnceLock<Result<VRep, SetError>>,
}

fn normalized_rows(m: &Matrix) -> Matrix {
    let rows: Vec<_> = m
        .row_iter()
        .filter_map(|r| {
            let n = r.norm();
            (n > 1e-300).then(|| r / n)
        })
        .collect();
    if rows.is_empty() {
        Matrix::zeros(0, m.ncols())
    } else {
        Matrix::from_rows(&rows)
    }
}

fn clean_generators(vs: &[Vector]) -> Vec<Vector> {
    vs.iter()
        .filter_map(|v| {
            let n = v.amax();
            (n > 1e-300).then(|| v / n)
        })
        .collect()
}

impl PolyCone {
    pub fn from_h(a: Matrix, g: Matrix) -> Self {
        let dim = a.ncols().max(g.ncols());
        let a = if a.ncols() == dim { a } else { Matrix::zeros(0, dim) };
        let g = if g.ncols() == dim { g } else { Matrix::zeros(0, dim) };
        let h = OnceLock::new();
        let _ = h.set(Ok(HRep {
            a: normalized_rows(&a),
            g: normalized_rows(&g),
        }));
        PolyCone { dim, h, v: OnceLock::new() }
    }

    pub fn from_v(dim: usize, rays: &[Vector], lineality: &[Vector]) -> Self {
        let v = OnceLock::new();
        let _ = v.set(Ok(VRep {
            rays: clean_generators(rays),
            lineality: clean_generators(lineality),
        }));
        PolyCone { dim, h: OnceLock::new(), v }
    }

    pub fn zero(dim: usize) -> Self {
        PolyCone::from_v(dim, &[], &[])
    }

    pub fn whole(dim: usize) -> Self {
        PolyCone::from_h(Matrix::zeros(0, dim), Matrix::zeros(0, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_rep(&self) -> Result<&HRep, SetError> {
        self.h
            .get_or_init(|| {
                let v = self.v_rep()?;
                v_to_h(self.dim, v)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn v_rep(&self) -> Result<&VRep, SetError> {
        self.v
            .get_or_init(|| {
                let h = self.h.get().expect("cone built with one representation");
                let h = h.as_ref().map_err(Clone::clone)?;
                h_to_v(self.dim, &h.a, &h.g)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// The H-representation if it is already available.
    pub fn cached_h(&self) -> Option<&HRep> {
        self.h.get().and_then(|r| r.as_ref().ok())
    }

    /// The V-representation if it is already available.
    pub fn cached_v(&self) -> Option<&VRep> {
        self.v.get().and_then(|r| r.as_ref().ok())
    }

    /// Membership with a distance estimate. With an H-representation the
    /// estimate is the largest (unit-row) constraint violation; otherwise it is
    /// the ∞-norm distance to the generated cone, computed by LP.
    pub fn member(&self, v: &Vector, tol: f64) -> Result<(bool, f64), SetError> {
        if v.len() != self.dim {
            return Err(SetError::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        let viol = if let Some(h) = self.cached_h() {
            h_violation(h, v)
        } else {
            let vr = self.v_rep()?;
            v_distance(self.dim, vr, v)?
        };
        Ok((viol <= tol, viol))
    }

    /// Intersection of two cones in H-form.
    pub fn intersect(&self, other: &PolyCone) -> Result<PolyCone, SetError> {
        let a = self.h_rep()?;
        let b = other.h_rep()?;
        Ok(PolyCone::from_h(vstack(&a.a, &b.a, self.dim), vstack(&a.g, &b.g, self.dim)))
    }

    /// True when the cone is `{0}`.
    pub fn is_zero(&self) -> Result<bool, SetError> {
        if let Some(Ok(v)) = self.v.get() {
            return Ok(v.is_zero());
        }
        let h = self.h_rep()?;
        Ok(crate::lp::cone_is_trivial(&h.a, &h.g)?.trivial)
    }
}

impl PartialEq for PolyCone {
    /// Structural equality of whichever representations are present.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.h.get() == other.h.get()
            && self.v.get() == other.v.get()
    }
}

pub(crate) fn vstack(a: &Matrix, b: &Matrix, cols: usize) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), cols);
    if a.nrows() > 0 {
        out.rows_mut(0, a.nrows()).copy_from(a);
    }
    if b.nrows() > 0 {
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    }
    out
}

fn h_violation(h: &HRep, v: &Vector) -> f64 {
    let mut worst: f64 = 0.0;
    if h.a.nrows() > 0 {
        worst = worst.max((&h.a * v).max());
    }
    if h.g.nrows() > 0 {
        worst = worst.max((&h.g * v).amax());
    }
    worst.max(0.0)
}

fn v_distance(dim: usize, vr: &VRep, v: &Vector) -> Result<f64, SetError> {
    if vr.is_zero() {
        return Ok(v.amax());
    }
    // variables: α (rays, ≥ 0), β (lineality, free), t; maximise −t
    let nr = vr.rays.len();
    let nl = vr.lineality.len();
    let nv = nr + nl + 1;
    let mut a = Matrix::zeros(2 * dim, nv);
    let mut b = Vector::zeros(2 * dim);
    for i in 0..dim {
        for (k, r) in vr.rays.iter().chain(&vr.lineality).enumerate() {
            a[(i, k)] = -r[i];
            a[(dim + i, k)] = r[i];
        }
        a[(i, nv - 1)] = -1.0;
        a[(dim + i, nv - 1)] = -1.0;
        b[i] = -v[i];
        b[dim + i] = v[i];
    }
    let mut lower = vec![0.0; nr];
    lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(nl));
    lower.push(0.0);
    let mut c = Vector::zeros(nv);
    c[nv - 1] = -1.0;
    let lp = LpProblem::new(c)
        .with_inequalities(a, b)
        .with_bounds(lower, vec![f64::INFINITY; nv]);
    let res = lp_solve(&lp)?;
    match res.status {
        LpStatus::Optimal => Ok((-res.objective).max(0.0)),
        _ => Ok(f64::INFINITY),
    }
}

struct Ray {
    v: Vector,
    tight: Vec<bool>,
}

/// Double description: generators of `{w : A w ≤ 0, G w = 0}`.
pub fn h_to_v(dim: usize, a: &Matrix, g: &Matrix) -> Result<VRep, SetError> {
    if dim > DD_DIMENSION_CAP {
        return Err(SetError::DimensionCap(dim));
    }
    let a = normalized_rows(a);
    let g = normalized_rows(g);
    let m = a.nrows();
    let mut lin: Vec<Vector> = (0..dim).map(|i| Vector::from_fn(dim, |k, _| (k == i) as u8 as f64)).collect();
    let mut rays: Vec<Ray> = Vec::new();

    for row in g.row_iter() {
        let row = row.transpose();
        eliminate_equality(&row, &mut lin, &mut rays);
    }
    for (ci, row) in a.row_iter().enumerate() {
        let row = row.transpose();
        add_inequality(&row, ci, m, &mut lin, &mut rays);
    }

    let lineality = orthonormalize(&lin);
    let mut out: Vec<Vector> = Vec::new();
    for r in rays {
        let mut v = r.v;
        for l in &lineality {
            v -= l * l.dot(&v);
        }
        let n = v.amax();
        if n <= 1e-9 {
            continue;
        }
        v /= n;
        if !out.iter().any(|o| (o - &v).amax() < 1e-9) {
            out.push(v);
        }
    }
    Ok(VRep {
        rays: out,
        lineality,
    })
}

fn orthonormalize(vs: &[Vector]) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for o in &out {
            w -= o * o.dot(&w);
        }
        let n = w.norm();
        if n > 1e-9 {
            out.push(w / n);
        }
    }
    out
}

fn unit(v: Vector) -> Vector {
    let n = v.amax();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Restricts the current cone to `row · w = 0`.
fn eliminate_equality(row: &Vector, lin: &mut Vec<Vector>, rays: &mut Vec<Ray>) {
    if let Some(pivot) = lineality_pivot(row, lin) {
        let lp = lin.remove(pivot);
        let s = row.dot(&lp);
        for l in lin.iter_mut() {
            let f = row.dot(l) / s;
            *l = unit(&*l - &lp * f);
        }
        for r in rays.iter_mut() {
            let f = row.dot(&r.v) / s;
            r.v = unit(&r.v - &lp * f);
        }
        return;
    }
    let vals: Vec<f64> = rays.iter().map(|r| row.dot(&r.v)).collect();
    let mut next: Vec<Ray> = Vec::new();
    for (i, r) in rays.iter().enumerate() {
        if vals[i].abs() <= DD_EPS {
            next.push(Ray { v: r.v.clone(), tight: r.tight.clone() });
        }
    }
    combine_pairs(rays, &vals, &mut next);
    *rays = next;
}

fn lineality_pivot(row: &Vector, lin: &[Vector]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in lin.iter().enumerate() {
        let s = row.dot(l).abs();
        if s > DD_EPS && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn add_inequality(row: &Vector, ci: usize, m: usize, lin: &mut Vec<Vector>, rays: &mut Vec<Ray>) {
    for r in rays.iter_mut() {
        if r.tight.len() < m {
            r.tight.resize(m, false);
        }
    }
    if let Some(pivot) = lineality_pivot(row, lin) {
        let mut lp = lin.remove(pivot);
        if row.dot(&lp) > 0.0 {
            lp = -lp;
        }
        let s = row.dot(&lp);
        for l in lin.iter_mut() {
            let f = row.dot(l) / s;
            *l = unit(&*l - &lp * f);
        }
        for r in rays.iter_mut() {
            let f = row.dot(&r.v) / s;
            r.v = unit(&r.v - &lp * f);
            r.tight[ci] = true;
        }
        // the former lineality direction is tight on every earlier inequality
        let mut tight = vec![false; m];
        tight[..ci].iter_mut().for_each(|t| *t = true);
        rays.push(Ray { v: unit(lp), tight });
        return;
    }
    let vals: Vec<f64> = rays.iter().map(|r| row.dot(&r.v)).collect();
    let mut next: Vec<Ray> = Vec::new();
    for (i, r) in rays.iter().enumerate() {
        if vals[i] <= DD_EPS {
            let mut tight = r.tight.clone();
            tight[ci] = vals[i].abs() <= DD_EPS;
            next.push(Ray { v: r.v.clone(), tight });
        }
    }
    let mut combos = Vec::new();
    combine_pairs(rays, &vals, &mut combos);
    for mut c in combos {
        c.tight[ci] = true;
        next.push(c);
    }
    *rays = next;
}

/// Adds the combinations of adjacent (positive, negative) ray pairs that lie on
/// the hyperplane `vals = 0`.
fn combine_pairs(rays: &[Ray], vals: &[f64], out: &mut Vec<Ray>) {
    let pos: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] > DD_EPS).collect();
    let neg: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] < -DD_EPS).collect();
    for &p in &pos {
        for &n in &neg {
            let common: Vec<bool> = rays[p]
                .tight
                .iter()
                .zip(&rays[n].tight)
                .map(|(a, b)| *a && *b)
                .collect();
            let adjacent = !(0..rays.len()).any(|k| {
                k != p
                    && k != n
                    && common
                        .iter()
                        .zip(&rays[k].tight)
                        .all(|(c, t)| !*c || *t)
            });
            if !adjacent {
                continue;
            }
            let v = &rays[n].v * vals[p] - &rays[p].v * vals[n];
            out.push(Ray { v: unit(v), tight: common });
        }
    }
}

/// H-representation of `cone(R) + span(L)` via the polar cone.
fn v_to_h(dim: usize, v: &VRep) -> Result<HRep, SetError> {
    let to_rows = |vs: &[Vector]| {
        if vs.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&vs.iter().map(|x| x.transpose()).collect::<Vec<_>>())
        }
    };
    let polar = h_to_v(dim, &to_rows(&v.rays), &to_rows(&v.lineality))?;
    Ok(HRep {
        a: normalized_rows(&to_rows(&polar.rays)),
        g: normalized_rows(&to_rows(&polar.lineality)),
    })
}

/// Finite union of polyhedral cones. `outer` marks an over-approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeUnion {
    pub cones: Vec<PolyCone>,
    pub outer: bool,
}

impl ConeUnion {
    pub fn is_empty(&self) -> bool {
        self.cones.is_empty()
    }

    /// Member of any piece; the distance estimate is the smallest over pieces.
    pub fn member(&self, v: &Vector, tol: f64) -> Result<(bool, f64), SetError> {
        let mut best = f64::INFINITY;
        for c in &self.cones {
            let (_, d) = c.member(v, tol)?;
            best = best.min(d);
        }
        Ok((best <= tol, best))
    }

    /// Conic convex hull of all pieces, in V-form.
    pub fn hull(&self, dim: usize) -> Result<PolyCone, SetError> {
        let mut rays = Vec::new();
        let mut lin = Vec::new();
        for c in &self.cones {
            let v = c.v_rep()?;
            rays.extend(v.rays.iter().cloned());
            lin.extend(v.lineality.iter().cloned());
        }
        Ok(PolyCone::from_v(dim, &rays, &lin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn orthant_generators() {
        let c = PolyCone::from_h(-Matrix::identity(3, 3), Matrix::zeros(0, 3));
        let vr = c.v_rep().unwrap();
        assert_eq!(vr.rays.len(), 3);
        assert!(vr.lineality.is_empty());
        for r in &vr.rays {
            assert!(r.min() >= 0.0 && (r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn halfspace_and_line() {
        let c = PolyCone::from_h(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), Matrix::zeros(0, 2));
        let vr = c.v_rep().unwrap();
        assert_eq!(vr.rays.len(), 1);
        assert_eq!(vr.lineality.len(), 1);
        assert!((vr.rays[0][0] + 1.0).abs() < 1e-12);
        let c = PolyCone::from_h(Matrix::zeros(0, 2), Matrix::from_row_slice(1, 2, &[1.0, -1.0]));
        let vr = c.v_rep().unwrap();
        assert!(vr.rays.is_empty());
        assert_eq!(vr.lineality.len(), 1);
    }

    #[test]
    fn v_to_h_round_trip() {
        // cone over a square base in ℝ³
        let rays: Vec<Vector> = [[1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0], [-1.0, -1.0, 1.0]]
            .iter()
            .map(|r| v(r))
            .collect();
        let c = PolyCone::from_v(3, &rays, &[]);
        let h = c.h_rep().unwrap();
        assert_eq!(h.a.nrows(), 4);
        for r in &rays {
            assert!((&h.a * r).max() <= 1e-12);
        }
        let back = PolyCone::from_h(h.a.clone(), h.g.clone());
        assert_eq!(back.v_rep().unwrap().rays.len(), 4);
        assert!(back.member(&v(&[0.0, 0.0, 1.0]), 1e-9).unwrap().0);
        assert!(!back.member(&v(&[0.0, 0.0, -1.0]), 1e-9).unwrap().0);
    }

    #[test]
    fn membership_examples() {
        let pos = PolyCone::from_v(2, &[v(&[1.0, 0.0]), v(&[0.0, 1.0])], &[]);
        let (ok, _) = pos.member(&v(&[1.0, 1.0]), 1e-9).unwrap();
        assert!(ok);
        let (ok, d) = pos.member(&v(&[-1.0, 0.0]), 1e-9).unwrap();
        assert!(!ok);
        assert!((d - 1.0).abs() < 1e-9);
        let h = PolyCone::from_h(-Matrix::identity(2, 2), Matrix::zeros(0, 2));
        let (ok, d) = h.member(&v(&[-1.0, 0.0]), 1e-9).unwrap();
        assert!(!ok && (d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_cap() {
        let c = PolyCone::from_h(Matrix::identity(9, 9), Matrix::zeros(0, 9));
        assert_eq!(c.v_rep().unwrap_err(), SetError::DimensionCap(9));
    }
}
