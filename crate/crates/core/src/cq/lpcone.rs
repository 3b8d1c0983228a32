//! Incremental builder for homogeneous linear cone systems and the LP queries
//! run over them.

use crate::error::{LpError, SetError};
use crate::linalg::{Matrix, Vector};
use crate::lp::{lp_solve, LpProblem, LpStatus};
use crate::polyhedra::PolyCone;

/// Optimal values at or below this count as zero.
pub(crate) const NONZERO_TOL: f64 = 1e-9;

pub(crate) type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default)]
pub(crate) struct ConeSystem {
    nvar: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq: Vec<Row>,
    le: Vec<(Row, f64)>,
}

impl ConeSystem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `k` variables and returns the offset of the first.
    pub fn add_vars(&mut self, k: usize, nonneg: bool) -> usize {
        let off = self.nvar;
        self.nvar += k;
        let lo = if nonneg { 0.0 } else { f64::NEG_INFINITY };
        self.lower.extend(std::iter::repeat_n(lo, k));
        self.upper.extend(std::iter::repeat_n(f64::INFINITY, k));
        off
    }

    pub fn add_eq(&mut self, row: Row) {
        self.eq.push(row);
    }

    pub fn add_le(&mut self, row: Row, rhs: f64) {
        self.le.push((row, rhs));
    }

    /// Constrains variables `off..off + cone.dim()` to lie in `cone`, using a
    /// cached representation when one exists.
    pub fn constrain(&mut self, off: usize, cone: &PolyCone) -> Result<(), SetError> {
        let dim = cone.dim();
        if cone.cached_v().is_none() {
            if let Some(h) = cone.cached_h() {
                for r in h.a.row_iter() {
                    self.add_le(dense_row(off, r.iter()), 0.0);
                }
                for r in h.g.row_iter() {
                    self.add_eq(dense_row(off, r.iter()));
                }
                return Ok(());
            }
        }
        let v = cone.v_rep()?;
        let rays = self.add_vars(v.rays.len(), true);
        let lin = self.add_vars(v.lineality.len(), false);
        for i in 0..dim {
            let mut row = vec![(off + i, 1.0)];
            for (k, r) in v.rays.iter().enumerate() {
                if r[i] != 0.0 {
                    row.push((rays + k, -r[i]));
                }
            }
            for (k, r) in v.lineality.iter().enumerate() {
                if r[i] != 0.0 {
                    row.push((lin + k, -r[i]));
                }
            }
            self.add_eq(row);
        }
        Ok(())
    }

    fn problem(&self, objective: &Row) -> LpProblem {
        let n = self.nvar;
        let mut c = Vector::zeros(n);
        for &(j, v) in objective {
            c[j] += v;
        }
        let mut a = Matrix::zeros(self.le.len(), n);
        let mut b = Vector::zeros(self.le.len());
        for (i, (row, rhs)) in self.le.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] += v;
            }
            b[i] = *rhs;
        }
        let mut g = Matrix::zeros(self.eq.len(), n);
        for (i, row) in self.eq.iter().enumerate() {
            for &(j, v) in row {
                g[(i, j)] += v;
            }
        }
        LpProblem::new(c)
            .with_inequalities(a, b)
            .with_equalities(g, Vector::zeros(self.eq.len()))
            .with_bounds(self.lower.clone(), self.upper.clone())
    }

    /// Maximizes `objective`; `None` when infeasible or unbounded.
    pub fn maximize(&self, objective: &Row) -> Result<Option<(f64, Vec<f64>)>, LpError> {
        let res = lp_solve(&self.problem(objective))?;
        Ok((res.status == LpStatus::Optimal).then_some((res.objective, res.x)))
    }

    /// Looks for a point of the cone with some nonzero output. Each output is
    /// boxed to `[-1, 1]` and maximized in both signs.
    pub fn find_nonzero(&self, outputs: &[Row]) -> Result<Option<Vec<f64>>, LpError> {
        Ok(self.nonzero_points(outputs, 1)?.pop())
    }

    /// Up to `limit` distinct cone points with nonzero outputs.
    pub fn nonzero_points(&self, outputs: &[Row], limit: usize) -> Result<Vec<Vec<f64>>, LpError> {
        let mut boxed = self.clone();
        for o in outputs {
            boxed.add_le(o.clone(), 1.0);
            boxed.add_le(negate(o), 1.0);
        }
        let mut found: Vec<Vec<f64>> = Vec::new();
        for o in outputs {
            for obj in [o.clone(), negate(o)] {
                if found.len() >= limit {
                    return Ok(found);
                }
                if let Some((val, z)) = boxed.maximize(&obj)? {
                    if val > NONZERO_TOL && !found.iter().any(|f| same(f, &z)) {
                        found.push(z);
                    }
                }
            }
        }
        Ok(found)
    }
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

pub(crate) fn negate(r: &Row) -> Row {
    r.iter().map(|&(j, v)| (j, -v)).collect()
}

pub(crate) fn dense_row<'a>(off: usize, coeffs: impl Iterator<Item = &'a f64>) -> Row {
    coeffs
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, &v)| (off + j, v))
        .collect()
}

pub(crate) fn eval_row(row: &Row, z: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * z[j]).sum()
}
