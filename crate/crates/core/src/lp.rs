//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Sizes in this crate are tiny (tens of variables), so the tableau is dense
//! and every pivot choice is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::LpError;
use crate::linalg::{Matrix, Vector};

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-10;
const PHASE1_TOL: f64 = 1e-8;
const MAX_PIVOTS: usize = 200_000;

/// `maximize cᵀz  s.t.  A z ≤ b,  G z = g,  lower ≤ z ≤ upper`.
///
/// Missing bounds are `f64::NEG_INFINITY` / `f64::INFINITY`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: Vector,
    pub a: Matrix,
    pub b: Vector,
    pub g: Matrix,
    pub gv: Vector,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// Free variables, no constraints.
    pub fn new(c: Vector) -> Self {
        let n = c.len();
        LpProblem {
            c,
            a: Matrix::zeros(0, n),
            b: Vector::zeros(0),
            g: Matrix::zeros(0, n),
            gv: Vector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn with_inequalities(mut self, a: Matrix, b: Vector) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_equalities(mut self, g: Matrix, gv: Vector) -> Self {
        self.g = g;
        self.gv = gv;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.dim();
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(LpError::Dimension(format!(
                "inequality block {}x{} with rhs {} for {n} variables",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.g.ncols() != n || self.g.nrows() != self.gv.len() {
            return Err(LpError::Dimension(format!(
                "equality block {}x{} with rhs {} for {n} variables",
                self.g.nrows(),
                self.g.ncols(),
                self.gv.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension("bound vectors".into()));
        }
        let finite = self.c.iter().chain(self.a.iter()).chain(self.b.iter())
            .chain(self.g.iter()).chain(self.gv.iter())
            .all(|v| v.is_finite());
        let bounds_ok = self.lower.iter().all(|&l| l < f64::INFINITY && !l.is_nan())
            && self.upper.iter().all(|&u| u > f64::NEG_INFINITY && !u.is_nan());
        if !finite || !bounds_ok {
            return Err(LpError::NonFinite);
        }
        Ok(())
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let zv = Vector::from_column_slice(z);
        let mut worst: f64 = 0.0;
        if self.a.nrows() > 0 {
            let r = &self.a * &zv - &self.b;
            worst = worst.max(r.max().max(0.0));
        }
        if self.g.nrows() > 0 {
            let r = &self.g * &zv - &self.gv;
            worst = worst.max(r.amax());
        }
        for (j, &v) in z.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// How an original variable is expressed through non-negative tableau columns.
enum VarMap {
    /// z = lo + s
    Lower(f64, usize),
    /// z = hi − s
    Upper(f64, usize),
    /// z = s⁺ − s⁻
    Split(usize, usize),
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows + 1` rows (last is the cost row) of `cols + 1` entries (last is rhs).
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * prow[j];
                }
            }
        }
        self.basis[r] = c;
    }

    /// Loads `cost` as the objective to maximise, reduced against the current basis.
    fn set_cost(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let base = self.rows * w;
        for j in 0..self.cols {
            self.t[base + j] = cost[j];
        }
        self.t[base + self.cols] = 0.0;
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.t[base + j] -= cb * self.t[i * w + j];
                }
            }
        }
    }

    /// Runs Bland's rule on the current cost row. `allowed` masks enterable columns.
    fn optimize(&mut self, allowed: &[bool]) -> Result<bool, LpError> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..self.cols).find(|&j| allowed[j] && self.at(self.rows, j) > COST_EPS);
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(LpError::Dimension("simplex pivot limit reached".into()))
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.cols + 1;
        self.t.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Solves an [`LpProblem`] by the two-phase simplex method with Bland's rule.
pub fn lp_solve(p: &LpProblem) -> Result<LpResult, LpError> {
    p.validate()?;
    let n = p.dim();

    // Map every variable to non-negative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_bounds: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if lo.is_finite() {
            maps.push(VarMap::Lower(lo, ncols));
            if hi.is_finite() {
                extra_bounds.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Upper(hi, ncols));
            ncols += 1;
        } else {
            maps.push(VarMap::Split(ncols, ncols + 1));
            ncols += 2;
        }
    }
    if extra_bounds.iter().any(|&(_, width)| width < -PHASE1_TOL) {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::NAN,
        });
    }

    // Rows in terms of structural columns: (coeffs, rhs, is_equality).
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    let mut push_row = |coef: Vec<f64>, rhs: f64, eq: bool| rows.push((coef, rhs, eq));
    let translate = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut coef = vec![0.0; ncols];
        let mut r = rhs;
        for (j, m) in maps.iter().enumerate() {
            let a = row[j];
            if a == 0.0 {
                continue;
            }
            match *m {
                VarMap::Lower(lo, s) => {
                    coef[s] += a;
                    r -= a * lo;
                }
                VarMap::Upper(hi, s) => {
                    coef[s] -= a;
                    r -= a * hi;
                }
                VarMap::Split(sp, sm) => {
                    coef[sp] += a;
                    coef[sm] -= a;
                }
            }
        }
        (coef, r)
    };
    for i in 0..p.a.nrows() {
        let row: Vec<f64> = p.a.row(i).iter().copied().collect();
        let (c, r) = translate(&row, p.b[i]);
        push_row(c, r, false);
    }
    for i in 0..p.g.nrows() {
        let row: Vec<f64> = p.g.row(i).iter().copied().collect();
        let (c, r) = translate(&row, p.gv[i]);
        push_row(c, r, true);
    }
    for &(s, width) in &extra_bounds {
        let mut c = vec![0.0; ncols];
        c[s] = 1.0;
        push_row(c, width.max(0.0), false);
    }

    // Column layout: structural | slacks (one per inequality) | artificials.
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| !r.2).count();
    let mut needs_art = Vec::with_capacity(m);
    for (coef, rhs, eq) in rows.iter_mut() {
        // Equalities always get an artificial; inequalities only when the rhs is negative.
        let negative = *rhs < 0.0;
        if negative {
            coef.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
        }
        needs_art.push(*eq || negative);
    }
    let n_art = needs_art.iter().filter(|&&b| b).count();
    let cols = ncols + n_slack + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        rows: m,
        cols,
        t: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
    };
    let mut slack = ncols;
    let mut art = ncols + n_slack;
    for (i, (coef, rhs, eq)) in rows.iter().enumerate() {
        tab.t[i * w..i * w + ncols].copy_from_slice(coef);
        tab.t[i * w + cols] = *rhs;
        let flipped = needs_art[i] && !*eq;
        if !*eq {
            tab.t[i * w + slack] = if flipped { -1.0 } else { 1.0 };
            if !flipped {
                tab.basis[i] = slack;
            }
            slack += 1;
        }
        if needs_art[i] {
            tab.t[i * w + art] = 1.0;
            tab.basis[i] = art;
            art += 1;
        }
    }
    let is_art = |j: usize| j >= ncols + n_slack;

    if n_art > 0 {
        let cost: Vec<f64> = (0..cols).map(|j| if is_art(j) { -1.0 } else { 0.0 }).collect();
        tab.set_cost(&cost);
        let allowed = vec![true; cols];
        tab.optimize(&allowed)?;
        // cost row rhs holds −(objective); objective = −Σ artificials
        let infeas: f64 = (0..tab.rows)
            .filter(|&i| is_art(tab.basis[i]))
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > PHASE1_TOL * (1.0 + p.b.amax().max(p.gv.amax())) {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
            });
        }
        // Drive remaining artificials out of the basis or drop redundant rows.
        let mut i = 0;
        while i < tab.rows {
            if is_art(tab.basis[i]) {
                let col = (0..ncols + n_slack).find(|&j| tab.at(i, j).abs() > PIVOT_EPS);
                match col {
                    Some(c) => {
                        tab.pivot(i, c);
                        i += 1;
                    }
                    None => tab.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase II
    let mut cost = vec![0.0; cols];
    let mut offset = 0.0;
    for (j, mp) in maps.iter().enumerate() {
        let cj = p.c[j];
        match *mp {
            VarMap::Lower(lo, s) => {
                cost[s] += cj;
                offset += cj * lo;
            }
            VarMap::Upper(hi, s) => {
                cost[s] -= cj;
                offset += cj * hi;
            }
            VarMap::Split(sp, sm) => {
                cost[sp] += cj;
                cost[sm] -= cj;
            }
        }
    }
    tab.set_cost(&cost);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art(j)).collect();
    let bounded = tab.optimize(&allowed)?;

    let mut s = vec![0.0; cols];
    for i in 0..tab.rows {
        s[tab.basis[i]] = tab.rhs(i);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|mp| match *mp {
            VarMap::Lower(lo, c) => lo + s[c],
            VarMap::Upper(hi, c) => hi - s[c],
            VarMap::Split(sp, sm) => s[sp] - s[sm],
        })
        .collect();
    if !bounded {
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            x,
            objective: f64::INFINITY,
        });
    }
    let objective = p.c.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    debug_assert!((objective - (offset - tab.rhs(tab.rows))).abs() < 1e-6 * (1.0 + objective.abs()));
    Ok(LpResult {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}

/// Outcome of a cone-triviality query.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeTriviality {
    pub trivial: bool,
    /// Nonzero cone element scaled to unit ∞-norm, when the cone is nontrivial.
    pub witness: Option<Vector>,
}

/// Decides whether `{λ : Aλ ≤ 0, Gλ = 0} = {0}`.
///
/// For every coordinate the LPs `max ±λᵢ` are solved over the cone intersected
/// with the box `|λ|∞ ≤ 1`; the cone is trivial iff all optima vanish.
pub fn cone_is_trivial(a: &Matrix, g: &Matrix) -> Result<ConeTriviality, LpError> {
    let n = a.ncols().max(g.ncols());
    if n == 0 {
        return Ok(ConeTriviality { trivial: true, witness: None });
    }
    let a = if a.ncols() == n { a.clone() } else { Matrix::zeros(0, n) };
    let g = if g.ncols() == n { g.clone() } else { Matrix::zeros(0, n) };
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut c = Vector::zeros(n);
            c[i] = sign;
            let lp = LpProblem::new(c)
                .with_inequalities(a.clone(), Vector::zeros(a.nrows()))
                .with_equalities(g.clone(), Vector::zeros(g.nrows()))
                .with_bounds(vec![-1.0; n], vec![1.0; n]);
            let res = lp_solve(&lp)?;
            if res.status == LpStatus::Optimal && res.objective > 1e-8 {
                let w = Vector::from_vec(res.x);
                let scale = w.amax();
                return Ok(ConeTriviality {
                    trivial: false,
                    witness: Some(w / scale),
                });
            }
        }
    }
    Ok(ConeTriviality { trivial: true, witness: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn m(r: usize, c: usize, x: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, x)
    }

    #[test]
    fn one_constraint_lp() {
        let lp = LpProblem::new(v(&[1.0])).with_inequalities(m(1, 1, &[1.0]), v(&[3.0]));
        let r = lp_solve(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds() {
        let lp = LpProblem::new(v(&[1.0]))
            .with_inequalities(m(2, 1, &[1.0, -1.0]), v(&[3.0, -5.0]));
        assert_eq!(lp_solve(&lp).unwrap().status, LpStatus::Infeasible);
        let lp = LpProblem::new(v(&[1.0])).with_bounds(vec![5.0], vec![3.0]);
        assert_eq!(lp_solve(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn simplex_corner() {
        let lp = LpProblem::new(v(&[1.0, 1.0]))
            .with_inequalities(m(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_bounds(vec![0.0, 0.0], vec![f64::INFINITY; 2]);
        let r = lp_solve(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let lp = LpProblem::new(v(&[1.0, 0.0])).with_inequalities(m(1, 2, &[0.0, 1.0]), v(&[1.0]));
        assert_eq!(lp_solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equalities_and_redundant_rows() {
        // x + y = 2 twice, maximise x with 0 ≤ y
        let lp = LpProblem::new(v(&[1.0, 0.0]))
            .with_equalities(m(2, 2, &[1.0, 1.0, 2.0, 2.0]), v(&[2.0, 4.0]))
            .with_bounds(vec![f64::NEG_INFINITY, 0.0], vec![f64::INFINITY, 5.0]);
        let r = lp_solve(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-12);
        assert!(lp.max_violation(&r.x) < 1e-9);
    }

    #[test]
    fn degenerate_lp_terminates() {
        // classic cycling example (Beale) under Dantzig's rule
        let a = m(
            3,
            4,
            &[0.25, -60.0, -0.04, 9.0, 0.5, -90.0, -0.02, 3.0, 0.0, 0.0, 1.0, 0.0],
        );
        let lp = LpProblem::new(v(&[0.75, -150.0, 0.02, -6.0]))
            .with_inequalities(a, v(&[0.0, 0.0, 1.0]))
            .with_bounds(vec![0.0; 4], vec![f64::INFINITY; 4]);
        let r = lp_solve(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 0.05).abs() < 1e-9);
    }

    #[test]
    fn cone_triviality_examples() {
        let t = cone_is_trivial(&Matrix::zeros(0, 1), &m(1, 1, &[1.0])).unwrap();
        assert!(t.trivial);
        let t = cone_is_trivial(&m(1, 2, &[1.0, 0.0]), &Matrix::zeros(0, 2)).unwrap();
        assert!(!t.trivial);
        let w = t.witness.unwrap();
        assert!(w[0] <= 1e-12 && w.amax() > 0.5);
        // −λ = 0 forces λ = 0
        let t = cone_is_trivial(&Matrix::zeros(0, 1), &m(1, 1, &[-1.0])).unwrap();
        assert!(t.trivial);
        // orthant intersected with its negative
        let t = cone_is_trivial(&m(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]), &Matrix::zeros(0, 2))
            .unwrap();
        assert!(t.trivial);
    }
}
