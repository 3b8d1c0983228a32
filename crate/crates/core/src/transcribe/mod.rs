//! Direct transcription of a control problem to a nonlinear program, an
//! augmented-Lagrangian solver, and recovery of a discrete certificate.
//!
//! The decision vector is node-major, `(x_i, y_i, u_i)` for `i = 0..=N`.
//! Algebraic variables are discretised like controls: node values with no
//! continuity between nodes.

mod adjoint;
mod solver;

pub use adjoint::{calmness_warning, extract_adjoint, solve_and_verify, SolveOptions, SolveOutcome};
pub use solver::{solve_nlp, NlpOptions, NlpSolution, OuterRecord};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::certificate::Mesh;
use crate::error::{ExprError, TranscribeError};
use crate::linalg::{EnvelopeMatrix, Matrix, Vector};
use crate::polyhedra::{PolyUnion, Polyhedron};
use crate::problem::ControlProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Trapezoidal,
    ImplicitEuler,
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trapezoidal" | "trap" => Ok(Scheme::Trapezoidal),
            "implicit-euler" | "euler" => Ok(Scheme::ImplicitEuler),
            other => Err(format!("unknown scheme '{other}' (expected trapezoidal or implicit-euler)")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Trapezoidal => "trapezoidal",
            Scheme::ImplicitEuler => "implicit-euler",
        })
    }
}

/// One scalar constraint row.
#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    /// Component `comp` of the dynamics defect on `[τ_i, τ_{i+1}]`.
    Defect { interval: usize, comp: usize },
    /// `−c_node·g_comp(z_node)` for a zero row of `E`, weighted by the
    /// quadrature weight so the multiplier approximates `λ_φ` directly.
    Algebraic { node: usize, comp: usize },
    /// `Σ c_j h_j(z_node) − rhs`.
    Path { node: usize, coeffs: Vec<(usize, f64)>, rhs: f64 },
    /// `Σ c_k w_k − rhs` over decision indices.
    Linear { coeffs: Vec<(usize, f64)>, rhs: f64 },
}

/// Sparse gradient with sorted, distinct indices.
pub type SparseGrad = Vec<(usize, f64)>;

/// The transcribed program: minimise `J(w)` subject to `c(w) = 0`,
/// `g(w) ≤ 0` and `lower ≤ w ≤ upper`.
///
/// Equality rows start with the defects, interval-major, followed by the
/// node-wise rows for zero rows of `E`.
#[derive(Debug, Clone)]
pub struct Nlp {
    problem: ControlProblem,
    mesh: Mesh,
    scheme: Scheme,
    width: usize,
    e: Matrix,
    weights: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq: Vec<Row>,
    ineq: Vec<Row>,
    affine_g: Vec<bool>,
    affine_h: Vec<bool>,
    affine_f: bool,
    affine_end: bool,
}

pub(crate) struct NodeEval {
    pub g: Vector,
    pub jg: Option<Matrix>,
    pub h: Vector,
    pub jh: Option<Matrix>,
    pub f: f64,
    pub jf: Option<Matrix>,
}

fn single_piece<'a>(set: &'a PolyUnion, name: &str) -> Result<&'a Polyhedron, TranscribeError> {
    match set.pieces() {
        [p] => Ok(p),
        _ => Err(TranscribeError::UnionPiece(name.into())),
    }
}

fn sparse_row(m: &Matrix, r: usize) -> Vec<(usize, f64)> {
    (0..m.ncols()).filter(|&j| m[(r, j)] != 0.0).map(|j| (j, m[(r, j)])).collect()
}

/// `(coefficients, rhs, is_equality)` for every row of `p`.
fn set_rows(p: &Polyhedron) -> Vec<(Vec<(usize, f64)>, f64, bool)> {
    let ineq = (0..p.a().nrows()).map(|r| (sparse_row(p.a(), r), p.b()[r], false));
    let eq = (0..p.g().nrows()).map(|r| (sparse_row(p.g(), r), p.gv()[r], true));
    ineq.chain(eq).collect()
}

struct Sink<'a> {
    lower: &'a mut [f64],
    upper: &'a mut [f64],
    eq: &'a mut Vec<Row>,
    ineq: &'a mut Vec<Row>,
}

impl Sink<'_> {
    /// Single-coefficient rows become bounds, the rest linear rows.
    fn add(&mut self, p: &Polyhedron, index: impl Fn(usize) -> usize, name: &str) -> Result<(), TranscribeError> {
        for (coeffs, rhs, eq) in set_rows(p) {
            match coeffs.as_slice() {
                [] => {
                    if (eq && rhs != 0.0) || rhs < 0.0 {
                        return Err(TranscribeError::Invalid(format!("{name} is empty")));
                    }
                }
                [(j, a)] => {
                    let k = index(*j);
                    let v = rhs / a;
                    if eq {
                        self.lower[k] = self.lower[k].max(v);
                        self.upper[k] = self.upper[k].min(v);
                    } else if *a > 0.0 {
                        self.upper[k] = self.upper[k].min(v);
                    } else {
                        self.lower[k] = self.lower[k].max(v);
                    }
                }
                _ => {
                    let row = Row::Linear {
                        coeffs: coeffs.iter().map(|(j, a)| (index(*j), *a)).collect(),
                        rhs,
                    };
                    if eq {
                        self.eq.push(row);
                    } else {
                        self.ineq.push(row);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Transcribes `problem` on a uniform mesh with `intervals` intervals.
///
/// Trapezoidal defects are `E(x_{i+1} − x_i) − Δt/2·(g_i + g_{i+1})` and
/// the running cost uses trapezoidal weights. Implicit Euler uses
/// `E(x_{i+1} − x_i) − Δt·g_{i+1}`, right-endpoint weights, and imposes the
/// algebraic constraint at nodes `1..=N` only.
///
/// Zero rows of `E` carry no derivative. Averaging them over an interval
/// would admit odd-even oscillations, so they are imposed at the nodes.
pub fn discretize(problem: &ControlProblem, intervals: usize, scheme: Scheme) -> Result<Nlp, TranscribeError> {
    if intervals < 2 {
        return Err(TranscribeError::Invalid(format!("need at least 2 intervals, got {intervals}")));
    }
    let (t0, t1) = problem.horizon;
    let mesh = Mesh::uniform(t0, t1, intervals)?;
    let nn = problem.node_width();
    let nx = problem.nx;
    let n = nn * (intervals + 1);
    let e = match &problem.structured {
        Some(s) => s.e.clone(),
        None => Matrix::identity(nx, nx),
    };
    let m = e.nrows();

    let times = mesh.times();
    let mut weights = vec![0.0; intervals + 1];
    for i in 0..intervals {
        let dt = times[i + 1] - times[i];
        match scheme {
            Scheme::Trapezoidal => {
                weights[i] += dt / 2.0;
                weights[i + 1] += dt / 2.0;
            }
            Scheme::ImplicitEuler => weights[i + 1] += dt,
        }
    }

    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let differential: Vec<bool> = (0..m).map(|k| e.row(k).iter().any(|v| *v != 0.0)).collect();
    let first_node = match scheme {
        Scheme::Trapezoidal => 0,
        Scheme::ImplicitEuler => 1,
    };
    let mut eq: Vec<Row> = (0..intervals)
        .flat_map(|interval| {
            let differential = &differential;
            (0..m).filter(move |k| differential[*k]).map(move |comp| Row::Defect { interval, comp })
        })
        .collect();
    for node in first_node..=intervals {
        for comp in (0..m).filter(|k| !differential[*k]) {
            eq.push(Row::Algebraic { node, comp });
        }
    }
    let mut ineq = Vec::new();

    if problem.algebraic.is_some() {
        let k = single_piece(&problem.target_set, "target_set")?;
        for node in first_node..=intervals {
            for (coeffs, rhs, is_eq) in set_rows(k) {
                let row = Row::Path { node, coeffs, rhs };
                if is_eq {
                    eq.push(row);
                } else {
                    ineq.push(row);
                }
            }
        }
    }

    let mut sink = Sink {
        lower: &mut lower,
        upper: &mut upper,
        eq: &mut eq,
        ineq: &mut ineq,
    };
    if problem.nu > 0 {
        let u = problem
            .control_polyhedron()
            .ok_or_else(|| TranscribeError::UnionPiece("control_set".into()))?;
        let off = nx + problem.ny;
        for node in 0..=intervals {
            sink.add(u, |j| node * nn + off + j, "control_set")?;
        }
    }
    let s = problem
        .endpoint_polyhedron()
        .ok_or_else(|| TranscribeError::UnionPiece("endpoint_set".into()))?;
    sink.add(s, |j| if j < nx { j } else { intervals * nn + j - nx }, "endpoint_set")?;

    if let Some(j) = (0..n).find(|&j| lower[j] > upper[j]) {
        return Err(TranscribeError::Invalid(format!("empty bounds on decision variable {j}")));
    }

    let affine = |f: &crate::expr::VectorFunction| f.is_affine();
    Ok(Nlp {
        affine_g: affine(&problem.dynamics),
        affine_h: problem.algebraic.as_ref().map(affine).unwrap_or_default(),
        affine_f: affine(&problem.running_cost).iter().all(|a| *a),
        affine_end: affine(&problem.endpoint_cost).iter().all(|a| *a),
        problem: problem.clone(),
        mesh,
        scheme,
        width: nn,
        e,
        weights,
        lower,
        upper,
        eq,
        ineq,
    })
}

fn compact(mut v: Vec<(usize, f64)>) -> SparseGrad {
    v.sort_by_key(|(j, _)| *j);
    let mut out: SparseGrad = Vec::with_capacity(v.len());
    for (j, a) in v {
        match out.last_mut() {
            Some((k, b)) if *k == j => *b += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|(_, a)| *a != 0.0);
    out
}

impl Nlp {
    pub fn problem(&self) -> &ControlProblem {
        &self.problem
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn intervals(&self) -> usize {
        self.mesh.intervals()
    }

    /// Width of one node block.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of decision variables.
    pub fn len(&self) -> usize {
        self.width * self.mesh.nodes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Defect rows per interval.
    pub fn defect_dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn eq_rows(&self) -> &[Row] {
        &self.eq
    }

    pub fn ineq_rows(&self) -> &[Row] {
        &self.ineq
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Quadrature weights of the running cost.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node<'a>(&self, w: &'a [f64], i: usize) -> &'a [f64] {
        &w[i * self.width..(i + 1) * self.width]
    }

    /// Default starting point, projected onto the bounds.
    pub fn initial_point(&self) -> Vec<f64> {
        let (t0, t1) = self.problem.horizon;
        let w: Vec<f64> = self
            .mesh
            .times()
            .iter()
            .flat_map(|t| self.problem.initial_node((t - t0) / (t1 - t0)))
            .collect();
        self.project(&w)
    }

    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.max(*lo).min(*hi))
            .collect()
    }

    fn endpoint_point(&self, w: &[f64]) -> Vec<f64> {
        let nx = self.problem.nx;
        let last = self.intervals() * self.width;
        let mut ep = w[..nx].to_vec();
        ep.extend_from_slice(&w[last..last + nx]);
        ep
    }

    fn endpoint_index(&self, j: usize) -> usize {
        let nx = self.problem.nx;
        if j < nx {
            j
        } else {
            self.intervals() * self.width + j - nx
        }
    }

    pub(crate) fn eval_nodes(&self, w: &[f64], jac: bool) -> Result<Vec<NodeEval>, ExprError> {
        let p = &self.problem;
        (0..self.mesh.nodes())
            .map(|i| {
                let z = self.node(w, i);
                let (h, jh) = match &p.algebraic {
                    Some(h) => (h.eval(z)?, if jac { Some(h.jacobian(z)?) } else { None }),
                    None => (Vector::zeros(0), None),
                };
                Ok(NodeEval {
                    g: p.dynamics.eval(z)?,
                    jg: if jac { Some(p.dynamics.jacobian(z)?) } else { None },
                    h,
                    jh,
                    f: p.running_cost.eval(z)?[0],
                    jf: if jac { Some(p.running_cost.jacobian(z)?) } else { None },
                })
            })
            .collect()
    }

    pub(crate) fn objective_with(&self, w: &[f64], ev: &[NodeEval]) -> Result<f64, ExprError> {
        let running: f64 = ev.iter().zip(&self.weights).map(|(e, c)| c * e.f).sum();
        Ok(running + self.problem.endpoint_cost.eval(&self.endpoint_point(w))?[0])
    }

    pub fn objective(&self, w: &[f64]) -> Result<f64, ExprError> {
        self.objective_with(w, &self.eval_nodes(w, false)?)
    }

    /// Dense gradient of the running cost, plus the endpoint cost when asked.
    pub(crate) fn objective_gradient(&self, w: &[f64], ev: &[NodeEval], endpoint: bool) -> Result<Vec<f64>, ExprError> {
        let nn = self.width;
        let mut grad = vec![0.0; self.len()];
        for (i, (e, c)) in ev.iter().zip(&self.weights).enumerate() {
            let jf = e.jf.as_ref().expect("jacobians evaluated");
            for l in 0..nn {
                grad[i * nn + l] += c * jf[(0, l)];
            }
        }
        if endpoint {
            let jac = self.problem.endpoint_cost.jacobian(&self.endpoint_point(w))?;
            for j in 0..jac.ncols() {
                grad[self.endpoint_index(j)] += jac[(0, j)];
            }
        }
        Ok(grad)
    }

    fn dt(&self, interval: usize) -> f64 {
        let t = self.mesh.times();
        t[interval + 1] - t[interval]
    }

    pub(crate) fn row_value(&self, row: &Row, w: &[f64], ev: &[NodeEval]) -> f64 {
        match row {
            Row::Defect { interval: i, comp: k } => {
                let (nn, nx) = (self.width, self.problem.nx);
                let mut v = 0.0;
                for j in 0..nx {
                    v += self.e[(*k, j)] * (w[(i + 1) * nn + j] - w[i * nn + j]);
                }
                let dt = self.dt(*i);
                match self.scheme {
                    Scheme::Trapezoidal => v - dt / 2.0 * (ev[*i].g[*k] + ev[i + 1].g[*k]),
                    Scheme::ImplicitEuler => v - dt * ev[i + 1].g[*k],
                }
            }
            Row::Algebraic { node, comp } => -self.weights[*node] * ev[*node].g[*comp],
            Row::Path { node, coeffs, rhs } => coeffs.iter().map(|(j, c)| c * ev[*node].h[*j]).sum::<f64>() - rhs,
            Row::Linear { coeffs, rhs } => coeffs.iter().map(|(j, c)| c * w[*j]).sum::<f64>() - rhs,
        }
    }

    pub(crate) fn row_gradient(&self, row: &Row, ev: &[NodeEval]) -> SparseGrad {
        let nn = self.width;
        match row {
            Row::Defect { interval: i, comp: k } => {
                let mut v = Vec::new();
                for j in 0..self.problem.nx {
                    let a = self.e[(*k, j)];
                    v.push((i * nn + j, -a));
                    v.push(((i + 1) * nn + j, a));
                }
                let dt = self.dt(*i);
                let mut push = |node: usize, scale: f64| {
                    let jg = ev[node].jg.as_ref().expect("jacobians evaluated");
                    for l in 0..nn {
                        v.push((node * nn + l, -scale * jg[(*k, l)]));
                    }
                };
                match self.scheme {
                    Scheme::Trapezoidal => {
                        push(*i, dt / 2.0);
                        push(i + 1, dt / 2.0);
                    }
                    Scheme::ImplicitEuler => push(i + 1, dt),
                }
                compact(v)
            }
            Row::Algebraic { node, comp } => {
                let jg = ev[*node].jg.as_ref().expect("jacobians evaluated");
                let c = self.weights[*node];
                compact((0..nn).map(|l| (node * nn + l, -c * jg[(*comp, l)])).collect())
            }
            Row::Path { node, coeffs, .. } => {
                let jh = ev[*node].jh.as_ref().expect("jacobians evaluated");
                let v = (0..nn)
                    .map(|l| (node * nn + l, coeffs.iter().map(|(j, c)| c * jh[(*j, l)]).sum::<f64>()))
                    .collect();
                compact(v)
            }
            Row::Linear { coeffs, .. } => compact(coeffs.clone()),
        }
    }

    pub fn eq_values(&self, w: &[f64]) -> Result<Vec<f64>, ExprError> {
        let ev = self.eval_nodes(w, false)?;
        Ok(self.eq.iter().map(|r| self.row_value(r, w, &ev)).collect())
    }

    pub fn ineq_values(&self, w: &[f64]) -> Result<Vec<f64>, ExprError> {
        let ev = self.eval_nodes(w, false)?;
        Ok(self.ineq.iter().map(|r| self.row_value(r, w, &ev)).collect())
    }

    /// `∇J + Σ ν_r ∇c_r + Σ ω_r ∇g_r`.
    pub fn lagrangian_gradient(&self, w: &[f64], eq_mult: &[f64], ineq_mult: &[f64]) -> Result<Vec<f64>, ExprError> {
        let ev = self.eval_nodes(w, true)?;
        let mut grad = self.objective_gradient(w, &ev, true)?;
        for (row, m) in self.eq.iter().zip(eq_mult).chain(self.ineq.iter().zip(ineq_mult)) {
            if *m != 0.0 {
                for (j, a) in self.row_gradient(row, &ev) {
                    grad[j] += m * a;
                }
            }
        }
        Ok(grad)
    }

    /// `‖w − P(w − ∇L)‖∞`, the projected-gradient stationarity measure.
    pub fn stationarity(&self, w: &[f64], eq_mult: &[f64], ineq_mult: &[f64]) -> Result<f64, ExprError> {
        let grad = self.lagrangian_gradient(w, eq_mult, ineq_mult)?;
        Ok(projected_gradient_norm(w, &grad, &self.lower, &self.upper))
    }

    /// Row `i` of the envelope keeps columns from the previous node onward;
    /// the last node also couples to the first through the endpoint terms.
    fn envelope(&self) -> Vec<usize> {
        let nn = self.width;
        let last = self.intervals();
        (0..self.len())
            .map(|v| {
                let i = v / nn;
                if i == 0 || i == last {
                    0
                } else {
                    (i - 1) * nn
                }
            })
            .collect()
    }

    /// Hessian of `J + Σ σ_r row_r` plus `Σ ρ ∇a ∇aᵀ` over `gauss_newton`.
    pub(crate) fn hessian(
        &self,
        w: &[f64],
        eq_sigma: &[f64],
        ineq_sigma: &[f64],
        gauss_newton: &[(SparseGrad, f64)],
    ) -> Result<EnvelopeMatrix, ExprError> {
        let p = &self.problem;
        let nn = self.width;
        let nodes = self.mesh.nodes();
        let m = self.defect_dim();
        let mut alpha = vec![vec![0.0; m]; nodes];
        let mut beta = vec![vec![0.0; p.nh()]; nodes];
        for (row, s) in self.eq.iter().zip(eq_sigma).chain(self.ineq.iter().zip(ineq_sigma)) {
            if *s == 0.0 {
                continue;
            }
            match row {
                Row::Defect { interval: i, comp: k } => {
                    let dt = self.dt(*i);
                    match self.scheme {
                        Scheme::Trapezoidal => {
                            alpha[*i][*k] -= dt / 2.0 * s;
                            alpha[i + 1][*k] -= dt / 2.0 * s;
                        }
                        Scheme::ImplicitEuler => alpha[i + 1][*k] -= dt * s,
                    }
                }
                Row::Algebraic { node, comp } => alpha[*node][*comp] -= self.weights[*node] * s,
                Row::Path { node, coeffs, .. } => {
                    for (j, c) in coeffs {
                        beta[*node][*j] += s * c;
                    }
                }
                Row::Linear { .. } => {}
            }
        }

        let mut hm = EnvelopeMatrix::new(self.envelope());
        for i in 0..nodes {
            let z = self.node(w, i);
            let mut block = Matrix::zeros(nn, nn);
            if !self.affine_f && self.weights[i] != 0.0 {
                block += p.running_cost.hessian(0, z)? * self.weights[i];
            }
            for (k, a) in alpha[i].iter().enumerate() {
                if *a != 0.0 && !self.affine_g[k] {
                    block += p.dynamics.hessian(k, z)? * *a;
                }
            }
            if let Some(h) = &p.algebraic {
                for (j, b) in beta[i].iter().enumerate() {
                    if *b != 0.0 && !self.affine_h[j] {
                        block += h.hessian(j, z)? * *b;
                    }
                }
            }
            for a in 0..nn {
                for b in 0..=a {
                    if block[(a, b)] != 0.0 {
                        hm.add(i * nn + a, i * nn + b, block[(a, b)]);
                    }
                }
            }
        }
        if !self.affine_end {
            let he = p.endpoint_cost.hessian(0, &self.endpoint_point(w))?;
            for a in 0..he.nrows() {
                for b in 0..=a {
                    if he[(a, b)] != 0.0 {
                        hm.add(self.endpoint_index(a), self.endpoint_index(b), he[(a, b)]);
                    }
                }
            }
        }
        for (g, rho) in gauss_newton {
            for a in 0..g.len() {
                for b in 0..=a {
                    hm.add(g[a].0, g[b].0, rho * g[a].1 * g[b].1);
                }
            }
        }
        Ok(hm)
    }
}

pub fn projected_gradient_norm(w: &[f64], grad: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    w.iter()
        .zip(grad)
        .zip(lower.iter().zip(upper))
        .map(|((x, g), (lo, hi))| (x - (x - g).max(*lo).min(*hi)).abs())
        .fold(0.0, f64::max)
}
