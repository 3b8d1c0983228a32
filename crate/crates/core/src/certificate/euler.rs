//! Euler adjoint inclusion in explicit multiplier form, the structured
//! `E ẋ = g` reductions and the multiplier estimate.
//!
//! At every node the inclusion is a linear system `b + A λ + P μ = 0` with
//! `λ` and `μ` restricted to cones. Missing tracks are recovered by least
//! squares when both cones are subspaces, otherwise by a Chebyshev LP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adjoint_derivative, Certificate, ConditionReport, Location, Status, VerifyConfig};
use crate::cq::lpcone::ConeSystem;
use crate::error::VerifyError;
use crate::exec::{map_indexed, stream_rng, Exec};
use crate::linalg::{least_squares, rank, smallest_singular_value, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::polyhedra::{PolyCone, PolyUnion};
use crate::problem::ControlProblem;

#[derive(Debug, Clone)]
pub(crate) enum Slot {
    Free,
    Zero,
    Cone(PolyCone),
}

impl Slot {
    fn classify(cone: PolyCone) -> Result<Slot, VerifyError> {
        let v = cone.v_rep()?;
        if v.is_zero() {
            return Ok(Slot::Zero);
        }
        let lin = v.lineality.len();
        if lin >= cone.dim() && lin > 0 {
            let m = Matrix::from_fn(cone.dim(), lin, |r, c| v.lineality[c][r]);
            if rank(&m, DEFAULT_RANK_TOL) == cone.dim() {
                return Ok(Slot::Free);
            }
        }
        Ok(Slot::Cone(cone))
    }

    /// Clarke normal cone of `set` at `point`, after snapping onto the set.
    fn clarke(set: &PolyUnion, point: &[f64], tol: f64, node: usize, what: &str) -> Result<Slot, VerifyError> {
        if set.dim() == 0 {
            return Ok(Slot::Free);
        }
        if set.is_whole_space() {
            return Ok(Slot::Zero);
        }
        let v = Vector::from_column_slice(point);
        let snapped = set.snap(&v, tol).ok_or_else(|| VerifyError::Infeasible {
            node,
            message: format!("{what} is outside its set"),
        })?;
        Slot::classify(set.clarke_normal_cone(&snapped)?)
    }

    /// Distance-like violation of `v` belonging to the slot.
    fn violation(&self, v: &Vector) -> Result<f64, VerifyError> {
        Ok(match self {
            Slot::Free => 0.0,
            Slot::Zero => v.amax(),
            Slot::Cone(c) => c.member(v, 0.0)?.1,
        })
    }
}

/// One node's linear inclusion `b + A λ + P μ = 0`.
pub(crate) struct NodeSystem {
    pub b: Vector,
    pub a: Matrix,
    pub lam: Slot,
    pub p: Matrix,
    pub mu: Slot,
}

impl NodeSystem {
    pub fn residual(&self, lam: &Vector, mu: &Vector) -> Vector {
        &self.b + &self.a * lam + &self.p * mu
    }

    /// Best `(λ, μ)` for the missing blocks; supplied blocks are held fixed.
    pub fn fit(&self, lam: Option<&Vector>, mu: Option<&Vector>) -> Result<(Vector, Vector), VerifyError> {
        let mut b = self.b.clone();
        if let Some(l) = lam {
            b += &self.a * l;
        }
        if let Some(m) = mu {
            b += &self.p * m;
        }
        let mut blocks: Vec<(&Matrix, &Slot)> = Vec::new();
        if lam.is_none() {
            blocks.push((&self.a, &self.lam));
        }
        if mu.is_none() {
            blocks.push((&self.p, &self.mu));
        }
        let mut sol = fit_blocks(&b, &blocks)?.into_iter();
        let l = match lam {
            Some(l) => l.clone(),
            None => sol.next().expect("lambda block"),
        };
        let m = match mu {
            Some(m) => m.clone(),
            None => sol.next().expect("mu block"),
        };
        Ok((l, m))
    }
}

/// Minimises `|b + Σ M_k w_k|` over `w_k` in their slots.
fn fit_blocks(b: &Vector, blocks: &[(&Matrix, &Slot)]) -> Result<Vec<Vector>, VerifyError> {
    let rows = b.len();
    if !blocks.iter().any(|(_, s)| matches!(s, Slot::Cone(_))) {
        let free: Vec<usize> = (0..blocks.len())
            .filter(|&k| matches!(blocks[k].1, Slot::Free))
            .collect();
        let width: usize = free.iter().map(|&k| blocks[k].0.ncols()).sum();
        let mut a = Matrix::zeros(rows, width);
        let mut col = 0;
        for &k in &free {
            let m = blocks[k].0;
            a.columns_mut(col, m.ncols()).copy_from(m);
            col += m.ncols();
        }
        let (w, _) = least_squares(&a, &(-b));
        let mut out = Vec::new();
        let mut col = 0;
        for (m, slot) in blocks {
            if matches!(slot, Slot::Free) {
                out.push(w.rows(col, m.ncols()).into_owned());
                col += m.ncols();
            } else {
                out.push(Vector::zeros(m.ncols()));
            }
        }
        return Ok(out);
    }

    let mut sys = ConeSystem::new();
    let mut offs = Vec::new();
    for (m, slot) in blocks {
        let off = sys.add_vars(m.ncols(), false);
        match slot {
            Slot::Free => {}
            Slot::Zero => {
                for j in 0..m.ncols() {
                    sys.add_eq(vec![(off + j, 1.0)]);
                }
            }
            Slot::Cone(c) => sys.constrain(off, c)?,
        }
        offs.push(off);
    }
    let t = sys.add_vars(1, true);
    for r in 0..rows {
        let mut row = Vec::new();
        for ((m, _), &off) in blocks.iter().zip(&offs) {
            for j in 0..m.ncols() {
                if m[(r, j)] != 0.0 {
                    row.push((off + j, m[(r, j)]));
                }
            }
        }
        let neg: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -v)).collect();
        let mut up = row;
        up.push((t, -1.0));
        let mut down = neg;
        down.push((t, -1.0));
        sys.add_le(up, -b[r]);
        sys.add_le(down, b[r]);
    }
    let z = sys
        .maximize(&vec![(t, -1.0)])?
        .map(|(_, z)| z)
        .ok_or_else(|| VerifyError::Missing("multiplier recovery LP has no solution".into()))?;
    Ok(blocks
        .iter()
        .zip(&offs)
        .map(|((m, _), &off)| Vector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| z[off + j])))
        .collect())
}

fn gradient(f: &crate::expr::VectorFunction, z: &[f64]) -> Result<Vector, VerifyError> {
    Ok(f.jacobian(z)?.row(0).transpose())
}

/// Velocity `ẋ` at node `i` by the same difference formulas as `ṗ`.
pub(crate) fn velocity(cert: &Certificate, i: usize) -> Vec<f64> {
    super::track_derivative(&cert.mesh, &cert.x, i)
}

/// Builds the node system in the explicit layout `(x, y, u)`:
/// `(ṗ, 0, −μ) = −∇φᵀp + λ0∇F + ∇hᵀλ`, or for structured problems in the
/// layout `(x, u, v)`: `(ṗ, −μ, p) = λ0∇F + ∇φᵀλ` with `φ = E v − g`.
pub(crate) fn node_system(
    cert: &Certificate,
    problem: &ControlProblem,
    i: usize,
    feas_tol: f64,
) -> Result<NodeSystem, VerifyError> {
    let z = cert.node(i);
    let pdot = adjoint_derivative(cert, i);
    let p = Vector::from_column_slice(&cert.p[i]);
    let l0 = cert.lambda0;
    let (nx, ny, nu) = (problem.nx, problem.ny, problem.nu);
    let mu = Slot::clarke(&problem.control_set, &cert.u[i], feas_tol, i, "control")?;
    let gf = gradient(&problem.running_cost, &z)?;
    match &problem.structured {
        None => {
            let nn = nx + ny + nu;
            let jac = problem.dynamics.jacobian(&z)?;
            let mut b = jac.transpose() * &p - gf * l0;
            for k in 0..nx {
                b[k] += pdot[k];
            }
            let (a, lam) = match &problem.algebraic {
                None => (Matrix::zeros(nn, 0), Slot::Free),
                Some(h) => {
                    let jh = h.jacobian(&z)?;
                    let hv = h.eval(&z)?;
                    let lam = Slot::clarke(&problem.target_set, hv.as_slice(), feas_tol, i, "algebraic value")?;
                    (-jh.transpose(), lam)
                }
            };
            let mut pm = Matrix::zeros(nn, nu);
            for k in 0..nu {
                pm[(nx + ny + k, k)] = -1.0;
            }
            Ok(NodeSystem { b, a, lam, p: pm, mu })
        }
        Some(s) => {
            let m = s.e.nrows();
            let rows = 2 * nx + nu;
            let jg = s.g.jacobian(&z)?;
            let mut b = Vector::zeros(rows);
            let mut a = Matrix::zeros(rows, m);
            for k in 0..nx {
                b[k] = pdot[k] - l0 * gf[k];
                b[nx + nu + k] = p[k];
            }
            for k in 0..nu {
                b[nx + k] = -l0 * gf[nx + k];
            }
            for r in 0..m {
                for k in 0..nx + nu {
                    a[(k, r)] = jg[(r, k)];
                }
                for k in 0..nx {
                    a[(nx + nu + k, r)] = -s.e[(r, k)];
                }
            }
            let mut pm = Matrix::zeros(rows, nu);
            for k in 0..nu {
                pm[(nx + k, k)] = -1.0;
            }
            Ok(NodeSystem {
                b,
                a,
                lam: Slot::Free,
                p: pm,
                mu,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct EulerOutcome {
    pub report: ConditionReport,
    /// Per-node residual norms `|b + Aλ + Pμ|`.
    pub residuals: Vec<f64>,
    /// Recovered tracks, present only for tracks the certificate lacked.
    pub lambda: Option<Vec<Vec<f64>>>,
    pub mu: Option<Vec<Vec<f64>>>,
}

struct NodeEuler {
    residual: f64,
    scaled: f64,
    cone_violation: f64,
    lambda: Vector,
    mu: Vector,
}

/// Explicit-multiplier Euler inclusion at every node. Passes iff each node
/// residual is at most `tol·(1 + |p_i|)` and every multiplier lies in its
/// Clarke normal cone (to the same scaled tolerance).
pub fn verify_euler_explicit(
    cert: &Certificate,
    problem: &ControlProblem,
    tol: f64,
    feas_tol: f64,
    exec: Exec,
) -> Result<EulerOutcome, VerifyError> {
    let idx: Vec<usize> = (0..cert.nodes()).collect();
    let per = map_indexed(exec, &idx, |_, &i| -> Result<NodeEuler, VerifyError> {
        let sys = node_system(cert, problem, i, feas_tol)?;
        let lam_in = cert.lambda.as_ref().map(|l| Vector::from_column_slice(&l[i]));
        let mu_in = cert.mu.as_ref().map(|m| Vector::from_column_slice(&m[i]));
        let (lambda, mu) = sys.fit(lam_in.as_ref(), mu_in.as_ref())?;
        let r = sys.residual(&lambda, &mu).norm();
        let cone_violation = sys.lam.violation(&lambda)?.max(sys.mu.violation(&mu)?);
        let pn = Vector::from_column_slice(&cert.p[i]).norm();
        Ok(NodeEuler {
            residual: r,
            scaled: r.max(cone_violation) / (1.0 + pn),
            cone_violation,
            lambda,
            mu,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let (node, worst) = per
        .iter()
        .map(|n| n.scaled)
        .enumerate()
        .fold((0, 0.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let status = if worst <= tol { Status::Pass } else { Status::Fail };
    let mut report = ConditionReport::new("euler", status, worst, Some(Location { node, sample: None }), tol);
    report.notes.push("node residual and cone violation scaled by 1 + |p_i|".into());
    if cert.lambda.is_none() || cert.mu.is_none() {
        report.notes.push("missing multiplier tracks recovered per node".into());
    }
    let cone_worst = per.iter().map(|n| n.cone_violation).fold(0.0, f64::max);
    if cone_worst > 0.0 {
        report.notes.push(format!("largest cone violation {cone_worst:.3e}"));
    }
    if status == Status::Fail {
        let n = &per[node];
        report.witness = Some(n.lambda.iter().chain(n.mu.iter()).copied().collect());
    }
    let track = |f: &dyn Fn(&NodeEuler) -> &Vector| per.iter().map(|n| f(n).iter().copied().collect()).collect();
    Ok(EulerOutcome {
        report,
        residuals: per.iter().map(|n| n.residual).collect(),
        lambda: cert.lambda.is_none().then(|| track(&|n| &n.lambda)),
        mu: cert.mu.is_none().then(|| track(&|n| &n.mu)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub kappa: f64,
    pub k: f64,
    pub k_phi: f64,
    pub k_f: f64,
}

impl BoundConstants {
    pub fn bound(&self, p_norm: f64, lambda0: f64) -> f64 {
        self.kappa * ((self.k + self.k_phi) * p_norm + lambda0 * self.k_f)
    }
}

/// Constants for `|λ| ≤ κ{(k + k_φ)|p| + λ0 k_F}` from gradients sampled at
/// the nodes and at perturbed points of the trajectory tube.
///
/// Explicit problems: `κ = max 1/σ_min(∇_{y,u}h)`, `k_φ = max |∇_{y,u}φ|`,
/// `k_F = max |∇_{y,u}F|`. Structured problems: `κ = max 1/σ_min([−∇_u g, E])`,
/// `k_φ = 0`, `k_F = max |∇_u F|`. In both cases `k = 1`.
pub fn estimate_constants(
    cert: &Certificate,
    problem: &ControlProblem,
    config: &VerifyConfig,
) -> Result<BoundConstants, VerifyError> {
    let (nx, ny, nu) = (problem.nx, problem.ny, problem.nu);
    let n = cert.nodes();
    let idx: Vec<usize> = (0..n).collect();
    let per = map_indexed(config.exec, &idx, |_, &i| -> Result<[f64; 3], VerifyError> {
        let mut rng = stream_rng(config.seed, (n + i) as u64);
        let z0 = cert.node(i);
        let r = cert.radius_at(i, problem).min(0.1);
        let mut out = [0.0f64; 3];
        for s in 0..=config.tube_samples {
            let mut z = z0.clone();
            if s > 0 {
                for (k, zk) in z.iter_mut().enumerate() {
                    let w = if k < nx { 1e-3 } else { r };
                    *zk += w * (2.0 * rng.random::<f64>() - 1.0) / ((ny + nu).max(1) as f64).sqrt();
                }
            }
            let gf = gradient(&problem.running_cost, &z)?;
            let (sigma, kphi, kf) = match &problem.structured {
                None => {
                    let h = problem.algebraic.as_ref().expect("lambda track implies h");
                    let jh = h.jacobian(&z)?;
                    let cols = ny + nu;
                    let m = jh.columns(nx, cols).into_owned();
                    let sigma = if jh.nrows() > cols { 0.0 } else { smallest_singular_value(&m.transpose()) };
                    let jp = problem.dynamics.jacobian(&z)?;
                    let kphi = jp.columns(nx, cols).norm();
                    let kf = gf.rows(nx, cols).norm();
                    (sigma, kphi, kf)
                }
                Some(st) => {
                    let m = st.e.nrows();
                    let jg = st.g.jacobian(&z)?;
                    let mut a = Matrix::zeros(m, nu + nx);
                    for row in 0..m {
                        for k in 0..nu {
                            a[(row, k)] = -jg[(row, nx + k)];
                        }
                        for k in 0..nx {
                            a[(row, nu + k)] = st.e[(row, k)];
                        }
                    }
                    let sigma = if m > nu + nx { 0.0 } else { smallest_singular_value(&a.transpose()) };
                    (sigma, 0.0, gf.rows(nx, nu).norm())
                }
            };
            let kappa = if sigma > 0.0 { 1.0 / sigma } else { f64::INFINITY };
            out[0] = out[0].max(kappa);
            out[1] = out[1].max(kphi);
            out[2] = out[2].max(kf);
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let max = |k: usize| per.iter().map(|v| v[k]).fold(0.0, f64::max);
    Ok(BoundConstants {
        kappa: max(0),
        k: 1.0,
        k_phi: max(1),
        k_f: max(2),
    })
}

/// `|λ_i| ≤ κ{(k + k_φ)|p_i| + λ0 k_F}` at every node. The reported residual
/// is the largest excess `|λ_i| − bound_i`.
pub fn verify_multiplier_bound(cert: &Certificate, lambda: &[Vec<f64>], k: &BoundConstants) -> ConditionReport {
    let mut worst = f64::NEG_INFINITY;
    let mut node = 0;
    for (i, l) in lambda.iter().enumerate() {
        let ln = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pn = cert.p[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        let excess = ln - k.bound(pn, cert.lambda0);
        if excess > worst {
            worst = excess;
            node = i;
        }
    }
    let status = if !k.kappa.is_finite() {
        Status::Inconclusive
    } else if worst <= 0.0 {
        Status::Pass
    } else {
        Status::Fail
    };
    let mut r = ConditionReport::new("multiplier_bound", status, worst, Some(Location { node, sample: None }), 0.0);
    r.notes.push(format!(
        "kappa {:.6e}, k {:.6e}, k_phi {:.6e}, k_F {:.6e}",
        k.kappa, k.k, k.k_phi, k.k_f
    ));
    if !k.kappa.is_finite() {
        r.notes.push("constraint Jacobian is rank deficient: no finite kappa".into());
    }
    r
}

#[derive(Debug, Clone)]
pub struct StructuredOutcome {
    pub report: ConditionReport,
    pub lambda_phi: Vec<Vec<f64>>,
    pub full_row_rank: bool,
}

/// Reductions for `E ẋ = g(x, u)`.
///
/// Full row rank: `λ_φ = (EEᵀ)⁻¹E p`, then `ṗ = λ0∇_xF − ∇_x gᵀλ_φ`,
/// `μ = ∇_u gᵀλ_φ − λ0∇_uF ∈ N^C_U(u)` and `p = Eᵀλ_φ` are checked.
/// Otherwise `λ_φ` and `μ` are fitted jointly to the same three lines.
pub fn verify_structured_e(
    cert: &Certificate,
    problem: &ControlProblem,
    tol: f64,
    feas_tol: f64,
) -> Result<StructuredOutcome, VerifyError> {
    let s = problem
        .structured
        .as_ref()
        .ok_or_else(|| VerifyError::Missing("problem has no structured_E declaration".into()))?;
    let (nx, nu) = (problem.nx, problem.nu);
    let m = s.e.nrows();
    let full_row_rank = rank(&s.e, DEFAULT_RANK_TOL) == m;
    let solve = if full_row_rank {
        let eet = &s.e * s.e.transpose();
        let inv = eet
            .try_inverse()
            .ok_or_else(|| VerifyError::Dimension("E Eᵀ is singular".into()))?;
        Some(inv * &s.e)
    } else {
        None
    };
    let mut lambda_phi = Vec::with_capacity(cert.nodes());
    let mut worst = 0.0f64;
    let mut node = 0;
    let mut line_worst = [0.0f64; 3];
    for i in 0..cert.nodes() {
        let p = Vector::from_column_slice(&cert.p[i]);
        let z = cert.node(i);
        let (lam, lines) = match &solve {
            Some(sol) => {
                let lam = sol * &p;
                let pdot = Vector::from_vec(adjoint_derivative(cert, i));
                let jg = s.g.jacobian(&z)?;
                let gf = gradient(&problem.running_cost, &z)?;
                let gx = jg.columns(0, nx);
                let gu = jg.columns(nx, nu);
                let line1 = (pdot - (gf.rows(0, nx) * cert.lambda0 - gx.transpose() * &lam)).norm();
                let mu_calc = gu.transpose() * &lam - gf.rows(nx, nu) * cert.lambda0;
                let slot = Slot::clarke(&problem.control_set, &cert.u[i], feas_tol, i, "control")?;
                let mut line2 = slot.violation(&mu_calc)?;
                if let Some(mu) = &cert.mu {
                    line2 = line2.max((Vector::from_column_slice(&mu[i]) - &mu_calc).norm());
                }
                let range = (&p - s.e.transpose() * &lam).norm();
                (lam, [line1, line2, range])
            }
            None => {
                let sys = node_system(cert, problem, i, feas_tol)?;
                let mu_in = cert.mu.as_ref().map(|mu| Vector::from_column_slice(&mu[i]));
                let (lam, mu) = sys.fit(None, mu_in.as_ref())?;
                let r = sys.residual(&lam, &mu);
                let line1 = r.rows(0, nx).norm();
                let line2 = r.rows(nx, nu).norm().max(sys.mu.violation(&mu)?);
                let range = r.rows(nx + nu, nx).norm();
                (lam, [line1, line2, range])
            }
        };
        for k in 0..3 {
            line_worst[k] = line_worst[k].max(lines[k]);
        }
        let scaled = lines.iter().copied().fold(0.0, f64::max) / (1.0 + p.norm());
        if scaled > worst {
            worst = scaled;
            node = i;
        }
        lambda_phi.push(lam.iter().copied().collect());
    }
    let status = if worst <= tol { Status::Pass } else { Status::Fail };
    let mut report = ConditionReport::new("structured_e", status, worst, Some(Location { node, sample: None }), tol);
    report.notes.push(if full_row_rank {
        "E has full row rank: lambda_phi = (E E^T)^-1 E p".into()
    } else {
        "E lacks full row rank: lambda_phi fitted to p = E^T lambda_phi jointly with the adjoint lines".into()
    });
    report.notes.push(format!(
        "adjoint line {:.3e}, control line {:.3e}, range line {:.3e}",
        line_worst[0], line_worst[1], line_worst[2]
    ));
    Ok(StructuredOutcome {
        report,
        lambda_phi,
        full_row_rank,
    })
}
