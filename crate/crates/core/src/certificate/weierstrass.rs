//! Sampled Weierstrass condition of radius `R`.
//!
//! Explicit problems compare `⟨p, φ(x, y, u)⟩ − λ0 F(x, y, u)` over feasible
//! `(y, u)`; structured problems compare `⟨p, v⟩ − λ0 F(x, u)` over `(u, v)`
//! with `E v = g(x, u)`. Controls are drawn from the bounding boxes of the
//! pieces of `U` intersected with the radius box, then moved onto the
//! algebraic manifold by a damped Gauss-Newton iteration.

use rand::Rng;

use super::euler::velocity;
use super::{Certificate, ConditionReport, Location, Status, VerifyConfig};
use crate::error::{ExprError, VerifyError};
use crate::exec::{map_indexed, stream_rng};
use crate::linalg::{null_space, pseudo_inverse, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::lp::{lp_solve, LpProblem, LpStatus};
use crate::polyhedra::Polyhedron;
use crate::problem::ControlProblem;

/// The open ball `|·| < R` is sampled as `|·| ≤ R − BALL_MARGIN`.
const BALL_MARGIN: f64 = 1e-12;
const PIECE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct WeierstrassOutcome {
    pub report: ConditionReport,
    /// Accepted fraction of candidates per node.
    pub coverage: Vec<f64>,
    /// Largest gain per node (`NEG_INFINITY` when nothing was accepted).
    pub gains: Vec<f64>,
}

fn piece_box(p: &Polyhedron) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
    let n = p.dim();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut c = Vector::zeros(n);
            c[k] = sign;
            let lp = LpProblem::new(c)
                .with_inequalities(p.a().clone(), p.b().clone())
                .with_equalities(p.g().clone(), p.gv().clone());
            let res = lp_solve(&lp)?;
            if res.status == LpStatus::Optimal {
                if sign > 0.0 {
                    hi[k] = res.objective;
                } else {
                    lo[k] = -res.objective;
                }
            }
        }
    }
    Ok((lo, hi))
}

/// Damped Gauss-Newton for `r(w) = 0` with minimum-norm steps.
fn solve_manifold(
    residual: &dyn Fn(&[f64]) -> Result<(Vector, Matrix), ExprError>,
    start: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> Option<Vec<f64>> {
    let mut w = start;
    let (mut r, mut j) = residual(&w).ok()?;
    for _ in 0..=max_iter {
        if r.amax() <= tol {
            return Some(w);
        }
        let step = -(pseudo_inverse(&j) * &r);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            if let Ok((rt, jt)) = residual(&trial) {
                if rt.norm() < r.norm() {
                    w = trial;
                    r = rt;
                    j = jt;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (r.amax() <= tol).then_some(w)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference velocity for structured problems: the solution of
/// `E v = g(x_i, u_i)` closest to the finite-difference velocity.
fn reference_velocity(cert: &Certificate, problem: &ControlProblem, i: usize) -> Result<Vec<f64>, VerifyError> {
    let s = problem.structured.as_ref().expect("structured problem");
    let v = Vector::from_vec(velocity(cert, i));
    let g = s.g.eval(&cert.node(i))?;
    let corr = pseudo_inverse(&s.e) * (g - &s.e * &v);
    Ok((v + corr).iter().copied().collect())
}

/// Hamiltonian-type value of a candidate at node `i`: `(y, u)` for explicit
/// problems, `(u, v)` for structured ones.
fn value(cert: &Certificate, problem: &ControlProblem, i: usize, cand: &[f64]) -> Result<f64, VerifyError> {
    let x = &cert.x[i];
    let p = &cert.p[i];
    match &problem.structured {
        None => {
            let mut z = x.clone();
            z.extend_from_slice(cand);
            let phi = problem.dynamics.eval(&z)?;
            let f = problem.running_cost.eval(&z)?[0];
            Ok(dot(p, phi.as_slice()) - cert.lambda0 * f)
        }
        Some(_) => {
            let (u, v) = cand.split_at(problem.nu);
            let mut z = x.clone();
            z.extend_from_slice(u);
            let f = problem.running_cost.eval(&z)?[0];
            Ok(dot(p, v) - cert.lambda0 * f)
        }
    }
}

fn reference(cert: &Certificate, problem: &ControlProblem, i: usize) -> Result<Vec<f64>, VerifyError> {
    let mut c = Vec::new();
    match &problem.structured {
        None => {
            if let Some(y) = &cert.y {
                c.extend_from_slice(&y[i]);
            }
            c.extend_from_slice(&cert.u[i]);
        }
        Some(_) => {
            c.extend_from_slice(&cert.u[i]);
            c.extend(reference_velocity(cert, problem, i)?);
        }
    }
    Ok(c)
}

/// Gain of a candidate over the certified point, recomputed from scratch.
pub fn weierstrass_gain(
    cert: &Certificate,
    problem: &ControlProblem,
    i: usize,
    cand: &[f64],
) -> Result<f64, VerifyError> {
    let refc = reference(cert, problem, i)?;
    Ok(value(cert, problem, i, cand)? - value(cert, problem, i, &refc)?)
}

/// Completes a sampled control to a feasible candidate, or `None`.
fn complete(
    cert: &Certificate,
    problem: &ControlProblem,
    config: &VerifyConfig,
    i: usize,
    u: Vec<f64>,
    null_w: &[f64],
) -> Result<Option<Vec<f64>>, VerifyError> {
    let x = &cert.x[i];
    let (ny, nu) = (problem.ny, problem.nu);
    let (iters, tol) = (config.newton_max_iter, config.newton_tol);
    match &problem.structured {
        None => {
            let Some(h) = &problem.algebraic else {
                return Ok(Some(u));
            };
            let y0 = cert.y.as_ref().map_or_else(Vec::new, |y| y[i].clone());
            let pieces = problem.target_set.pieces();
            if pieces.len() != 1 || pieces[0].a().nrows() > 0 || ny == 0 {
                // no equation to solve for y: accept only points already in K
                let mut z = x.clone();
                z.extend_from_slice(&y0);
                z.extend_from_slice(&u);
                if problem.algebraic_violation(&z).map_err(|e| VerifyError::Layout(e.to_string()))?
                    > config.tolerances.feasibility
                {
                    return Ok(None);
                }
                let mut c = y0;
                c.extend(u);
                return Ok(Some(c));
            }
            let gv = problem.target_set.pieces()[0].gv().clone();
            let g = problem.target_set.pieces()[0].g().clone();
            let res = |y: &[f64]| -> Result<(Vector, Matrix), ExprError> {
                let mut z = x.clone();
                z.extend_from_slice(y);
                z.extend_from_slice(&u);
                let hv = h.eval(&z)?;
                let jh = h.jacobian(&z)?;
                Ok((&g * hv - &gv, &g * jh.columns(problem.nx, ny)))
            };
            Ok(solve_manifold(&res, y0, iters, tol).map(|y| {
                let mut c = y;
                c.extend_from_slice(&u);
                c
            }))
        }
        Some(s) => {
            let ep = pseudo_inverse(&s.e);
            let proj = Matrix::identity(s.e.nrows(), s.e.nrows()) - &s.e * &ep;
            let consistent = |u: &[f64]| -> Result<(Vector, Matrix), ExprError> {
                let mut z = x.clone();
                z.extend_from_slice(u);
                let gv = s.g.eval(&z)?;
                let jg = s.g.jacobian(&z)?;
                Ok((&proj * gv, &proj * jg.columns(problem.nx, nu)))
            };
            let Some(u) = solve_manifold(&consistent, u, iters, tol) else {
                return Ok(None);
            };
            let mut z = x.clone();
            z.extend_from_slice(&u);
            let gv = s.g.eval(&z)?;
            let vstar = reference_velocity(cert, problem, i)?;
            let nb = null_space(&s.e, DEFAULT_RANK_TOL);
            let mut v = &ep * gv;
            // keep the null-space part of the reference velocity, then perturb it
            let vs = Vector::from_vec(vstar);
            v += &nb * (nb.transpose() * &vs);
            for (k, w) in null_w.iter().enumerate().take(nb.ncols()) {
                v += nb.column(k) * *w;
            }
            let mut c = u;
            c.extend(v.iter().copied());
            Ok(Some(c))
        }
    }
}

struct NodeResult {
    attempted: usize,
    accepted: usize,
    best: Option<(usize, f64, Vec<f64>)>,
}

/// Samples candidates at each node and reports the largest gain over the
/// certified point. A node with accepted fraction below `min_coverage` is
/// inconclusive; any gain above the tolerance fails with a witness.
pub fn verify_weierstrass(
    cert: &Certificate,
    problem: &ControlProblem,
    config: &VerifyConfig,
) -> Result<WeierstrassOutcome, VerifyError> {
    let pieces = problem.control_set.pieces();
    let boxes = pieces.iter().map(piece_box).collect::<Result<Vec<_>, _>>()?;
    let nu = problem.nu;
    let null_dim = problem
        .structured
        .as_ref()
        .map_or(0, |s| null_space(&s.e, DEFAULT_RANK_TOL).ncols());
    let idx: Vec<usize> = (0..cert.nodes()).collect();
    let per = map_indexed(config.exec, &idx, |_, &i| -> Result<NodeResult, VerifyError> {
        let refc = reference(cert, problem, i)?;
        let refv = value(cert, problem, i, &refc)?;
        if nu == 0 && null_dim == 0 {
            return Ok(NodeResult {
                attempted: 1,
                accepted: 1,
                best: Some((0, 0.0, refc)),
            });
        }
        let mut rng = stream_rng(config.seed, i as u64);
        let ustar = &cert.u[i];
        let radius = cert.radius_at(i, problem) - BALL_MARGIN;
        let half = radius.min(config.sample_box);
        let mut cands: Vec<Vec<f64>> = Vec::new();
        if half >= 0.0 {
            for s in 0..config.samples {
                let (lo, hi) = &boxes[s % boxes.len()];
                let u: Vec<f64> = (0..nu)
                    .map(|k| {
                        let a = lo[k].max(ustar[k] - half);
                        let b = hi[k].min(ustar[k] + half);
                        if b > a {
                            rng.random_range(a..=b)
                        } else {
                            a
                        }
                    })
                    .collect();
                cands.push(u);
            }
            for k in 0..nu {
                for sign in [1.0, -1.0] {
                    let mut u = ustar.clone();
                    u[k] += sign * half;
                    let (lo, hi) = &boxes[0];
                    u[k] = u[k].max(lo[k]).min(hi[k]);
                    cands.push(u);
                }
            }
        }
        let attempted = config.samples + 2 * nu;
        let mut accepted = 0;
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (s, u) in cands.into_iter().enumerate() {
            let uv = Vector::from_column_slice(&u);
            if !problem.control_set.contains(&uv, PIECE_TOL)?.inside {
                continue;
            }
            let w: Vec<f64> = (0..null_dim).map(|_| rng.random_range(-half..=half)).collect();
            let Some(c) = complete(cert, problem, config, i, u, &w)? else {
                continue;
            };
            // the consistency solve may move a structured control out of U
            if problem.structured.is_some()
                && !problem.control_set.contains(&Vector::from_column_slice(&c[..nu]), PIECE_TOL)?.inside
            {
                continue;
            }
            if dist(&c, &refc) > radius {
                continue;
            }
            accepted += 1;
            let gain = match value(cert, problem, i, &c) {
                Ok(v) => v - refv,
                Err(_) => continue,
            };
            if best.as_ref().is_none_or(|b| gain > b.1) {
                best = Some((s, gain, c));
            }
        }
        Ok(NodeResult {
            attempted,
            accepted,
            best,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let tol = config.tolerances.weierstrass;
    let coverage: Vec<f64> = per.iter().map(|r| r.accepted as f64 / r.attempted as f64).collect();
    let gains: Vec<f64> = per
        .iter()
        .map(|r| r.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1))
        .collect();
    let (node, worst) = gains
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    let thin: Vec<usize> = (0..per.len()).filter(|&i| coverage[i] < config.min_coverage).collect();
    let status = if worst > tol {
        Status::Fail
    } else if !thin.is_empty() {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    let location = match status {
        Status::Inconclusive => Location {
            node: thin[0],
            sample: None,
        },
        _ => Location {
            node,
            sample: per[node].best.as_ref().map(|b| b.0),
        },
    };
    let mut report = ConditionReport::new("weierstrass", status, worst.max(0.0), Some(location), tol);
    report.notes.push(format!(
        "sampled: {} candidates per node, seed {}",
        config.samples + 2 * nu,
        config.seed
    ));
    let min_cov = coverage.iter().copied().fold(1.0, f64::min);
    let mean_cov = coverage.iter().sum::<f64>() / coverage.len() as f64;
    report.notes.push(format!("coverage min {min_cov:.3}, mean {mean_cov:.3}"));
    if !thin.is_empty() {
        report.notes.push(format!("{} node(s) below the coverage threshold", thin.len()));
    }
    if status == Status::Fail {
        report.witness = per[node].best.as_ref().map(|b| b.2.clone());
    }
    Ok(WeierstrassOutcome {
        report,
        coverage,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::CertRadius;
    use super::*;
    use crate::problem::fixtures::*;

    #[test]
    fn gain_free_zero_margin() {
        let p = gain_free();
        let c = gain_free_golden(20);
        let out = verify_weierstrass(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Pass);
        assert!(out.report.worst_residual <= 1e-12);
        assert!(out.coverage.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn bang_bang_pass_and_counterexample() {
        let p = bang();
        let mut c = lq_analytic(10);
        let out = verify_weierstrass(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Pass);
        c.u = constant_track(11, &[0.0]);
        let out = verify_weierstrass(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Fail);
        let loc = out.report.location.unwrap();
        let w = out.report.witness.unwrap();
        let gain = weierstrass_gain(&c, &p, loc.node, &w).unwrap();
        assert!(gain > 1e-6);
        assert!((gain - out.report.worst_residual).abs() < 1e-12);
    }

    #[test]
    fn radius_restricts_candidates() {
        let p = bang();
        let mut c = lq_analytic(10);
        c.u = constant_track(11, &[0.0]);
        c.radius = Some(CertRadius::Scalar(5e-13));
        let out = verify_weierstrass(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Inconclusive);
        assert!(out.coverage.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn structured_candidates_use_velocity() {
        let p = lq_structured();
        let c = lq_analytic(10);
        let out = verify_weierstrass(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Pass, "{:?}", out.report);
        let mut bad = c.clone();
        bad.p = constant_track(11, &[-1.0]);
        let out = verify_weierstrass(&bad, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(out.report.status, Status::Fail);
    }
}
