//! Discrete adjoint and multiplier recovery from a converged NLP solution.
//!
//! With unscaled defects `E(x_{i+1} − x_i) − Δt·(…)`, the defect multiplier
//! `ν_i` already approximates `λ_φ` on interval `i`: the `x`-row of the KKT
//! system reads `ν_{i−1} − ν_i = Δt·(…)`, a difference quotient of the adjoint.
//! Path multipliers approximate `∫λ_h`, so they are divided by the quadrature
//! weight of their node; so are the bound terms that make up `μ`.

use super::{discretize, solve_nlp, Nlp, NlpOptions, NlpSolution, Row, Scheme};
use crate::certificate::{verify_certificate, Certificate, VerifyConfig, VerifyReport};
use crate::cq::{check_along_trajectory, CqOptions, TrajectoryMode};
use crate::error::TranscribeError;
use crate::linalg::{pseudo_inverse, Matrix, Vector};
use crate::problem::ControlProblem;

/// Builds a normal-form certificate (`λ0 = 1`) from a converged solution.
pub fn extract_adjoint(nlp: &Nlp, sol: &NlpSolution) -> Result<Certificate, TranscribeError> {
    if !sol.converged {
        return Err(TranscribeError::NotConverged {
            feasibility: sol.feasibility,
            stationarity: sol.stationarity,
        });
    }
    let problem = nlp.problem();
    let (nx, ny, nu) = (problem.nx, problem.ny, problem.nu);
    let nn = nlp.width();
    let last = nlp.intervals();
    let m = nlp.defect_dim();
    let w = &sol.w;
    let ev = nlp.eval_nodes(w, true)?;

    // Gradient of everything except the endpoint cost and the set rows.
    let mut grad = nlp.objective_gradient(w, &ev, false)?;
    let mut lam_h = vec![vec![0.0; problem.nh()]; last + 1];
    let rows = nlp
        .eq_rows()
        .iter()
        .zip(&sol.eq_multipliers)
        .chain(nlp.ineq_rows().iter().zip(&sol.ineq_multipliers));
    for (row, mult) in rows {
        if matches!(row, Row::Linear { .. }) || *mult == 0.0 {
            continue;
        }
        for (j, a) in nlp.row_gradient(row, &ev) {
            grad[j] += mult * a;
        }
        if let Row::Path { node, coeffs, .. } = row {
            for (j, c) in coeffs {
                lam_h[*node][*j] += mult * c;
            }
        }
    }

    let mut defect = vec![Vector::zeros(m); last];
    let mut nodal = vec![Vector::zeros(m); last + 1];
    for (row, mult) in nlp.eq_rows().iter().zip(&sol.eq_multipliers) {
        match row {
            Row::Defect { interval, comp } => defect[*interval][*comp] = *mult,
            Row::Algebraic { node, comp } => nodal[*node][*comp] = *mult,
            _ => {}
        }
    }
    if nlp.weights()[0] == 0.0 {
        nodal[0] = nodal[1].clone();
    }
    let lam_phi: Vec<Vector> = (0..=last)
        .map(|i| {
            let d = match nlp.scheme() {
                Scheme::Trapezoidal if i > 0 && i < last => (&defect[i - 1] + &defect[i]) * 0.5,
                Scheme::Trapezoidal if i == last => defect[last - 1].clone(),
                Scheme::ImplicitEuler if i > 0 => defect[i - 1].clone(),
                _ => defect[0].clone(),
            };
            d + &nodal[i]
        })
        .collect();
    let e = match &problem.structured {
        Some(s) => s.e.clone(),
        None => Matrix::identity(nx, nx),
    };
    let mut p: Vec<Vec<f64>> = lam_phi.iter().map(|l| (e.transpose() * l).iter().copied().collect()).collect();
    p[0] = grad[..nx].iter().map(|g| -g).collect();
    p[last] = grad[last * nn..last * nn + nx].to_vec();

    let weights = nlp.weights();
    let mut x = Vec::with_capacity(last + 1);
    let mut y = Vec::with_capacity(last + 1);
    let mut u = Vec::with_capacity(last + 1);
    let mut mu = Vec::with_capacity(last + 1);
    for i in 0..=last {
        let z = nlp.node(w, i);
        let (xi, yi, ui) = problem.split(z);
        x.push(xi.to_vec());
        y.push(yi.to_vec());
        u.push(ui.to_vec());
        let c = weights[i];
        let uoff = i * nn + nx + ny;
        mu.push(if c > 0.0 {
            grad[uoff..uoff + nu].iter().map(|g| -g / c).collect()
        } else {
            vec![0.0; nu]
        });
        if c > 0.0 {
            for l in lam_h[i].iter_mut() {
                *l /= c;
            }
        }
    }

    // Implicit Euler never weights node 0: take its free variables from node 1.
    if weights[0] == 0.0 {
        u[0] = u[1].clone();
        y[0] = complete_algebraic(problem, &x[0], &y[1], &u[0]);
        mu[0] = mu[1].clone();
        lam_h[0] = lam_h[1].clone();
    }

    let lambda = match &problem.structured {
        Some(_) => Some(lam_phi.iter().map(|l| l.iter().copied().collect()).collect()),
        None if problem.nh() > 0 => Some(lam_h),
        None => None,
    };
    Ok(Certificate {
        mesh: nlp.mesh().times().to_vec(),
        x,
        y: (ny > 0).then_some(y),
        u,
        p,
        lambda0: 1.0,
        lambda,
        mu: (nu > 0).then_some(mu),
        radius: None,
    })
}

/// Gauss-Newton in `y` on the equality rows of the target set, from `y0`,
/// run until the step stalls. Degenerate roots such as `y² = 0` converge
/// only linearly, so the iteration cap is generous.
fn complete_algebraic(problem: &ControlProblem, x: &[f64], y0: &[f64], u: &[f64]) -> Vec<f64> {
    let (Some(h), [k]) = (&problem.algebraic, problem.target_set.pieces()) else {
        return y0.to_vec();
    };
    if problem.ny == 0 || k.g().nrows() == 0 {
        return y0.to_vec();
    }
    let mut y = y0.to_vec();
    for _ in 0..200 {
        let z = problem.join(x, &y, u);
        let (Ok(hv), Ok(jh)) = (h.eval(&z), h.jacobian(&z)) else {
            break;
        };
        let r = k.g() * hv - k.gv();
        if r.amax() == 0.0 {
            break;
        }
        let jy = k.g() * jh.columns(problem.nx, problem.ny);
        let step = pseudo_inverse(&jy) * r;
        let size = step.amax();
        for (yi, s) in y.iter_mut().zip(step.iter()) {
            *yi -= s;
        }
        if !(size > 1e-300) || size <= 1e-15 * y.iter().fold(0.0f64, |a, v| a.max(v.abs())) {
            break;
        }
    }
    y
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub scheme: Scheme,
    pub nlp: NlpOptions,
    pub verify: VerifyConfig,
    /// Starting point; the problem's default initial guess when absent.
    pub init: Option<Vec<f64>>,
    /// Run the CQ ladder on sampled nodes and warn when calmness is not established.
    pub cq_check: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            scheme: Scheme::default(),
            nlp: NlpOptions::default(),
            verify: VerifyConfig::default(),
            init: None,
            cq_check: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub certificate: Certificate,
    pub report: VerifyReport,
    pub solution: NlpSolution,
}

/// Discretises, solves, extracts a certificate and verifies it.
pub fn solve_and_verify(
    problem: &ControlProblem,
    intervals: usize,
    opts: &SolveOptions,
) -> Result<SolveOutcome, TranscribeError> {
    let nlp = discretize(problem, intervals, opts.scheme)?;
    let init = opts.init.clone().unwrap_or_else(|| nlp.initial_point());
    let solution = solve_nlp(&nlp, &init, &opts.nlp)?;
    let certificate = extract_adjoint(&nlp, &solution)?;
    let mut report = verify_certificate(&certificate, problem, &opts.verify)?;
    if opts.cq_check && (problem.algebraic.is_some() || problem.structured.is_some()) {
        if let Some(w) = calmness_warning(problem, &certificate, &opts.verify) {
            report.warnings.push(w);
        }
    }
    Ok(SolveOutcome {
        certificate,
        report,
        solution,
    })
}

/// Up to eleven evenly spaced nodes.
fn sample_nodes(n: usize) -> Vec<usize> {
    if n <= 11 {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..=10).map(|k| (k * (n - 1) + 5) / 10).collect();
    idx.dedup();
    idx
}

/// Runs the CQ ladder on up to eleven nodes of `cert`. Returns a warning when
/// calmness together with WBCQ is not established at one of them.
pub fn calmness_warning(problem: &ControlProblem, cert: &Certificate, config: &VerifyConfig) -> Option<String> {
    let sys = match problem.constraint_system() {
        Ok(s) => s,
        Err(e) => return Some(format!("necessary conditions are not guaranteed: {e}")),
    };
    let nodes = sample_nodes(cert.nodes());
    let mut points = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let y = match &cert.y {
            Some(y) => complete_algebraic(problem, &cert.x[i], &y[i], &cert.u[i]),
            None => Vec::new(),
        };
        let z = match problem.cq_point(&cert.x[i], &y, &cert.u[i]) {
            Ok(z) => z,
            Err(e) => return Some(format!("necessary conditions are not guaranteed: {e}")),
        };
        points.push(Vector::from_vec(z));
    }
    let opts = CqOptions {
        seed: config.seed,
        exec: config.exec,
        ..CqOptions::default()
    };
    match check_along_trajectory(&sys, &points, TrajectoryMode::Along, &opts) {
        Err(e) => Some(format!("necessary conditions are not guaranteed: the CQ ladder failed ({e})")),
        Ok(reports) => {
            let bad: Vec<usize> = reports
                .iter()
                .zip(&nodes)
                .filter(|(r, _)| !r.sufficient)
                .map(|(_, i)| *i)
                .collect();
            (!bad.is_empty()).then(|| {
                format!(
                    "necessary conditions are not guaranteed: no calmness-sufficient constraint qualification \
                     was certified at nodes {bad:?}"
                )
            })
        }
    }
}
