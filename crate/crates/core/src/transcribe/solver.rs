//! Augmented Lagrangian with a projected Newton inner loop.
//!
//! Bounds are handled by projection; every other row enters the augmented
//! Lagrangian `J + Σ ν c + ρ/2 Σ c² + 1/(2ρ) Σ (max(0, ω + ρ g)² − ω²)`.

use serde::{Deserialize, Serialize};

use super::{projected_gradient_norm, Nlp, SparseGrad};
use crate::error::{ExprError, TranscribeError};
use crate::linalg::EnvelopeMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Projected-gradient tolerance of the inner minimisation.
    pub inner_tol: f64,
    pub feas_tol: f64,
    pub stat_tol: f64,
    /// Outer rounds kept after convergence, with the inner tolerance tightened to `polish_tol`.
    pub polish_rounds: usize,
    pub polish_tol: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            max_outer: 50,
            max_inner: 100,
            rho0: 10.0,
            rho_growth: 10.0,
            rho_max: 1e10,
            inner_tol: 1e-8,
            feas_tol: 1e-8,
            stat_tol: 1e-6,
            polish_rounds: 3,
            polish_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub rho: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpSolution {
    pub w: Vec<f64>,
    /// Multipliers `ν` of the equality rows, for `L = J + ν·c + ω·g`.
    pub eq_multipliers: Vec<f64>,
    /// Multipliers `ω ≥ 0` of the inequality rows.
    pub ineq_multipliers: Vec<f64>,
    /// `∂L/∂w_j` at active bounds: positive at a lower bound, negative at an upper one.
    pub bound_multipliers: Vec<f64>,
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub history: Vec<OuterRecord>,
}

struct Model {
    value: f64,
    grad: Vec<f64>,
    hess: EnvelopeMatrix,
}

struct Multipliers<'a> {
    nu: &'a [f64],
    omega: &'a [f64],
    rho: f64,
}

fn al_value(nlp: &Nlp, w: &[f64], m: &Multipliers) -> Result<f64, ExprError> {
    let ev = nlp.eval_nodes(w, false)?;
    let mut v = nlp.objective_with(w, &ev)?;
    for (row, nu) in nlp.eq_rows().iter().zip(m.nu) {
        let c = nlp.row_value(row, w, &ev);
        v += nu * c + 0.5 * m.rho * c * c;
    }
    for (row, om) in nlp.ineq_rows().iter().zip(m.omega) {
        let t = (om + m.rho * nlp.row_value(row, w, &ev)).max(0.0);
        v += (t * t - om * om) / (2.0 * m.rho);
    }
    Ok(v)
}

fn al_model(nlp: &Nlp, w: &[f64], m: &Multipliers) -> Result<Model, ExprError> {
    let ev = nlp.eval_nodes(w, true)?;
    let mut value = nlp.objective_with(w, &ev)?;
    let mut grad = nlp.objective_gradient(w, &ev, true)?;
    let mut gn: Vec<(SparseGrad, f64)> = Vec::new();
    let mut eq_sigma = Vec::with_capacity(m.nu.len());
    for (row, nu) in nlp.eq_rows().iter().zip(m.nu) {
        let c = nlp.row_value(row, w, &ev);
        let g = nlp.row_gradient(row, &ev);
        let sigma = nu + m.rho * c;
        value += nu * c + 0.5 * m.rho * c * c;
        for (j, a) in &g {
            grad[*j] += sigma * a;
        }
        eq_sigma.push(sigma);
        gn.push((g, m.rho));
    }
    let mut ineq_sigma = Vec::with_capacity(m.omega.len());
    for (row, om) in nlp.ineq_rows().iter().zip(m.omega) {
        let t = (om + m.rho * nlp.row_value(row, w, &ev)).max(0.0);
        value += (t * t - om * om) / (2.0 * m.rho);
        ineq_sigma.push(t);
        if t > 0.0 {
            let g = nlp.row_gradient(row, &ev);
            for (j, a) in &g {
                grad[*j] += t * a;
            }
            gn.push((g, m.rho));
        }
    }
    let hess = nlp.hessian(w, &eq_sigma, &ineq_sigma, &gn)?;
    Ok(Model { value, grad, hess })
}

/// Solves `H d = rhs`, adding the smallest diagonal shift that factors.
fn regularized_solve(h: &EnvelopeMatrix, rhs: &[f64]) -> Vec<f64> {
    let scale = 1.0 + h.max_abs_diagonal();
    let mut shift = 1e-10 * scale;
    while shift < 1e12 * scale {
        let mut f = h.clone();
        f.add_diagonal(shift);
        if f.cholesky() {
            return f.solve_factored(rhs);
        }
        shift *= 100.0;
    }
    rhs.iter().map(|r| r / scale).collect()
}

/// Minimises the augmented Lagrangian over the bounds. Returns the number of
/// Newton steps taken.
fn inner(nlp: &Nlp, w: &mut Vec<f64>, m: &Multipliers, tol: f64, max_iter: usize) -> Result<usize, ExprError> {
    let (lo, hi) = (nlp.lower(), nlp.upper());
    let n = w.len();
    for it in 0..max_iter {
        let model = al_model(nlp, w, m)?;
        let g = &model.grad;
        let pg = projected_gradient_norm(w, g, lo, hi);
        if pg <= tol {
            return Ok(it);
        }
        let eps = pg.min(1e-3);
        let active: Vec<bool> = (0..n)
            .map(|j| {
                lo[j] == hi[j] || (w[j] <= lo[j] + eps && g[j] > 0.0) || (w[j] >= hi[j] - eps && g[j] < 0.0)
            })
            .collect();
        let mut h = model.hess;
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            if active[j] {
                h.fix_variable(j);
            } else {
                rhs[j] = -g[j];
            }
        }
        let mut d = regularized_solve(&h, &rhs);
        for j in 0..n {
            if active[j] {
                d[j] = -g[j];
            }
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-14 {
            let trial: Vec<f64> = (0..n).map(|j| (w[j] + alpha * d[j]).max(lo[j]).min(hi[j])).collect();
            let pred: f64 = (0..n)
                .map(|j| {
                    if active[j] {
                        g[j] * (w[j] - trial[j])
                    } else {
                        -g[j] * alpha * d[j]
                    }
                })
                .sum();
            if let Ok(v) = al_value(nlp, &trial, m) {
                if v.is_finite() && v <= model.value - 1e-4 * pred {
                    let moved = (0..n).map(|j| (trial[j] - w[j]).abs() / (1.0 + w[j].abs())).fold(0.0, f64::max);
                    *w = trial;
                    if moved <= 1e-15 {
                        return Ok(it + 1);
                    }
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(it + 1);
        }
    }
    Ok(max_iter)
}

/// Best converged iterate, ranked by `max(feasibility, stationarity)`.
struct Snapshot {
    merit: f64,
    w: Vec<f64>,
    nu: Vec<f64>,
    omega: Vec<f64>,
    feas: f64,
    stat: f64,
    objective: f64,
}

fn feasibility(eq: &[f64], ineq: &[f64]) -> f64 {
    let e = eq.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    ineq.iter().fold(e, |a, g| a.max(*g))
}

/// Runs the augmented-Lagrangian method from `init`.
///
/// A solution that misses the tolerances is still returned, with
/// `converged == false`; certificate extraction refuses it.
pub fn solve_nlp(nlp: &Nlp, init: &[f64], opts: &NlpOptions) -> Result<NlpSolution, TranscribeError> {
    if init.len() != nlp.len() {
        return Err(TranscribeError::Invalid(format!(
            "initial point has length {}, the program has {} variables",
            init.len(),
            nlp.len()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(TranscribeError::Invalid("initial point is not finite".into()));
    }
    let mut w = nlp.project(init);
    let mut nu = vec![0.0; nlp.eq_rows().len()];
    let mut omega = vec![0.0; nlp.ineq_rows().len()];
    let mut rho = opts.rho0;
    let mut prev_feas = f64::INFINITY;
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut polished = 0;
    let mut converged = false;
    let (mut feas, mut stat, mut objective) = (f64::INFINITY, f64::INFINITY, f64::NAN);
    let mut best: Option<Snapshot> = None;

    while history.len() < opts.max_outer {
        let tol = if converged { opts.polish_tol } else { opts.inner_tol };
        let steps = inner(
            nlp,
            &mut w,
            &Multipliers {
                nu: &nu,
                omega: &omega,
                rho,
            },
            tol,
            opts.max_inner,
        )?;
        inner_total += steps;
        let c = nlp.eq_values(&w)?;
        let g = nlp.ineq_values(&w)?;
        for (n, c) in nu.iter_mut().zip(&c) {
            *n += rho * c;
        }
        for (o, g) in omega.iter_mut().zip(&g) {
            *o = (*o + rho * g).max(0.0);
        }
        feas = feasibility(&c, &g);
        stat = nlp.stationarity(&w, &nu, &omega)?;
        objective = nlp.objective(&w)?;
        history.push(OuterRecord {
            objective,
            feasibility: feas,
            stationarity: stat,
            rho,
            inner_iterations: steps,
        });
        converged = feas <= opts.feas_tol && stat <= opts.stat_tol;
        if converged {
            let merit = feas.max(stat);
            if best.as_ref().is_some_and(|b| merit >= b.merit) {
                break;
            }
            best = Some(Snapshot {
                merit,
                w: w.clone(),
                nu: nu.clone(),
                omega: omega.clone(),
                feas,
                stat,
                objective,
            });
            polished += 1;
            if polished > opts.polish_rounds || merit <= opts.polish_tol {
                break;
            }
            continue;
        }
        if feas > 0.25 * prev_feas {
            rho = (rho * opts.rho_growth).min(opts.rho_max);
        }
        prev_feas = feas;
    }

    if let Some(b) = best {
        (w, nu, omega, feas, stat, objective) = (b.w, b.nu, b.omega, b.feas, b.stat, b.objective);
        converged = true;
    }
    let grad = nlp.lagrangian_gradient(&w, &nu, &omega)?;
    let (lo, hi) = (nlp.lower(), nlp.upper());
    let bound_multipliers = (0..w.len())
        .map(|j| {
            let at_lo = w[j] <= lo[j] + 1e-12 * (1.0 + lo[j].abs());
            let at_hi = w[j] >= hi[j] - 1e-12 * (1.0 + hi[j].abs());
            if (at_lo && grad[j] > 0.0) || (at_hi && grad[j] < 0.0) {
                grad[j]
            } else {
                0.0
            }
        })
        .collect();
    Ok(NlpSolution {
        w,
        eq_multipliers: nu,
        ineq_multipliers: omega,
        bound_multipliers,
        objective,
        feasibility: feas,
        stationarity: stat,
        converged,
        outer_iterations: history.len(),
        inner_iterations: inner_total,
        history,
    })
}
