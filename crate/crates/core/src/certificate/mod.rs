//! Verification of candidate extremals against the necessary conditions:
//! nontriviality, transversality, the explicit-multiplier Euler inclusion,
//! a sampled Weierstrass condition, the multiplier estimate and, for
//! `E ẋ = g(x, u)` problems, the structured adjoint equations.
//!
//! The adjoint derivative is never supplied; it is reconstructed from the
//! adjoint nodes by second-order finite differences.

mod euler;
mod weierstrass;

use serde::{Deserialize, Serialize};

use crate::error::VerifyError;
use crate::exec::Exec;
use crate::linalg::Vector;
use crate::problem::{ControlProblem, Radius};

pub use euler::{
    estimate_constants, verify_euler_explicit, verify_multiplier_bound, verify_structured_e, BoundConstants,
    EulerOutcome, StructuredOutcome,
};
pub use weierstrass::{weierstrass_gain, verify_weierstrass, WeierstrassOutcome};

/// Strictly increasing node times `τ₀ < … < τ_N` with `N ≥ 2` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mesh {
    times: Vec<f64>,
}

impl Mesh {
    pub fn new(times: Vec<f64>) -> Result<Self, VerifyError> {
        if times.len() < 3 {
            return Err(VerifyError::Dimension(format!(
                "a mesh needs at least 2 intervals, got {}",
                times.len().saturating_sub(1)
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(VerifyError::Dimension("mesh times must be finite and strictly increasing".into()));
        }
        Ok(Mesh { times })
    }

    pub fn uniform(t0: f64, t1: f64, intervals: usize) -> Result<Self, VerifyError> {
        let h = (t1 - t0) / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|i| t0 + h * i as f64).collect();
        if let Some(last) = times.last_mut() {
            *last = t1;
        }
        Mesh::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertRadius {
    Scalar(f64),
    Nodes(Vec<f64>),
}

/// A candidate extremal with its adjoint arc and (optional) multiplier tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mesh: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Vec<f64>>>,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<CertRadius>,
}

fn check_track(name: &str, track: &[Vec<f64>], nodes: usize, dim: usize) -> Result<(), VerifyError> {
    if track.len() != nodes {
        return Err(VerifyError::Dimension(format!("{name} has {} nodes, mesh has {nodes}", track.len())));
    }
    if let Some((i, row)) = track.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(VerifyError::Dimension(format!(
            "{name}[{i}] has length {}, expected {dim}",
            row.len()
        )));
    }
    if track.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VerifyError::Dimension(format!("{name} contains non-finite values")));
    }
    Ok(())
}

impl Certificate {
    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        serde_json::from_str(text).map_err(|e| VerifyError::Layout(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialises")
    }

    pub fn mesh(&self) -> Result<Mesh, VerifyError> {
        Mesh::new(self.mesh.clone())
    }

    pub fn nodes(&self) -> usize {
        self.mesh.len()
    }

    /// Number of multiplier components the problem expects in `lambda`.
    pub fn lambda_dim(problem: &ControlProblem) -> usize {
        match &problem.structured {
            Some(s) => s.e.nrows(),
            None => problem.nh(),
        }
    }

    /// Checks every track against the mesh and the problem dimensions.
    pub fn validate(&self, problem: &ControlProblem) -> Result<(), VerifyError> {
        let mesh = self.mesh()?;
        let n = mesh.nodes();
        check_track("x", &self.x, n, problem.nx)?;
        check_track("u", &self.u, n, problem.nu)?;
        check_track("p", &self.p, n, problem.nx)?;
        match &self.y {
            Some(y) => check_track("y", y, n, problem.ny)?,
            None if problem.ny > 0 => return Err(VerifyError::Missing("y track".into())),
            None => {}
        }
        if let Some(l) = &self.lambda {
            check_track("lambda", l, n, Self::lambda_dim(problem))?;
        }
        if let Some(m) = &self.mu {
            check_track("mu", m, n, problem.nu)?;
        }
        if self.lambda0 != 0.0 && self.lambda0 != 1.0 {
            return Err(VerifyError::Dimension(format!("lambda0 must be 0 or 1, got {}", self.lambda0)));
        }
        match &self.radius {
            Some(CertRadius::Scalar(r)) if !(*r > 0.0) => {
                return Err(VerifyError::Dimension("radius must be positive".into()))
            }
            Some(CertRadius::Nodes(r)) => {
                if r.len() != n || r.iter().any(|v| !(*v > 0.0)) {
                    return Err(VerifyError::Dimension("radius needs one positive value per node".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Node vector `(x_i, y_i, u_i)`.
    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut z = self.x[i].clone();
        if let Some(y) = &self.y {
            z.extend_from_slice(&y[i]);
        }
        z.extend_from_slice(&self.u[i]);
        z
    }

    /// Radius at node `i`: the certificate's own radius, else the problem's.
    pub fn radius_at(&self, i: usize, problem: &ControlProblem) -> f64 {
        match &self.radius {
            Some(CertRadius::Scalar(r)) => *r,
            Some(CertRadius::Nodes(r)) => r[i],
            None => match &problem.radius {
                Radius::Infinite => f64::INFINITY,
                r => r.at(self.mesh[i]),
            },
        }
    }

    /// Copy with the given multiplier tracks stored.
    pub fn with_tracks(&self, lambda: Option<Vec<Vec<f64>>>, mu: Option<Vec<Vec<f64>>>) -> Certificate {
        let mut c = self.clone();
        if lambda.is_some() {
            c.lambda = lambda;
        }
        if mu.is_some() {
            c.mu = mu;
        }
        c
    }
}

/// Finite-difference derivative of a node track: central in the interior,
/// second-order one-sided three-point formulas at the ends.
pub fn track_derivative(times: &[f64], track: &[Vec<f64>], i: usize) -> Vec<f64> {
    let n = times.len();
    let dim = track[i].len();
    let (a, b, c) = match i {
        0 => (0, 1, 2),
        _ if i == n - 1 => (n - 3, n - 2, n - 1),
        _ => (i - 1, i, i + 1),
    };
    let (ta, tb, tc, t) = (times[a], times[b], times[c], times[i]);
    // derivative of the quadratic interpolant through (a, b, c) at t
    let wa = ((t - tb) + (t - tc)) / ((ta - tb) * (ta - tc));
    let wb = ((t - ta) + (t - tc)) / ((tb - ta) * (tb - tc));
    let wc = ((t - ta) + (t - tb)) / ((tc - ta) * (tc - tb));
    (0..dim)
        .map(|k| wa * track[a][k] + wb * track[b][k] + wc * track[c][k])
        .collect()
}

/// `ṗ` at node `i`.
pub fn adjoint_derivative(cert: &Certificate, i: usize) -> Vec<f64> {
    track_derivative(&cert.mesh, &cert.p, i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
}

impl Status {
    /// Combination under logical AND: any failure fails, then any doubt.
    pub fn and(self, other: Status) -> Status {
        self.max(other)
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub status: Status,
    pub worst_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(name: &str, status: Status, worst: f64, location: Option<Location>, tolerance: f64) -> Self {
        ConditionReport {
            name: name.to_string(),
            status,
            worst_residual: worst,
            location,
            tolerance,
            witness: None,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feasibility: f64,
    pub nontriviality: f64,
    pub transversality: f64,
    pub euler: f64,
    pub weierstrass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-8,
            nontriviality: 1e-8,
            transversality: 1e-8,
            euler: 1e-6,
            weierstrass: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Random control samples per node for the Weierstrass check.
    pub samples: usize,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
    /// Nodes whose accepted-sample fraction falls below this are inconclusive.
    pub min_coverage: f64,
    /// Half-width of the sampling box when the radius is infinite.
    pub sample_box: f64,
    /// Extra tube points per node used to estimate the bound constants.
    pub tube_samples: usize,
    pub constants: Option<BoundConstants>,
    pub exec: Exec,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            tolerances: Tolerances::default(),
            seed: 0x5eed,
            samples: 64,
            newton_max_iter: 30,
            newton_tol: 1e-10,
            min_coverage: 0.1,
            sample_box: 10.0,
            tube_samples: 4,
            constants: None,
            exec: Exec::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub problem: String,
    pub lambda0: f64,
    pub overall: Status,
    pub conditions: Vec<ConditionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub tolerances: Tolerances,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_lambda: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_mu: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_phi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<BoundConstants>,
}

impl VerifyReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn exit_code(&self) -> i32 {
        self.overall.exit_code()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// `min_i |(λ0, p_i)| ≥ tol`.
pub fn verify_nontriviality(cert: &Certificate, tol: f64) -> ConditionReport {
    let (node, worst) = cert
        .p
        .iter()
        .map(|p| (cert.lambda0 * cert.lambda0 + p.iter().map(|v| v * v).sum::<f64>()).sqrt())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let status = if worst >= tol { Status::Pass } else { Status::Fail };
    let mut r = ConditionReport::new("nontriviality", status, worst, Some(Location { node, sample: None }), tol);
    r.notes.push("smallest |(lambda0, p_i)| over the nodes".into());
    r
}

/// `(p(τ₀), −p(τ_N)) − λ0 ∇f(x₀, x_N) ∈ N_S(x₀, x_N)`, membership by
/// distance to the limiting normal cone.
pub fn verify_transversality(
    cert: &Certificate,
    problem: &ControlProblem,
    tol: f64,
    feas_tol: f64,
) -> Result<ConditionReport, VerifyError> {
    let n = cert.nodes();
    let nx = problem.nx;
    let mut ends = cert.x[0].clone();
    ends.extend_from_slice(&cert.x[n - 1]);
    let ends = Vector::from_vec(ends);
    let snapped = problem.endpoint_set.snap(&ends, feas_tol).ok_or_else(|| {
        let viol = problem
            .endpoint_set
            .contains(&ends, 0.0)
            .map(|c| c.violation)
            .unwrap_or(f64::INFINITY);
        VerifyError::Infeasible {
            node: n - 1,
            message: format!("endpoints violate the endpoint set by {viol:.3e}"),
        }
    })?;
    let grad = problem.endpoint_cost.jacobian(snapped.as_slice())?;
    let mut v = Vector::zeros(2 * nx);
    for k in 0..nx {
        v[k] = cert.p[0][k] - cert.lambda0 * grad[(0, k)];
        v[nx + k] = -cert.p[n - 1][k] - cert.lambda0 * grad[(0, nx + k)];
    }
    let cone = problem.endpoint_set.limiting_normal_cone_outer(&snapped)?;
    let (_, dist) = cone.member(&v, tol)?;
    let status = if dist <= tol { Status::Pass } else { Status::Fail };
    let mut r = ConditionReport::new(
        "transversality",
        status,
        dist,
        Some(Location { node: n - 1, sample: None }),
        tol,
    );
    if cone.outer {
        r.notes.push("several endpoint pieces active: normal cone is an outer approximation".into());
    }
    if status == Status::Fail {
        r.witness = Some(v.iter().copied().collect());
    }
    Ok(r)
}

/// Per-node feasibility: controls in `U`, algebraic map in `K`, endpoints in `S`.
pub fn check_feasibility(cert: &Certificate, problem: &ControlProblem, tol: f64) -> Result<(), VerifyError> {
    for i in 0..cert.nodes() {
        let u = Vector::from_column_slice(&cert.u[i]);
        let c = problem.control_set.contains(&u, tol)?;
        if !c.inside {
            return Err(VerifyError::Infeasible {
                node: i,
                message: format!("control outside U by {:.3e}", c.violation),
            });
        }
        let viol = problem.algebraic_violation(&cert.node(i)).map_err(|e| VerifyError::Infeasible {
            node: i,
            message: e.to_string(),
        })?;
        if viol > tol {
            return Err(VerifyError::Infeasible {
                node: i,
                message: format!("algebraic constraint violated by {viol:.3e}"),
            });
        }
    }
    Ok(())
}

/// True when no piece of `S` constrains the right endpoint.
pub fn right_endpoint_free(problem: &ControlProblem) -> bool {
    let nx = problem.nx;
    problem.endpoint_set.pieces().iter().all(|p| {
        let free = |m: &crate::linalg::Matrix| (0..m.nrows()).all(|r| (nx..2 * nx).all(|c| m[(r, c)] == 0.0));
        free(p.a()) && free(p.g())
    })
}

/// Runs every applicable condition and combines them.
pub fn verify_certificate(
    cert: &Certificate,
    problem: &ControlProblem,
    config: &VerifyConfig,
) -> Result<VerifyReport, VerifyError> {
    cert.validate(problem)?;
    let tol = &config.tolerances;
    check_feasibility(cert, problem, tol.feasibility)?;

    let mut warnings = Vec::new();
    if cert.lambda0 == 0.0 && right_endpoint_free(problem) {
        warnings.push("free right endpoint: the multiplier lambda0 can be taken as 1".to_string());
    }

    let mut conditions = vec![
        verify_nontriviality(cert, tol.nontriviality),
        verify_transversality(cert, problem, tol.transversality, tol.feasibility)?,
    ];

    let euler = verify_euler_explicit(cert, problem, tol.euler, tol.feasibility, config.exec)?;
    conditions.push(euler.report.clone());

    let weier = verify_weierstrass(cert, problem, config)?;
    conditions.push(weier.report.clone());

    let lambda_track = cert.lambda.clone().or_else(|| euler.lambda.clone());
    let mut constants = None;
    if Certificate::lambda_dim(problem) > 0 {
        if let Some(track) = &lambda_track {
            let k = match &config.constants {
                Some(c) => *c,
                None => estimate_constants(cert, problem, config)?,
            };
            let mut r = verify_multiplier_bound(cert, track, &k);
            if cert.lambda.is_none() {
                r.notes.push("checked on the recovered multiplier track".into());
            }
            conditions.push(r);
            constants = Some(k);
        }
    }

    let mut lambda_phi = None;
    if problem.structured.is_some() {
        let s = verify_structured_e(cert, problem, tol.euler, tol.feasibility)?;
        conditions.push(s.report);
        lambda_phi = Some(s.lambda_phi);
    }

    let overall = conditions.iter().fold(Status::Pass, |acc, c| acc.and(c.status));
    Ok(VerifyReport {
        problem: problem.name.clone(),
        lambda0: cert.lambda0,
        overall,
        conditions,
        warnings,
        tolerances: *tol,
        seed: config.seed,
        recovered_lambda: if cert.lambda.is_none() { euler.lambda } else { None },
        recovered_mu: if cert.mu.is_none() { euler.mu } else { None },
        lambda_phi,
        constants,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn constant_track(n: usize, v: &[f64]) -> Vec<Vec<f64>> {
        vec![v.to_vec(); n]
    }

    /// `p ≡ 1`, `λ0 = 1`, `λ_h ≡ 0`, `μ ≡ 0` at the origin.
    pub fn gain_free_golden(intervals: usize) -> Certificate {
        let mesh = Mesh::uniform(0.0, 1.0, intervals).unwrap();
        let n = mesh.nodes();
        Certificate {
            mesh: mesh.times().to_vec(),
            x: constant_track(n, &[0.0]),
            y: Some(constant_track(n, &[0.0])),
            u: constant_track(n, &[0.0]),
            p: constant_track(n, &[1.0]),
            lambda0: 1.0,
            lambda: Some(constant_track(n, &[0.0])),
            mu: Some(constant_track(n, &[0.0])),
            radius: None,
        }
    }

    /// `x = t`, `u ≡ 1`, `p ≡ 1`.
    pub fn lq_analytic(intervals: usize) -> Certificate {
        let mesh = Mesh::uniform(0.0, 1.0, intervals).unwrap();
        let n = mesh.nodes();
        Certificate {
            mesh: mesh.times().to_vec(),
            x: mesh.times().iter().map(|&t| vec![t]).collect(),
            y: None,
            u: constant_track(n, &[1.0]),
            p: constant_track(n, &[1.0]),
            lambda0: 1.0,
            lambda: None,
            mu: None,
            radius: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::problem::fixtures::*;

    #[test]
    fn derivative_of_constant_and_linear_tracks() {
        let mesh = Mesh::uniform(0.0, 1.0, 10).unwrap();
        let t = mesh.times();
        let c = constant_track(t.len(), &[3.0]);
        let lin: Vec<Vec<f64>> = t.iter().map(|&s| vec![s]).collect();
        for i in 0..t.len() {
            assert!(track_derivative(t, &c, i)[0].abs() < 1e-12);
            assert!((track_derivative(t, &lin, i)[0] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_of_quadratic_track() {
        let mesh = Mesh::uniform(0.0, 1.0, 100).unwrap();
        let t = mesh.times();
        let q: Vec<Vec<f64>> = t.iter().map(|&s| vec![s * s]).collect();
        for i in 0..t.len() {
            assert!((track_derivative(t, &q, i)[0] - 2.0 * t[i]).abs() <= 1e-3);
        }
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh::new(vec![0.0, 1.0]).is_err());
        assert!(Mesh::new(vec![0.0, 0.5, 0.5]).is_err());
        assert_eq!(Mesh::uniform(0.0, 2.0, 4).unwrap().intervals(), 4);
    }

    #[test]
    fn nontriviality_cases() {
        let mut c = gain_free_golden(4);
        assert_eq!(verify_nontriviality(&c, 1e-8).status, Status::Pass);
        c.lambda0 = 0.0;
        c.p = constant_track(5, &[0.0]);
        let r = verify_nontriviality(&c, 1e-8);
        assert_eq!(r.status, Status::Fail);
        assert!(r.location.is_some());
        c.lambda0 = 1.0;
        assert_eq!(verify_nontriviality(&c, 1e-8).status, Status::Pass);
    }

    #[test]
    fn transversality_gain_free() {
        let p = gain_free();
        let mut c = gain_free_golden(10);
        let r = verify_transversality(&c, &p, 1e-8, 1e-8).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert!(r.worst_residual <= 1e-12);
        c.p = constant_track(11, &[1.1]);
        assert_eq!(verify_transversality(&c, &p, 1e-8, 1e-8).unwrap().status, Status::Fail);
    }

    #[test]
    fn transversality_fixed_and_free_endpoints() {
        let lq = lq();
        let mut c = lq_analytic(10);
        c.p = constant_track(11, &[-7.0]);
        assert_eq!(verify_transversality(&c, &lq, 1e-8, 1e-8).unwrap().status, Status::Pass);

        let free = ControlProblem::from_json(
            r#"{"variables": [{"name": "x", "dim": 1, "role": "state"},
                              {"name": "u", "dim": 1, "role": "control"}],
                "dynamics": ["u"], "horizon": [0, 1]}"#,
        )
        .unwrap();
        c.p = constant_track(11, &[0.0]);
        assert_eq!(verify_transversality(&c, &free, 1e-8, 1e-8).unwrap().status, Status::Pass);
        c.p[0] = vec![1e-3];
        assert_eq!(verify_transversality(&c, &free, 1e-8, 1e-8).unwrap().status, Status::Fail);
    }

    #[test]
    fn infeasible_trajectory_halts() {
        let p = gain_free();
        let mut c = gain_free_golden(10);
        c.y.as_mut().unwrap()[3] = vec![0.5];
        let err = verify_certificate(&c, &p, &VerifyConfig::default()).unwrap_err();
        assert!(matches!(err, VerifyError::Infeasible { node: 3, .. }));
        let mut c = gain_free_golden(10);
        c.u[2] = vec![2.0];
        c.y.as_mut().unwrap()[2] = vec![2.0];
        assert!(matches!(
            verify_certificate(&c, &p, &VerifyConfig::default()),
            Err(VerifyError::Infeasible { node: 2, .. })
        ));
    }

    #[test]
    fn gain_free_golden_passes_everything() {
        let p = gain_free();
        let c = gain_free_golden(50);
        let r = verify_certificate(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(r.overall, Status::Pass, "{}", r.to_json());
        for name in ["nontriviality", "transversality", "euler", "weierstrass"] {
            assert_eq!(r.condition(name).unwrap().status, Status::Pass);
        }
        assert!(r.condition("euler").unwrap().worst_residual <= 1e-8);
        assert!(r.condition("transversality").unwrap().worst_residual <= 1e-8);
    }

    #[test]
    fn free_endpoint_abnormal_warns() {
        let p = gain_free();
        let mut c = gain_free_golden(10);
        c.lambda0 = 0.0;
        let r = verify_certificate(&c, &p, &VerifyConfig::default()).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("lambda0 can be taken as 1")));
    }

    #[test]
    fn lq_analytic_certificate_passes_and_flipped_fails() {
        let p = lq();
        let c = lq_analytic(20);
        let r = verify_certificate(&c, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(r.overall, Status::Pass, "{}", r.to_json());
        let mut bad = c.clone();
        bad.p = constant_track(21, &[-1.0]);
        let r = verify_certificate(&bad, &p, &VerifyConfig::default()).unwrap();
        assert_eq!(r.overall, Status::Fail);
        let w = r.condition("weierstrass").unwrap();
        assert_eq!(w.status, Status::Fail);
        assert!(w.witness.is_some() && w.location.is_some());
    }

    #[test]
    fn json_round_trip() {
        let c = gain_free_golden(5);
        assert_eq!(Certificate::from_json(&c.to_json()).unwrap(), c);
        let mut d = c.clone();
        d.radius = Some(CertRadius::Scalar(0.5));
        let text = d.to_json();
        assert!(text.contains("\"radius\": 0.5"));
        assert_eq!(Certificate::from_json(&text).unwrap(), d);
    }

    #[test]
    fn deterministic_reports() {
        let p = lq();
        let c = lq_analytic(30);
        let a = verify_certificate(&c, &p, &VerifyConfig::default()).unwrap().to_json();
        let b = verify_certificate(
            &c,
            &p,
            &VerifyConfig {
                exec: Exec::Sequential,
                ..VerifyConfig::default()
            },
        )
        .unwrap()
        .to_json();
        assert_eq!(a, b);
    }
}
