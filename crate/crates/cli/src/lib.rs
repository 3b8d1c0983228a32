//! Command-line front end for `nocert`.
//!
//! Every subcommand reads JSON, writes one JSON report and maps the report to
//! an exit code. [`run`] does all of it in-process, so the binary is a thin
//! wrapper and tests can drive the CLI without spawning processes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nocert::certificate::{verify_certificate, Certificate, Status, Tolerances, VerifyConfig, VerifyReport};
use nocert::cq::{
    check_along_trajectory, check_calmness_sufficient, CqLadderReport, CqOptions, CqStatus, LadderOutcome,
    TrajectoryMode,
};
use nocert::linalg::Vector;
use nocert::problem::ControlProblem;
use nocert::transcribe::{calmness_warning, discretize, extract_adjoint, solve_nlp, NlpOptions, OuterRecord, Scheme};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "nocert",
    version,
    about = "Constraint-qualification checks, certificate verification and direct transcription for implicit control systems"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every sampler.
    #[arg(long, global = true, default_value_t = 0x5eed)]
    pub seed: u64,
    /// Feasibility tolerance (verification default 1e-8, CQ checks 1e-6).
    #[arg(long, global = true)]
    pub tol_feas: Option<f64>,
    /// Relative Euler residual tolerance.
    #[arg(long, global = true)]
    pub tol_euler: Option<f64>,
    /// Weierstrass margin.
    #[arg(long, global = true)]
    pub tol_weier: Option<f64>,
    /// Number of mesh intervals for `solve`.
    #[arg(long, global = true, default_value_t = 50)]
    pub mesh_n: usize,
    #[arg(long, global = true, default_value = "trapezoidal")]
    pub scheme: Scheme,
    /// Override the certificate's λ0, or verify with both 0 and 1.
    #[arg(long, global = true)]
    pub lambda0: Option<Lambda0>,
    /// Samples per node for the Weierstrass check and the sampled CQs.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Lambda0 {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the CQ ladder at a point or along a trajectory.
    CheckCq(CheckCqArgs),
    /// Verify a certificate against a problem.
    Verify(VerifyArgs),
    /// Transcribe, solve, extract a certificate and verify it.
    Solve(SolveArgs),
    /// Render one or more reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CheckCqArgs {
    pub problem: PathBuf,
    /// Inline JSON array or a file holding one.
    #[arg(long, conflicts_with = "trajectory", required_unless_present = "trajectory")]
    pub point: Option<String>,
    /// Certificate file, or a JSON array of node vectors.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Extra feasible samples per mesh point from the ε/R tube.
    #[arg(long, default_value_t = 0)]
    pub tube_samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tube_eps: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub tube_radius: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub problem: PathBuf,
    pub certificate: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub problem: PathBuf,
    /// Where to write the extracted certificate.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Skip the CQ ladder on sampled nodes.
    #[arg(long)]
    pub no_cq_check: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

/// Validated settings shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tolerances: Tolerances,
    pub cq_feas_tol: f64,
    pub mesh_n: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub samples: Option<usize>,
    pub lambda0: Option<Lambda0>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_args(g: &GlobalArgs) -> Result<Self, Failure> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(t) if !(t.is_finite() && t > 0.0) => Err(Failure::input(format!("--{name} must be positive"))),
            _ => Ok(()),
        };
        positive("tol-feas", g.tol_feas)?;
        positive("tol-euler", g.tol_euler)?;
        positive("tol-weier", g.tol_weier)?;
        if g.mesh_n == 0 {
            return Err(Failure::input("--mesh-n must be positive"));
        }
        if g.samples == Some(0) {
            return Err(Failure::input("--samples must be positive"));
        }
        let mut tolerances = Tolerances::default();
        if let Some(t) = g.tol_feas {
            tolerances.feasibility = t;
        }
        if let Some(t) = g.tol_euler {
            tolerances.euler = t;
        }
        if let Some(t) = g.tol_weier {
            tolerances.weierstrass = t;
        }
        Ok(RunConfig {
            tolerances,
            cq_feas_tol: g.tol_feas.unwrap_or(CqOptions::default().feas_tol),
            mesh_n: g.mesh_n,
            scheme: g.scheme,
            seed: g.seed,
            samples: g.samples,
            lambda0: g.lambda0,
            out: g.out.clone(),
        })
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let mut c = VerifyConfig {
            tolerances: self.tolerances,
            seed: self.seed,
            ..VerifyConfig::default()
        };
        if let Some(s) = self.samples {
            c.samples = s;
        }
        c
    }

    pub fn cq_options(&self) -> CqOptions {
        let mut o = CqOptions {
            seed: self.seed,
            feas_tol: self.cq_feas_tol,
            ..CqOptions::default()
        };
        if let Some(s) = self.samples {
            o.samples = s;
        }
        o
    }
}

/// A run that stopped before producing a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

/// What a run printed and how it exits.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Result of `check-cq`: one ladder report per requested point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqRunReport {
    pub problem: String,
    pub seed: u64,
    pub feas_tol: f64,
    pub samples: usize,
    pub mode: TrajectoryMode,
    /// Worst outcome over all points.
    pub outcome: LadderOutcome,
    pub points: Vec<CqLadderReport>,
}

impl CqRunReport {
    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub converged: bool,
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub history: Vec<OuterRecord>,
}

/// Result of `solve`. `verification` is absent when the solver did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub scheme: Scheme,
    pub intervals: usize,
    pub solver: SolverSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerifyReport>,
}

impl SolveReport {
    pub fn exit_code(&self) -> i32 {
        match &self.verification {
            Some(r) if self.solver.converged => r.exit_code(),
            _ => EXIT_NOT_CONVERGED,
        }
    }
}

/// Exit code of a `verify` run. Several reports come from `--lambda0 both`;
/// the conditions are a disjunction over λ0, so the best report decides.
pub fn verify_exit_code(reports: &[VerifyReport]) -> i32 {
    reports.iter().map(|r| r.overall).min().map_or(EXIT_INPUT, Status::exit_code)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Outcome {
                    code: EXIT_PASS,
                    stdout: text,
                    stderr: String::new(),
                },
                _ => Outcome {
                    code: EXIT_INPUT,
                    stdout: String::new(),
                    stderr: text,
                },
            };
        }
    };
    match execute(&cli) {
        Ok(o) => o,
        Err(f) => Outcome {
            code: f.code,
            stdout: String::new(),
            stderr: format!("error: {}\n", f.message),
        },
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, Failure> {
    let cfg = RunConfig::from_args(&cli.global)?;
    match &cli.command {
        Command::CheckCq(a) => {
            let report = cmd_check_cq(a, &cfg)?;
            emit(&cfg, &to_json(&report), report.exit_code(), summary_cq(&report))
        }
        Command::Verify(a) => {
            let reports = cmd_verify(a, &cfg)?;
            let text = match reports.as_slice() {
                [one] => to_json(one),
                many => to_json(&many),
            };
            let code = verify_exit_code(&reports);
            let line = reports
                .iter()
                .map(|r| format!("lambda0 = {}: {}", r.lambda0, status_word(r.overall)))
                .collect::<Vec<_>>()
                .join(", ");
            emit(&cfg, &text, code, line)
        }
        Command::Solve(a) => {
            let report = cmd_solve(a, &cfg)?;
            let line = match &report.verification {
                Some(v) => format!("solver converged; verification {}", status_word(v.overall)),
                None => format!(
                    "solver did not converge (feasibility {:.3e}, stationarity {:.3e})",
                    report.solver.feasibility, report.solver.stationarity
                ),
            };
            let code = report.exit_code();
            let mut out = emit(&cfg, &to_json(&report), code, line.clone())?;
            if code == EXIT_NOT_CONVERGED {
                out.stderr.push_str(&format!("{line}\n"));
            }
            Ok(out)
        }
        Command::Report(a) => Ok(Outcome {
            code: EXIT_PASS,
            stdout: cmd_report(&a.reports)?,
            stderr: String::new(),
        }),
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialise");
    s.push('\n');
    s
}

fn emit(cfg: &RunConfig, text: &str, code: i32, summary: String) -> Result<Outcome, Failure> {
    match &cfg.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
            Ok(Outcome {
                code,
                stdout: String::new(),
                stderr: format!("{summary}\nreport written to {}\n", path.display()),
            })
        }
        None => Ok(Outcome {
            code,
            stdout: text.to_string(),
            stderr: String::new(),
        }),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

pub fn load_problem(path: &Path) -> Result<ControlProblem, Failure> {
    ControlProblem::from_json(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_certificate(path: &Path) -> Result<Certificate, Failure> {
    Certificate::from_json(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Inconclusive => "INCONCLUSIVE",
        Status::Fail => "FAIL",
    }
}

/// Brings a point to the constraint system's layout. Node vectors `(x, y, u)`
/// of structured problems gain `v = E⁺g(x, u)`.
fn system_point(problem: &ControlProblem, dim: usize, z: &[f64]) -> Result<Vector, Failure> {
    if z.len() == dim {
        return Ok(Vector::from_column_slice(z));
    }
    if z.len() == problem.node_width() {
        let (x, y, u) = problem.split(z);
        let full = problem.cq_point(x, y, u).map_err(|e| Failure::input(e.to_string()))?;
        return Ok(Vector::from_vec(full));
    }
    Err(Failure::input(format!(
        "point has {} entries; expected {} (node) or {} (constraint system)",
        z.len(),
        problem.node_width(),
        dim
    )))
}

fn parse_point(arg: &str) -> Result<Vec<f64>, Failure> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        read(Path::new(arg))?
    };
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("point: {e}")))
}

fn trajectory_nodes(text: &str, problem: &ControlProblem) -> Result<Vec<Vec<f64>>, Failure> {
    let value: Value = serde_json::from_str(text).map_err(|e| Failure::input(format!("trajectory: {e}")))?;
    if value.is_array() {
        return serde_json::from_value(value).map_err(|e| Failure::input(format!("trajectory: {e}")));
    }
    let cert: Certificate = serde_json::from_value(value).map_err(|e| Failure::input(format!("trajectory: {e}")))?;
    cert.validate(problem).map_err(|e| Failure::input(format!("trajectory: {e}")))?;
    Ok((0..cert.nodes()).map(|i| cert.node(i)).collect())
}

pub fn cmd_check_cq(a: &CheckCqArgs, cfg: &RunConfig) -> Result<CqRunReport, Failure> {
    let problem = load_problem(&a.problem)?;
    let sys = problem
        .constraint_system()
        .map_err(|e| Failure::input(format!("{}: {e}", a.problem.display())))?;
    let raw = match (&a.point, &a.trajectory) {
        (Some(p), _) => vec![parse_point(p)?],
        (None, Some(t)) => trajectory_nodes(&read(t)?, &problem)?,
        (None, None) => return Err(Failure::input("one of --point or --trajectory is required")),
    };
    if raw.is_empty() {
        return Err(Failure::input("trajectory has no points"));
    }
    let points = raw
        .iter()
        .map(|z| system_point(&problem, sys.dim(), z))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = cfg.cq_options();
    let mode = if a.tube_samples > 0 {
        TrajectoryMode::Tube {
            samples: a.tube_samples,
            eps: a.tube_eps,
            radius: a.tube_radius,
        }
    } else {
        TrajectoryMode::Along
    };
    let reports = if a.point.is_some() && a.tube_samples == 0 {
        vec![check_calmness_sufficient(&sys, &points[0], &opts).map_err(|e| Failure::input(e.to_string()))?]
    } else {
        check_along_trajectory(&sys, &points, mode, &opts).map_err(|e| Failure::input(e.to_string()))?
    };
    let outcome = reports.iter().map(|r| r.outcome).max().unwrap_or(LadderOutcome::Inconclusive);
    Ok(CqRunReport {
        problem: problem.name.clone(),
        seed: opts.seed,
        feas_tol: opts.feas_tol,
        samples: opts.samples,
        mode,
        outcome,
        points: reports,
    })
}

fn summary_cq(r: &CqRunReport) -> String {
    let via = r.points.iter().find_map(|p| p.via);
    match (r.outcome, via) {
        (LadderOutcome::Established, Some(v)) => format!("established at {} point(s), via: {v}", r.points.len()),
        (o, _) => format!("{o:?} over {} point(s)", r.points.len()).to_lowercase(),
    }
}

pub fn cmd_verify(a: &VerifyArgs, cfg: &RunConfig) -> Result<Vec<VerifyReport>, Failure> {
    let problem = load_problem(&a.problem)?;
    let cert = load_certificate(&a.certificate)?;
    let config = cfg.verify_config();
    let lambdas: Vec<f64> = match cfg.lambda0 {
        None => vec![cert.lambda0],
        Some(Lambda0::Zero) => vec![0.0],
        Some(Lambda0::One) => vec![1.0],
        Some(Lambda0::Both) => vec![0.0, 1.0],
    };
    lambdas
        .into_iter()
        .map(|l0| {
            let c = Certificate {
                lambda0: l0,
                ..cert.clone()
            };
            verify_certificate(&c, &problem, &config).map_err(|e| Failure::input(e.to_string()))
        })
        .collect()
}

pub fn cmd_solve(a: &SolveArgs, cfg: &RunConfig) -> Result<SolveReport, Failure> {
    if matches!(cfg.lambda0, Some(Lambda0::Zero | Lambda0::Both)) {
        return Err(Failure::input("solve produces normal multipliers; only --lambda0 1 applies"));
    }
    let problem = load_problem(&a.problem)?;
    let nlp = discretize(&problem, cfg.mesh_n, cfg.scheme).map_err(|e| Failure::input(e.to_string()))?;
    let sol = solve_nlp(&nlp, &nlp.initial_point(), &NlpOptions::default()).map_err(|e| Failure::input(e.to_string()))?;
    let mut report = SolveReport {
        problem: problem.name.clone(),
        scheme: cfg.scheme,
        intervals: cfg.mesh_n,
        solver: SolverSummary {
            converged: sol.converged,
            objective: sol.objective,
            feasibility: sol.feasibility,
            stationarity: sol.stationarity,
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            history: sol.history.clone(),
        },
        verification: None,
    };
    if !sol.converged {
        return Ok(report);
    }
    let cert = extract_adjoint(&nlp, &sol).map_err(|e| Failure::input(e.to_string()))?;
    if let Some(path) = &a.certificate {
        fs::write(path, cert.to_json() + "\n")
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    let config = cfg.verify_config();
    let mut verification = verify_certificate(&cert, &problem, &config).map_err(|e| Failure::input(e.to_string()))?;
    if !a.no_cq_check && (problem.algebraic.is_some() || problem.structured.is_some()) {
        if let Some(w) = calmness_warning(&problem, &cert, &config) {
            verification.warnings.push(w);
        }
    }
    report.verification = Some(verification);
    Ok(report)
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub source: String,
    pub condition: String,
    pub status: &'static str,
    pub residual: String,
    pub location: String,
    severity: u8,
}

fn severity(word: &str) -> u8 {
    match word {
        "FAIL" => 3,
        "INCONCLUSIVE" => 2,
        "N/A" => 1,
        _ => 0,
    }
}

fn row(source: &str, condition: String, status: &'static str, residual: String, location: String) -> Row {
    Row {
        source: source.to_string(),
        condition,
        status,
        residual,
        location,
        severity: severity(status),
    }
}

fn verify_rows(source: &str, r: &VerifyReport, out: &mut Vec<Row>) {
    let tag = if r.lambda0 == 1.0 {
        String::new()
    } else {
        format!(" (lambda0 = {})", r.lambda0)
    };
    for c in &r.conditions {
        let location = match c.location {
            Some(l) => match l.sample {
                Some(s) => format!("node {} sample {s}", l.node),
                None => format!("node {}", l.node),
            },
            None => "-".into(),
        };
        out.push(row(
            source,
            format!("{}{tag}", c.name),
            status_word(c.status),
            format!("{:.3e}", c.worst_residual),
            location,
        ));
    }
}

fn cq_word(s: CqStatus) -> &'static str {
    match s {
        CqStatus::Certified => "PASS",
        CqStatus::Refuted | CqStatus::CandidateRefuted => "FAIL",
        CqStatus::Inconclusive => "INCONCLUSIVE",
        CqStatus::NotApplicable => "N/A",
    }
}

fn cq_rows(source: &str, r: &CqRunReport, out: &mut Vec<Row>) {
    let Some(first) = r.points.first() else { return };
    for (k, v) in first.verdicts.iter().enumerate() {
        let mut worst = (cq_word(v.status), 0usize);
        for (i, p) in r.points.iter().enumerate() {
            let w = cq_word(p.verdicts[k].status);
            if severity(w) > severity(worst.0) {
                worst = (w, i);
            }
        }
        let modulus = r
            .points
            .iter()
            .filter_map(|p| p.verdicts[k].modulus)
            .fold(None, |a: Option<f64>, m| Some(a.map_or(m, |a| a.max(m))));
        out.push(row(
            source,
            v.name.to_string(),
            worst.0,
            modulus.map_or("-".into(), |m| format!("{m:.3e}")),
            format!("point {}", worst.1),
        ));
    }
}

fn rows_of(source: &str, text: &str) -> Result<Vec<Row>, Failure> {
    let bad = |e: serde_json::Error| Failure::input(format!("{source}: malformed report: {e}"));
    let value: Value = serde_json::from_str(text).map_err(bad)?;
    let mut out = Vec::new();
    if value.is_array() {
        let reports: Vec<VerifyReport> = serde_json::from_value(value).map_err(bad)?;
        for r in &reports {
            verify_rows(source, r, &mut out);
        }
    } else if value.get("conditions").is_some() {
        verify_rows(source, &serde_json::from_value(value).map_err(bad)?, &mut out);
    } else if value.get("points").is_some() {
        cq_rows(source, &serde_json::from_value(value).map_err(bad)?, &mut out);
    } else if value.get("solver").is_some() {
        let r: SolveReport = serde_json::from_value(value).map_err(bad)?;
        match &r.verification {
            Some(v) => verify_rows(source, v, &mut out),
            None => out.push(row(
                source,
                "solver".into(),
                "FAIL",
                format!("{:.3e}", r.solver.feasibility.max(r.solver.stationarity)),
                "-".into(),
            )),
        }
    } else {
        return Err(Failure::input(format!("{source}: malformed report: unrecognised layout")));
    }
    Ok(out)
}

/// Table of condition, status, worst residual and location, most severe first.
pub fn render_table(mut rows: Vec<Row>) -> String {
    rows.sort_by(|a, b| b.severity.cmp(&a.severity));
    let header = ["report", "condition", "status", "worst residual", "location"];
    let cells: Vec<[&str; 5]> = rows
        .iter()
        .map(|r| [r.source.as_str(), r.condition.as_str(), r.status, r.residual.as_str(), r.location.as_str()])
        .collect();
    let mut width = header.map(str::len);
    for c in &cells {
        for k in 0..5 {
            width[k] = width[k].max(c[k].len());
        }
    }
    let mut s = String::new();
    for line in std::iter::once(&header).chain(cells.iter()) {
        let mut text = String::new();
        for k in 0..5 {
            let _ = write!(text, "{:<w$}  ", line[k], w = width[k]);
        }
        s.push_str(text.trim_end());
        s.push('\n');
    }
    s
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<String, Failure> {
    if paths.is_empty() {
        return Err(Failure::input("report needs at least one report file"));
    }
    let mut rows = Vec::new();
    for p in paths {
        let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.extend(rows_of(&name, &read(p)?)?);
    }
    Ok(render_table(rows))
}
