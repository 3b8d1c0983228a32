use std::fs;
use std::path::{Path, PathBuf};

use nocert::certificate::{CertRadius, Certificate, Mesh, Status, VerifyReport};
use nocert::problem::ControlProblem;
use nocert_cli::{run, Outcome};

fn problem(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn cli(args: &[&str]) -> Outcome {
    run(std::iter::once("nocert").chain(args.iter().copied()))
}

fn golden(intervals: usize, p: f64) -> Certificate {
    let mesh = Mesh::uniform(0.0, 1.0, intervals).unwrap();
    let n = mesh.nodes();
    let track = |v: f64| vec![vec![v]; n];
    Certificate {
        mesh: mesh.times().to_vec(),
        x: track(0.0),
        y: Some(track(0.0)),
        u: track(0.0),
        p: track(p),
        lambda0: 1.0,
        lambda: Some(track(0.0)),
        mu: Some(track(0.0)),
        radius: None,
    }
}

fn save(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `x' = u`, cost `½u²`, `x: 0 → 1`: `u ≡ 1`, `p ≡ 1`.
fn lq_certificate(intervals: usize, p: f64) -> Certificate {
    let mesh = Mesh::uniform(0.0, 1.0, intervals).unwrap();
    let t = mesh.times().to_vec();
    Certificate {
        x: t.iter().map(|&t| vec![t]).collect(),
        y: None,
        u: vec![vec![1.0]; t.len()],
        p: vec![vec![p]; t.len()],
        lambda0: 1.0,
        lambda: None,
        mu: None,
        radius: None,
        mesh: t,
    }
}

#[test]
fn flipped_adjoint_fails_weierstrass_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let ok = save(dir.path(), "ok.json", &lq_certificate(20, 1.0).to_json());
    assert_eq!(cli(&["verify", &problem("lq.json"), s(&ok)]).code, 0);
    let cert = save(dir.path(), "c.json", &lq_certificate(20, -1.0).to_json());
    let out = cli(&["verify", &problem("lq.json"), s(&cert)]);
    assert_eq!(out.code, 1, "{}", out.stderr);
    let r: VerifyReport = serde_json::from_str(&out.stdout).unwrap();
    let w = r.condition("weierstrass").unwrap();
    assert_eq!(w.status, Status::Fail);
    // with p = −1, H(u) = −u − ½u² beats H(1) = −3/2 exactly on (−3, 1)
    let witness = w.witness.as_ref().expect("violating control");
    assert!(witness[0] > -3.0 && witness[0] < 1.0, "{witness:?}");
    assert!(w.location.is_some());
}

#[test]
fn gain_free_hamiltonian_ignores_the_adjoint_sign() {
    // on y = u the dynamics (u − y)² vanish, so H carries no information from p
    let dir = tempfile::tempdir().unwrap();
    let cert = save(dir.path(), "c.json", &golden(20, -1.0).to_json());
    let out = cli(&["verify", &problem("gain_free.json"), s(&cert)]);
    assert_eq!(out.code, 1);
    let r: VerifyReport = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(r.condition("weierstrass").unwrap().status, Status::Pass);
    assert_eq!(r.condition("transversality").unwrap().status, Status::Fail);
}

#[test]
fn vanishing_radius_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = golden(20, 1.0);
    c.radius = Some(CertRadius::Scalar(5e-13));
    let cert = save(dir.path(), "c.json", &c.to_json());
    let out = cli(&["verify", &problem("gain_free.json"), s(&cert)]);
    assert_eq!(out.code, 2, "{}", out.stdout);
}

#[test]
fn input_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let junk = save(dir.path(), "junk.json", "{ not json");
    assert_eq!(cli(&["verify", s(&junk), s(&junk)]).code, 3);
    assert_eq!(cli(&["check-cq", "/nonexistent/problem.json"]).code, 3);
    assert_eq!(cli(&["report"]).code, 3);
    assert_eq!(cli(&["report", s(&junk)]).code, 3);
    assert_eq!(cli(&["solve", &problem("lq.json"), "--lambda0", "0"]).code, 3);
    assert_eq!(cli(&["frobnicate"]).code, 3);
    assert_eq!(cli(&["--help"]).code, 0);
}

#[test]
fn report_puts_failures_first() {
    let dir = tempfile::tempdir().unwrap();
    let pass = cli(&["verify", &problem("gain_free.json"), s(&save(dir.path(), "a.json", &golden(10, 1.0).to_json()))]);
    let fail = cli(&["verify", &problem("gain_free.json"), s(&save(dir.path(), "b.json", &golden(10, -1.0).to_json()))]);
    let cq = cli(&["check-cq", &problem("y_squared.json"), "--point", "[0, 0, 0]"]);
    assert_eq!((pass.code, fail.code, cq.code), (0, 1, 1));
    let files = [
        save(dir.path(), "pass.json", &pass.stdout),
        save(dir.path(), "fail.json", &fail.stdout),
        save(dir.path(), "cq.json", &cq.stdout),
    ];
    let out = cli(&["report", s(&files[0]), s(&files[1]), s(&files[2])]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert!(lines[0].starts_with("report"));
    let rank = |l: &str| {
        if l.contains("FAIL") {
            3
        } else if l.contains("INCONCLUSIVE") {
            2
        } else if l.contains("N/A") {
            1
        } else {
            0
        }
    };
    let ranks: Vec<u8> = lines[1..].iter().map(|l| rank(l)).collect();
    assert!(ranks.windows(2).all(|w| w[0] >= w[1]), "{}", out.stdout);
    assert_eq!(ranks[0], 3);
    assert!(lines.iter().any(|l| l.starts_with("pass.json") && l.contains("PASS")));
    assert!(lines.iter().any(|l| l.starts_with("cq.json")));
}

#[test]
fn lambda0_both_yields_two_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cert = save(dir.path(), "c.json", &golden(10, 1.0).to_json());
    let out = cli(&["verify", &problem("gain_free.json"), s(&cert), "--lambda0", "both"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let reports: Vec<VerifyReport> = serde_json::from_str(&out.stdout).unwrap();
    let mut lambdas: Vec<f64> = reports.iter().map(|r| r.lambda0).collect();
    lambdas.sort_by(f64::total_cmp);
    assert_eq!(lambdas, [0.0, 1.0]);
}

#[test]
fn out_flag_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("cq.json");
    let out = cli(&["check-cq", &problem("gain_free.json"), "--point", "[0, 0, 0]", "--out", s(&target)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.is_empty());
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(&target).unwrap()).unwrap();
    assert!(written.get("points").is_some());
}

#[test]
fn bundled_problems_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("problems");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let p = ControlProblem::from_json(&text).unwrap();
        let again = ControlProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(p.to_json(), again.to_json());
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn solve_reports_nonconvergence() {
    let out = cli(&["solve", &problem("infeasible_endpoint.json"), "--mesh-n", "10"]);
    assert_eq!(out.code, 4, "{}", out.stderr);
}

#[test]
fn written_certificate_reverifies_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("lq.cert.json");
    let solved = cli(&["solve", &problem("lq.json"), "--mesh-n", "40", "--certificate", s(&cert), "--no-cq-check"]);
    assert_eq!(solved.code, 0, "{}", solved.stderr);
    let report: nocert_cli::SolveReport = serde_json::from_str(&solved.stdout).unwrap();
    let verified = cli(&["verify", &problem("lq.json"), s(&cert)]);
    assert_eq!(verified.code, 0);
    let again: VerifyReport = serde_json::from_str(&verified.stdout).unwrap();
    assert_eq!(report.verification.unwrap(), again);
}
