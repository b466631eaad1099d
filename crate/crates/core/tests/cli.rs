use std::fs;
use std::path::Path;
use std::process::Command;

use starnet::cli::{dispatch, exit, parse_config, write_json};
use starnet::harness::VerificationReport;

const CANONICAL: &str = "J = 2\nlambda = 0.3, 0.2, 0.4\nmu = 1, 1, 1\n";

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["starnet"];
    argv.extend_from_slice(args);
    let code = dispatch(argv, &mut out, &mut err, false);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    let text = format!("{body}output_dir = {}\n", dir.join("out").display());
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn predict_case3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", CANONICAL);
    let (code, out, _) = run(&["predict", &cfg]);
    assert_eq!(code, exit::OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kappa"], 2);
    assert_eq!(v["case_label"], "Case3");
    assert!((v["t_zero"].as_f64().unwrap() - 10.0 / 3.0).abs() < 1e-4);
}

#[test]
fn verify_unstable_stability_only() {
    let dir = tempfile::tempdir().unwrap();
    let body = "J=2\nlambda=0.7,0.2,0.5\nmu=1,1,1\nreplicas=10\nchecks=stability\n";
    let cfg = write_config(dir.path(), "u.cfg", body);
    let (code, out, err) = run(&["verify", &cfg]);
    assert_eq!(code, exit::OK, "{out}{err}");
    assert!(out.contains("unstable confirmed"), "{out}");
    let report_path = dir.path().join("out").join("report.json");
    let text = fs::read_to_string(&report_path).unwrap();
    let report: VerificationReport = serde_json::from_str(&text).unwrap();
    assert!(report.pass);
    assert!(report.regime.as_ref().is_some_and(|r| !r.stable));
    // Round trip through the writer.
    let again = dir.path().join("again.json");
    write_json(&again, &report).unwrap();
    let back: VerificationReport =
        serde_json::from_str(&fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn verify_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // The drift check is far off at small N.
    let body = format!("{CANONICAL}n=1000\nreplicas=10\nchecks=drift\nt_grid=0.05\n");
    let cfg = write_config(dir.path(), "f.cfg", &body);
    let (code, out, _) = run(&["verify", &cfg]);
    assert_eq!(code, exit::FAILED, "{out}");
    assert!(out.contains("FAIL"));
    assert!(!out.contains('\x1b'));
}

#[test]
fn kingman_oracle() {
    let (code, out, _) = run(&[
        "oracle", "kingman", "--lambda", "1", "--mu", "2", "--x", "3",
    ]);
    assert_eq!(code, exit::OK);
    assert_eq!(out.trim(), "kingman 0.125");
    let (_, out, _) = run(&[
        "oracle", "kingman", "--lambda", "1", "--mu", "2", "--x", "3", "--T", "1",
    ]);
    assert!(out.contains("reflected 0.25"));
    let (code, _, err) = run(&[
        "oracle", "kingman", "--lambda", "2", "--mu", "1", "--x", "3",
    ]);
    assert_eq!(code, exit::USAGE);
    assert!(!err.is_empty());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "J=2\nlamda=0.3,0.2,0.4\nmu=1,1,1\n");
    let (code, _, err) = run(&["predict", &cfg]);
    assert_eq!(code, exit::USAGE);
    assert!(err.contains("lamda") && err.contains("line 2"), "{err}");
    let (code, _, _) = run(&["predict", "/nonexistent/config"]);
    assert_eq!(code, exit::USAGE);
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, exit::USAGE);
}

#[test]
fn simulate_writes_stable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let body =
        format!("{CANONICAL}n=1000\nreplicas=3\nseed=4\nt_grid=0.2:0.2:0.8\nfluid_t_grid=0.5,1\n");
    let cfg = write_config(dir.path(), "s.cfg", &body);
    let (code, out, _) = run(&["simulate", &cfg]);
    assert_eq!(code, exit::OK);
    assert_eq!(out.lines().count(), 2);
    let exp = dir
        .path()
        .join("out")
        .join("trajectories_N1000_exponent.csv");
    let fluid = dir.path().join("out").join("trajectories_N1000_fluid.csv");
    let first = fs::read(&exp).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replica,t,node,count"));
    assert_eq!(lines.count(), 3 * 4 * 3);
    assert!(text.contains("\n0,2.0000000000000001e-1,0,"));
    assert_eq!(
        fs::read_to_string(&fluid).unwrap().lines().count(),
        1 + 3 * 2 * 3
    );
    run(&["simulate", &cfg]);
    assert_eq!(fs::read(&exp).unwrap(), first);
}

#[test]
fn sweep_needs_two_decades() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{CANONICAL}n_list=1000,2000,5000\nreplicas=4\n");
    let cfg = write_config(dir.path(), "w.cfg", &body);
    let (code, _, err) = run(&["sweep", &cfg]);
    assert_eq!(code, exit::USAGE);
    assert!(err.contains("decades"), "{err}");
}

#[test]
fn minimal_config_round_trip() {
    let text = format!("{CANONICAL}n=100000\nreplicas=50\nseed=7\n");
    let cfg = parse_config(&text).unwrap();
    assert_eq!(cfg.plan.n_values, vec![100_000]);
    assert_eq!(cfg.plan.fluid_t_grid.len(), 20);
}

#[test]
fn binary_version_and_no_color() {
    let bin = env!("CARGO_BIN_EXE_starnet");
    let out = Command::new(bin).arg("--version").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("starnet "));
    assert!(text.contains("chacha8"));

    let dir = tempfile::tempdir().unwrap();
    let body = "J=2\nlambda=0.2,0.1,0.25\nmu=1,1,1\nreplicas=2\nchecks=stability\nstability_horizon=20000\nmin_returns=10\n";
    let cfg = write_config(dir.path(), "n.cfg", body);
    let out = Command::new(bin)
        .args(["verify", &cfg])
        .env("NO_COLOR", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(!String::from_utf8(out.stdout).unwrap().contains('\x1b'));

    let out = Command::new(bin).arg("predict").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
