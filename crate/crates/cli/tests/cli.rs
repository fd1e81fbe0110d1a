use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(config: &Path, out: &Path, cmd: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infdelay"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .arg(cmd)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("problem.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn critical_with(extra: &str, eps: f64) -> String {
    format!(
        "[kernel]\ndim = 1\nrho = 0.5\nterm = 0 1 1\n\n[nonlinearity]\nform = cubic_functional\neps_cubic = {eps}\n\n[run]\nseed = 1\n{extra}"
    )
}

#[test]
fn spectrum_reports_the_critical_root() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&root().join("configs/critical_scalar.cfg"), out.path(), "spectrum");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(json["exit_code"], 0);
    assert!(json["config_hash"].as_str().unwrap().len() == 64);
    let text = serde_json::to_string(&json).unwrap();
    assert!(text.contains("center"), "{text}");
}

#[test]
fn reports_are_deterministic() {
    let cfg = root().join("configs/critical_scalar.cfg");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run(&cfg, a.path(), "decompose").status.success());
    assert!(run(&cfg, b.path(), "decompose").status.success());
    let read = |d: &Path| std::fs::read(d.join("decompose.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn malformed_config_exits_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[kernel]\ndim = 1\nrho = 0.5\nterm = 0 one 1\n");
    let o = run(&cfg, dir.path(), "spectrum");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(dir.path(), "[kernel]\ndim = 1\nrho = 0.5\nrho = 0.6\nterm = 0 1 1\n");
    assert_eq!(run(&cfg, dir.path(), "spectrum").status.code(), Some(1));
}

#[test]
fn linear_problem_has_a_flat_manifold() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[kernel]\ndim = 1\nrho = 0.5\nterm = 0 1 1\n\n[nonlinearity]\nform = zero\n\n[run]\nseed = 1\n";
    let cfg = write_config(dir.path(), text);
    let o = run(&cfg, dir.path(), "manifold");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("manifold.csv")).unwrap();
    let col = reader.headers().unwrap().iter().position(|h| h == "F_norm").unwrap();
    let mut rows = 0;
    for rec in reader.records() {
        let f: f64 = rec.unwrap()[col].parse().unwrap();
        assert!(f <= 1e-10, "{f}");
        rows += 1;
    }
    assert_eq!(rows, 41);
}

#[test]
fn wrong_expectation_exits_with_the_verdict_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &critical_with("\n[verify]\nexpect = stable\n", 1.0));
    let o = run(&cfg, dir.path(), "verify");
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &critical_with("\n[simulate]\nt_end = 5\n", -1.0));
    let o = run(&cfg, dir.path(), "simulate");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap().records().count();
    assert!(rows >= 100, "{rows}");
}
