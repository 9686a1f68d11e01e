use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anisopede"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("ANISOPEDE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"
seed = 7
[initial]
builtin = "smooth3d,amp=0.5,seed=3"
[grid]
nx = 8
ny = 8
nz = 8
[physics]
eps = 0.01
f0 = 1.0
[time]
t_end = 0.02
dt = 0.005
[output]
directory = "out"
checkpoint_every = 2
[monitor]
"#;

#[test]
fn simulate_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    fs::write(w.join("run.toml"), CONFIG).unwrap();
    let o = run(w, &["simulate", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read(w.join("out/diagnostics.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 5);
    assert!(text.starts_with("step,t,dt,"));
    assert!(fs::read_to_string(w.join("out/manifest.toml")).unwrap().contains("status = \"complete\""));

    let o = run(w, &["simulate", "--config", "run.toml"]);
    assert!(o.status.success());
    assert_eq!(fs::read(w.join("out/diagnostics.csv")).unwrap(), first);

    let o = run(w, &["simulate", "--config", "run.toml", "--resume", "snapshots/step_00000002"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(w.join("out/diagnostics.csv")).unwrap(), first);

    let o = run(w, &["monitor-report", "--diagnostics", "out/diagnostics.csv", "--config", "run.toml", "--report", "mon.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(w.join("mon.csv")).unwrap();
    assert!(report.contains("C_star_grad_h_v="));
}

#[test]
fn errors_exit_nonzero_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    fs::write(w.join("bad.toml"), CONFIG.replace("eps = 0.01", "eps = -1.0")).unwrap();
    let o = run(w, &["simulate", "--config", "bad.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("physics.eps"), "{}", stderr(&o));

    let o = run(w, &["simulate", "--config", "missing.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.toml"));

    let o = run(w, &["verify", "--lemma", "n2.1", "--samples", "2", "--grid", "8,8", "--report", "r.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--grid"));

    let o = run(w, &["verify", "--lemma", "n7", "--report", "r.csv"]);
    assert!(!o.status.success());

    let o = Command::new(env!("CARGO_BIN_EXE_anisopede"))
        .args(["gronwall-check", "--instances", "1", "--report", "g.csv", "--workdir"])
        .arg(w)
        .env("ANISOPEDE_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ANISOPEDE_THREADS"));
}

#[test]
fn verify_and_gronwall_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let o = run(w, &["verify", "--lemma", "sup-z-l2", "--samples", "8", "--seed", "1", "--grid", "32,32,32,0.5", "--report", "v.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(w.join("v.csv")).unwrap();
    assert!(text.starts_with("sample,lhs,rhs,ratio"));
    assert_eq!(text.lines().filter(|l| l.contains(',')).count(), 9);
    assert!(text.lines().any(|l| l.starts_with("C_star=")));

    let o = run(w, &["gronwall-check", "--instances", "5", "--seed", "2", "--report", "g.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(w.join("g.csv")).unwrap().contains("violations="));
}

#[test]
fn eps_sweep_writes_distances() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    fs::write(w.join("run.toml"), CONFIG).unwrap();
    let o = run(w, &["eps-sweep", "--config", "run.toml", "--eps", "1e-1,1e-2,1e-3", "--report", "s.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(w.join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}
