use std::path::Path;
use std::process::{Command, Output};

fn glcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glcn")).args(args).env_remove("GLCN_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_PLAN: &str = r#"{"case":"example1","mode":"spatial","k":1,"t_final":2e-6,"divisions":[2,4],"coupling":{"fixed_steps":{"steps":2}}}"#;

#[test]
fn dump_mesh_single_cell() {
    let o = glcn(&["dump-mesh", "--case", "example1", "--n", "1"]);
    assert!(o.status.success());
    let expect = "\
# vertices 4
0 0 0
1 1 0
2 0 1
3 1 1
# elements 2
0 0 1 3
1 0 3 2
# edges 5
0 1 3 0 -1 1 0
1 3 0 0 1 -0.7071067811865475 0.7071067811865475
2 0 1 0 -1 0 -1
3 3 2 1 -1 0 1
4 2 0 1 -1 -1 0
";
    assert_eq!(stdout(&o), expect);
}

#[test]
fn dump_mesh_exports_operators() {
    let dir = tempfile::tempdir().unwrap();
    let ops = dir.path().join("ops");
    let o = glcn(&["dump-mesh", "--n", "2", "--k", "2", "--operators", ops.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["mass.txt", "stiffness.txt"] {
        assert!(!std::fs::read_to_string(ops.join(name)).unwrap().is_empty());
    }
}

#[test]
fn run_reports_errors_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = glcn(&[
        "run",
        "--case",
        "example1",
        "--k",
        "2",
        "--n",
        "4",
        "--steps",
        "4",
        "--t-final",
        "0.2",
        "--out",
        out.to_str().unwrap(),
        "--snapshot-every",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("L2 error:") && text.contains("DG error:"), "{text}");
    let steps = std::fs::read_to_string(out.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 4);
    assert!(steps.lines().next().unwrap().starts_with(r#"{"n":1,"t":0.05,"newton_iters":"#));
    for f in ["snapshot_00000.csv", "snapshot_00002.csv", "snapshot_00004.csv", "final.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn homogeneous_run_prints_norm_history() {
    let o = glcn(&[
        "run",
        "--case",
        "example1",
        "--k",
        "1",
        "--n",
        "3",
        "--tau",
        "0.1",
        "--t-final",
        "0.3",
        "--homogeneous",
        "--gamma",
        "-1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("level  t  l2_norm"));
    assert!(text.contains("norm history nonincreasing"), "{text}");
}

#[test]
fn missing_case_is_a_usage_error() {
    let o = glcn(&["run", "--k", "1", "--n", "2", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("no case given"));
    assert!(err.contains("Usage: glcn run"));
}

#[test]
fn invalid_configuration_exits_2() {
    assert_eq!(glcn(&["run", "--case", "example1", "--n", "2", "--tau", "0.3"]).status.code(), Some(2));
    assert_eq!(glcn(&["run", "--case", "example9", "--n", "2", "--steps", "1"]).status.code(), Some(2));
    assert_eq!(glcn(&["run", "--case", "example1", "--h", "0.3", "--steps", "1"]).status.code(), Some(2));
    assert_eq!(
        glcn(&["run", "--case", "example1", "--n", "2", "--steps", "1", "--lambda", "-1"]).status.code(),
        Some(2)
    );
    assert_eq!(glcn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    let o = glcn(&[
        "run",
        "--case",
        "example1",
        "--n",
        "2",
        "--k",
        "1",
        "--steps",
        "2",
        "--newton-max-iter",
        "1",
        "--no-fallback",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("time level 1"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"case":"example2","k":3,"n":4,"steps":5,"t_final":0.5}"#).unwrap();
    let o = glcn(&["run", "--config", path.to_str().unwrap(), "--k", "1", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg["k"], 1);
    assert_eq!(cfg["case"], "example2");
    std::fs::write(&path, r#"{"case":"example2","typo":1}"#).unwrap();
    assert_eq!(glcn(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = glcn(&["run", "--case", "example1", "--h", "0.25", "--tau", "0.1", "--gamma", "2", "--print-config"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, stdout(&first)).unwrap();
    let second = glcn(&["run", "--config", path.to_str().unwrap(), "--print-config"]);
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn verify_default_suites_pass() {
    let o = glcn(&["verify", "--cases", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
    assert!(text.contains("all 7 suites passed"));
}

#[test]
fn verify_with_tiny_penalty_fails() {
    let o = glcn(&["verify", "--cases", "1", "--lambda", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("coercivity") && l.contains("penalty too small")));
}

#[test]
fn verify_warns_about_large_tau_gamma() {
    let o = glcn(&["verify", "--cases", "1", "--tau", "3", "--gamma", "1"]);
    assert!(stdout(&o).lines().next().unwrap().starts_with("warning: tau*gamma = 3"));
}

fn write_plan(dir: &Path, text: &str) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn study_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), TINY_PLAN);
    let out = dir.path().join("out");
    let o = glcn(&["study", &plan, "--out", out.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("tiny.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,l2_error,l2_order,dg_error,dg_order,newton_total,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.5,") && lines[1].ends_with(','));
    assert!(lines[2].starts_with("0.25,"));
    assert!(out.join("tiny.md").exists() && out.join("tiny.json").exists());
    assert!(stdout(&o).contains("| h |"));
}

#[test]
fn study_output_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), TINY_PLAN);
    let run = |sub: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = Command::new(env!("CARGO_BIN_EXE_glcn"))
            .args(["study", &plan, "--out", out.to_str().unwrap()])
            .env("GLCN_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read(out.join("tiny.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "2"));
}

#[test]
fn study_rejects_bad_plans() {
    let dir = tempfile::tempdir().unwrap();
    let single = write_plan(
        dir.path(),
        r#"{"case":"example1","mode":"spatial","k":1,"t_final":2e-6,"divisions":[4],"coupling":{"fixed_steps":{"steps":2}}}"#,
    );
    let o = glcn(&["study", &single, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(">= 2 grid points"));
    let plan = write_plan(dir.path(), TINY_PLAN);
    let o = Command::new(env!("CARGO_BIN_EXE_glcn"))
        .args(["study", &plan, "--out", dir.path().to_str().unwrap()])
        .env("GLCN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
