use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use trustr_core::{read_run, ScenarioSpec};

fn trustr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trustr")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_run_files(dir: &Path) {
    for f in ["manifest.toml", "trajectory.csv", "trust.csv", "metrics.toml"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn run_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r1");
    let o = trustr(&[
        "run", "--scenario", "1", "--method", "trust-r", "--severity", "40", "--trust-source", "scripted", "--seed", "7",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("final distance"));
    assert_run_files(&out);
}

#[test]
fn fault_free_baseline_lands_on_target() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("base");
    let o = trustr(&["run", "--scenario", "2", "--severity", "none", "--method", "avg", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_run_files(&out);
    let record = read_run::<f64>(&out).unwrap();
    let d = record.metrics.unwrap().report.unwrap().final_distance_m;
    assert!(d <= 1.0, "{d}");
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = trustr(&["run", "--method", "bogus", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert!(!out.exists());

    let o = trustr(&["run", "--severity", "55", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = trustr(&["run", "--scenario", "/no/such/file.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "name = \"half a scenario\"\n").unwrap();
    let o = trustr(&["run", "--scenario", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = trustr(&["run", "--dt=-1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn scenario_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("s.toml");
    std::fs::write(&file, ScenarioSpec::builtin(2).unwrap().to_toml().unwrap()).unwrap();
    let out = tmp.path().join("o");
    let o = trustr(&[
        "run", "--scenario", file.to_str().unwrap(), "--method", "trust-r", "--trust-source", "heuristic", "--dt", "0.05",
        "--steps", "100", "--no-abandon", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let record = read_run::<f64>(&out).unwrap();
    assert_eq!(record.manifest.n_steps, 100);
    let s = &record.manifest.scenario;
    assert_eq!(s.params.dt, 0.05);
    assert!(!s.params.abandon_at_zero_trust);
}

#[test]
fn divergence_exits_three_and_keeps_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::builtin(1).unwrap();
    spec.params.nav_gain_pos = f64::INFINITY;
    let file = tmp.path().join("boom.toml");
    std::fs::write(&file, spec.to_toml().unwrap()).unwrap();
    let out = tmp.path().join("o");
    let o = trustr(&["run", "--scenario", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("run aborted"));
    assert_run_files(&out);
    assert!(!read_run::<f64>(&out).unwrap().is_valid());
}

fn table_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split_whitespace().map(str::to_owned).collect()).collect()
}

#[test]
fn batch_emits_eight_rows_with_trust_r_ahead() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = trustr(&["batch", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("batch.txt").is_file());
    assert!(out.join("batch.csv").is_file());
    let text = stdout(&o);
    let rows = table_rows(&text);
    assert_eq!(rows.len(), 8);
    for pair in rows.chunks(2) {
        let (avg, tr) = (&pair[0], &pair[1]);
        assert_eq!((avg[1].as_str(), tr[1].as_str()), ("avg", "trust-r"));
        let num = |r: &Vec<String>, k: usize| r[k].parse::<f64>().unwrap();
        assert!(num(tr, 6) < num(avg, 6), "{tr:?} vs {avg:?}");
        assert!(num(tr, 5).abs() < num(avg, 5).abs(), "{tr:?} vs {avg:?}");
    }
    assert_eq!(stdout(&trustr(&["batch"])), text);
}

#[test]
fn batch_severity_filter() {
    let o = trustr(&["batch", "--severity", "70"]);
    assert!(o.status.success());
    let rows = table_rows(&stdout(&o));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2] == "70"));
    assert_eq!(trustr(&["batch", "--severity", "none"]).status.code(), Some(1));
}

#[test]
fn replay_prints_a_written_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert!(trustr(&["run", "--scenario", "2", "--steps", "50", "--out", out.to_str().unwrap()]).status.success());
    let o = trustr(&["replay", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("50 steps"));

    std::fs::remove_file(out.join("metrics.toml")).unwrap();
    let o = trustr(&["replay", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_without_clients_runs_to_completion() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("live");
    let mut child = Command::new(env!("CARGO_BIN_EXE_trustr"))
        .args(["serve", "--scenario", "1", "--severity", "40", "--port", "0", "--speed", "200", "--out"])
        .arg(&out)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
    assert!(first.starts_with("listening on http://127.0.0.1:"), "{first}");
    let status = child.wait().unwrap();
    assert!(status.success());
    assert_run_files(&out);
    let record = read_run::<f64>(&out).unwrap();
    // live trust with nobody rating: everyone stays at full trust
    assert!(record.trust.iter().all(|r| r.level.get() == 5));
}

#[test]
fn serve_fails_when_the_port_is_taken() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = trustr(&["serve", "--port", &port, "--steps", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot bind"));
}

#[test]
fn swarm_log_controls_verbosity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let quiet = trustr(&["run", "--scenario", "2", "--out", out.to_str().unwrap()]);
    assert!(quiet.stderr.is_empty());
    let loud = Command::new(env!("CARGO_BIN_EXE_trustr"))
        .env("SWARM_LOG", "info")
        .args(["run", "--scenario", "2", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&loud.stderr).contains("target 0 -> 1"));
}
