use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use compsym::abstraction::{read_dump, write_dump};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_compsym"))
}

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn report(out: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap()
}

#[test]
fn abstract_toy_dumps_three_states() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["abstract", "--spec", spec("toy.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "abstract.json");
    assert_eq!(r["subsystems"][0]["states"], 3);
    // The dump reloads and re-serializes to the same bytes.
    let bytes = fs::read(dir.path().join("subsystem_0.fts")).unwrap();
    let fts = read_dump(&mut bytes.as_slice()).unwrap();
    assert_eq!(fts.state_count(), 3);
    let mut again = Vec::new();
    write_dump(&fts, &mut again).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn missing_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["abstract", "--spec", "does/not/exist.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["certify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_eta_is_a_build_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["abstract", "--spec", spec("toy.toml").to_str().unwrap(), "--eta", "2"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds the domain span"));
}

#[test]
fn unstable_gains_fail_with_a_cycle_witness() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compose", "--gains", spec("two_node_unstable.toml").to_str().unwrap(), "--dot"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let r = report(dir.path(), "compose.json");
    assert_eq!(r["passed"], false);
    let cycles = r["small_gain"]["cycles"].as_array().unwrap();
    let bad = cycles.iter().find(|c| c["below_identity"] == false).unwrap();
    assert_eq!(bad["cycle"], serde_json::json!([0, 1]));
    assert!(!bad["witness"].is_null());
    assert!(fs::read_to_string(dir.path().join("gains.dot")).unwrap().contains("s0 -> s1"));
}

#[test]
fn zero_step_simulation_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--spec", spec("pair.toml").to_str().unwrap(), "--steps", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("trajectory.csv")).unwrap(), "step,subsystem,x1,mode\n");
}

#[test]
fn pair_network_passes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("pair.toml");
    for cmd in ["certify", "compose", "synthesize", "simulate"] {
        let o = run(&[cmd, "--spec", s.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let c = report(dir.path(), "certify.json");
    assert_eq!(c["parameters"]["seed"], 11);
    assert_eq!(c["subsystems"][0]["kappa"][0], 0.5);
    let comp = report(dir.path(), "compose.json");
    assert_eq!(comp["small_gain"]["pass"], true);
    assert_eq!(comp["check"]["violation_count"], 0);
    let sim = report(dir.path(), "simulate.json");
    assert_eq!(sim["safe"], true);
    assert_eq!(sim["monitor_violations"], 0);
}

#[test]
fn commands_are_deterministic_and_dumps_replay() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec("pair.toml");
    for dir in [a.path(), b.path()] {
        let o = run(&["certify", "--spec", s.to_str().unwrap(), "--seed", "5"], dir);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(a.path().join("certify.json")).unwrap(), fs::read(b.path().join("certify.json")).unwrap());

    // A simulation driven by dumped controllers matches a fresh one.
    assert_eq!(run(&["synthesize", "--spec", s.to_str().unwrap()], a.path()).status.code(), Some(0));
    let fresh = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--spec", s.to_str().unwrap()], fresh.path()).status.code(), Some(0));
    let o = run(
        &["simulate", "--spec", s.to_str().unwrap(), "--controllers", a.path().to_str().unwrap()],
        b.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(fresh.path().join("trajectory.csv")).unwrap(),
        fs::read_to_string(b.path().join("trajectory.csv")).unwrap()
    );
}

#[test]
fn traffic_small_scale_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["traffic", "--scale-links", "3", "--eta", "0.3", "--steps", "100", "--workers", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "traffic.json");
    assert!((r["per_link"][0]["kappa"].as_f64().unwrap() - 0.65).abs() < 1e-12);
    assert_eq!(r["seed"], 1);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 100 * 3);
}

#[test]
fn bad_theta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["certify", "--spec", spec("pair.toml").to_str().unwrap(), "--theta", "0.9,0.2,0.1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["certify", "--spec", spec("pair.toml").to_str().unwrap(), "--theta", "1,2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
