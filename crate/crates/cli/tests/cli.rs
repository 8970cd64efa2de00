use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ieee13")
}

fn mgmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgmpc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A copy of the bundled scenario with zero irradiance and zero load.
fn idle_scenario(dir: &Path) -> PathBuf {
    let mut weather = String::from("t_s,irradiance_wm2,temp_c\n");
    let mut load = String::from("t_s,total_kw\n");
    for k in 0..8 {
        weather.push_str(&format!("{},0,20\n", 60 * k));
        load.push_str(&format!("{},0\n", 60 * k));
    }
    std::fs::write(dir.join("pv_weather.csv"), weather).unwrap();
    std::fs::write(dir.join("load.csv"), load).unwrap();
    let text = std::fs::read_to_string(bundled().join("scenario.toml"))
        .unwrap()
        .replace("\"topology.toml\"", &format!("{:?}", bundled().join("topology.toml")))
        .replace("steps = 600", "steps = 3");
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn summary_value(dir: &Path, key: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn single_idle_step_succeeds_with_small_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = idle_scenario(tmp.path());
    let out = tmp.path().join("out");
    let o = mgmpc(&["run", "--scenario", s(&sc), "--output", s(&out), "--steps", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&out, "steps"), 1.0);
    // Only the filter capacitors and their circulating currents draw power.
    let loss = summary_value(&out, "average_loss_kw");
    assert!(loss > 0.0 && loss < 10.0, "{loss}");
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2);
}

#[test]
fn bundled_run_is_reproducible_and_honours_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = bundled().join("scenario.toml");
    let run = |name: &str, mode: &str| {
        let out = tmp.path().join(name);
        let o = mgmpc(&[
            "run",
            "--scenario",
            s(&sc),
            "--output",
            s(&out),
            "--steps",
            "4",
            "--mode",
            mode,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("trajectory.csv")).unwrap()
    };
    let a = run("a", "variable_eff");
    let b = run("b", "variable_eff");
    let c = run("c", "constant_eff");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn dump_problems_writes_one_file_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = idle_scenario(tmp.path());
    let out = tmp.path().join("out");
    let o = mgmpc(&[
        "run",
        "--scenario",
        s(&sc),
        "--output",
        s(&out),
        "--steps",
        "2",
        "--dump-problems",
    ]);
    assert_eq!(code(&o), 0);
    assert!(out.join("problems/step_0000.qcqp").exists());
    assert!(out.join("problems/step_0001.qcqp").exists());
}

#[test]
fn oracle_flag_writes_gap_report() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = bundled().join("scenario.toml");
    let out = tmp.path().join("out");
    let o = mgmpc(&["gap", "--scenario", s(&sc), "--output", s(&out), "--steps", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("gap_summary.csv")).unwrap();
    assert!(summary.contains("gap,"));
    assert!(out.join("gap.csv").exists());
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nope.toml");
    assert_eq!(
        code(&mgmpc(&["run", "--scenario", s(&missing), "--output", s(&out)])),
        1
    );
    let sc = bundled().join("scenario.toml");
    assert_eq!(
        code(&mgmpc(&[
            "run",
            "--scenario",
            s(&sc),
            "--output",
            s(&out),
            "--mode",
            "fast"
        ])),
        1
    );
    assert_eq!(
        code(&mgmpc(&[
            "run",
            "--scenario",
            s(&sc),
            "--output",
            s(&out),
            "--steps",
            "100000"
        ])),
        1
    );
    assert_eq!(code(&mgmpc(&["run", "--output", s(&out)])), 1);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "steps = \"many\"\n").unwrap();
    assert_eq!(code(&mgmpc(&["run", "--scenario", s(&bad), "--output", s(&out)])), 1);
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = idle_scenario(tmp.path());
    // A regular file where the output directory should go.
    let blocker = tmp.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let o = mgmpc(&["run", "--scenario", s(&sc), "--output", s(&blocker), "--steps", "1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_exits_zero() {
    let o = mgmpc(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("run"));
}
