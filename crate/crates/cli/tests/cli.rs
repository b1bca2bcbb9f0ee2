use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_preset(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    let out = sim(&["scenario", name, "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn steady_flow_summary_reports_spacings() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "steady-flow");
    let out = tmp.path().join("out");
    let r = sim(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(files_in(&out), ["events.json", "summary.json", "trace.csv"]);

    let summary = json(&out.join("summary.json"));
    let gaps = summary["level_gaps"].as_array().unwrap();
    assert_eq!(gaps.len(), 4);
    for g in gaps {
        assert!((g["gap"].as_f64().unwrap() - 50.0).abs() < 1e-4, "{g}");
    }
    for level in summary["lateral_gaps"].as_array().unwrap() {
        for g in level["gaps"].as_array().unwrap() {
            assert!((g.as_f64().unwrap() - 30.0).abs() < 1e-4, "{level}");
        }
    }
    assert!(summary["max_velocity_deviation"].as_f64().unwrap() < 1e-4);
    assert!(summary["convergence_time"].is_number());
}

#[test]
fn leader_only_trace_has_one_car() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "leader-only");
    let out = tmp.path().join("out");
    let r = sim(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("t,car,role,level,x,y,vx,vy"));
    let cars: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(cars.into_iter().collect::<Vec<_>>(), ["0"]);
}

#[test]
fn malformed_scenario_exits_one_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"name\": \"x\",\n  \"gains\": [1, 2\n}").unwrap();
    let out = tmp.path().join("out");
    let r = sim(&["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(files_in(&out).is_empty());
}

#[test]
fn invalid_values_are_reported_with_their_path() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "chain-3");
    let mut v = json(&scenario);
    v["gains"]["b"] = serde_json::json!(-1.0);
    fs::write(&scenario, v.to_string()).unwrap();
    let r = sim(&["run", scenario.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("gains"));
}

#[test]
fn lost_spanning_tree_exits_two() {
    // A car driven far sideways leaves every cone behind it with no leader.
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "chain-3");
    let mut v = json(&scenario);
    v["cars"][1]["vx_speed"] = serde_json::json!(50.0);
    fs::write(&scenario, v.to_string()).unwrap();
    let out = tmp.path().join("out");
    let r = sim(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(files_in(&out).is_empty());
}

#[test]
fn diverging_run_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "chain-3");
    let mut v = json(&scenario);
    v["gains"]["k"] = serde_json::json!(1e200);
    v["gains"]["b"] = serde_json::json!(1e200);
    fs::write(&scenario, v.to_string()).unwrap();
    let out = tmp.path().join("out");
    let r = sim(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(files_in(&out).is_empty());
}

#[test]
fn overrides_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "chain-3");
    let out = tmp.path().join("out");
    let r = sim(&[
        "run",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dt",
        "0.05",
        "--t-end",
        "1",
        "--every",
        "5",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["steps"], 20);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let times: std::collections::BTreeSet<String> =
        trace.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert_eq!(times.len(), 5);
    assert_eq!(sim(&["run", scenario.to_str().unwrap(), "--every", "0"]).status.code(), Some(1));
}

#[test]
fn seeded_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "chain-3");
    let run = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        let r = sim(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(r.status.success());
        fs::read(out.join("trace.csv")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn analyze_reports_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "obstacle");
    let r = sim(&["analyze", scenario.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&tmp.path().join("stability.json"));
    let modes = report["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 2);
    assert_eq!(modes[0]["y"]["hurwitz"], true);
    assert!(modes[0]["y"]["lyapunov"].is_object());
    assert!(matches!(&modes[1]["x"]["lyapunov"], serde_json::Value::String(s) if s == "inapplicable")
        || modes[1]["x"]["lyapunov"].is_object());
}

#[test]
fn analyze_without_damping_is_not_hurwitz() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_preset(tmp.path(), "steady-flow");
    let mut v = json(&scenario);
    v["gains"]["b"] = serde_json::json!(0.0);
    fs::write(&scenario, v.to_string()).unwrap();
    // Zero damping fails validation for runs, but analysis only needs a parse.
    let r = sim(&["analyze", scenario.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&tmp.path().join("stability.json"));
    assert_eq!(report["modes"][0]["y"]["hurwitz"], false);
    assert_eq!(report["modes"][0]["x"]["hurwitz"], true);
    assert_eq!(report["all_hurwitz"], false);
}

#[test]
fn analyze_rejects_garbage() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "not json").unwrap();
    let r = sim(&["analyze", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!tmp.path().join("stability.json").exists());
}

fn run_formation_change(tmp: &Path, every: &str, dir: &str) -> PathBuf {
    let scenario = write_preset(tmp, "formation-change");
    let out = tmp.join(dir);
    let r = sim(&[
        "run",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--t-end",
        "2100",
        "--every",
        every,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    out.join("trace.csv")
}

#[test]
fn plotdata_snapshot_and_decimation() {
    let tmp = tempfile::tempdir().unwrap();
    let fine = run_formation_change(tmp.path(), "10", "fine");
    let coarse = run_formation_change(tmp.path(), "100", "coarse");
    let snap = |trace: &Path, name: &str| {
        let out = tmp.path().join(name);
        let r = sim(&[
            "plotdata",
            trace.to_str().unwrap(),
            "--kind",
            "xy-snapshot",
            "--t",
            "2000",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        fs::read_to_string(out).unwrap()
    };
    let a = snap(&fine, "a.csv");
    assert_eq!(a.lines().count(), 17, "{a}");
    assert!(a.lines().skip(1).all(|l| l.starts_with("2000,")));
    assert_eq!(a, snap(&coarse, "b.csv"));

    for kind in ["y-velocity", "x-trajectory"] {
        let r = sim(&["plotdata", fine.to_str().unwrap(), "--kind", kind]);
        assert!(r.status.success());
        assert!(fine.parent().unwrap().join(format!("{kind}.csv")).exists());
    }
}

#[test]
fn plotdata_on_empty_trace_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("trace.csv");
    fs::write(&trace, "t,car,role,level,x,y,vx,vy\n").unwrap();
    let out = tmp.path().join("v.csv");
    let r = sim(&[
        "plotdata",
        trace.to_str().unwrap(),
        "--kind",
        "y-velocity",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    assert_eq!(fs::read_to_string(out).unwrap(), "t,car,vy\n");
}

#[test]
fn plotdata_unknown_kind_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("trace.csv");
    fs::write(&trace, "t,car,role,level,x,y,vx,vy\n").unwrap();
    let r = sim(&["plotdata", trace.to_str().unwrap(), "--kind", "histogram"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn directory_runs_each_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("in");
    fs::create_dir(&dir).unwrap();
    write_preset(&dir, "chain-3");
    write_preset(&dir, "leader-only");
    let out = tmp.path().join("out");
    let r = sim(&["run", dir.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(files_in(&out), ["chain-3", "leader-only"]);
    assert!(out.join("chain-3/summary.json").exists());
}

#[test]
fn scenario_writer_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    for name in laneless::scenario::preset_names() {
        let path = write_preset(tmp.path(), name);
        let text = fs::read_to_string(&path).unwrap();
        let parsed = laneless::scenario::Scenario::from_json(&text).unwrap();
        assert_eq!(parsed, laneless::scenario::preset(name).unwrap());
    }
    assert_eq!(sim(&["scenario", "nope"]).status.code(), Some(1));
    let list = sim(&["scenario"]);
    assert!(String::from_utf8_lossy(&list.stdout).contains("steady-flow"));
}
