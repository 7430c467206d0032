use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use thermocover::report::parse_report;
use thermocover::scenario::builtin_scenario;
use thermocover::sim::{simulate, SimTrace};
use thermocover::Mode;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermocover")).args(args).output().unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out-dir", dir.to_str().unwrap()]);
    cli(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_trace_on_the_control_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["exp1_heat"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("exp1_heat_trace.csv")).unwrap();
    let trace = SimTrace::from_csv(&csv).unwrap();
    assert_eq!(trace.rows.len(), 2700);
    for (k, r) in trace.rows.iter().enumerate() {
        assert!((r.t - k as f64).abs() < 1e-9);
    }
    let report = fs::read_to_string(dir.path().join("exp1_heat_report.txt")).unwrap();
    assert_eq!(report, stdout(&out));
}

#[test]
fn report_matches_statistics_recomputed_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["exp1_cool"]).status.success());
    let trace = SimTrace::from_csv(&fs::read_to_string(dir.path().join("exp1_cool_trace.csv")).unwrap()).unwrap();
    let report = parse_report(&fs::read_to_string(dir.path().join("exp1_cool_report.txt")).unwrap());
    let spec = builtin_scenario("exp1_cool").unwrap();
    for (i, (start, end)) in spec.segment_bounds().into_iter().enumerate() {
        let seg: Vec<_> = trace.rows.iter().filter(|r| r.t >= start && r.t < end).collect();
        let tail = &seg[seg.len() * 3 / 4..];
        let sp = spec.setpoint_at(start);
        let sse = tail.iter().map(|r| r.t_c - sp).sum::<f64>() / tail.len() as f64;
        let reported: f64 = report[&format!("segment.{i}.steady_state_error")].parse().unwrap();
        assert!((reported - sse).abs() < 1e-5, "segment {i}: {reported} vs {sse}");
    }
}

#[test]
fn overrides_show_in_the_report_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["exp2_nocontact", "--set", "detection.threshold=0.05", "--seed", "7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let header: Vec<&str> = text.lines().take(3).collect();
    assert_eq!(header, ["scenario: exp2_nocontact", "override: noise.seed=7", "override: detection.threshold=0.05"]);
    let report = parse_report(&text);
    assert_eq!(report["config.detection.threshold"], "0.05");
    assert_eq!(report["detections"], "0");
}

#[test]
fn nocontact_and_grasp_detection_counts() {
    let dir = tempfile::tempdir().unwrap();
    let none = parse_report(&stdout(&run_in(dir.path(), &["exp2_nocontact"])));
    assert_eq!((none["detections"].as_str(), none["false_positives"].as_str()), ("0", "0"));
    let grasp = parse_report(&stdout(&run_in(dir.path(), &["exp2_grasp"])));
    assert_eq!((grasp["true_positives"].as_str(), grasp["misses"].as_str()), ("1", "0"));
}

#[test]
fn t_step_override_changes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["exp2_nocontact", "--t-step", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = SimTrace::from_csv(&fs::read_to_string(dir.path().join("exp2_nocontact_trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.t_s, 2.0);
    assert_eq!(parse_report(&stdout(&out))["config.dt"], "0.2");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["exp9"]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &["exp1_heat", "--set", "controller.nonsense=1"]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &["exp1_heat", "--set", "plant.c_c=0.0001"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "exp1_heat", "--out-dir", "/nonexistent/dir"]).status.code(), Some(4));
    assert_eq!(cli(&["fit", "/nonexistent.csv"]).status.code(), Some(4));

    let spec = builtin_scenario("exp2_nocontact").unwrap();
    let csv = dir.path().join("closed.csv");
    fs::write(&csv, simulate(&spec).unwrap().to_csv()).unwrap();
    let out = cli(&["fit", csv.to_str().unwrap(), "--column", "T_w"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t,T_c\n0,1\n").unwrap();
    assert_eq!(cli(&["fit", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn fit_recovers_an_open_loop_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = thermocover::PlantParams::preset(Mode::Heat);
    let (tau, delay) = (p.tau, p.dead_time);
    let rows: Vec<String> = (0..3000)
        .map(|k| {
            let t = k as f64;
            let (cmd, y) = if t < 100.0 {
                (30.0, 23.0)
            } else {
                let s = (t - 100.0 - delay).max(0.0);
                (35.0, 23.0 + 3.0 * (1.0 - (-s / tau).exp()))
            };
            format!("{t},{cmd},{cmd},25,{y},{y},1,0,0,0,0")
        })
        .collect();
    let csv = dir.path().join("step.csv");
    fs::write(&csv, format!("{}\n{}\n", thermocover::sim::CSV_HEADER, rows.join("\n"))).unwrap();
    let out_file = dir.path().join("fit.txt");
    let out = cli(&["fit", csv.to_str().unwrap(), "--out", out_file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = thermocover::kv::KvDoc::parse(&fs::read_to_string(out_file).unwrap()).unwrap();
    let got = |k: &str| fit.get(k).unwrap().parse::<f64>().unwrap();
    assert!((got("r_com_c_com") / tau - 1.0).abs() < 0.02);
    assert!((got("l_d") - delay).abs() < 0.5);
}

#[test]
fn list_print_config_and_all() {
    let names = stdout(&cli(&["list"]));
    assert_eq!(names.lines().count(), 6);
    let cfg = stdout(&cli(&["print-config", "exp1_heat", "--set", "controller.w2=0.5"]));
    let spec = thermocover::scenario::ScenarioSpec::parse(&cfg).unwrap();
    assert_eq!(spec.controller.w2, 0.5);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("mine.txt");
    fs::write(&file, cfg.replace("name = exp1_heat", "name = mine")).unwrap();
    assert!(run_in(dir.path(), &[file.to_str().unwrap()]).status.success());
    assert!(dir.path().join("mine_report.txt").exists());

    let out = run_in(dir.path(), &["--all"]);
    assert!(out.status.success());
    for name in names.lines() {
        assert!(dir.path().join(format!("{name}_trace.csv")).exists());
        assert!(dir.path().join(format!("{name}_report.txt")).exists());
    }
}
