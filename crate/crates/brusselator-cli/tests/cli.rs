use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brusselator"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["simulate", "--frame", "NOPE"])), 2);
    assert_eq!(code(&run(p, &["simulate", "--duration", "0"])), 2);
    assert_eq!(code(&run(p, &["simulate", "--start", "1,x"])), 2);
    assert_eq!(code(&run(p, &["simulate", "--frame", "K1"])), 2);
    assert_eq!(code(&run(p, &["sweep", "--quantity", "nope"])), 2);
    assert_eq!(
        code(&run(
            p,
            &["sweep", "--quantity", "rho_eps", "--grid", "0.1,0.05"]
        )),
        2
    );
    assert_eq!(code(&run(p, &["cycle", "--epsilon", "-1"])), 2);
    assert_eq!(code(&run(p, &["cycle", "--rel-tol", "0"])), 2);
    assert_eq!(code(&run(p, &["bounds-check", "--delta", "-0.1"])), 2);
    assert_eq!(code(&run(p, &["no-such-command"])), 2);
}

#[test]
fn simulate_writes_clock_columns_and_plot() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["simulate", "--duration", "5", "--plot"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("tau,t,t1,t2,tau2,chart_time,X,Y"));
    let svg = std::fs::read_to_string(d.path().join("trajectory.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn simulate_in_a_chart() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &[
            "simulate",
            "--frame",
            "k1",
            "--start",
            "0.01,0.2,0.3",
            "--duration",
            "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 9);
}

#[test]
fn cycle_outputs_are_reproducible_without_timestamp() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        let o = run(d.path(), &["cycle", "--no-timestamp", "--plot"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["cycle.json", "cycle.csv", "cycle.svg"] {
        let a = std::fs::read(d1.path().join(f)).unwrap();
        let b = std::fs::read(d2.path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let v = json(&d1.path().join("cycle.json"));
    assert!(v.get("timestamp").is_none());
    assert!(v["rho_eps"].as_f64().unwrap() > 0.0);
    let text = std::fs::read_to_string(d1.path().join("cycle.json")).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut positions: Vec<usize> = keys
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap())
        .collect();
    let sorted = positions.clone();
    positions.sort();
    assert_eq!(
        positions, sorted,
        "top-level keys are written in sorted order"
    );
}

#[test]
fn timestamp_is_present_by_default() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["cycle", "--rescaled", "--plot"])), 0);
    assert!(
        json(&d.path().join("cycle.json"))["timestamp"]
            .as_u64()
            .unwrap()
            > 0
    );
    assert!(d.path().join("cycle.svg").exists());
}

#[test]
fn single_quantity_sweep_writes_table_and_fit() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &["sweep", "--quantity", "dwell_sigma2_t", "--no-timestamp"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&d.path().join("sweep_dwell_sigma2_t.json"));
    let slope = v["fit"]["slope"].as_f64().unwrap();
    assert!((-1.25..=-0.75).contains(&slope), "{slope}");
    let csv = std::fs::read_to_string(d.path().join("sweep_dwell_sigma2_t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn full_scaling_report_reports_its_failures() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["sweep", "--no-timestamp"]);
    let v = json(&d.path().join("scaling_report.json"));
    let checks = v["checks"].as_array().unwrap();
    let all_pass = checks.iter().all(|c| c["pass"].as_bool().unwrap());
    assert_eq!(code(&o), if all_pass { 0 } else { 1 });
    assert!(checks
        .iter()
        .any(|c| c["name"] == "exit_image" && c["pass"] == true));
}

#[test]
fn charts_and_bounds_checks_pass() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["charts-check", "--samples", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(json(&d.path().join("charts_check.json"))["pass"], true);
    let o = run(
        d.path(),
        &["bounds-check", "--delta", "0.2", "--samples", "20"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(&d.path().join("bounds_check.json"));
    assert_eq!(v["all_ok"], true);
    assert_eq!(v["initials"].as_array().unwrap().len(), 20);
}

#[test]
fn export_writes_every_curve_file() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["export", "--plot"])), 0);
    for f in [
        "singular_cycle.csv",
        "sections.csv",
        "sigma_curves.csv",
        "sigma_bar_curves.csv",
        "singular_cycle.svg",
    ] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.path().join("sigma_curves.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("s,coord1,coord2,label"));
    assert!(csv.contains("sigma4"));
}
