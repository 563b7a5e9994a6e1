use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn innerns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_innerns"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = innerns(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Sum of `exp(log_A)` from a trace, in log space.
fn trace_log_z(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "log_A").unwrap();
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err.trim_end().to_string()
}

#[test]
fn dirichlet_report_fields() {
    let dir = TempDir::new().unwrap();
    let counts = write(&dir, "c.csv", "5,3,2\n");
    let r = report(&["dirichlet", "--counts", s(&counts), "--inner-objects", "300", "--seed", "3"]);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "dirichlet");
    assert_eq!(r["seed"], 3);
    assert_eq!(r["config"]["objects"], 100);
    assert_eq!(r["data"]["total"], 10.0);
    let m1 = r["moments"]["m1"].as_f64().unwrap();
    assert!((m1 - 0.5).abs() < 0.03, "{m1}");
    let sd = r["moments"]["sd"].as_f64().unwrap();
    assert!((r["moments"]["upper"].as_f64().unwrap() - (m1 + sd)).abs() < 1e-12);
    assert!(r["atlas_size"].as_u64().unwrap() > 0);
    assert!(r["iterations"].as_u64().unwrap() > 100);
    assert_eq!(r["termination_reason"], "self-contribution");
}

#[test]
fn uniform_table_in_json() {
    let dir = TempDir::new().unwrap();
    let counts = write(&dir, "c.json", r#"{"counts": [1, 1, 1, 1], "shape": [2, 2]}"#);
    let r = report(&[
        "dirichlet",
        "--counts",
        s(&counts),
        "--functional",
        "t1+t2",
        "--objects",
        "800",
        "--inner-objects",
        "200",
    ]);
    assert_eq!(r["data"]["shape"], serde_json::json!([2, 2]));
    let m1 = r["moments"]["m1"].as_f64().unwrap();
    assert!((m1 - 0.5).abs() < 0.03, "{m1}");
}

#[test]
fn traces_and_dumps_match_the_report() {
    let dir = TempDir::new().unwrap();
    let counts = write(&dir, "c.csv", "5,3\n2,4\n");
    let trace = dir.path().join("trace.csv");
    let atlas = dir.path().join("atlas.csv");
    let points = dir.path().join("u.csv");
    let r = report(&[
        "dirichlet",
        "--counts",
        s(&counts),
        "--functional",
        "t1*t4 - t2*t3",
        "--inner-objects",
        "200",
        "--trace",
        s(&trace),
        "--atlas-dump",
        s(&atlas),
        "--u-points",
        s(&points),
    ]);
    let log_z = r["log_z"].as_f64().unwrap();
    assert!((trace_log_z(&trace) - log_z).abs() < 1e-6);
    let dump = fs::read_to_string(&atlas).unwrap();
    assert!(dump.starts_with("q,e1,e2,e3,R,dS,dV,log_dS,log_dV\n"));
    assert_eq!(dump.lines().count() as u64, r["atlas_size"].as_u64().unwrap() + 1);
    let u = fs::read_to_string(&points).unwrap();
    assert!(u.starts_with("u,weight\n"));
    let total: f64 = u.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let trace = dir.path().join("integrate.csv");
    let r = report(&["integrate", "--objects", "200", "--trace", s(&trace)]);
    assert!((trace_log_z(&trace) - r["log_z"].as_f64().unwrap()).abs() < 1e-6);
}

#[test]
fn inner_volume_of_the_tetrahedron_simplex() {
    let r = report(&["inner-volume", "--dimension", "4", "--inner-objects", "300", "--seed", "2"]);
    let log_z = r["log_z"].as_f64().unwrap();
    assert!((log_z - (1.0f64 / 3.0).ln()).abs() < 0.1, "{log_z}");
    assert!((r["atlas"]["log_v_exact"].as_f64().unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);
}

#[test]
fn oracle_grid_numbers() {
    let dir = TempDir::new().unwrap();
    let curve = dir.path().join("curve.csv");
    let radii = dir.path().join("radii.csv");
    let r = report(&[
        "oracle-grid",
        "--ellipse-level",
        "0.041",
        "--sectors",
        "10000",
        "--curve",
        s(&curve),
        "--radii",
        s(&radii),
    ]);
    let grid = r["oracle"]["grid_integral"].as_f64().unwrap();
    assert!((grid - 0.9994).abs() < 5e-4);
    let sum = r["oracle"]["pyramid"]["sum"].as_f64().unwrap();
    assert!((sum - 8.162).abs() < 5e-3);
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), 401);
    assert_eq!(fs::read_to_string(&radii).unwrap().lines().count(), 10_001);

    let r = report(&["oracle-grid", "--integrand", "1", "--lower", "0,0", "--upper", "1,1", "--cells", "7"]);
    assert_eq!(r["oracle"]["grid_integral"].as_f64().unwrap(), 1.0);
}

#[test]
fn input_errors_exit_2_with_one_line() {
    let dir = TempDir::new().unwrap();
    let zero = write(&dir, "z.csv", "5,3\n2,0\n");
    let bad = write(&dir, "b.csv", "5,3\n2,x\n");
    let ok = write(&dir, "ok.csv", "5,3,2\n");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["dirichlet", "--counts", "/nonexistent/c.csv"], "error[input.read]"),
        (vec!["dirichlet", "--counts", s(&zero)], "row 2, column 2"),
        (vec!["dirichlet", "--counts", s(&bad)], ":2:2:"),
        (vec!["dirichlet", "--counts", s(&ok), "--functional", "t4"], "error[input.functional]"),
        (vec!["dirichlet", "--counts", s(&ok), "--functional", "t1 +"], "error[input.functional]"),
        (vec!["dirichlet", "--counts", s(&ok), "--center", "middle"], "error[input.usage]"),
        (vec!["integrate", "--objects", "1"], "error[input.config]"),
        (vec!["integrate", "--integrand", "t1"], "error[input.usage]"),
        (vec!["inner-volume", "--dimension", "1"], "error[input.usage]"),
        (vec!["frobnicate"], "error[input.usage]"),
    ];
    for (args, needle) in cases {
        let out = innerns(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let line = error_line(&out);
        assert!(line.starts_with("error["), "{line}");
        assert!(line.contains(needle), "{args:?}: {line}");
    }
}

#[test]
fn numeric_errors_exit_3() {
    let out = innerns(&["integrate", "--integrand", "t1 - 0.5", "--lower", "0", "--upper", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[numeric.integrand]"));

    let out = innerns(&["integrate", "--integrand", "log(t1)", "--lower", "-1", "--upper", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

fn model(dir: &TempDir, name: &str, integrand: &str, lo: f64, hi: f64) -> PathBuf {
    write(
        dir,
        name,
        &format!(r#"{{"name": "{name}", "integrand": "{integrand}", "lower": [{lo}], "upper": [{hi}]}}"#),
    )
}

const NORMAL: &str = "exp(-t1^2/2) / sqrt(2*3.141592653589793)";

#[test]
fn evidence_compare_examples() {
    let dir = TempDir::new().unwrap();
    let a = model(&dir, "a.json", NORMAL, -6.0, 6.0);
    let b = model(&dir, "b.json", NORMAL, -6.0, 6.0);
    let r = report(&["evidence-compare", "--model", s(&a), "--model", s(&b), "--objects", "400"]);
    let models = r["models"].as_array().unwrap();
    let p0 = models[0]["posterior"].as_f64().unwrap();
    assert!((p0 - 0.5).abs() < 0.1, "{p0}");

    // same mass on a box of twice the measure
    let wide = model(&dir, "wide.json", NORMAL, -12.0, 12.0);
    let r = report(&["evidence-compare", "--model", s(&a), "--model", s(&wide), "--objects", "400"]);
    let z: Vec<f64> = r["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["log_z"].as_f64().unwrap())
        .collect();
    assert!((z[0] - z[1]).abs() < 0.2, "{z:?}");
    assert!(z[0].abs() < 0.15);

    // three models: posteriors proportional to evidences
    let half = model(&dir, "half.json", "0.5", 0.0, 1.0);
    let r = report(&["evidence-compare", "--model", s(&a), "--model", s(&half), "--model", s(&wide)]);
    let m = r["models"].as_array().unwrap();
    let p: Vec<f64> = m.iter().map(|x| x["posterior"].as_f64().unwrap()).collect();
    let z: Vec<f64> = m.iter().map(|x| x["log_z"].as_f64().unwrap()).collect();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(((p[0] / p[1]).ln() - (z[0] - z[1])).abs() < 1e-9);
    assert!(((p[2] / p[1]).ln() - (z[2] - z[1])).abs() < 1e-9);
}

#[test]
fn evidence_compare_failures() {
    let dir = TempDir::new().unwrap();
    let a = model(&dir, "a.json", NORMAL, -6.0, 6.0);
    let b = model(&dir, "b.json", NORMAL, -5.0, 5.0);
    let broken = model(&dir, "broken.json", "t1 - 1", 0.0, 1.0);
    let r = report(&["evidence-compare", "--model", s(&a), "--model", s(&broken), "--model", s(&b)]);
    let m = r["models"].as_array().unwrap();
    assert!(m[1]["error"].as_str().unwrap().contains("negative"));
    assert!(m[1]["posterior"].is_null());
    assert!((m[0]["posterior"].as_f64().unwrap() + m[2]["posterior"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let out = innerns(&["evidence-compare", "--model", s(&a), "--model", s(&broken)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[pipeline.models]"));

    let garbled = write(&dir, "g.json", "{\"integrand\": ");
    let out = innerns(&["evidence-compare", "--model", s(&a), "--model", s(&garbled)]);
    assert_eq!(out.status.code(), Some(2));
    let out = innerns(&["evidence-compare", "--model", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_file_and_stdout_agree() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("r.json");
    let to_file = innerns(&["integrate", "--objects", "50", "--seed", "5", "--output", s(&out_path)]);
    assert!(to_file.status.success());
    assert!(to_file.stdout.is_empty());
    let mut a: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let mut b = report(&["integrate", "--objects", "50", "--seed", "5"]);
    a.as_object_mut().unwrap().remove("wall_time_seconds");
    b.as_object_mut().unwrap().remove("wall_time_seconds");
    assert_eq!(a, b);
}
