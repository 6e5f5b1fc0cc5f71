use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varbound"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn varbound")
}

fn run_config(cmd: &str, name: &str, extra: &[&str]) -> Output {
    let path = config(name);
    let mut args = vec![cmd, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn temp_config(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("varbound-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json payload")
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = run_config("coverage", "gauss_sum.json", &["--seed", "7"]);
    let b = run_config("coverage", "gauss_sum.json", &["--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["scenario"]["seed"], 7);
    assert!(json(&a)["timestamp"].is_null());
}

#[test]
fn worker_count_does_not_change_payloads() {
    for (cmd, name) in [
        ("coverage", "gauss_sum.json"),
        ("coverage", "max_uniform_mc.json"),
        ("pacbayes", "pacbayes.json"),
    ] {
        let one = run_config(cmd, name, &["--workers", "1", "--seed", "3"]);
        let eight = run_config(cmd, name, &["--workers", "8", "--seed", "3"]);
        assert_eq!(one.status.code(), eight.status.code(), "{name}");
        assert_eq!(one.stdout, eight.stdout, "{name}");
    }
}

#[test]
fn exit_codes_follow_verdicts() {
    assert_eq!(
        run_config("canonical", "negctrl.json", &[]).status.code(),
        Some(1)
    );
    assert_eq!(
        run_config("tails", "tails.json", &[]).status.code(),
        Some(0)
    );
    assert_eq!(
        run_config("claim", "claim.json", &[]).status.code(),
        Some(0)
    );
    let diverging = temp_config(
        "diverging.json",
        r#"{"seed": 1, "distribution": {"iid": {"kind": "normal", "mu": 0, "sigma": 1}, "n": 1},
            "claim": {"sampler": {"kind": "exponential", "rate": 1}, "alpha": 1, "samples": 20000}}"#,
    );
    let out = run(&["claim", "--config", diverging.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_errors_exit_two_with_location() {
    let broken = temp_config("broken.json", "{\n  \"seed\": 1,\n  \"trials\": \n}");
    let out = run(&["coverage", "--config", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 4"), "{msg}");
    assert!(out.stdout.is_empty());

    let zero_y = temp_config(
        "zero_y.json",
        r#"{"seed": 1, "distribution": {"iid": {"kind": "normal", "mu": 0, "sigma": 1}, "n": 2},
            "statistic": {"kind": "mean"},
            "bounds": [{"kind": "logarithmic", "x": 1, "y": 0}]}"#,
    );
    let out = run(&["coverage", "--config", zero_y.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bounds[0].y"));

    let small_x = temp_config(
        "small_x.json",
        r#"{"seed": 1, "distribution": {"iid": {"kind": "normal", "mu": 0, "sigma": 1}, "n": 2},
            "statistic": {"kind": "mean"},
            "bounds": [{"kind": "logarithmic", "x": 0.5, "y": 1}]}"#,
    );
    let out = run(&["coverage", "--config", small_x.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(
        msg.contains("bounds[0].x") && msg.contains("x >= 1"),
        "{msg}"
    );

    let unknown = temp_config(
        "unknown.json",
        r#"{"seed": 1, "distribution": {"iid": {"kind": "normal", "mu": 0, "sigma": 1}, "n": 2},
            "statistic": {"kind": "mean", "scale": 2}}"#,
    );
    assert_eq!(
        run(&["estimate", "--config", unknown.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["coverage"]).status.code(), Some(2));
    assert_eq!(
        run(&["coverage", "--config", "/nonexistent/x.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run_config("coverage", "gauss_sum.json", &["--workers", "0"])
            .status
            .code(),
        Some(2)
    );
}

fn csv_tables(text: &str) -> Vec<(String, Vec<String>, Vec<Vec<String>>)> {
    let mut out = vec![];
    for block in text.split("# ").filter(|b| !b.trim().is_empty()) {
        let mut lines = block.lines().filter(|l| !l.is_empty());
        let name = lines.next().unwrap().to_string();
        let header = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines
            .map(|l| l.split(',').map(String::from).collect())
            .collect();
        out.push((name, header, rows));
    }
    out
}

fn same_number(csv: &str, js: &Value) -> bool {
    match js {
        Value::Null => csv.is_empty(),
        Value::Number(n) => csv.parse::<f64>().unwrap().to_bits() == n.as_f64().unwrap().to_bits(),
        Value::String(s) => s == csv,
        Value::Bool(b) => b.to_string() == csv,
        _ => false,
    }
}

#[test]
fn csv_and_json_carry_identical_values() {
    let js = json(&run_config("pacbayes", "pacbayes.json", &["--seed", "5"]));
    let csv = run_config(
        "pacbayes",
        "pacbayes.json",
        &["--seed", "5", "--format", "csv"],
    );
    let tables = csv_tables(&String::from_utf8(csv.stdout).unwrap());
    let (_, header, rows) = tables.iter().find(|t| t.0 == "coverage").unwrap();
    let cells = js["report"]["coverage"]["cells"].as_array().unwrap();
    assert_eq!(rows.len(), cells.len());
    for (row, cell) in rows.iter().zip(cells) {
        for (col, value) in header.iter().zip(row) {
            assert!(
                same_number(value, &cell[col.as_str()]),
                "{col}: {value} vs {}",
                cell[col.as_str()]
            );
        }
    }
    let (_, header, rows) = tables.iter().find(|t| t.0 == "moments").unwrap();
    let json_rows = js["report"]["moments"]["rows"].as_array().unwrap();
    for (row, jrow) in rows.iter().zip(json_rows) {
        for (col, value) in header.iter().zip(row) {
            assert!(
                same_number(value, &jrow[col.as_str()]),
                "{col}: {value} vs {}",
                jrow[col.as_str()]
            );
        }
    }

    let js = json(&run_config("canonical", "negctrl.json", &[]));
    let csv = run_config("canonical", "negctrl.json", &["--format", "csv"]);
    let tables = csv_tables(&String::from_utf8(csv.stdout).unwrap());
    let (_, header, rows) = tables.iter().find(|t| t.0 == "mgf").unwrap();
    for (row, jrow) in rows.iter().zip(js["report"]["rows"].as_array().unwrap()) {
        for (col, value) in header.iter().zip(row) {
            assert!(same_number(value, &jrow[col.as_str()]), "{col}");
        }
    }
}

#[test]
fn scenario_echo_reproduces_the_run() {
    let first = run_config("coverage", "max_uniform_mc.json", &["--seed", "99"]);
    let js = json(&first);
    let echo = temp_config(
        "echo.json",
        &serde_json::to_string(&js["scenario"]).unwrap(),
    );
    let second = run(&["coverage", "--config", echo.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn estimate_uses_an_explicit_sample() {
    let path = temp_config(
        "explicit.json",
        r#"{"seed": 2, "distribution": {"iid": {"kind": "normal", "mu": 0, "sigma": 1}, "n": 2},
            "statistic": {"kind": "weighted_sum", "weights": [1, 1]},
            "estimator": {"inner_replicates": 1000},
            "sample": [1, -1],
            "bounds": [{"kind": "scale_free", "x": 1}]}"#,
    );
    let out = run(&["estimate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let js = json(&out);
    assert_eq!(js["report"]["vks_exact"]["total"]["value"], 4.0);
    assert_eq!(js["report"]["mean_variance"]["value"], 4.0);
    // 2 sqrt((4 + 4) * 1)
    assert_eq!(
        js["report"]["bounds"][0]["radius"].as_f64().unwrap(),
        2.0 * 8f64.sqrt()
    );
}

#[test]
fn timestamp_is_opt_in() {
    let out = run_config("claim", "claim.json", &["--timestamp"]);
    assert!(json(&out)["timestamp"].is_string());
}
