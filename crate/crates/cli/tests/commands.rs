use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qtorus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtorus"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn validate_default_config_passes() {
    let tmp = TempDir::new().unwrap();
    let o = qtorus(tmp.path(), &["validate", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = read_json(&tmp.path().join("out/validate.json"));
    assert_eq!(report["passed"], Value::Bool(true));
}

#[test]
fn validate_harmonic_weights_fail() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "q1.toml", "[weights]\nkind = \"power\"\nq = 1.0\n");
    let o = qtorus(tmp.path(), &["validate", "--config", "q1.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("s(n) divergent"), "{}", stdout(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = qtorus(tmp.path(), &["validate", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.toml", "[truncation]\ntol_tail = -1.0\n");
    let o = qtorus(tmp.path(), &["scan", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    write(tmp.path(), "typo.toml", "[grid]\nm = [1]\n");
    let o = qtorus(tmp.path(), &["scan", "--config", "typo.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_rhs_gives_zero_solution() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "zero.json",
        r#"{"modes": [{"m": 3, "n": 1, "r1": [0.0, 0.0], "r2": [0.0], "q0": 0.0},
                      {"m": 0, "n": 0, "r1": [], "r2": []}]}"#,
    );
    let o = qtorus(tmp.path(), &["solve", "--rhs", "zero.json", "--kmax", "32", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = read_json(&tmp.path().join("out/solve.json"));
    for mode in report["modes"].as_array().unwrap() {
        for key in ["g", "f"] {
            let values = mode[key].as_array().unwrap();
            assert_eq!(values.len(), 33);
            assert!(values.iter().all(|v| v.as_f64() == Some(0.0)));
        }
    }
}

#[test]
fn seeded_random_rhs_is_solved() {
    let tmp = TempDir::new().unwrap();
    let o = qtorus(tmp.path(), &["solve", "--seed", "11", "--modes", "-4,0,5", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = read_json(&tmp.path().join("out/solve.json"));
    let modes = report["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 18);
    for mode in modes {
        assert!(mode["residual"].as_f64().unwrap() <= 1e-9);
        assert!(mode["oracle_gap"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn degenerate_boundary_rule_names_the_mode() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "degenerate.toml",
        "[boundary]\nrule = \"custom\"\nstrict = false\ncustom = [{ m = 1, k1 = 0.0, k2 = 0.0 }]\n\
         [grid]\nm_list = [1, 2]\nn_list = [0]\n",
    );
    let o = qtorus(tmp.path(), &["solve", "--config", "degenerate.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("mode (1, 0)"), "{text}");
    assert!(!text.contains("mode (2, 0)"), "{text}");
}

#[test]
fn strict_rule_rejects_sign_violation() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "strict.toml",
        "[boundary]\nrule = \"custom\"\ncustom = [{ m = 2, k1 = -1.0, k2 = 1.0 }]\n[grid]\nm_list = [2]\nn_list = [0]\n",
    );
    let o = qtorus(tmp.path(), &["solve", "--config", "strict.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("m > 0 requires"), "{}", stdout(&o));
}

#[test]
fn default_scan_passes() {
    let tmp = TempDir::new().unwrap();
    let o = qtorus(tmp.path(), &["scan", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = read_json(&tmp.path().join("out/scan.json"));
    assert_eq!(report["lemma"]["violations"], Value::from(0));
    assert_eq!(report["envelopes_monotone"], Value::Bool(true));
    assert!(report["bound_failures"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(tmp.path().join("out/hs_table.csv")).unwrap();
    // 72 nonzero modes with eight kernels each, 6 zero modes with two
    assert_eq!(csv.lines().count(), 1 + 72 * 8 + 6 * 2);
}

#[test]
fn zero_mode_scan_has_only_zero_mode_kernels() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "single.toml", "[grid]\nm_list = [0]\nn_list = [0]\n");
    let o = qtorus(tmp.path(), &["scan", "--config", "single.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(tmp.path().join("out/hs_table.csv")).unwrap();
    let kernels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(kernels, ["hs_Z", "hs_W"]);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("0,0,")));
}

#[test]
fn dump_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let o = qtorus(tmp.path(), &["dump", "--modes", "-1", "--kmax", "8", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let table = std::fs::read_to_string(tmp.path().join("out/kernel_m-1_n16.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 9);
    let report = read_json(&tmp.path().join("out/dump.json"));
    assert_eq!(report["modes"].as_array().unwrap().len(), 6);
}

fn without_timestamp(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.contains("\"generated_at\""));
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn outputs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = qtorus(tmp.path(), &["solve", "--seed", "5", "--modes", "1,-2", "--kmax", "64", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
        let o = qtorus(tmp.path(), &["scan", "--modes", "0,3", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    for file in ["solve.json", "scan.json"] {
        assert_eq!(
            without_timestamp(&tmp.path().join("a").join(file)),
            without_timestamp(&tmp.path().join("b").join(file)),
            "{file}"
        );
    }
    assert_eq!(
        std::fs::read(tmp.path().join("a/hs_table.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/hs_table.csv")).unwrap()
    );
}
