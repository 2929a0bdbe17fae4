use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ffspin"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn chain(dir: &TempDir, model: &str, n: usize) -> PathBuf {
    write(dir, &format!("{model}{n}.json"), &json!({"model": model, "lattice": {"kind": "chain", "dims": [n]}, "lambda": 0.0}))
}

fn diag4(d: [f64; 4]) -> Value {
    let rows: Vec<Vec<[f64; 2]>> =
        (0..4).map(|i| (0..4).map(|j| [if i == j { d[i] } else { 0.0 }, 0.0]).collect()).collect();
    json!(rows)
}

/// `1 - |00><00|` on the pair plus `|0><0|` on site 0: no zero-energy state.
fn frustrated(dir: &TempDir) -> PathBuf {
    write(
        dir,
        "frustrated.json",
        &json!({"sites": 2, "edges": [{"a": 0, "b": 1, "h": diag4([0.0, 1.0, 1.0, 1.0])}],
                "single": [{"v": 0, "h": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]}]}),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn check_frustration_free_chain() {
    let dir = TempDir::new().unwrap();
    let f = chain(&dir, "heisenberg_ferro", 4);
    let o = run(&["check", p(&f)]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("frustration-free: yes"), "{s}");
    assert!(s.contains("ground dimension: 5"), "{s}");
    assert!(s.contains("n_c: "), "{s}");
    assert!(s.contains("components: 1"), "{s}");
    assert!(s.contains("network depth: "), "{s}");
}

#[test]
fn check_frustrated_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check", p(&frustrated(&dir))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("frustration-free: no"));
}

#[test]
fn check_not_natural_exits_3() {
    let dir = TempDir::new().unwrap();
    // |01><01| has a product excited space
    let f = write(&dir, "product.json", &json!({"sites": 2, "edges": [{"a": 0, "b": 1, "h": diag4([0.0, 1.0, 0.0, 0.0])}]}));
    let o = run(&["check", p(&f)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn check_reports_parse_and_validation_errors() {
    let dir = TempDir::new().unwrap();
    let mut h = vec![vec![[0.0, 0.0]; 4]; 4];
    h[0][3] = [1.0, 0.0];
    let f = write(&dir, "nonherm.json", &json!({"sites": 3, "edges": [{"a": 0, "b": 1, "h": diag4([1.0; 4])}, {"a": 1, "b": 2, "h": h}]}));
    let o = run(&["check", p(&f)]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("edges[1] (1, 2)") && e.contains("Hermitian"), "{e}");

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"sites\": 2,\n \"edges\": [}").unwrap();
    let o = run(&["check", p(&broken)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = run(&["check", "/nonexistent/file.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn expect_values() {
    let dir = TempDir::new().unwrap();
    let xxx = chain(&dir, "heisenberg_ferro", 3);
    let o = run(&["expect", p(&xxx), "--op", "Z1 Z2", "--op", "Z1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Z1 Z2\t0.333333333333\nZ1\t0\n");

    let obs = write(&dir, "obs.json", &json!({"observables": [{"name": "z0", "terms": [{"coeff": 1.0, "pauli": "Z0"}]}]}));
    let ising = write(&dir, "ising.json", &json!({"model": "tfi", "lattice": {"kind": "chain", "dims": [5]}, "lambda": 0.0}));
    let o = run(&["expect", p(&ising), p(&obs)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "z0\t0\n");

    let o = run(&["expect", p(&frustrated(&dir)), "--op", "Z0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["expect", p(&xxx), "--op", "Z7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn groundspace_dump() {
    let dir = TempDir::new().unwrap();
    let o = run(&["groundspace", p(&chain(&dir, "heisenberg_ferro", 4))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ground_dimension"], 5);
    let c = &v["components"][0];
    assert_eq!(c["alpha_angles"].as_array().unwrap().len(), c["sites"].as_array().unwrap().len() + 1);
    assert!(v["network"]["steps"].is_array());
    assert_eq!(run(&["groundspace", p(&frustrated(&dir))]).status.code(), Some(2));
}

#[test]
fn estimate_and_ed() {
    let dir = TempDir::new().unwrap();
    let f = chain(&dir, "heisenberg_ferro", 4);
    let energy = |args: &[&str]| -> f64 {
        let o = run(args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_str::<Value>(&stdout(&o)).unwrap()["energy"].as_f64().unwrap()
    };
    assert!((energy(&["estimate", p(&f), "--method", "product"]) + 3.0).abs() < 1e-9);
    assert!((energy(&["estimate", p(&f), "--method", "symmetric"]) + 3.0).abs() < 1e-9);
    assert!((energy(&["estimate", p(&f), "--method", "anderson"]) + 3.0).abs() < 1e-9);
    assert!((energy(&["ed", p(&f)]) + 3.0).abs() < 1e-9);
    assert!((energy(&["estimate", p(&f), "--reference", p(&f)]) + 3.0).abs() < 1e-9);
    let o = run(&["estimate", p(&f), "--reference", p(&frustrated(&dir))]);
    assert_eq!(o.status.code(), Some(2), "reference is checked first");
    let o = run(&["estimate", p(&f), "--method", "dmrg"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--oracle-limit", "3", "ed", p(&f)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exceeds"));
}

#[test]
fn estimate_with_frustrated_reference_exits_2() {
    let dir = TempDir::new().unwrap();
    let target = frustrated(&dir);
    let o = run(&["estimate", p(&target), "--reference", p(&target)]);
    assert_eq!(o.status.code(), Some(2));
}

fn sweep(dir: &TempDir, name: &str, extra: &[&str]) -> String {
    let out = dir.path().join(name);
    let mut args = vec!["sweep", "--model", "xxz", "--lattice", "chain", "--dims", "4", "--output", p(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn sweep_is_deterministic_and_sorted() {
    let dir = TempDir::new().unwrap();
    let args = ["--lambdas", "0:0.2:0.1", "--methods", "symmetric,product,ed,anderson,rotated", "--seed", "4"];
    let a = sweep(&dir, "a.csv", &args);
    let b = sweep(&dir, "b.csv", &args);
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "lambda,method,energy,energy_per_site,bound_type,mz_per_site,ground_dim,runtime_ms,error");
    assert_eq!(lines.len(), 1 + 15);
    assert!(lines[1].starts_with("0,anderson,"));
    assert!(lines[15].starts_with("0.2,symmetric,"));
}

#[test]
fn sweep_edge_cases() {
    let dir = TempDir::new().unwrap();
    let empty = sweep(&dir, "empty.csv", &["--lambdas", ""]);
    assert_eq!(empty, "lambda,method,energy,energy_per_site,bound_type,mz_per_site,ground_dim,runtime_ms,error\n");
    // cells beyond the oracle limit carry their error; the file is still written
    let limited = sweep(&dir, "limited.csv", &["--lambdas", "0", "--methods", "ed,product", "--oracle-limit", "2"]);
    let rows: Vec<&str> = limited.lines().collect();
    assert!(rows[1].starts_with("0,ed,,,exact,") && rows[1].contains("exceeds"), "{}", rows[1]);
    assert!(rows[2].starts_with("0,product,-3,"), "{}", rows[2]);
    let timed = sweep(&dir, "timed.csv", &["--lambdas", "0", "--methods", "product", "--timing"]);
    let cols: Vec<&str> = timed.lines().nth(1).unwrap().split(',').collect();
    assert!(!cols[7].is_empty());
    let o = run(&["sweep", "--model", "xxz", "--lattice", "square_torus", "--dims", "2,2", "--lambdas", "0"]);
    assert_eq!(o.status.code(), Some(1));
}
