use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn matrixflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matrixflow"))
        .args(args)
        .env_remove(matrixflow_cli::CONFIG_ENV)
        .output()
        .expect("binary runs")
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn gemm_sweep_rows_and_trend() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = matrixflow(&["gemm-sweep", "--sizes", "256,512,1024", "--dtype", "int8", "--mode", "dc", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    assert!(!text.contains('\r'));
    assert!(text.starts_with("size,mode,dtype,total_ns,baseline_ns,speedup,bytes_moved,energy_mj\n"));
    let s: Vec<f64> = column(&text, "speedup").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(s.len(), 3);
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
}

#[test]
fn sweeps_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["gemm-sweep", "--sizes", "64,300,128,200"],
        vec!["dtype-sweep", "--sizes", "96,160"],
        vec!["pcie-sweep", "--size", "128"],
    ] {
        let mut outputs = Vec::new();
        for n in 0..2 {
            let out = dir.path().join(format!("{}{n}", args[0]));
            let mut a = args.clone();
            a.extend(["--out", out.to_str().unwrap()]);
            assert!(matrixflow(&a).status.success());
            outputs.push(fs::read(&out).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
    }
}

#[test]
fn sweep_rows_follow_declared_order() {
    let o = matrixflow(&["gemm-sweep", "--sizes", "128,64,96"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(column(&text, "size"), ["128", "64", "96"]);
}

#[test]
fn pcie_ordering() {
    let o = matrixflow(&["pcie-sweep", "--size", "512", "--dtype", "int8", "--links", "16x64,4x16,4x5,1x1.25"]);
    assert!(o.status.success());
    let t: Vec<f64> = column(&String::from_utf8(o.stdout).unwrap(), "total_ns").iter().map(|v| v.parse().unwrap()).collect();
    assert!(t[0] < t[1] && t[1] < t[2] && t[2] < t[3], "{t:?}");
    assert!(t[2] / t[0] >= 1.5);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(matrixflow(&["gemm-sweep", "--dtype", "int7"]).status.code(), Some(2));
    assert_eq!(matrixflow(&["gemm-sweep", "--sizes", "0"]).status.code(), Some(2));
    assert_eq!(matrixflow(&["pcie-sweep", "--links", "0x5"]).status.code(), Some(2));
    let o = matrixflow(&["transformer", "--model", "gpt-9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown model"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"link\": {\n    \"lanes\": \"many\"\n  }\n}\n").unwrap();
    let o = matrixflow(&["gemm-sweep", "--sizes", "64", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("link.lanes") && err.contains("line 3"), "{err}");
    let missing = dir.path().join("nope.json");
    assert_eq!(matrixflow(&["gemm-sweep", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("slow.json");
    fs::write(&cfg, r#"{"link": {"lanes": 1, "gbps": 1.0}}"#).unwrap();
    let base = matrixflow(&["gemm-sweep", "--sizes", "128"]);
    let slow = Command::new(env!("CARGO_BIN_EXE_matrixflow"))
        .args(["gemm-sweep", "--sizes", "128"])
        .env(matrixflow_cli::CONFIG_ENV, &cfg)
        .output()
        .unwrap();
    assert!(slow.status.success());
    let t = |o: &Output| column(&String::from_utf8_lossy(&o.stdout), "total_ns")[0].parse::<u64>().unwrap();
    assert!(t(&slow) > t(&base));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("x.csv");
    assert_eq!(matrixflow(&["gemm-sweep", "--sizes", "64", "--out", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn transformer_report_closes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    let csv = dir.path().join("t.csv");
    let o = matrixflow(&[
        "transformer",
        "--model",
        "bert-base",
        "--dtype",
        "int32",
        "--mode",
        "dc",
        "--seq-len",
        "32",
        "--out",
        out.to_str().unwrap(),
        "--breakdown-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&out)).unwrap();
    assert!(v["speedup_vs_baseline"].as_f64().unwrap() > 1.0);
    let total = v["total_ns"].as_u64().unwrap();
    let rows = v["breakdown"].as_array().unwrap();
    assert_eq!(rows.iter().map(|r| r["ns"].as_u64().unwrap()).sum::<u64>(), total);
    let pct: f64 = column(&read(&csv), "percent").iter().map(|p| p.parse::<f64>().unwrap()).sum();
    assert!((pct - 100.0).abs() < 1e-3);
}

#[test]
fn custom_model_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("models.json");
    fs::write(&table, r#"[{"name": "toy", "num_layers": 2, "hidden": 64, "heads": 4, "seq_len": 16}]"#).unwrap();
    let o = matrixflow(&["transformer", "--models", table.to_str().unwrap(), "--model", "toy", "--baseline"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model"], "toy");
    assert_eq!(v["execution"], "baseline");
}
