use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsindex::panel::{write_panel, Panel, VariableDictionary};
use fsindex::synth::{generate, DgpConfig};

fn fsindex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsindex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Panel, identity dictionary and default network written to `dir`.
fn write_inputs(dir: &Path, panel: &Panel) -> Vec<String> {
    let panel_path = dir.join("panel.csv");
    let dict_path = dir.join("dictionary.json");
    write_panel(panel, &panel_path).unwrap();
    fs::write(&dict_path, VariableDictionary::identity_for(panel).to_json_string()).unwrap();
    vec![
        "--paths.panel".into(),
        s(&panel_path).into(),
        "--paths.dictionary".into(),
        s(&dict_path).into(),
        "--paths.output_dir".into(),
        s(&dir.join("out")).into(),
    ]
}

fn run(cmd: &str, args: &[String], extra: &[&str]) -> Output {
    let mut v: Vec<&str> = vec![cmd];
    v.extend(args.iter().map(String::as_str));
    v.extend_from_slice(extra);
    fsindex(&v)
}

fn small(n: usize, t: usize, seed: u64) -> Panel {
    generate(&DgpConfig {
        n_units: n,
        n_periods: t,
        shock_period: 1,
        seed,
        ..DgpConfig::default()
    })
    .unwrap()
    .panel
}

fn tables(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("table_"))
        .collect();
    v.sort();
    v
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(6, 2, 1));
    let out = run("validate", &args, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/validation.json").exists());

    let mut bad = small(6, 2, 1);
    let mut deposits = bad.require("deposits").unwrap().clone();
    deposits.values[3] = Some(-5.0);
    bad.set_column("deposits", deposits.role, deposits.values).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let args = write_inputs(dir2.path(), &bad);
    assert_eq!(code(&run("validate", &args, &[])), 1);
    let report = fs::read_to_string(dir2.path().join("out/validation.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let issue = &v["issues"][0];
    assert_eq!(issue["kind"], "non-positive-dea");
    assert_eq!(issue["unit"], "B002");
    assert_eq!(issue["period"], 2016);
    assert_eq!(issue["column"], "deposits");

    let out = run("validate", &args, &["--paths.network", "/nonexistent/network.json"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&fsindex(&["validate", "--options.nope", "1"])), 2);
    assert_eq!(code(&fsindex(&["validate", "--config", "/nonexistent/run.json"])), 2);
    assert_eq!(code(&fsindex(&["validate"])), 2, "no panel path");
    assert_eq!(code(&fsindex(&["frobnicate"])), 2);
}

#[test]
fn stderr_is_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(6, 2, 1));
    let out = run("validate", &args, &[]);
    let err = String::from_utf8(out.stderr).unwrap();
    let events: Vec<serde_json::Value> = err.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.first().unwrap()["event"], "start");
    assert_eq!(events.last().unwrap()["event"], "done");
    assert!(String::from_utf8(out.stdout).unwrap().contains("DEA-ready"));
}

#[test]
fn fsi_rows_and_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(10, 3, 42));
    let out = run("fsi", &args, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fsi = fs::read_to_string(dir.path().join("out/fsi.csv")).unwrap();
    assert_eq!(fsi.lines().count(), 1 + 10 * 2);
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fsi_10x3_seed42.csv");
    let golden = fs::read_to_string(&golden_path).unwrap();
    assert_eq!(fsi, golden, "output drifted from the frozen golden file");

    // Idempotence: a second run rewrites identical bytes.
    let first: Vec<Vec<u8>> = ["fsi.csv", "efficiency.csv", "fsi_panel.csv", "validation.json"]
        .iter()
        .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    assert_eq!(code(&run("fsi", &args, &[])), 0);
    for (f, bytes) in ["fsi.csv", "efficiency.csv", "fsi_panel.csv", "validation.json"].iter().zip(first) {
        assert_eq!(fs::read(dir.path().join("out").join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn identical_periods_give_unit_fsi() {
    let base = small(8, 2, 5);
    let mut panel = base.clone();
    let names: Vec<String> = base.column_names().iter().map(|s| s.to_string()).collect();
    for name in names {
        let col = base.require(&name).unwrap();
        let mut v = col.values.clone();
        for u in 0..base.n_units() {
            v[base.cell(u, 1)] = v[base.cell(u, 0)];
        }
        panel.set_column(&name, col.role, v).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &panel);
    assert_eq!(code(&run("fsi", &args, &[])), 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("out/fsi.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let fsi: f64 = rec[2].parse().unwrap();
        assert!((fsi - 1.0).abs() < 1e-9, "{rec:?}");
        rows += 1;
    }
    assert_eq!(rows, 8);
}

#[test]
fn solver_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(6, 2, 3));
    let out = run("fsi", &args, &["--options.solver.iteration_limit", "1"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let fsi = fs::read_to_string(dir.path().join("out/fsi.csv")).unwrap();
    assert!(fsi.lines().skip(1).all(|l| l.ends_with("solver-failure")));
}

#[test]
fn baseline_only_emits_one_table() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(20, 4, 8));
    let out = run(
        "regress",
        &args,
        &[
            "--analysis.iv", "false",
            "--analysis.cf", "false",
            "--analysis.mechanism", "false",
            "--analysis.heterogeneity", "false",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(tables(&dir.path().join("out")), ["table_baseline.csv"]);
}

#[test]
fn endogenous_dgp_all_tables_and_cf_line() {
    let panel = generate(&DgpConfig {
        n_units: 40,
        n_periods: 5,
        shock_period: 2,
        rho: 0.6,
        ..DgpConfig::default()
    })
    .unwrap()
    .panel;
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &panel);
    let out = run("regress", &args, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    assert_eq!(
        tables(&out_dir),
        [
            "table_baseline.csv",
            "table_cf.csv",
            "table_heterogeneity.csv",
            "table_iv.csv",
            "table_mechanism.csv"
        ]
    );
    let cf = fs::read_to_string(out_dir.join("table_cf.csv")).unwrap();
    assert!(cf.lines().any(|l| l.starts_with("lambda (xi_hat)")), "{cf}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("regress.json")).unwrap()).unwrap();
    assert!(json["cf"]["lambda"]["coef"].is_f64());
    assert!(json["iv"]["diagnostics"]["kp_rk_wald_f"].is_f64());
}

#[test]
fn regress_computes_fsi_when_absent() {
    let mut panel = small(12, 3, 4);
    let fsi = panel.require("FSI").unwrap().role;
    panel.set_column("FSI", fsi, vec![None; panel.n_cells()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &panel);
    let out = run("regress", &args, &["--analysis.heterogeneity", "false", "--analysis.mechanism", "false"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fsi_implicit"));
    assert!(dir.path().join("out/fsi.csv").exists());
}

#[test]
fn just_identified_hansen_j_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(30, 4, 9));
    let out = run(
        "regress",
        &args,
        &[
            "--analysis", r#"{"baseline": false, "iv": true, "cf": false, "mechanism": false, "heterogeneity": false}"#,
            "--regression.instruments", r#"{"lag_endogenous": false, "external": ["IV2"]}"#,
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out/table_iv.csv")).unwrap();
    assert!(table.lines().any(|l| l == "Hansen J,,0.000"), "{table}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/regress.json")).unwrap()).unwrap();
    assert_eq!(json["iv"]["diagnostics"]["hansen_j"]["stat"], 0.0);
}

#[test]
fn failing_table_is_isolated_and_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let args = write_inputs(dir.path(), &small(12, 3, 6));
    let out = run(
        "regress",
        &args,
        &[
            "--analysis.iv", "false",
            "--analysis.cf", "false",
            "--analysis.mechanism", "false",
            "--regression.heterogeneity", r#"[{"rule": "flag", "column": "no_such_column"}]"#,
        ],
    );
    assert_eq!(code(&out), 4);
    let out_dir = dir.path().join("out");
    assert_eq!(tables(&out_dir), ["table_baseline.csv"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("regress.json")).unwrap()).unwrap();
    assert!(json["heterogeneity"]["error"].as_str().unwrap().contains("no_such_column"));
}

#[test]
fn simulate_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let out = fsindex(&[
        "simulate",
        "--paths.output_dir", s(&out_dir),
        "--simulate.n_units", "5",
        "--simulate.n_periods", "3",
        "--options.seed", "77",
    ]);
    assert_eq!(code(&out), 0);
    for f in ["panel.csv", "truth.json", "dictionary.json", "network.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["config"]["seed"], 77);
    assert_eq!(truth["frontier_unit"], "B001");
    let panel = fs::read_to_string(out_dir.join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 5 * 3);
}
