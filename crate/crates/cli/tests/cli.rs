use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pacest::report::read_report;
use serde_json::{json, Value};

fn pacest(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pacest"));
    cmd.args(args).env_remove("PACEST_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/oracle.py")
        .to_string_lossy()
        .into_owned()
}

const GAUSS2: &str = r#"{"kind":"parametric-gaussian","mean":[0,0],"covariance":[[2,0.5],[0.5,1]],"rows":8}"#;
const MEAN2: &str = r#"{"kind":"builtin-mean","output_dim":2,"output_radius":4}"#;

#[test]
fn bound_reproduces_global_bound() {
    let out = pacest(&["bound", "--delta-o", "0.99", "--mi", "1"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    let b = &r["pac_bounds"][0];
    assert_eq!(b["scenario"], "user-prior");
    let success = b["posterior_success_upper"].as_f64().unwrap();
    assert!((success - 0.36).abs() <= 0.005, "{success}");

    let iid = pacest(&["bound", "--mi", "1", "--iid-n", "10", "--prior-success", "0.01"], &[]);
    assert_eq!(iid.status.code(), Some(0));
    let r = stdout_json(&iid);
    assert_eq!(r["details"]["iid"]["per_j"].as_array().unwrap().len(), 10);
    assert_eq!(r["pac_bounds"][0]["scenario"], "membership");
}

#[test]
fn constant_mechanism_exits_zero_with_floor_noise() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    std::fs::write(&pool, "x\n0.001\n0.003\n").unwrap();
    let gen = json!({"kind":"pool-sampler","source":pool,"header":true,"scheme":{"kind":"full"}}).to_string();
    let mech = r#"{"kind":"builtin-mean","output_dim":1,"output_radius":0.01}"#;
    let out = pacest(
        &["analyze-det", "--seed", "3", "--m", "10000", "--v", "1", "--beta", "0.1", "--generator", &gen, "--mechanism", mech],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    let cert = &r["certificate"];
    assert!(cert["diagnostics"]["eigenvalues"].as_array().unwrap().iter().all(|l| l.as_f64() == Some(0.0)));
    // a constant output only needs the floor s/(2v) with s = 10cv/β
    let c = cert["c"].as_f64().unwrap();
    let trace = cert["diagnostics"]["noise_trace"].as_f64().unwrap();
    assert!((trace - 10.0 * c / 0.1 / 2.0).abs() <= 1e-15, "{trace}");
    assert!(trace < 0.05);
    let kinds: Vec<&str> = cert["caveats"].as_array().unwrap().iter().map(|c| c["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"pool-induced-distribution"), "{kinds:?}");
}

#[test]
fn malformed_pool_exits_one_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    std::fs::write(&pool, "1,2\n3\n").unwrap();
    let gen = json!({"kind":"pool-sampler","source":pool,"scheme":{"kind":"full"}}).to_string();
    let out = pacest(
        &["analyze-det", "--seed", "1", "--m", "100", "--v", "1", "--beta", "0.1", "--generator", &gen, "--mechanism", MEAN2],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let e = stderr_json(&out);
    assert_eq!(e["code"], "INPUT_POOL");
    assert!(e["trial"].is_null());
}

#[test]
fn errors_carry_trial_index() {
    // the fixture's "huge" mode exceeds the radius on the first evaluation
    let mech = json!({"kind":"subprocess","command":["python3", fixture(), "huge"],"output_dim":2,"output_radius":1});
    let out = pacest(
        &["analyze-det", "--seed", "1", "--m", "50", "--v", "1", "--beta", "0.1", "--workers", "1", "--generator", GAUSS2,
          "--mechanism", &mech.to_string()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["code"], "RADIUS");
    assert_eq!(e["trial"], 0);
}

fn det_args(out: &Path) -> Vec<String> {
    ["analyze-det", "--seed", "11", "--m", "3000", "--v", "0.5", "--beta", "0.1", "--generator", GAUSS2, "--mechanism", MEAN2,
     "--candidates", "100", "--n", "8", "--delta2", "1", "--output"]
        .iter()
        .map(|s| s.to_string())
        .chain([out.to_string_lossy().into_owned()])
        .collect()
}

fn rand_args(out: &Path) -> Vec<String> {
    let mech = json!({"kind":"subprocess","command":["python3", fixture()],"randomized":true,"seed_space_size":8,
                      "output_dim":2,"output_radius":5});
    let gen = json!({"kind":"subprocess","command":["python3", fixture()]});
    ["analyze-rand", "--seed", "5", "--m", "300", "--tau", "2", "--v", "1", "--c", "0.5"]
        .iter()
        .map(|s| s.to_string())
        .chain(["--generator".into(), gen.to_string(), "--mechanism".into(), mech.to_string()])
        .chain(["--output".into(), out.to_string_lossy().into_owned()])
        .collect()
}

fn verify_args(out: &Path) -> Vec<String> {
    let mech = r#"{"kind":"builtin-mean","output_dim":2,"output_radius":4}"#;
    ["verify", "--seed", "9", "--m", "40", "--tau1", "2", "--tau2", "3", "--c", "0.2", "--beta", "0.05", "--n-mc", "100",
     "--pool-size", "6", "--generator", GAUSS2, "--mechanism", mech, "--output"]
        .iter()
        .map(|s| s.to_string())
        .chain([out.to_string_lossy().into_owned()])
        .collect()
}

#[test]
fn reports_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    type Args = fn(&Path) -> Vec<String>;
    for (name, build) in [("det", det_args as Args), ("rand", rand_args), ("verify", verify_args)] {
        let mut bytes = Vec::new();
        for (i, workers) in ["1", "4", "4"].iter().enumerate() {
            let path = dir.path().join(format!("{name}-{i}.json"));
            let args = build(&path);
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = pacest(&args, &[("PACEST_WORKERS", workers)]);
            assert!(matches!(out.status.code(), Some(0 | 2)), "{name}: {}", String::from_utf8_lossy(&out.stderr));
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1], "{name}: workers 1 vs 4");
        assert_eq!(bytes[1], bytes[2], "{name}: repeated run");
    }
}

#[test]
fn report_round_trips_noise_to_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.json");
    let args = det_args(&path);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(pacest(&args, &[]).status.code(), Some(0));
    let report = read_report(&path).unwrap();
    let noise = report.noise.clone().unwrap();
    let raw: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let again: pacest::NoiseSpec = serde_json::from_value(raw["noise"].clone()).unwrap();
    assert_eq!(noise, again);
    assert_eq!(
        pacest::report::canonical_json(&report).unwrap().as_bytes(),
        std::fs::read(&path).unwrap().as_slice()
    );
    assert_eq!(report.pac_bounds.len(), 1);
    assert_eq!(report.pac_bounds[0].scenario, "identification");
    let baselines = report.baselines.unwrap();
    assert!(baselines["worst_case"]["zcdp"]["sigma"].as_f64().unwrap() > 0.0);
    // the echoed config holds the resolved c, and no run-control flags
    assert!(report.config["c"].as_f64().unwrap() > 0.0);
    assert!(report.config.get("output").is_none() && report.config.get("workers").is_none());
}

#[test]
fn env_workers_override_flag() {
    let out = pacest(&["bound", "--mi", "1", "--workers", "2"], &[("PACEST_WORKERS", "lots")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "INPUT");
    assert_eq!(pacest(&["bound", "--mi", "1", "--workers", "lots"], &[("PACEST_WORKERS", "auto")]).status.code(), Some(0));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let body = json!({
        "master_seed": 4, "m": 500, "v": 1.0, "beta": 0.2,
        "generator": serde_json::from_str::<Value>(GAUSS2).unwrap(),
        "mechanism": serde_json::from_str::<Value>(MEAN2).unwrap(),
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let cfg_s = cfg.to_string_lossy().into_owned();
    let out = pacest(&["analyze-det", "--config", &cfg_s, "--m", "800"], &[]);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert_eq!(r["config"]["m"], 800);
    assert_eq!(r["config"]["master_seed"], 4);

    // the echoed config is enough to re-run
    let echo = dir.path().join("echo.json");
    std::fs::write(&echo, r["config"].to_string()).unwrap();
    let again = pacest(&["analyze-det", "--config", &echo.to_string_lossy()], &[]);
    assert_eq!(again.stdout, out.stdout);

    let mut typo = body.clone();
    typo["gama"] = json!(0.1);
    std::fs::write(&cfg, typo.to_string()).unwrap();
    let out = pacest(&["analyze-det", "--config", &cfg_s], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("gama"));
}

#[test]
fn master_seed_is_mandatory() {
    let out = pacest(&["analyze-det", "--m", "100", "--v", "1", "--beta", "0.1", "--generator", GAUSS2, "--mechanism", MEAN2], &[]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["code"], "INPUT");
    assert!(e["message"].as_str().unwrap().contains("master_seed"));
    let bad_flag = pacest(&["analyze-det", "--bogus"], &[]);
    assert_eq!(bad_flag.status.code(), Some(1));
    assert_eq!(stderr_json(&bad_flag)["code"], "INPUT");
}

#[test]
fn caveats_exit_two() {
    // far fewer trials than the sample-complexity bound asks for
    let out = pacest(
        &["analyze-det", "--seed", "1", "--m", "50", "--v", "1", "--beta", "0.1", "--c", "1e-6", "--generator", GAUSS2,
          "--mechanism", MEAN2],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert!(r["certificate"]["caveats"].as_array().unwrap().iter().any(|c| c["kind"] == "confidence-unverified"));
}

#[test]
fn ledger_rounds_then_compose() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let l = ledger.to_string_lossy().into_owned();
    let init = pacest(
        &["ledger-init", "--ledger", &l, "--seed", "8", "--schedule", "0.5,1.0", "--m", "200", "--tau", "1", "--c", "0.5"],
        &[],
    );
    assert_eq!(init.status.code(), Some(0), "{}", String::from_utf8_lossy(&init.stderr));
    assert_eq!(stdout_json(&init)["details"]["rounds"], 2);
    let again = pacest(
        &["ledger-init", "--ledger", &l, "--seed", "8", "--schedule", "0.5", "--m", "200", "--tau", "2", "--c", "0.5"],
        &[],
    );
    assert_eq!(again.status.code(), Some(1));

    let adaptive = json!({"kind":"subprocess","command":["python3", fixture(), "adaptive"],"randomized":true,
                          "seed_space_size":"unbounded","output_dim":2,"output_radius":5})
    .to_string();
    let mut reports = Vec::new();
    for (t, mech) in [(1, MEAN2), (2, adaptive.as_str())] {
        let out_path = dir.path().join(format!("round{t}.json"));
        let out = pacest(
            &["ledger-step", "--ledger", &l, "--generator", GAUSS2, "--mechanism", mech, "--output", &out_path.to_string_lossy()],
            &[],
        );
        assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
        let r = read_report(&out_path).unwrap();
        assert_eq!(r.details["round"], t);
        assert_eq!(r.certificate.as_ref().unwrap().v_claimed, [0.5, 1.0][t - 1]);
        reports.push(out_path);
    }
    let over = pacest(&["ledger-step", "--ledger", &l, "--generator", GAUSS2, "--mechanism", MEAN2], &[]);
    assert_eq!(over.status.code(), Some(1));
    assert_eq!(stderr_json(&over)["code"], "BUDGET_EXHAUSTED");

    let list: Vec<String> = reports.iter().map(|p: &PathBuf| p.to_string_lossy().into_owned()).collect();
    let out = pacest(&["compose", "--mode", "independent", "--reports", &list.join(",")], &[]);
    assert!(matches!(out.status.code(), Some(0 | 2)));
    let r = stdout_json(&out);
    assert_eq!(r["certificate"]["v_claimed"], 1.5);
    assert_eq!(r["certificate"]["method"], "composed");
}

#[test]
fn shared_compose_rejects_deterministic_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.json");
    let args = det_args(&path);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(pacest(&args, &[]).status.code(), Some(0));
    let p = path.to_string_lossy().into_owned();
    let out = pacest(&["compose", "--mode", "shared", "--reports", &format!("{p},{p}")], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "COMPOSITION");
}

#[test]
fn baseline_command() {
    let out = pacest(
        &["baseline", "--r", "1", "--d", "4", "--v", "1", "--n", "100", "--delta2", "0.02", "--eigenvalues", "4,1,1,0.25"],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    let wc = &r["baselines"]["worst_case"];
    assert_eq!(wc["scale_lower"], 2.0);
    // σ = Δ₂·√(n/2v)
    let sigma = wc["zcdp"]["sigma"].as_f64().unwrap();
    assert!((sigma - 0.02 * 50f64.sqrt()).abs() < 1e-15);
    // v ≥ d/(n−1), so the trace is (Σ√λ)²/(2v) = 4.5²/2
    assert!((r["baselines"]["gaussian_mean_trace"].as_f64().unwrap() - 10.125).abs() < 1e-12);
}

#[test]
fn verify_calibrates_top_up() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.json");
    std::fs::write(&pool, "[[[0.0]], [[1.0]]]").unwrap();
    let mech = r#"{"kind":"builtin-identity","output_dim":1,"output_radius":1}"#;
    let out = pacest(
        &["verify", "--seed", "2", "--pool-file", &pool.to_string_lossy(), "--mechanism", mech, "--m", "100", "--tau1", "1",
          "--tau2", "2", "--c", "0.05", "--beta", "0.05", "--n-mc", "500", "--target-v", "0.2", "--alpha-max", "10"],
        &[],
    );
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    let alpha = r["details"]["calibration"]["alpha"].as_f64().unwrap();
    assert!(alpha > 0.0 && alpha < 10.0);
    assert!(r["certificate"]["v_claimed"].as_f64().unwrap() <= 0.2);
    // zero proposal: total noise is the top-up plus the floor
    let var = r["noise"]["variance"].as_f64().unwrap();
    assert!((var - (alpha + 0.05)).abs() < 1e-12, "{var}");

    std::fs::write(&pool, "[[[0.0]], [[1.0, 2.0]]]").unwrap();
    let bad = pacest(
        &["verify", "--seed", "2", "--pool-file", &pool.to_string_lossy(), "--mechanism", mech, "--m", "10", "--tau1", "1",
          "--tau2", "2", "--c", "0.05", "--beta", "0.05"],
        &[],
    );
    assert_eq!(bad.status.code(), Some(1));
}
