use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mscr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = mscr(args);
    assert!(
        out.status.success(),
        "mscr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// A short, coarse survey that fits in seconds.
fn small_simulation(dir: &Path) {
    ok(&["simulate", "--N", "10", "--T", "4", "--seed", "7", "--out", dir.to_str().unwrap()]);
}

fn small_fit(dir: &Path, kind: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "fit".to_string(),
        "--traps".into(),
        p(dir, "traps.csv"),
        "--captures".into(),
        p(dir, "captures.csv"),
        "--T".into(),
        "4".into(),
        "--kind".into(),
        kind.into(),
        "--spacing".into(),
        "0.5".into(),
        "--B".into(),
        "20".into(),
        "--out".into(),
        dir.to_str().unwrap().into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs)
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let names = ["traps.csv", "captures.csv", "truth.csv", "simulate.json"];
    small_simulation(dir.path());
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(dir.path().join(n)).unwrap()).collect();
    small_simulation(dir.path());
    for (name, bytes) in names.iter().zip(&first) {
        assert_eq!(&fs::read(dir.path().join(name)).unwrap(), bytes, "{name} differs");
    }
    let header = fs::read_to_string(dir.path().join("captures.csv")).unwrap();
    assert!(header.starts_with("individual_id,time_days,trap_id\n"));
}

#[test]
fn ou_simulation_writes_trajectories() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "simulate", "--model", "ou", "--N", "5", "--T", "1", "--seed", "3", "--trajectories", "--out",
        dir.path().to_str().unwrap(),
    ]);
    let traj = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    // 144 ten-minute steps plus the starting position, for each of 5 individuals
    assert_eq!(traj.lines().count(), 1 + 5 * 145);
    let meta = json(&dir.path().join("simulate.json"));
    assert_eq!(meta["config"]["resolved"]["model"]["generator"], "ou");
}

#[test]
fn fit_both_kinds_then_surfaces() {
    let dir = TempDir::new().unwrap();
    small_simulation(dir.path());
    let out = small_fit(dir.path(), "both", &["--seed", "7"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("delta AIC"), "{stdout}");

    let m = json(&dir.path().join("fit_MSCR.json"));
    let s = json(&dir.path().join("fit_SCR.json"));
    let c = json(&dir.path().join("comparison.json"));
    assert_eq!(m["command"], "fit");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["result"]["quadrature"]["time_intervals_b"], 20);
    assert!(s["result"]["params_hat"]["beta"].is_null());
    let n_obs = m["result"]["n_observed"].as_f64().unwrap();
    assert!(m["result"]["n_hat"].as_f64().unwrap() >= n_obs);
    let diff = c["result"]["delta_aic_scr_minus_mscr"].as_f64().unwrap();
    let expected = s["result"]["aic"].as_f64().unwrap() - m["result"]["aic"].as_f64().unwrap();
    assert!((diff - expected).abs() < 1e-9);

    let fit_path = p(dir.path(), "fit_MSCR.json");
    let (traps, captures) = (p(dir.path(), "traps.csv"), p(dir.path(), "captures.csv"));
    let surf = dir.path().join("surfaces");
    let surf_dir = surf.to_str().unwrap();
    ok(&[
        "ac-surface", "--fit", &fit_path, "--traps", &traps, "--captures", &captures, "--individual", "all", "--out",
        surf_dir,
    ]);
    let n = n_obs as usize;
    let csvs: Vec<_> = fs::read_dir(&surf)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), n);
    let sidecar_path = fs::read_dir(&surf)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .unwrap();
    let sidecar_text = fs::read_to_string(&sidecar_path).unwrap();
    assert_eq!(sidecar_text.lines().count(), 1);
    let sidecar: Value = serde_json::from_str(&sidecar_text).unwrap();
    assert!((sidecar["result"]["mass"].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let out = mscr(&[
        "ac-surface", "--fit", &fit_path, "--traps", &traps, "--captures", &captures, "--individual", "nobody", "--out",
        surf_dir,
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("nobody"));
}

#[test]
fn scr_fit_reports_ignored_beta_init() {
    let dir = TempDir::new().unwrap();
    small_simulation(dir.path());
    small_fit(dir.path(), "SCR", &["--beta-init", "2"]);
    let s = json(&dir.path().join("fit_SCR.json"));
    let warnings = s["result"]["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("--beta-init")));
    assert!(!dir.path().join("comparison.json").exists());
}

#[test]
fn unknown_trap_is_a_data_error_with_location() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("traps.csv"), "trap_id,x_km,y_km\nA,0,0\nB,1,0\n").unwrap();
    fs::write(
        dir.path().join("captures.csv"),
        "individual_id,time_days,trap_id\nm1,0.5,A\nm1,1.5,X99\n",
    )
    .unwrap();
    let (traps, captures) = (p(dir.path(), "traps.csv"), p(dir.path(), "captures.csv"));
    let out = mscr(&["fit", "--traps", &traps, "--captures", &captures, "--T", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["error"]["line"], 3);
    assert_eq!(err["error"]["column"], "trap_id");
    assert!(err["error"]["message"].as_str().unwrap().contains("X99"));
}

#[test]
fn missing_file_and_bad_arguments_exit_codes() {
    let out = mscr(&["fit", "--traps", "/nonexistent/t.csv", "--captures", "/nonexistent/c.csv", "--T", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["error"]["category"], "io");
    let out = mscr(&["simulate", "--seed", "1", "--T", "-3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mscr(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mesh_info_describes_default_layout() {
    let out = ok(&["mesh-info"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["traps"], 30);
    assert_eq!(v["points"], 2601);
    assert!((v["area_km2"].as_f64().unwrap() - 104.04).abs() < 1e-9);
}

#[test]
fn sim_study_is_independent_of_worker_count() {
    let run = |workers: &str| {
        let dir = TempDir::new().unwrap();
        ok(&[
            "--workers", workers, "sim-study", "--N", "10", "--T", "4", "--seed", "5", "--replicates", "3", "--spacing",
            "0.5", "--B", "20", "--out", dir.path().to_str().unwrap(),
        ]);
        let v = json(&dir.path().join("study.json"));
        assert!(fs::read_to_string(dir.path().join("study.txt")).unwrap().contains("% Coverage"));
        serde_json::to_string(&v["result"]).unwrap()
    };
    assert_eq!(run("1"), run("8"));
}
