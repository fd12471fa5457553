use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SOURCE: &str = "source.mixing = [[1, 1, 0], [0, 1, 1]]\nsource.alphas = [0.2, 0.3, 0.2]\n";

fn mamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mamp")).args(args).output().expect("binary runs")
}

fn run(dir: &Path, sub: &str, body: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.toml"));
    fs::write(&cfg, format!("kind = \"{sub}\"\n{SOURCE}{body}")).unwrap();
    let out = dir.join(format!("{sub}-out"));
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mamp(&args)
}

fn csv(dir: &Path, sub: &str, name: &str) -> String {
    fs::read_to_string(dir.join(format!("{sub}-out")).join(name)).unwrap()
}

fn manifest(dir: &Path, sub: &str) -> serde_json::Value {
    serde_json::from_str(&csv(dir, sub, "manifest.json")).unwrap()
}

#[test]
fn rid_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "rid", "", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = csv(dir.path(), "rid", "rid.csv");
    assert!(table.starts_with("quantity,value\nd_x,4.4000000000000000e-1\n"), "{table}");
    let m = manifest(dir.path(), "rid");
    assert_eq!(m["kind"], "rid");
    assert_eq!(m["outputs"][0], "rid.csv");
    assert!((m["results"]["d_joint"].as_f64().unwrap() - 0.688).abs() < 1e-12);
    assert_eq!(m["config"]["seed"], 0);
}

#[test]
fn config_errors_exit_2_with_field_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "kind = \"se-sweep\"\nsource.mixing = [[1, 0], [0, 1]]\nsource.alphas = [0.5, 2.0]\nse.wobble = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = mamp(&["se-sweep", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let fields: Vec<&str> = err["diagnostics"].as_array().unwrap().iter().map(|d| d["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"source.alphas[1]"), "{fields:?}");
    assert!(fields.contains(&"se.wobble"), "{fields:?}");
    assert!(out_dir.join("error.json").exists());
}

#[test]
fn kind_mismatch_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rid.toml");
    fs::write(&cfg, format!("kind = \"rid\"\n{SOURCE}")).unwrap();
    let out_dir = dir.path().join("out");
    let out = mamp(&["se-sweep", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    let out = mamp(&["rid", "--config", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    fs::write(&cfg, format!("kind = \"mamp-run\"\n{SOURCE}rates.rho_x = 0.5\nrates.rho_y = 0.7\n")).unwrap();
    let out = mamp(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["run.n = 5000", "run.seeds = 10", "run.schedule = \"oracle\"", "mc.samples = 100000"] {
        assert!(text.contains(key), "{key} in\n{text}");
    }
}

const SWEEP: &str = "mc.samples = 2000\ngrid.rho_x = [0.5, 1.0]\ngrid.rho_y = [0.3, 1.0]\nse.max_iter = 60\n";

#[test]
fn sweep_is_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(a.path(), "se-sweep", SWEEP, &["--threads", "1"]).status.success());
    assert!(run(b.path(), "se-sweep", SWEEP, &["--threads", "3"]).status.success());
    let ga = csv(a.path(), "se-sweep", "se_grid.csv");
    assert_eq!(ga, csv(b.path(), "se-sweep", "se_grid.csv"));
    assert_eq!(ga.lines().count(), 5);
    assert!(ga.starts_with("rho_x,rho_y,tau_x,tau_y,distortion,converged,iterations\n"));
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), "se-sweep", SWEEP, &["--seed", "42"]).status.success());
    let m = manifest(dir.path(), "se-sweep");
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["seeds"]["mc_seed"], 42);
}

#[test]
fn mamp_run_traces_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let body = "mc.samples = 2000\nrates.rho_x = 0.8\nrates.rho_y = 0.8\nrun.n = 300\nrun.seeds = 2\nrun.max_iter = 6\nrun.stop_tol = 0.0\n";
    let out = run(dir.path(), "mamp-run", body, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = csv(dir.path(), "mamp-run", "mamp_trace.csv");
    assert_eq!(trace.lines().count(), 1 + 2 * 6);
    let summary = csv(dir.path(), "mamp-run", "mamp_summary.csv");
    assert_eq!(summary.lines().count(), 1 + 6);
    let m = manifest(dir.path(), "mamp-run");
    assert_eq!(m["seeds"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn fresh_check_reports_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let body = "mc.samples = 2000\nrates.rho_x = 0.6\nrates.rho_y = 0.6\nfresh.n = 400\nfresh.iterations = 3\nfresh.seeds = 2\n";
    assert!(run(dir.path(), "fresh-se-check", body, &[]).status.success());
    assert_eq!(csv(dir.path(), "fresh-se-check", "fresh_se.csv").lines().count(), 1 + 6);
    assert!(manifest(dir.path(), "fresh-se-check")["results"]["max_relative_deviation"].is_number());
}

#[test]
fn coupled_run_writes_long_wave_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = "mc.samples = 2000\ncoupling.l_c = 5\ncoupling.w = 1\ncoupling.seed_blocks = 1\n\
                coupling.iterations = 8\ncoupling.delta_x = 0.9\ncoupling.delta_y = 0.9\n\
                coupling.n_block = 60\ncoupling.runs = 2\ncoupling.max_iter = 8\n";
    let out = run(dir.path(), "coupled-run", body, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wave = csv(dir.path(), "coupled-run", "wave.csv");
    let mut lines = wave.lines();
    assert_eq!(lines.next(), Some("t,terminal,block,psi,empirical_mse"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let states = manifest(dir.path(), "coupled-run")["results"]["iterations"].as_u64().unwrap() as usize + 1;
    assert_eq!(rows.len(), states * 2 * 5);
    assert_eq!(rows[0][3], "inf");
    // ψ(t) is compared against the estimate two steps earlier
    let at = |t: &str| rows.iter().find(|r| r[0] == t).unwrap()[4];
    assert_eq!(at("1"), "");
    assert!(!at("2").is_empty());
}

#[test]
fn phase_boundary_writes_boundary_and_pentagon() {
    let dir = tempfile::tempdir().unwrap();
    let body = "mc.samples = 2000\ncoupling.l_c = 5\ncoupling.w = 1\ncoupling.seed_blocks = 1\n\
                coupling.iterations = 40\nboundary.delta_x = [0.9]\nboundary.lo = 0.1\nboundary.hi = 1.0\nboundary.tol = 0.1\n";
    let out = run(dir.path(), "phase-boundary", body, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = csv(dir.path(), "phase-boundary", "boundary.csv");
    assert!(b.starts_with("delta_x,delta_y_boundary,converged_T,delta_y_failing,anomaly\n"));
    assert_eq!(b.lines().count(), 2);
    let p = csv(dir.path(), "phase-boundary", "pentagon.csv");
    assert_eq!(p.lines().count(), 5);
}
