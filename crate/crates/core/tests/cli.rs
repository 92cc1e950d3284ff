use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn mixfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixfx")).args(args).env_remove("MIXFX_THREADS").output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The manifest is the last line of stdout.
fn manifest(out: &Output) -> Value {
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn edited_config(dir: &Path, base: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_slice(&std::fs::read(configs().join(base)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    path
}

fn small_simulation(dir: &Path) -> PathBuf {
    edited_config(dir, "run-m1.json", |v| {
        v["n"] = 5.into();
        v["dt"] = 0.01.into();
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_every_grid_point_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_simulation(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mixfx(&["simulate", "--config", path_str(&cfg), "--out-dir", path_str(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = std::fs::read_to_string(a.join("cohort.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("subject,t,X"));
    assert_eq!(csv.lines().count(), 1 + 5 * 101);
    assert_eq!(std::fs::read(a.join("cohort.csv")).unwrap(), std::fs::read(b.join("cohort.csv")).unwrap());
    let sidecar = read_json(&a.join("sidecar.json"));
    assert_eq!(sidecar["subjects"].as_array().unwrap().len(), 5);
    assert_eq!(sidecar["subjects"][0]["z"], 1);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_simulation(dir.path());
    let out = dir.path().join("run");
    for cmd in ["simulate", "suffstats", "fit"] {
        let o = mixfx(&[cmd, "--config", path_str(&cfg), "--out-dir", path_str(&out)]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let stats = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().next(), Some("subject,U,V,x0,T"));
    assert_eq!(stats.lines().count(), 6);
    let fit = read_json(&out.join("fit.json"));
    assert_eq!(fit["n"], 5);
    assert_eq!(fit["method"], "em");
}

#[test]
fn negative_variance_is_a_config_error_with_a_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), "run-m1.json", |v| v["theta0"]["omega2"][0] = (-1.0).into());
    let o = mixfx(&["simulate", "--config", path_str(&cfg), "--out-dir", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/theta0/omega2/0"));
    let m = manifest(&o);
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].as_str().unwrap().contains("/theta0/omega2/0"));
    assert!(!dir.path().join("cohort.csv").exists());
}

#[test]
fn unknown_and_mistyped_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), "run-m1.json", |v| v["fit"]["restart"] = 3.into());
    let o = mixfx(&["fit", "--config", path_str(&cfg), "--out-dir", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = edited_config(dir.path(), "run-m1.json", |v| v["fit"]["restarts"] = "ten".into());
    let o = mixfx(&["fit", "--config", path_str(&cfg), "--out-dir", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/fit/restarts"));
}

#[test]
fn too_few_mcmc_draws_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), "run-m1.json", |v| v["fit"]["mcmc"]["draws"] = 500.into());
    let stats = configs().join("example-stats-m1.csv");
    let o = mixfx(&["fit", "--config", path_str(&cfg), "--stats", path_str(&stats), "--method", "bayes"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/fit/mcmc/draws"));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("run-m1.json");
    let o = mixfx(&["fit", "--config", path_str(&cfg), "--out-dir", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

fn fit_bundled(method: &str, out: &Path) -> Value {
    let cfg = configs().join("run-m1.json");
    let stats = configs().join("example-stats-m1.csv");
    let o = mixfx(&[
        "fit",
        "--config",
        path_str(&cfg),
        "--stats",
        path_str(&stats),
        "--method",
        method,
        "--out-dir",
        path_str(out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    read_json(&out.join("fit.json"))
}

#[test]
fn em_trace_never_descends_on_the_bundled_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_bundled("em", dir.path());
    let n = fit["n"].as_f64().unwrap();
    let trace: Vec<f64> = fit["loglik_trace"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(trace.len() >= 2);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * n, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn em_and_direct_agree_for_one_component() {
    let dir = tempfile::tempdir().unwrap();
    let em = fit_bundled("em", &dir.path().join("em"));
    let direct = fit_bundled("direct", &dir.path().join("direct"));
    assert_eq!(direct["method"], "direct");
    for key in ["mu", "omega2"] {
        let (a, b) = (em["theta"][key][0].as_f64().unwrap(), direct["theta"][key][0].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-6, "{key}: {a} vs {b}");
    }
}

#[test]
fn bayes_writes_a_chain_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fit_bundled("bayes", dir.path());
    let chain = std::fs::read_to_string(dir.path().join("chain.csv")).unwrap();
    assert_eq!(chain.lines().next(), Some("iter,a_1,mu_1,omega2_1,log_post"));
    let summary = read_json(&dir.path().join("chain_summary.json"));
    let draws = summary["draws"].as_u64().unwrap();
    let burn = summary["burn_in"].as_u64().unwrap();
    assert_eq!(chain.lines().count() as u64, 1 + draws - burn);
    let acc = summary["acceptance_rate"].as_f64().unwrap();
    assert!(acc > 0.0 && acc < 1.0);
}

#[test]
fn bic_selection_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("run-m2.json");
    let stats = configs().join("example-stats-m2.csv");
    let o = mixfx(&["fit", "--config", path_str(&cfg), "--stats", path_str(&stats), "--out-dir", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("bic.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("M,loglik,bic,free_params"));
    assert_eq!(table.lines().count(), 4);
    let fit = read_json(&dir.path().join("fit.json"));
    assert_eq!(fit["theta"]["weights"].as_array().unwrap().len(), 2);
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn manifest_lists_every_output_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_simulation(dir.path());
    let out = dir.path().join("run");
    let o = mixfx(&["simulate", "--config", path_str(&cfg), "--out-dir", path_str(&out), "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(&o);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["seed"], 99);
    assert_eq!(m["config_sha256"], sha256_hex(&std::fs::read(&cfg).unwrap()));
    let outputs = m["outputs"].as_array().unwrap();
    let mut listed: Vec<String> = Vec::new();
    for entry in outputs {
        let path = PathBuf::from(entry["path"].as_str().unwrap());
        assert_eq!(entry["sha256"], sha256_hex(&std::fs::read(&path).unwrap()));
        listed.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    let mut on_disk: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    listed.sort();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    assert!(m["finished_unix_ms"].as_u64() >= m["started_unix_ms"].as_u64());
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("consistency-small.json");
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = mixfx(&["experiment", "--config", path_str(&cfg), "--out-dir", path_str(&out)]);
        // a failed verdict still writes the report
        assert!([Some(0), Some(4)].contains(&o.status.code()), "{}", String::from_utf8_lossy(&o.stderr));
        let mut report = read_json(&out.join("report.json"));
        for v in report["verdicts"].as_array().unwrap() {
            assert!(["pass", "fail", "skipped"].contains(&v["status"].as_str().unwrap()));
        }
        report["runtime_secs"] = 0.into();
        reports.push((report, std::fs::read(out.join("report.csv")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn info_describes_the_interface() {
    let o = mixfx(&["info"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    let body: Vec<&str> = stdout.lines().collect();
    let info: Value = serde_json::from_str(&body[..body.len() - 1].join("\n")).unwrap();
    assert_eq!(info["stats_csv"], serde_json::json!(["subject", "U", "V", "x0", "T"]));
    assert!(info["commands"].as_array().unwrap().contains(&"experiment".into()));
    assert_eq!(manifest(&o)["command"], "info");
}

#[test]
fn thread_count_comes_from_the_flag_or_the_environment() {
    assert_eq!(mixfx(&["--threads", "1", "info"]).status.code(), Some(0));
    assert_eq!(mixfx(&["info", "--threads", "0"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_mixfx")).arg("info").env("MIXFX_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_mixfx")).arg("info").env("MIXFX_THREADS", "1").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_arguments_exit_with_the_config_code() {
    assert_eq!(mixfx(&["fit", "--method", "newton"]).status.code(), Some(2));
    assert_eq!(mixfx(&["nonsense"]).status.code(), Some(2));
}
