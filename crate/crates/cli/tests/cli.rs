use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use threshold_sparse::simulation::dgp::{gen_dataset, Design};
use threshold_sparse::simulation::experiment::replication_rng;
use threshold_sparse::simulation::summary::{Estimator, SummaryRow};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_threshold-sparse"));
    c.env_remove("THRESHOLD_SPARSE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn median_csv(dir: &Path) -> PathBuf {
    let (data, _) = gen_dataset(Design::Median61, 200, 6, 0.5, &mut replication_rng(5, 0)).unwrap();
    let mut text = String::from("y,q");
    for j in 0..data.p() {
        text.push_str(&format!(",x{}", j + 1));
    }
    text.push('\n');
    for i in 0..data.n() {
        text.push_str(&format!("{},{}", data.y()[i], data.q()[i]));
        for v in data.row(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write(dir, "data.csv", &text)
}

const FIT_CONFIG: &str = "loss=quantile gamma=0.5 lambda=0.03 mu=auto\n\
                          grid_mode=equispaced grid_n=21 tau_low=0.15 tau_high=0.85 direction=less\n";

fn small_sim_config(seed: u64) -> String {
    format!(
        "design=median61 n=150 p=5 replications=3 seed={seed}\n\
         grid_mode=equispaced grid_n=15 tau_low=0.2 tau_high=0.8\n\
         n_val=2000\n"
    )
}

fn summary_rows(path: &Path) -> Vec<SummaryRow> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn fit_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let data = median_csv(dir.path());
    let cfg = write(dir.path(), "fit.conf", FIT_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "fit",
        data.to_str().unwrap(),
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("fit.json")).unwrap()).unwrap();
    let tau = json["tau_tilde"].as_f64().unwrap();
    assert!((tau - 0.5).abs() < 0.1, "tau_tilde = {tau}");
    let active: Vec<&str> = json["active"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in ["beta:x1", "beta:x3", "delta:x2", "delta:x3"] {
        assert!(active.contains(&name), "{name} missing from {active:?}");
    }
    assert_eq!(json["profile"].as_array().unwrap().len(), 21);
    let profile = fs::read_to_string(out_dir.join("profile.csv")).unwrap();
    assert!(profile.starts_with("tau,objective,converged,kkt_violation\n"));
    assert_eq!(profile.lines().count(), 22);
}

#[test]
fn fit_missing_column_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "bad.csv", "y,x1,x2\n1,2,3\n2,3,4\n");
    let cfg = write(dir.path(), "fit.conf", FIT_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&["fit", data.to_str().unwrap(), "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`q`"), "{}", stderr(&out));
    assert!(!out_dir.exists());
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = TempDir::new().unwrap();
    let data = median_csv(dir.path());
    let cfg = write(dir.path(), "fit.conf", FIT_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "fit",
        data.to_str().unwrap(),
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "lambda=-1",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda"));
    assert!(!out_dir.exists());

    let sim = write(dir.path(), "sim.conf", &small_sim_config(1));
    for bad in ["replications=0", "colour=blue"] {
        let out = run(&["simulate", "-c", sim.to_str().unwrap(), "--set", bad, "-o", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(stderr(&out).contains(bad.split('=').next().unwrap()));
        assert!(!out_dir.exists());
    }
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sim = write(dir.path(), "sim.conf", &small_sim_config(1));
    let out = bin()
        .args(["simulate", "-c", sim.to_str().unwrap(), "-o", dir.path().join("o").to_str().unwrap()])
        .env("THRESHOLD_SPARSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("THRESHOLD_SPARSE_THREADS"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "t1.conf", "design=median61 p=50 n=400 replications=5 seed=11\n");
    let mut tables = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--threads", threads]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(String::from_utf8_lossy(&out.stdout).contains("Two-step"));
        assert!(out_dir.join("timings.csv").exists());
        tables.push((
            fs::read(out_dir.join("summary.md")).unwrap(),
            fs::read(out_dir.join("replications.csv")).unwrap(),
        ));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn report_reaggregates() {
    let dir = TempDir::new().unwrap();
    let mut runs = Vec::new();
    for seed in [3u64, 4] {
        let cfg = write(dir.path(), &format!("s{seed}.conf"), &small_sim_config(seed));
        let out_dir = dir.path().join(format!("sim{seed}"));
        let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--threads", "1"]);
        assert!(out.status.success(), "{}", stderr(&out));
        runs.push(out_dir);
    }

    // one file reproduces the simulate summary
    let single = dir.path().join("single");
    let repl = runs[0].join("replications.csv");
    let out = run(&["report", repl.to_str().unwrap(), "-o", single.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(single.join("summary.csv")).unwrap(),
        fs::read(runs[0].join("summary.csv")).unwrap()
    );
    assert_eq!(
        fs::read(single.join("summary.md")).unwrap(),
        fs::read(runs[0].join("summary.md")).unwrap()
    );

    // pooling two runs weights each by its replication count
    let pooled = dir.path().join("pooled");
    let r0 = runs[0].join("replications.csv");
    let r1 = runs[1].join("replications.csv");
    let out = run(&["report", r0.to_str().unwrap(), r1.to_str().unwrap(), "-o", pooled.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = summary_rows(&runs[0].join("summary.csv"));
    let b = summary_rows(&runs[1].join("summary.csv"));
    let c = summary_rows(&pooled.join("summary.csv"));
    assert_eq!(c.len(), 3);
    for ((ra, rb), rc) in a.iter().zip(&b).zip(&c) {
        assert_eq!(rc.estimator, ra.estimator);
        assert_eq!(rc.completed, ra.completed + rb.completed);
        let (wa, wb) = (ra.completed as f64, rb.completed as f64);
        let pool = |x: f64, y: f64| (wa * x + wb * y) / (wa + wb);
        assert!((rc.mean_excess_risk - pool(ra.mean_excess_risk, rb.mean_excess_risk)).abs() < 1e-12);
        assert!((rc.mean_l1 - pool(ra.mean_l1, rb.mean_l1)).abs() < 1e-12);
        if rc.estimator == Estimator::TwoStep {
            assert!((rc.mean_active - pool(ra.mean_active, rb.mean_active)).abs() < 1e-12);
            assert!((rc.coverage - pool(ra.coverage, rb.coverage)).abs() < 1e-12);
        }
    }
}

#[test]
fn report_rejects_empty_and_foreign_files() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    let foreign = write(dir.path(), "foreign.csv", "a,b\n1,2\n");
    for f in [&empty, &foreign] {
        let out = run(&["report", f.to_str().unwrap(), "-o", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{}", f.display());
    }
    let missing = dir.path().join("nope.csv");
    let out = run(&["report", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_emits_profile_from_fit() {
    let dir = TempDir::new().unwrap();
    let data = median_csv(dir.path());
    let cfg = write(dir.path(), "fit.conf", FIT_CONFIG);
    let fit_dir = dir.path().join("fit");
    let out = run(&["fit", data.to_str().unwrap(), "-c", cfg.to_str().unwrap(), "-o", fit_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let sim = write(dir.path(), "sim.conf", &small_sim_config(2));
    let sim_dir = dir.path().join("sim");
    assert!(run(&["simulate", "-c", sim.to_str().unwrap(), "-o", sim_dir.to_str().unwrap()]).status.success());

    let rep = dir.path().join("rep");
    let out = run(&[
        "report",
        sim_dir.join("replications.csv").to_str().unwrap(),
        "--fit",
        fit_dir.join("fit.json").to_str().unwrap(),
        "-o",
        rep.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(rep.join("profile.csv")).unwrap(),
        fs::read_to_string(fit_dir.join("profile.csv")).unwrap()
    );
}
