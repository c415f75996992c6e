//! Exit criteria for the estimator and the Monte Carlo harness.
//!
//! Runs as a plain binary so every criterion prints one `PASS`/`FAIL` line
//! regardless of the others. Exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use threshold_sparse::config::Config;
use threshold_sparse::penalty::penalty_weights;
use threshold_sparse::simulation::experiment::{run_experiment, ExperimentConfig, ExperimentOutput};
use threshold_sparse::simulation::summary::{write_csv, Estimator, SummaryRow};
use threshold_sparse::solver::{lambda_max, penalized_objective, solve_penalized};
use threshold_sparse::{Dataset, IndicatorDirection, LossSpec, SolverOptions, ThresholdDesign};

const RUNTIME_BUDGET: Duration = Duration::from_secs(30 * 60);

fn config(name: &str) -> Config {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    Config::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn experiment(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let mut cfg = config(name);
    cfg.apply_overrides(overrides).unwrap();
    cfg.experiment_config().unwrap()
}

fn run(cfg: &ExperimentConfig) -> (ExperimentOutput, Duration) {
    let start = Instant::now();
    let out = run_experiment(cfg, 0).unwrap_or_else(|e| panic!("{}: {e}", cfg.label()));
    (out, start.elapsed())
}

fn row(out: &ExperimentOutput, est: Estimator) -> &SummaryRow {
    out.summary.iter().find(|r| r.estimator == est).unwrap()
}

fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

/// Collects the individual checks of one criterion.
struct Criterion {
    name: &'static str,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    fn within(&mut self, label: &str, value: f64, lo: f64, hi: f64) {
        let ok = value >= lo && value <= hi;
        self.checks.push((format!("{label}={} in [{lo}, {hi}]", num(value)), ok));
    }

    fn at_most(&mut self, label: &str, value: f64, hi: f64) {
        self.checks.push((format!("{label}={} <= {hi}", num(value)), value <= hi));
    }

    fn at_least(&mut self, label: &str, value: f64, lo: f64) {
        self.checks.push((format!("{label}={} >= {lo}", num(value)), value >= lo));
    }

    fn holds(&mut self, label: String, ok: bool) {
        self.checks.push((label, ok));
    }

    fn report(self) -> bool {
        let ok = self.checks.iter().all(|(_, ok)| *ok);
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|(s, ok)| if *ok { s.clone() } else { format!("{s} [X]") })
            .collect();
        println!("{} {}: {}", if ok { "PASS" } else { "FAIL" }, self.name, detail.join("; "));
        ok
    }
}

struct TableBounds {
    risk: (f64, f64),
    active: (f64, f64),
    coverage: f64,
    l1: (f64, f64),
    l1_off: Option<f64>,
    tau: f64,
}

fn table_criterion(name: &'static str, out: &ExperimentOutput, elapsed: Duration, b: &TableBounds) -> bool {
    let est = row(out, Estimator::TwoStep);
    let mut c = Criterion::new(name);
    c.holds(format!("replications={}", est.completed), est.completed == 200);
    c.within("risk", est.mean_excess_risk, b.risk.0, b.risk.1);
    c.within("E[J]", est.mean_active, b.active.0, b.active.1);
    c.at_least("P(cover)", est.coverage, b.coverage);
    c.within("E|a-a0|_1", est.mean_l1, b.l1.0, b.l1.1);
    if let Some(off) = b.l1_off {
        c.at_most("off-support l1", est.mean_l1_off_support, off);
    }
    c.at_most("E|tau_hat-tau0|", est.mean_tau_abs_err, b.tau);
    c.holds(
        format!("runtime={:.0}s <= {}s", elapsed.as_secs_f64(), RUNTIME_BUDGET.as_secs()),
        elapsed <= RUNTIME_BUDGET,
    );
    c.report()
}

fn oracle_criterion(median: &ExperimentOutput, logistic: &ExperimentOutput) -> bool {
    let mut c = Criterion::new("3 oracle ordering");
    for (label, out, cap) in [("median", median, 0.006), ("logistic", logistic, 0.012)] {
        let o1 = row(out, Estimator::Oracle1).mean_excess_risk;
        let o2 = row(out, Estimator::Oracle2).mean_excess_risk;
        let est = row(out, Estimator::TwoStep).mean_excess_risk;
        c.holds(
            format!("{label}: O1={o1:.4} <= O2={o2:.4} <= two-step={est:.4}"),
            o1 <= o2 && o2 <= est,
        );
        c.at_most(&format!("{label} O1"), o1, cap);
    }
    c.report()
}

fn rate_criterion() -> bool {
    let (small, _) = run(&experiment("rate_n200.conf", &[]));
    let (large, _) = run(&experiment("rate_n800.conf", &[]));
    let e_small = row(&small, Estimator::TwoStep).mean_tau_abs_err;
    let e_large = row(&large, Estimator::TwoStep).mean_tau_abs_err;
    let mut c = Criterion::new("4 threshold rate n=200 vs n=800");
    c.holds(format!("E|tau_hat-tau0| = {e_small:.5} vs {e_large:.5}"), true);
    let ratio = if e_large > 0.0 { e_small / e_large } else { f64::INFINITY };
    c.at_least("ratio", ratio, 3.0);
    c.report()
}

fn no_change_criterion() -> bool {
    let (out, _) = run(&experiment("no_change.conf", &[]));
    let mut c = Criterion::new("5 no-change diagnostic");
    let failed = out.records.iter().filter(|r| r.failed).count();
    c.holds(format!("failed replications={failed}"), failed == 0);
    c.holds(format!("replications={}", out.records.len()), out.records.len() == 100);
    let zero = out.records.iter().filter(|r| !r.failed && r.n_active_delta == 0).count();
    c.at_least("P(delta_tilde = 0)", zero as f64 / out.records.len() as f64, 0.90);
    c.report()
}

// solver battery oracles, independent of the library's solvers

fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let mut best = lo;
    for k in 0..=steps {
        let z = lo + k as f64 * h;
        if f(z) < f(best) {
            best = z;
        }
    }
    let (mut a, mut b) = (best - h, best + h);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn grid_min_2d(f: impl Fn(f64, f64) -> f64, bound: f64) -> f64 {
    let (mut c0, mut c1, mut half) = (0.0, 0.0, bound);
    let mut best = f64::INFINITY;
    let steps = 200;
    for _ in 0..3 {
        let h = 2.0 * half / steps as f64;
        let (mut b0, mut b1) = (c0, c1);
        for i in 0..=steps {
            for k in 0..=steps {
                let (u, v) = (c0 - half + i as f64 * h, c1 - half + k as f64 * h);
                let val = f(u, v);
                if val < best {
                    best = val;
                    b0 = u;
                    b1 = v;
                }
            }
        }
        c0 = b0;
        c1 = b1;
        half = 5.0 * h;
    }
    best
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize, logistic: bool) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut r = vec![1.0];
            r.extend((1..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
            r
        })
        .collect();
    let q: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y: Vec<f64> = rows
        .iter()
        .zip(&q)
        .map(|(r, &qi)| {
            let idx = 0.5 * r.iter().sum::<f64>() + if qi < 0.5 { r[0] } else { 0.0 };
            let e: f64 = rng.sample(StandardNormal);
            if logistic {
                f64::from(idx + e > 0.0)
            } else {
                idx + e
            }
        })
        .collect();
    Dataset::from_rows(y, &rows, q).unwrap()
}

fn solver_criterion() -> bool {
    let start = Instant::now();
    let mut c = Criterion::new("6 solver correctness");
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let opts = SolverOptions::default();

    let mut worst_prox: f64 = 0.0;
    for case in 0..1000 {
        let spec = if case % 2 == 0 {
            LossSpec::quantile(rng.random_range(0.05..0.95)).unwrap()
        } else {
            LossSpec::logistic()
        };
        let y = if case % 2 == 0 {
            rng.random_range(-5.0..5.0)
        } else {
            f64::from(rng.random::<bool>())
        };
        let v = rng.random_range(-5.0..5.0);
        let scale = rng.random_range(0.01..4.0);
        let obj = |z: f64| {
            let loss = if case % 2 == 1 {
                (1.0 + z.exp()).ln() - y * z
            } else {
                let u = y - z;
                u * (spec.gamma - if u < 0.0 { 1.0 } else { 0.0 })
            };
            scale * loss + 0.5 * (z - v).powi(2)
        };
        let oracle = golden_min(obj, -15.0, 15.0);
        worst_prox = worst_prox.max((spec.prox(y, v, scale) - oracle).abs());
    }
    c.at_most("prox error over 1000 cases", worst_prox, 1e-6);

    let mut worst_kkt: f64 = 0.0;
    let mut all_converged = true;
    for case in 0..50 {
        let logistic = case % 2 == 1;
        let spec = if logistic {
            LossSpec::logistic()
        } else {
            LossSpec::quantile(rng.random_range(0.1..0.9)).unwrap()
        };
        let (n, p) = (rng.random_range(30..120), rng.random_range(1..8));
        let d = random_data(&mut rng, n, p, logistic);
        let des = ThresholdDesign::new(&d, rng.random_range(0.2..0.8), IndicatorDirection::Greater).unwrap();
        let w = penalty_weights(&des);
        let lambda = rng.random_range(0.005..0.2);
        let r = solve_penalized(&des, &spec, lambda, &w, None, None, &opts).unwrap();
        all_converged &= r.converged;
        if r.converged {
            worst_kkt = worst_kkt.max(r.kkt_violation);
        }
    }
    c.holds("all 50 battery solves converged".into(), all_converged);
    c.at_most("worst KKT violation", worst_kkt, 1e-5);

    let mut worst_gap: f64 = 0.0;
    for case in 0..6 {
        let n = 8 + 2 * case;
        let spec = LossSpec::quantile([0.5, 0.25, 0.75][case % 3]).unwrap();
        let lambda = [0.0, 0.05, 0.2][case % 3];
        // p = 2 with an empty regime leaves two free coordinates
        let (d, tau) = if case % 2 == 0 {
            (random_data(&mut rng, n, 1, false), 0.5)
        } else {
            (random_data(&mut rng, n, 2, false), 1.5)
        };
        let des = ThresholdDesign::new(&d, tau, IndicatorDirection::Greater).unwrap();
        let w = penalty_weights(&des);
        let free: Vec<usize> = (0..des.width()).filter(|&j| !w.zero_locked()[j]).collect();
        let brute = grid_min_2d(
            |u, v| {
                let mut a = vec![0.0; des.width()];
                a[free[0]] = u;
                a[free[1]] = v;
                penalized_objective(&des, &spec, lambda, &w, None, &a).unwrap()
            },
            6.0,
        );
        let r = solve_penalized(&des, &spec, lambda, &w, None, None, &opts).unwrap();
        worst_gap = worst_gap.max((r.objective - brute).abs());
    }
    c.at_most("brute-force objective gap", worst_gap, 1e-3);

    let d = random_data(&mut rng, 150, 6, true);
    let des = ThresholdDesign::new(&d, 0.5, IndicatorDirection::Less).unwrap();
    let w = penalty_weights(&des);
    let r = solve_penalized(&des, &LossSpec::logistic(), 0.01, &w, None, None, &opts).unwrap();
    let monotone = r.objective_trace.windows(2).all(|p| p[1] <= p[0] + 1e-12);
    c.holds(format!("FISTA trace monotone over {} steps", r.objective_trace.len()), monotone);

    let mut zeros = true;
    for (spec, logistic) in [(LossSpec::median(), false), (LossSpec::logistic(), true)] {
        let d = random_data(&mut rng, 80, 4, logistic);
        let des = ThresholdDesign::new(&d, 0.4, IndicatorDirection::Greater).unwrap();
        let w = penalty_weights(&des);
        let lmax = lambda_max(&des, &spec, &w);
        let r = solve_penalized(&des, &spec, 1.001 * lmax, &w, None, None, &opts).unwrap();
        zeros &= r.alpha.iter().all(|&a| a == 0.0);
    }
    c.holds("lambda >= lambda_max gives the zero fit".into(), zeros);

    let elapsed = start.elapsed();
    c.holds(format!("runtime={:.1}s < 120s", elapsed.as_secs_f64()), elapsed < Duration::from_secs(120));
    c.report()
}

fn determinism_criterion() -> bool {
    let cfg = experiment("table1_p50.conf", &["replications=10"]);
    let bytes = |threads| {
        let out = run_experiment(&cfg, threads).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf).unwrap();
        buf
    };
    let one = bytes(1);
    let eight = bytes(8);
    let mut c = Criterion::new("7 determinism across thread counts");
    c.holds(
        format!("replications.csv identical for 1 and 8 threads ({} bytes)", one.len()),
        one == eight,
    );
    c.report()
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| id.contains(f.as_str()));
    let mut ok = true;

    if wanted("solver") {
        ok &= solver_criterion();
    }
    if wanted("determinism") {
        ok &= determinism_criterion();
    }
    if wanted("table") || wanted("oracle") {
        let (median, t_median) = run(&experiment("table1_p50.conf", &[]));
        let (logistic, t_logistic) = run(&experiment("table2_p50.conf", &[]));
        ok &= table_criterion(
            "1 median design p=50",
            &median,
            t_median,
            &TableBounds {
                risk: (0.003, 0.010),
                active: (4.3, 5.4),
                coverage: 0.97,
                l1: (0.32, 0.50),
                l1_off: Some(0.06),
                tau: 0.010,
            },
        );
        ok &= table_criterion(
            "2 logistic design p=50",
            &logistic,
            t_logistic,
            &TableBounds {
                risk: (0.010, 0.028),
                active: (3.9, 5.0),
                coverage: 0.88,
                l1: (1.6, 2.4),
                l1_off: None,
                tau: 0.05,
            },
        );
        ok &= oracle_criterion(&median, &logistic);
    }
    if wanted("rate") {
        ok &= rate_criterion();
    }
    if wanted("nochange") {
        ok &= no_change_criterion();
    }

    if !ok {
        eprintln!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
}
