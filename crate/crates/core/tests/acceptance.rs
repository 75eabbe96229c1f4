//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dwrl_core::data::generate_channel_cue;
use dwrl_core::eval::run_comparison;
use dwrl_core::verify::{self, CheckResult, VerifySettings};
use dwrl_core::{Method, RunConfig, Split};

struct Criterion {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn from_checks(id: u8, title: &'static str, checks: &[CheckResult], elapsed: Duration, limit: Option<Duration>) -> Criterion {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let mut detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{}={} ({:.3e} vs {:.1e})", c.name, if c.passed { "ok" } else { "FAIL" }, c.measured, c.tolerance))
        .collect();
    detail.push(match limit {
        Some(l) => format!("{:.1}s of {}s", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.1}s", elapsed.as_secs_f64()),
    });
    Criterion {
        id,
        title,
        passed: in_time && checks.iter().all(|c| c.passed),
        detail: detail.join("; "),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn benchmark_table(cfg: &RunConfig, threads: usize) -> dwrl_core::ComparisonTable {
    let train = generate_channel_cue(&cfg.task, cfg.data.train_count, Split::Train, cfg.data.seed).unwrap();
    let test = generate_channel_cue(&cfg.task, cfg.data.test_count, Split::Test, cfg.data.seed).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_comparison(&cfg.train, &train, &test, &cfg.eval.methods, &cfg.eval.seeds, &cfg.digest()).unwrap())
}

fn main() -> ExitCode {
    let settings = VerifySettings::default();
    let mut results = Vec::new();

    let (c, t) = timed(|| verify::check_gradient_identity(&settings).unwrap());
    results.push(from_checks(1, "gradient identity", &[c], t, Some(Duration::from_secs(60))));

    let (c, t) = timed(|| verify::check_estimator_consistency(&settings).unwrap());
    results.push(from_checks(2, "estimator consistency", &c, t, Some(Duration::from_secs(300))));

    let (c, t) = timed(|| verify::check_weight_identities(&settings).unwrap());
    results.push(from_checks(3, "weight identities", &c, t, None));

    let (c, t) = timed(|| verify::check_alternating_updates(&settings).unwrap());
    results.push(from_checks(4, "alternating-update correctness", &c, t, None));

    let (c, t) = timed(|| verify::check_descent(&settings).unwrap());
    results.push(from_checks(5, "descent property", &[c], t, None));

    let cfg = RunConfig::default();
    let (table, t) = timed(|| benchmark_table(&cfg, rayon::current_num_threads()));
    let median = |m: Method| table.summary(m).map(|s| s.median_accuracy).unwrap();
    let (dwrl, bt, plain) = (median(Method::Dwrl), median(Method::Bt), median(Method::NoMisalign));
    let ordering = [
        CheckResult {
            name: "dwrl>=bt".into(),
            passed: dwrl >= bt,
            measured: bt - dwrl,
            tolerance: 0.0,
            detail: String::new(),
        },
        CheckResult {
            name: "dwrl-no_misalign>=0.02".into(),
            passed: dwrl - plain >= 0.02,
            measured: 0.02 - (dwrl - plain),
            tolerance: 0.0,
            detail: String::new(),
        },
    ];
    let mut c6 = from_checks(6, "benchmark ordering", &ordering, t, Some(Duration::from_secs(900)));
    let medians: Vec<String> = table
        .summaries
        .iter()
        .map(|s| format!("{}={:.4}", s.method, s.median_accuracy))
        .collect();
    c6.detail = format!("medians {}; {}", medians.join(" "), c6.detail);
    results.push(c6);

    let (c, t) = timed(|| verify::check_metrics(&settings).unwrap());
    results.push(from_checks(7, "metric suite", &c, t, None));

    let (again, t) = timed(|| benchmark_table(&cfg, 1));
    let first = table.to_csv();
    let identical = first == again.to_csv();
    results.push(Criterion {
        id: 8,
        title: "ablate reproducibility",
        passed: identical,
        detail: format!(
            "{} table bytes, rerun on 1 thread identical={identical}; {:.1}s",
            first.len(),
            t.as_secs_f64()
        ),
    });

    for r in &results {
        println!(
            "{} criterion {} ({}): {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.title,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
