//! Acceptance criteria 1–12. Each test prints one PASS/FAIL line straight
//! to stdout (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use unlearn_forge::experiments::{method_ordering, OrderingConfig, OrderingReport};
use unlearn_forge::verify::{criterion_checks, verify_suite, Check, VerifyConfig};

fn report(criterion: u8, passed: bool, summary: &str) {
    let line = format!("criterion {criterion:>2}: {} {summary}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{}={:.3e} (limit {:.3e}{})", c.id, c.measured, c.threshold, if c.passed { "" } else { ", VIOLATED" }))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs one analytic criterion, reports it, and asserts it passed within
/// `budget` (when given).
fn analytic(criterion: u8, budget: Option<Duration>) {
    let t = Instant::now();
    let checks = criterion_checks(criterion, &VerifyConfig::default()).expect("criterion runs");
    let elapsed = t.elapsed();
    assert!(!checks.is_empty());
    let within = budget.is_none_or(|b| elapsed <= b);
    let passed = checks.iter().all(|c| c.passed) && within;
    let timing = match budget {
        Some(b) => format!(" [{:.2}s of {}s]", elapsed.as_secs_f64(), b.as_secs()),
        None => format!(" [{:.2}s]", elapsed.as_secs_f64()),
    };
    report(criterion, passed, &(describe(&checks) + &timing));
    for c in &checks {
        assert!(c.passed, "{} violated: {} ({})", c.theorem, c.claim, c.detail);
    }
    assert!(within, "criterion {criterion} took {elapsed:?}");
}

#[test]
fn criterion_01_quadratic_rcd_exactness() {
    analytic(1, Some(Duration::from_secs(1)));
}

#[test]
fn criterion_02_condition_number_bound() {
    analytic(2, Some(Duration::from_secs(10)));
}

#[test]
fn criterion_03_tail_rate() {
    analytic(3, Some(Duration::from_secs(10)));
}

#[test]
fn criterion_04_geometric_decay_and_gradient_dominance() {
    analytic(4, None);
}

#[test]
fn criterion_05_spectral_accuracy() {
    analytic(5, None);
}

#[test]
fn criterion_06_irp_stationary_law() {
    analytic(6, Some(Duration::from_secs(30)));
}

#[test]
fn criterion_07_condition_number_trends() {
    analytic(7, Some(Duration::from_secs(300)));
}

#[test]
fn criterion_08_limiting_cases() {
    analytic(8, None);
}

fn ordering() -> &'static (OrderingReport, Duration) {
    static CELL: OnceLock<(OrderingReport, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let r = method_ordering(&OrderingConfig::default()).expect("ordering experiment runs");
        (r, t.elapsed())
    })
}

#[test]
fn criterion_09_method_ordering() {
    let (r, elapsed) = ordering();
    let within = *elapsed <= Duration::from_secs(600);
    let (rt, rl, ft) = (r.mean_rcd["retrain"], r.mean_rcd["rl"], r.mean_rcd["ft"]);
    let (gn, gr) = (r.mean_avg_gap["ieu_noisy"], r.mean_avg_gap["rl"]);
    report(
        9,
        r.passed && within,
        &format!(
            "mean RCD retrain {rt:.4} > rl {rl:.4} > ft {ft:.4}; avg gap ieu_noisy {gn:.4} <= rl {gr:.4} [{:.1}s of 600s]",
            elapsed.as_secs_f64()
        ),
    );
    assert!(r.retrain_gt_rl, "RCD(retrain) {rt} <= RCD(rl) {rl}");
    assert!(r.rl_gt_ft, "RCD(rl) {rl} <= RCD(ft) {ft}");
    assert!(r.noisy_gap_le_rl, "gap(ieu_noisy) {gn} > gap(rl) {gr}");
    assert!(within);
}

#[test]
fn criterion_10_mia_brute_force() {
    analytic(10, None);
}

#[test]
fn criterion_11_retain_bound_monitor() {
    analytic(11, None);
}

#[test]
fn criterion_12_reproducibility() {
    let cfg = VerifyConfig::default();
    let a = serde_json::to_vec_pretty(&verify_suite(&cfg)).unwrap();
    let b = serde_json::to_vec_pretty(&verify_suite(&cfg)).unwrap();
    let first = serde_json::to_vec_pretty(&ordering().0).unwrap();
    let second = serde_json::to_vec_pretty(&method_ordering(&OrderingConfig::default()).unwrap()).unwrap();
    let (v_same, o_same) = (a == b, first == second);
    report(
        12,
        v_same && o_same,
        &format!("verify report {} bytes identical: {v_same}; ordering report {} bytes identical: {o_same}", a.len(), first.len()),
    );
    assert!(v_same && o_same);
}
