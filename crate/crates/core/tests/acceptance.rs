//! Acceptance criteria at their stated sample sizes and tolerances. Each test
//! prints one PASS/FAIL line.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use fragsim::experiments::{
    brownian_index_check, brownian_phi_check, cross_validate_brownian, invariant_suite, stable_beta_check,
    stable_immigration, stable_laplace_checks, theorem1, theorem2, Approximation, Check, ConvergenceReport, Regime,
    Setup, TimeScale,
};
use fragsim::measures::{BrownianDislocation, BrownianImmigration, RateFunction, StablePoolConfig};

const SEED: u64 = 20_240_601;

fn report_line(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    println!(
        "criterion {id:>2} {:<4} {name} ({detail}) [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
}

fn checks_line(id: u32, name: &str, checks: &[Check], started: Instant) {
    for c in checks {
        println!("    {} {}: {:.6} vs {:.6} ({})", if c.pass { "ok " } else { "BAD" }, c.name, c.estimate, c.target, c.tolerance);
    }
    let pass = checks.iter().all(|c| c.pass);
    report_line(id, name, pass, &format!("{} checks", checks.len()), started);
    assert!(pass);
}

fn verdict_line(id: u32, name: &str, report: &ConvergenceReport, started: Instant) {
    for v in &report.verdicts {
        println!("    {} {}: {}", if v.pass { "ok " } else { "BAD" }, v.criterion, v.detail);
    }
    for w in &report.warnings {
        println!("    warning: {w}");
    }
    report_line(id, name, report.passed(), &format!("{} verdicts", report.verdicts.len()), started);
    assert!(report.passed());
}

fn brownian_setup(alpha: f64) -> Setup {
    Setup::new(
        RateFunction::power(alpha),
        Arc::new(BrownianDislocation),
        Arc::new(BrownianImmigration),
        10_000,
        SEED,
    )
}

fn theorem1_report() -> &'static str {
    static REPORT: OnceLock<String> = OnceLock::new();
    REPORT.get_or_init(|| {
        let r = theorem1(&brownian_setup(-0.5), &[1e2, 1e3, 1e4], &[1.0]).unwrap();
        serde_json::to_string_pretty(&r).unwrap()
    })
}

#[test]
fn criterion_01_stable_laplace() {
    let t = Instant::now();
    let checks = stable_laplace_checks(100_000, 1e-6, SEED).unwrap();
    checks_line(1, "stable subordinator Laplace transform", &checks, t);
}

#[test]
fn criterion_02_phi_asymptotics() {
    let t = Instant::now();
    checks_line(2, "phi asymptotics of the Brownian measure", &[brownian_phi_check(1e6).unwrap()], t);
}

#[test]
fn criterion_03_regular_variation_index() {
    let t = Instant::now();
    checks_line(3, "regular-variation index recovery", &[brownian_index_check().unwrap()], t);
}

#[test]
fn criterion_04_theorem1_brownian() {
    let t = Instant::now();
    let report: ConvergenceReport = serde_json::from_str(theorem1_report()).unwrap();
    verdict_line(4, "large-mass limit, Brownian instance", &report, t);
}

#[test]
fn criterion_05_additive_rescaled() {
    let t = Instant::now();
    let report = theorem2(
        &brownian_setup(0.5),
        Regime::Immigration,
        TimeScale::Power { exponent: -1.0 },
        &[1e2, 1e3, 1e4],
        &[1.0],
    )
    .unwrap();
    verdict_line(5, "rescaled large-mass limit, additive instance", &report, t);
}

#[test]
fn criterion_06_excursion_cross_validation() {
    let t = Instant::now();
    let approx = Approximation {
        chip_floor: 1e-5,
        epsilon_power: 2.0,
        ..Approximation::default()
    };
    let report = cross_validate_brownian(10_000, 1 << 20, 0.5, approx, SEED).unwrap();
    verdict_line(6, "excursion construction vs engine", &report, t);
}

#[test]
fn criterion_07_stable_immigration_identity() {
    let t = Instant::now();
    let report = stable_immigration(StablePoolConfig::new(1.5, SEED), 10_000, 1.0, Approximation::default(), SEED).unwrap();
    verdict_line(7, "stable immigration vs subordinated representation", &report, t);
}

#[test]
fn criterion_08_stable_beta_laplace() {
    let t = Instant::now();
    checks_line(8, "stable(1/beta) Laplace transform", &[stable_beta_check(1.5, 100_000, 1e-6, SEED).unwrap()], t);
}

#[test]
fn criterion_09_invariants() {
    let t = Instant::now();
    checks_line(9, "invariant suites", &invariant_suite(1000, SEED).unwrap(), t);
}

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let first = theorem1_report();
    let again = serde_json::to_string_pretty(&theorem1(&brownian_setup(-0.5), &[1e2, 1e3, 1e4], &[1.0]).unwrap()).unwrap();
    let same = first == again;
    report_line(10, "byte-identical reports on rerun", same, &format!("{} bytes", first.len()), t);
    assert!(same);
}
