//! Acceptance suite: one PASS/FAIL line per criterion, then an assertion.
//!
//! Run with `cargo test -p decayinv --test acceptance -- --nocapture` to see
//! the lines.

use std::time::{Duration, Instant};

use decayinv::bounds::{
    besov_bound, constant_cr_numeric, dd_domain_bound, explicit_bound_cr, explicit_bound_jr, ConstantMode,
};
use decayinv::besov_smoothness::PExponent;
use decayinv::experiments::{
    run_besov_report, run_dd_sharpness, run_jaffard_check, run_quotient_verify, run_toeplitz_sharpness, ExperimentConfig,
    ExperimentKind,
};
use decayinv::lattice_matrix::{make_toeplitz, IndexWindow, ToeplitzSymbol};
use decayinv::norms_weights::{a_m_bruteforce, cv_norm, SmoothnessSequence, Weight};
use decayinv::special::{integral_test_bracket, poly_geometric_sum};

fn report(n: u32, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2}: {verdict} ({:.3} s) {detail}", elapsed.as_secs_f64());
}

fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

/// `Σ_{k≥0}(1+k)^r q^k` for integer `r` via `Σ_j j^r q^{j−1}` and the
/// Eulerian-number closed forms.
fn poly_geometric_closed_form(q: f64, r: u32) -> f64 {
    match r {
        1 => 1.0 / (1.0 - q).powi(2),
        2 => (1.0 + q) / (1.0 - q).powi(3),
        3 => (1.0 + 4.0 * q + q * q) / (1.0 - q).powi(4),
        _ => unreachable!(),
    }
}

#[test]
fn criterion_01_series_bracket() {
    let start = Instant::now();
    let mut misses = Vec::new();
    let mut series_ok = true;
    for r in [1u32, 2, 3] {
        for gamma in [0.5, 0.2, 0.1, 0.05] {
            let q = f64::exp(-gamma);
            let s = poly_geometric_sum(q, r as f64, 1e-12).unwrap().value;
            let exact = poly_geometric_closed_form(q, r);
            series_ok &= ((s - exact) / exact).abs() <= 1e-12;
            let (lo, hi) = integral_test_bracket(gamma, r as f64);
            if !(lo <= s && s <= hi) {
                misses.push(format!("(r={r}, gamma={gamma}: {s:.6} vs [{lo:.6}, {hi:.6}])"));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = series_ok && misses.is_empty() && elapsed < Duration::from_secs(1);
    report(1, pass, elapsed, &format!("series exact: {series_ok}; outside bracket: {}", misses.join(" ")));
    assert!(pass, "bracket misses: {misses:?}");
}

#[test]
fn criterion_02_toeplitz_norms() {
    let start = Instant::now();
    let mut worst_cr = 0.0f64;
    let mut worst_inv = 0.0f64;
    for gamma in [0.5, 0.2, 0.1, 0.05, 0.025] {
        let q = f64::exp(-gamma);
        let window = IndexWindow::symmetric(2).unwrap();
        let c = make_toeplitz(&ToeplitzSymbol::c_gamma(gamma).unwrap(), window).unwrap();
        for r in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let expected = 1.0 + 2f64.powf(r) * q;
            worst_cr = worst_cr.max(((cv_norm(&c, &Weight::polynomial(r)).unwrap() - expected) / expected).abs());
        }
        let inv_sym = ToeplitzSymbol::c_gamma(gamma).unwrap().closed_form_inverse(1e-16).unwrap();
        let inv = make_toeplitz(&inv_sym, window).unwrap();
        let expected = 1.0 / (1.0 - q);
        worst_inv = worst_inv.max(((cv_norm(&inv, &Weight::polynomial(0.0)).unwrap() - expected) / expected).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_cr <= 1e-14 && worst_inv <= 1e-12 && elapsed < Duration::from_secs(1);
    report(2, pass, elapsed, &format!("max rel err C_r {worst_cr:.2e}, inverse C_0 {worst_inv:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_inverse_norm_slope() {
    let start = Instant::now();
    let cfg = ExperimentConfig::new("toeplitz-sharpness", vec![0.4, 0.2, 0.1, 0.05, 0.025], vec![1.0, 2.0]);
    let out = run_toeplitz_sharpness(&cfg).unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(10);
    let mut detail = Vec::new();
    for f in &out.fits {
        let expected = -(f.r + 1.0);
        pass &= (f.slope - expected).abs() <= 0.15;
        detail.push(format!("r={}: slope {:.4} (expected {expected})", f.r, f.slope));
    }
    report(3, pass, elapsed, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_04_quotient_identities() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        window_n: 64,
        instances: 20,
        k_max: 5,
        ..ExperimentKind::QuotientVerify.preset()
    };
    let rows = run_quotient_verify(&cfg).unwrap();
    let elapsed = start.elapsed();
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let identities = ["derivation_quotient", "difference_product", "difference_quotient", "telescoping"];
    let covered = identities.iter().all(|id| rows.iter().any(|r| r.identity == *id));
    let pass = covered && worst <= 1e-10 && elapsed < Duration::from_secs(30);
    report(4, pass, elapsed, &format!("{} rows, max relative error {worst:.2e}", rows.len()));
    assert!(pass);
}

#[test]
fn criterion_05_decay_bounds_hold() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        window_n: 128,
        epsilon: 0.3,
        instances: 20,
        ..ExperimentConfig::new("jaffard-check", vec![0.5, 0.4, 0.2, 0.1, 0.05, 0.025], vec![2.0])
    };
    let rows = run_jaffard_check(&cfg).unwrap();
    let elapsed = start.elapsed();
    let random = rows.iter().filter(|r| r.family == "random").count();
    let violations: Vec<String> =
        rows.iter().filter(|r| !r.all_satisfied).map(|r| format!("{} {}", r.family, r.param)).collect();
    let max_ratio = rows
        .iter()
        .flat_map(|r| [r.ratio_explicit_jr, r.ratio_baskakov_jr, r.ratio_explicit_cr, r.ratio_baskakov_cr])
        .fold(0.0, f64::max);
    let pass = random == 20 && violations.is_empty() && elapsed < Duration::from_secs(120);
    report(
        5,
        pass,
        elapsed,
        &format!("{} rows, largest measured/bound {max_ratio:.2e}, violations {violations:?}", rows.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_06_exponent_identities() {
    let start = Instant::now();
    let (x0, x1) = (10.0f64, 1.0e4f64);
    let slope = |f: &dyn Fn(f64) -> f64| (f(x1) - f(x0)) / (x1.ln() - x0.ln());
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());
    for r in [1.5, 2.0, 3.0] {
        let cr = |x: f64| explicit_bound_cr(1.3, 1.1, x, r, ConstantMode::Symbolic).unwrap().log_bound;
        check(slope(&cr), 2.0 * r + 2.0 / r + 5.0);
        let jr = |x: f64| explicit_bound_jr(1.3, 1.1, x, r, ConstantMode::Numeric).unwrap().log_bound;
        check(slope(&jr), 2.0 * r + 3.0 + 2.0 / (r - 1.0));
        let besov = |x: f64| {
            besov_bound(x, 2.5, r, PExponent::Finite(1.0))
                .unwrap()
                .intermediate("log_asymptotic")
                .unwrap()
        };
        check(slope(&besov), r.floor() + 2.0);
    }
    for k in 1..=6u32 {
        let dd = |x: f64| dd_domain_bound(x, 3.0, k).unwrap().intermediate("log_simplified").unwrap();
        check(slope(&dd), k as f64 + 1.0);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && elapsed < Duration::from_secs(1);
    report(6, pass, elapsed, &format!("max slope deviation {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_07_gevrey_combinatorics() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for r in [1.5, 2.0, 3.0] {
        for m in 1..=5u32 {
            let got = a_m_bruteforce(&SmoothnessSequence::Gevrey { r }, m, 15).unwrap().value;
            let want = (factorial(m as u64) as f64).powf((1.0 - r) / m as f64);
            worst = worst.max(((got - want) / want).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(7, pass, elapsed, &format!("max rel err {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_08_dales_davie_sharpness() {
    let start = Instant::now();
    let cfg = ExperimentConfig::new("dd-sharpness", vec![0.5, 0.4, 0.3, 0.2, 0.15, 0.1], vec![2.0]);
    let out = run_dd_sharpness(&cfg).unwrap();
    let elapsed = start.elapsed();
    let lo = out.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let hi = out.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let bounded = out.rows.iter().all(|r| r.satisfied);
    let pass = lo >= 0.5 && hi <= 2.0 && bounded && elapsed < Duration::from_secs(30);
    report(
        8,
        pass,
        elapsed,
        &format!("ratio range [{lo:.4}, {hi:.4}], shape slope {:.4}, bound satisfied {bounded}", out.fits[0].slope),
    );
    assert!(pass);
}

#[test]
fn criterion_09_cr_constant() {
    let start = Instant::now();
    // 128·50·64·Γ(2)² in integers
    let want = 128u64 * 50 * 64 * factorial(1) * factorial(1);
    let got = constant_cr_numeric(1.0).unwrap();
    let pass = got == want as f64;
    report(9, pass, start.elapsed(), &format!("C_1 = {got}"));
    assert!(pass);
}

#[test]
fn criterion_10_rate_calibration() {
    let start = Instant::now();
    let out = run_besov_report(&ExperimentKind::BesovReport.preset()).unwrap();
    let elapsed = start.elapsed();
    let mut pass = !out.calibrations.is_empty();
    let mut detail = Vec::new();
    for c in &out.calibrations {
        let ok = c.min_ratio.is_finite() && c.max_ratio.is_finite() && c.min_ratio > 0.0 && c.spread <= 10.0;
        pass &= ok;
        detail.push(format!("{} r={}: max/min {:.3}", c.bound, c.r, c.spread));
    }
    report(10, pass, elapsed, &detail.join(", "));
    assert!(pass, "calibration spreads: {detail:?}");
}
