//! Scalar special functions and series helpers shared by the norm and bound
//! evaluators.

use crate::error::{Error, Result};

/// `ln n!`, summed exactly for small `n`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        let mut acc = Neumaier::default();
        for i in 2..=n {
            acc.add((i as f64).ln());
        }
        acc.value()
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// `Γ(x)`; exact factorials for small positive integer arguments.
pub fn gamma(x: f64) -> f64 {
    if x.fract() == 0.0 && (1.0..=171.0).contains(&x) {
        let mut acc = 1.0f64;
        for i in 2..(x as u64) {
            acc *= i as f64;
        }
        return acc;
    }
    statrs::function::gamma::gamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    if x.fract() == 0.0 && (1.0..=257.0).contains(&x) {
        return ln_factorial(x as u64 - 1);
    }
    statrs::function::gamma::ln_gamma(x)
}

pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc.round()
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A truncated series with a rigorous bound on the omitted tail.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesSum {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: u64,
}

const SERIES_TERM_CAP: u64 = 200_000_000;

/// `Σ_{k≥0} q^k (1+k)^r` for `0 ≤ q < 1`, `r ≥ 0`.
///
/// Summation stops once the geometric tail bound drops below
/// `rel_tol · partial sum`. The term ratio `q((k+2)/(k+1))^r` decreases in
/// `k`, so past the peak the remainder is dominated by a geometric series.
pub fn poly_geometric_sum(q: f64, r: f64, rel_tol: f64) -> Result<SeriesSum> {
    if !(0.0..1.0).contains(&q) || r < 0.0 || !r.is_finite() {
        return Err(Error::Parameter(format!(
            "poly_geometric_sum needs 0 <= q < 1 and r >= 0 (q = {q}, r = {r})"
        )));
    }
    if q == 0.0 {
        return Ok(SeriesSum {
            value: 1.0,
            tail_bound: 0.0,
            terms: 1,
        });
    }
    let ln_q = q.ln();
    let mut acc = Neumaier::default();
    let mut k = 0u64;
    loop {
        let term = (k as f64 * ln_q + r * ((k + 1) as f64).ln()).exp();
        acc.add(term);
        k += 1;
        let ratio = q * ((k + 1) as f64 / k as f64).powf(r);
        if ratio < 1.0 {
            let next = (k as f64 * ln_q + r * ((k + 1) as f64).ln()).exp();
            let tail = next / (1.0 - ratio);
            if tail <= rel_tol * acc.value() {
                return Ok(SeriesSum {
                    value: acc.value(),
                    tail_bound: tail,
                    terms: k,
                });
            }
        }
        if k >= SERIES_TERM_CAP {
            return Err(Error::NonConvergence {
                what: "poly-geometric series",
                iterations: k as usize,
                estimate: acc.value(),
            });
        }
    }
}

/// `ln Σ_{j≥0} j^k e^{-γj}` with the convention `0^0 = 1`.
///
/// This is the exact `C_0` norm of `𝔇^k` applied to the geometric Toeplitz
/// inverse `Σ e^{-γj} T_j`. Summed in log space so large `k` and small `γ`
/// do not overflow.
pub fn ln_power_geometric_sum(k: u32, gamma: f64, rel_tol: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if k == 0 {
        return Ok(-(-(-gamma).exp()).ln_1p());
    }
    let kf = k as f64;
    // terms peak at j = k/γ; sum around it with a scaled accumulator
    let peak = kf / gamma;
    let ln_peak = kf * peak.max(1.0).ln() - gamma * peak;
    let mut acc = Neumaier::default();
    let mut j = 1u64;
    loop {
        let jf = j as f64;
        let ln_t = kf * jf.ln() - gamma * jf;
        acc.add((ln_t - ln_peak).exp());
        j += 1;
        let jn = j as f64;
        let ratio = (-gamma).exp() * (jn / (jn - 1.0)).powf(kf);
        if jn > peak && ratio < 1.0 {
            let next = (kf * jn.ln() - gamma * jn - ln_peak).exp();
            if next / (1.0 - ratio) <= rel_tol * acc.value() {
                break;
            }
        }
        if j >= SERIES_TERM_CAP {
            return Err(Error::NonConvergence {
                what: "power-geometric series",
                iterations: j as usize,
                estimate: acc.value(),
            });
        }
    }
    Ok(ln_peak + acc.value().ln())
}

/// Hurwitz zeta `ζ(s, q) = Σ_{n≥0} (n+q)^{-s}` for `s > 1`, `q > 0`.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    debug_assert!(s > 1.0 && q > 0.0);
    // Euler–Maclaurin with N direct terms and Bernoulli corrections.
    const N: usize = 12;
    const B2K: [f64; 6] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
    ];
    let mut acc = Neumaier::default();
    for n in 0..N {
        acc.add((n as f64 + q).powf(-s));
    }
    let a = N as f64 + q;
    acc.add(a.powf(1.0 - s) / (s - 1.0));
    acc.add(0.5 * a.powf(-s));
    // term_j = B_{2j}/(2j)! · s(s+1)…(s+2j-2) · a^{-s-2j+1}
    let mut rising = s;
    let mut fact = 2.0;
    let mut pow = a.powf(-s - 1.0);
    for (j, b) in B2K.iter().enumerate() {
        acc.add(b / fact * rising * pow);
        let m = 2.0 * (j as f64 + 1.0);
        rising *= (s + m - 1.0) * (s + m);
        fact *= (m + 1.0) * (m + 2.0);
        pow /= a * a;
    }
    acc.value()
}

/// Riemann zeta for `s > 1`.
pub fn zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

/// The integral-test bracket `[e^γ Γ(r+1) γ^{-r-1}, 2 e^γ Γ(r+1) γ^{-r-1}]`
/// for `Σ_{k≥0} (1+k)^r e^{-γk}`.
pub fn integral_test_bracket(gamma: f64, r: f64) -> (f64, f64) {
    let lo = (gamma + ln_gamma(r + 1.0) - (r + 1.0) * gamma.ln()).exp();
    (lo, 2.0 * lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factorials_are_exact_for_small_arguments() {
        assert_eq!(gamma(2.0), 1.0);
        assert_eq!(gamma(6.0), 120.0);
        assert_relative_eq!(ln_factorial(10), 3_628_800f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(gamma(0.5), std::f64::consts::PI.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn poly_geometric_matches_closed_forms() {
        // Σ q^k = 1/(1-q), Σ (1+k) q^k = 1/(1-q)^2
        let q: f64 = (-0.3f64).exp();
        let s0 = poly_geometric_sum(q, 0.0, 1e-15).unwrap();
        assert_relative_eq!(s0.value, 1.0 / (1.0 - q), max_relative = 1e-13);
        let s1 = poly_geometric_sum(q, 1.0, 1e-15).unwrap();
        assert_relative_eq!(s1.value, 1.0 / (1.0 - q).powi(2), max_relative = 1e-13);
        // Σ (1+k)^2 q^k = (1+q)/(1-q)^3
        let s2 = poly_geometric_sum(q, 2.0, 1e-15).unwrap();
        assert_relative_eq!(s2.value, (1.0 + q) / (1.0 - q).powi(3), max_relative = 1e-13);
    }

    #[test]
    fn power_geometric_sum_against_polylog_forms() {
        let g = 0.2f64;
        let q = (-g).exp();
        // k = 1: q/(1-q)^2 ; k = 2: q(1+q)/(1-q)^3
        let l1 = ln_power_geometric_sum(1, g, 1e-16).unwrap();
        assert_relative_eq!(l1.exp(), q / (1.0 - q).powi(2), max_relative = 1e-13);
        let l2 = ln_power_geometric_sum(2, g, 1e-16).unwrap();
        assert_relative_eq!(l2.exp(), q * (1.0 + q) / (1.0 - q).powi(3), max_relative = 1e-13);
        let l0 = ln_power_geometric_sum(0, g, 1e-16).unwrap();
        assert_relative_eq!(l0.exp(), 1.0 / (1.0 - q), max_relative = 1e-14);
    }

    #[test]
    fn hurwitz_zeta_known_values() {
        assert_relative_eq!(zeta(2.0), std::f64::consts::PI.powi(2) / 6.0, max_relative = 1e-14);
        assert_relative_eq!(zeta(4.0), std::f64::consts::PI.powi(4) / 90.0, max_relative = 1e-14);
        // ζ(s, 1/2) = (2^s - 1) ζ(s)
        assert_relative_eq!(hurwitz_zeta(3.0, 0.5), 7.0 * zeta(3.0), max_relative = 1e-13);
        // small q is dominated by q^{-s}
        let q = 1e-3;
        assert_relative_eq!(
            hurwitz_zeta(1.5, q),
            q.powf(-1.5) + hurwitz_zeta(1.5, 1.0 + q),
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_add_is_stable() {
        assert_relative_eq!(log_add(1000.0, 1000.0), 1000.0 + 2f64.ln(), max_relative = 1e-15);
        assert_eq!(log_add(f64::NEG_INFINITY, 3.0), 3.0);
    }
}
