//! Weights, side diagonals and the decay-algebra norms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::lattice_matrix::{operator_norm_l2, GeometricProfile, LatticeMatrix, StructureTag};
use crate::quotient_rules::for_each_composition;
use crate::special::{ln_factorial, ln_power_geometric_sum, log_add, poly_geometric_sum, Neumaier};

/// Relative tolerance for series evaluated to "full" precision.
pub const SERIES_TOL: f64 = 1e-15;

/// Weight on ℤ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    /// `(1 + |k|)^r`.
    Polynomial { r: f64 },
    /// `v_r(k) = Σ_{l=0}^{L} |k|^l / l!^r`; `terms = None` sums the full
    /// series to relative precision 1e−15.
    Subexp {
        r: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        terms: Option<u64>,
    },
    Table {
        #[serde(deserialize_with = "crate::serde_ext::int_key_map")]
        table: BTreeMap<i64, f64>,
    },
}

impl Weight {
    pub fn constant() -> Self {
        Weight::Polynomial { r: 0.0 }
    }

    pub fn polynomial(r: f64) -> Self {
        Weight::Polynomial { r }
    }

    pub fn subexp(r: f64) -> Self {
        Weight::Subexp { r, terms: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Weight::Polynomial { r } if !(*r >= 0.0 && r.is_finite()) => {
                param(format!("polynomial weight needs r >= 0, got {r}"))
            }
            Weight::Subexp { r, .. } if !(*r > 1.0 && r.is_finite()) => {
                param(format!("subexponential weight needs r > 1, got {r}"))
            }
            Weight::Table { table } if table.values().any(|v| !(*v > 0.0 && v.is_finite())) => {
                param("table weight values must be positive and finite")
            }
            _ => Ok(()),
        }
    }

    pub fn ln_eval(&self, k: i64) -> Result<f64> {
        match self {
            Weight::Polynomial { r } => Ok(if *r == 0.0 { 0.0 } else { r * (k.unsigned_abs() as f64).ln_1p() }),
            Weight::Subexp { r, terms } => {
                let x = k.unsigned_abs() as f64;
                Ok(match terms {
                    None => ln_phi_r(*r, x, SERIES_TOL)?.ln_value,
                    Some(l) => ln_phi_r_partial(*r, x, *l),
                })
            }
            Weight::Table { table } => table
                .get(&k)
                .map(|v| v.ln())
                .ok_or_else(|| Error::Parameter(format!("table weight is undefined at {k}"))),
        }
    }

    pub fn eval(&self, k: i64) -> Result<f64> {
        self.ln_eval(k).map(f64::exp)
    }
}

/// Dales–Davie sequence `(M_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothnessSequence {
    /// `M_k = k!` for `k ≤ K` and `M_k = ∞` beyond: the derivation domain of
    /// order `K`.
    Finite { k: u32 },
    /// `M_k = k!`.
    Analytic,
    /// `M_k = k!^r`.
    Gevrey { r: f64 },
    /// `M_k = values[k]`; indices past the end are treated as `M_k = ∞`.
    Custom { values: Vec<f64> },
}

impl SmoothnessSequence {
    /// `ln M_k`; `+∞` where the sequence excludes the term.
    pub fn ln_m(&self, k: u32) -> f64 {
        match self {
            SmoothnessSequence::Finite { k: cap } => {
                if k <= *cap {
                    ln_factorial(k as u64)
                } else {
                    f64::INFINITY
                }
            }
            SmoothnessSequence::Analytic => ln_factorial(k as u64),
            SmoothnessSequence::Gevrey { r } => r * ln_factorial(k as u64),
            SmoothnessSequence::Custom { values } => values.get(k as usize).map_or(f64::INFINITY, |v| v.ln()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothnessSequence::Gevrey { r } if !(*r > 0.0 && r.is_finite()) => {
                param(format!("gevrey order must be positive, got {r}"))
            }
            SmoothnessSequence::Custom { values } => {
                if values.first() != Some(&1.0) {
                    return param("custom sequence must start with M_0 = 1");
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return param("custom sequence values must be positive and finite");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `M_0 = 1` and `M_{k+l}/(k+l)! ≥ (M_k/k!)(M_l/l!)` for `k + l ≤ kmax`.
    pub fn is_admissible(&self, kmax: u32) -> bool {
        if self.validate().is_err() || self.ln_m(0) != 0.0 {
            return false;
        }
        let a = |k: u32| self.ln_m(k) - ln_factorial(k as u64);
        (0..=kmax).all(|k| {
            (0..=kmax - k).all(|l| {
                let lhs = a(k + l);
                lhs == f64::INFINITY || lhs >= a(k) + a(l) - 1e-12 * (1.0 + lhs.abs())
            })
        })
    }
}

/// A value with a bound on what a truncated series omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub tail_bound: f64,
}

/// Side-diagonal suprema `d_A(m)`.
///
/// Toeplitz-tagged matrices use their symbol, so values do not depend on the
/// window; a geometric profile extends the stored offsets to the untruncated
/// series. Other matrices use the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideDiagonals {
    min_offset: i64,
    values: Vec<f64>,
    continuation: Option<GeometricProfile>,
}

impl SideDiagonals {
    pub fn of(a: &LatticeMatrix) -> Self {
        match a.tag() {
            StructureTag::Toeplitz(sym) => {
                let coeffs = sym.coefficients();
                let (lo, hi) = match (coeffs.keys().next(), coeffs.keys().next_back()) {
                    (Some(&lo), Some(&hi)) => (lo, hi),
                    _ => (0, 0),
                };
                let values = (lo..=hi).map(|m| sym.coefficient(m).norm()).collect();
                SideDiagonals {
                    min_offset: lo,
                    values,
                    continuation: sym.geometric_profile().copied(),
                }
            }
            _ => Self::of_window(a),
        }
    }

    /// Side diagonals of the window section regardless of tags.
    pub fn of_window(a: &LatticeMatrix) -> Self {
        let n = a.size() as i64;
        let mut values = vec![0.0f64; (2 * n - 1) as usize];
        let e = a.entries();
        for j in 0..n as usize {
            for i in 0..n as usize {
                let slot = &mut values[(i as i64 - j as i64 + n - 1) as usize];
                *slot = slot.max(e[(i, j)].norm());
            }
        }
        SideDiagonals {
            min_offset: -(n - 1),
            values,
            continuation: None,
        }
    }

    /// Builds a profile from explicit values `d(lo), d(lo+1), …`.
    pub fn from_values(min_offset: i64, values: Vec<f64>) -> Self {
        SideDiagonals {
            min_offset,
            values,
            continuation: None,
        }
    }

    pub fn continuation(&self) -> Option<&GeometricProfile> {
        self.continuation.as_ref()
    }

    fn stored_max(&self) -> i64 {
        self.min_offset + self.values.len() as i64 - 1
    }

    /// `d_A(m)`.
    pub fn get(&self, m: i64) -> f64 {
        if let Some(p) = &self.continuation {
            if m > self.stored_max() {
                return p.modulus(m);
            }
        }
        if m < self.min_offset || m > self.stored_max() {
            return 0.0;
        }
        self.values[(m - self.min_offset) as usize]
    }

    /// Stored `(m, d(m))`, nonzero only.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &d)| (self.min_offset + i as i64, d))
            .filter(|(_, d)| *d != 0.0)
    }

    /// Sets `d(0) ← max(d(0), 1)`: the profile of the section extended by the
    /// identity outside the window.
    pub fn with_identity_floor(mut self) -> Self {
        if self.continuation.is_some() {
            return self;
        }
        if 0 < self.min_offset {
            let mut v = vec![0.0; self.min_offset as usize];
            v.extend(self.values);
            self.values = v;
            self.min_offset = 0;
        } else if 0 > self.stored_max() {
            self.values.resize((-self.min_offset + 1) as usize, 0.0);
        }
        let idx = (-self.min_offset) as usize;
        self.values[idx] = self.values[idx].max(1.0);
        self
    }

    /// `Σ_m d(m) v(m)`.
    pub fn weighted_sum(&self, v: &Weight) -> Result<NormEstimate> {
        v.validate()?;
        if let Some(p) = &self.continuation {
            return geometric_weighted_sum(p, v);
        }
        let mut acc = Neumaier::default();
        for (m, d) in self.iter() {
            acc.add(d * v.eval(m)?);
        }
        Ok(NormEstimate {
            value: acc.value(),
            tail_bound: 0.0,
        })
    }

    /// `max_m d(m)(1 + |m|)^r`.
    pub fn weighted_max(&self, r: f64) -> f64 {
        let w = |m: i64| (m.unsigned_abs() as f64).ln_1p() * r;
        if let Some(p) = &self.continuation {
            // unimodal in m: maximum at m = 0 or next to r/γ − 1
            let peak = (r / p.gamma - 1.0).max(0.0);
            return [0.0, peak.floor(), peak.ceil()]
                .iter()
                .map(|&m| p.modulus(m as i64) * w(m as i64).exp())
                .fold(0.0, f64::max);
        }
        self.iter().map(|(m, d)| d * w(m).exp()).fold(0.0, f64::max)
    }

    /// `E_k = Σ_{|m| ≥ k+1} d(m)`.
    pub fn banded_error(&self, k: u64) -> f64 {
        if let Some(p) = &self.continuation {
            return p.scale * (-p.gamma * (k + 1) as f64).exp() / -(-p.gamma).exp_m1();
        }
        let mut acc = Neumaier::default();
        for (m, d) in self.iter() {
            if m.unsigned_abs() > k {
                acc.add(d);
            }
        }
        acc.value()
    }

    /// `Σ_{|m| ≥ k+1} d(m) v(m)`.
    pub fn weighted_banded_error(&self, k: u64, v: &Weight) -> Result<NormEstimate> {
        if let Some(p) = &self.continuation {
            let total = geometric_weighted_sum(p, v)?;
            let mut head = Neumaier::default();
            for m in 0..=k.min(1 << 40) as i64 {
                head.add(p.modulus(m) * v.eval(m)?);
            }
            return Ok(NormEstimate {
                value: (total.value - head.value()).max(0.0),
                tail_bound: total.tail_bound,
            });
        }
        let mut acc = Neumaier::default();
        for (m, d) in self.iter() {
            if m.unsigned_abs() > k {
                acc.add(d * v.eval(m)?);
            }
        }
        Ok(NormEstimate {
            value: acc.value(),
            tail_bound: 0.0,
        })
    }

    /// Nonincreasing tail sums `E_0, E_1, …` up to the last stored offset.
    pub fn banded_error_table(&self) -> Vec<f64> {
        let kmax = self.iter().map(|(m, _)| m.unsigned_abs()).max().unwrap_or(0) as usize;
        let mut by_abs = vec![0.0f64; kmax + 1];
        for (m, d) in self.iter() {
            by_abs[m.unsigned_abs() as usize] += d;
        }
        let mut out = vec![0.0f64; kmax + 1];
        let mut acc = Neumaier::default();
        for k in (0..=kmax).rev() {
            out[k] = acc.value();
            acc.add(by_abs[k]);
        }
        out
    }

    /// `ln Σ_m |m|^k d(m)`, the log of `‖𝔇^k A‖_{C_0}` (`0^0 = 1`).
    pub fn ln_power_moment(&self, k: u32) -> Result<f64> {
        if let Some(p) = &self.continuation {
            return Ok(p.scale.ln() + ln_power_geometric_sum(k, p.gamma, SERIES_TOL)?);
        }
        let mut out = f64::NEG_INFINITY;
        for (m, d) in self.iter() {
            if m == 0 && k > 0 {
                continue;
            }
            let lm = if m == 0 { 0.0 } else { k as f64 * (m.unsigned_abs() as f64).ln() };
            out = log_add(out, lm + d.ln());
        }
        Ok(out)
    }

    /// `ln max_m |m|^k d(m)(1 + |m|)^s`, the log of `‖𝔇^k A‖_{J_s}`.
    pub fn ln_power_max(&self, k: u32, s: f64) -> f64 {
        let f = |m: i64, d: f64| {
            if m == 0 && k > 0 {
                f64::NEG_INFINITY
            } else {
                let am = m.unsigned_abs() as f64;
                d.ln() + if m == 0 { 0.0 } else { k as f64 * am.ln() } + s * am.ln_1p()
            }
        };
        if let Some(p) = &self.continuation {
            // log-concave in m; the maximizer of m^k(1+m)^s e^{−γm} lies in
            // [k/γ − 1, (k+s)/γ]
            let lo = (k as f64 / p.gamma - 1.0).max(0.0).floor() as i64;
            let hi = ((k as f64 + s) / p.gamma).ceil() as i64 + 1;
            return (lo..=hi).map(|m| f(m, p.modulus(m))).fold(f64::NEG_INFINITY, f64::max);
        }
        self.iter().map(|(m, d)| f(m, d)).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn geometric_weighted_sum(p: &GeometricProfile, v: &Weight) -> Result<NormEstimate> {
    let q = p.ratio();
    match v {
        Weight::Polynomial { r } if *r == 0.0 => Ok(NormEstimate {
            value: p.scale / -(-p.gamma).exp_m1(),
            tail_bound: 0.0,
        }),
        Weight::Polynomial { r } => {
            let s = poly_geometric_sum(q, *r, SERIES_TOL)?;
            Ok(NormEstimate {
                value: p.scale * s.value,
                tail_bound: p.scale * s.tail_bound,
            })
        }
        Weight::Subexp { .. } => {
            // terms e^{−γm} v(m); log-concave in m, so past the peak a
            // decreasing term ratio gives a geometric tail bound
            let ln_term = |m: u64| -> Result<f64> { Ok(-p.gamma * m as f64 + v.ln_eval(m as i64)?) };
            let mut peak = f64::NEG_INFINITY;
            let mut m = 0u64;
            let mut terms = Vec::new();
            let mut lt = ln_term(0)?;
            loop {
                terms.push(lt);
                peak = peak.max(lt);
                let next = ln_term(m + 1)?;
                let ratio = (next - lt).exp();
                // partial sum is at least e^{peak}, so this certifies the
                // tail relative to it
                if ratio < 1.0 && (next - peak).exp() / (1.0 - ratio) <= SERIES_TOL {
                    let mut acc = Neumaier::default();
                    for t in &terms {
                        acc.add((t - peak).exp());
                    }
                    let ln_value = peak + acc.value().ln() + p.scale.ln();
                    let value = ln_value.exp();
                    if !value.is_finite() {
                        return Err(Error::Range { log_value: ln_value });
                    }
                    let tail = (next - peak).exp() / (1.0 - ratio) / acc.value();
                    return Ok(NormEstimate {
                        value,
                        tail_bound: value * tail,
                    });
                }
                m += 1;
                lt = next;
                if m > 50_000_000 {
                    return Err(Error::NonConvergence {
                        what: "weighted geometric series",
                        iterations: m as usize,
                        estimate: peak.exp(),
                    });
                }
            }
        }
        Weight::Table { .. } => Err(Error::Parameter(
            "a table weight cannot be summed against an infinite geometric profile".into(),
        )),
    }
}

/// Norm on which derivation and difference seminorms are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ambient {
    C0,
    Jaffard { s: f64 },
    Operator { tol: f64 },
}

impl Ambient {
    pub fn operator() -> Self {
        Ambient::Operator { tol: 1e-10 }
    }
}

/// `‖A‖` in the ambient norm.
pub fn ambient_norm(a: &LatticeMatrix, ambient: Ambient) -> Result<f64> {
    match ambient {
        Ambient::C0 => cv_norm(a, &Weight::constant()),
        Ambient::Jaffard { s } => jaffard_norm(a, s),
        Ambient::Operator { tol } => operator_norm_l2(a, tol),
    }
}

/// `ln ‖𝔇^k A‖` in the ambient norm. `C_0` and `J_s` are computed from side
/// diagonals, since `𝔇^k` scales diagonal `m` by `m^k`.
pub fn ln_derivation_norm(a: &LatticeMatrix, sd: &SideDiagonals, k: u32, ambient: Ambient) -> Result<f64> {
    match ambient {
        Ambient::C0 => sd.ln_power_moment(k),
        Ambient::Jaffard { s } => Ok(sd.ln_power_max(k, s)),
        Ambient::Operator { tol } => Ok(operator_norm_l2(&a.derivation_power(k), tol)?.ln()),
    }
}

/// `d_A(k) = max_l |A(l, l − k)|` over the window.
pub fn side_diag_sup(a: &LatticeMatrix, k: i64) -> f64 {
    let w = a.window();
    if k.unsigned_abs() as usize >= a.size() {
        return 0.0;
    }
    if let Some(sym) = a.toeplitz_symbol() {
        return sym.coefficient(k).norm();
    }
    let lo = w.lo().max(w.lo() + k);
    let hi = w.hi().min(w.hi() + k);
    (lo..=hi).map(|l| a.get(l, l - k).norm()).fold(0.0, f64::max)
}

/// `sup_{k,l} |A(k, l)|(1 + |k − l|)^r`.
pub fn jaffard_norm(a: &LatticeMatrix, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("Jaffard order must be positive, got {r}"));
    }
    Ok(SideDiagonals::of(a).weighted_max(r))
}

/// `Σ_k d_A(k) v(k)`.
pub fn cv_norm(a: &LatticeMatrix, v: &Weight) -> Result<f64> {
    Ok(cv_norm_estimate(a, v)?.value)
}

/// [`cv_norm`] together with the truncation tail of geometric symbols.
pub fn cv_norm_estimate(a: &LatticeMatrix, v: &Weight) -> Result<NormEstimate> {
    SideDiagonals::of(a).weighted_sum(v)
}

/// `E_k(A) = Σ_{|m| ≥ k+1} d_A(m) v(m)`; `v = None` is the constant weight.
pub fn banded_error(a: &LatticeMatrix, k: u64, v: Option<&Weight>) -> Result<f64> {
    let sd = SideDiagonals::of(a);
    match v {
        None => Ok(sd.banded_error(k)),
        Some(v) => Ok(sd.weighted_banded_error(k, v)?.value),
    }
}

/// `Σ_{m=1}^{k} ‖𝔇^m A‖/m!`.
pub fn dd_seminorm(a: &LatticeMatrix, k: u32, ambient: Ambient) -> Result<f64> {
    if k == 0 {
        return param("derivation seminorm order must be at least 1");
    }
    let sd = SideDiagonals::of(a);
    let mut acc = Neumaier::default();
    for m in 1..=k {
        acc.add((ln_derivation_norm(a, &sd, m, ambient)? - ln_factorial(m as u64)).exp());
    }
    Ok(acc.value())
}

/// Partial Dales–Davie norm with its convergence diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DalesDavieNorm {
    #[serde(with = "crate::serde_ext::float")]
    pub value: f64,
    /// `ln(‖𝔇^k A‖/M_k)` for `k = 0..=kmax`.
    pub ln_terms: Vec<f64>,
    /// Ratio of the last two finite terms.
    pub tail_ratio: f64,
    /// Geometric estimate of the omitted tail; infinite when divergent.
    #[serde(with = "crate::serde_ext::float")]
    pub tail_estimate: f64,
    pub divergent: bool,
}

/// `Σ_{k=0}^{kmax} ‖𝔇^k A‖/M_k`.
///
/// The series is flagged divergent when its terms are still not decreasing
/// at `kmax`.
pub fn dales_davie_norm(a: &LatticeMatrix, m: &SmoothnessSequence, kmax: u32, ambient: Ambient) -> Result<DalesDavieNorm> {
    m.validate()?;
    let sd = SideDiagonals::of(a);
    let mut ln_terms = Vec::with_capacity(kmax as usize + 1);
    for k in 0..=kmax {
        let lm = m.ln_m(k);
        if lm.is_infinite() {
            ln_terms.push(f64::NEG_INFINITY);
            continue;
        }
        let ln_norm = if k == 0 {
            ambient_norm(a, ambient)?.ln()
        } else {
            ln_derivation_norm(a, &sd, k, ambient)?
        };
        ln_terms.push(ln_norm - lm);
    }
    let peak = ln_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = Neumaier::default();
    if peak.is_finite() {
        for t in &ln_terms {
            acc.add((t - peak).exp());
        }
    }
    let ln_value = if peak.is_finite() { peak + acc.value().ln() } else { f64::NEG_INFINITY };
    let finite: Vec<f64> = ln_terms.iter().copied().filter(|t| t.is_finite()).collect();
    let all_tail_excluded = (kmax + 1..kmax + 64).all(|k| m.ln_m(k).is_infinite());
    let (tail_ratio, divergent, tail_estimate) = if all_tail_excluded {
        (0.0, false, 0.0)
    } else if finite.len() >= 2 {
        let ratio = (finite[finite.len() - 1] - finite[finite.len() - 2]).exp();
        if ratio >= 1.0 {
            (ratio, true, f64::INFINITY)
        } else {
            let last = finite[finite.len() - 1].exp();
            (ratio, false, last * ratio / (1.0 - ratio))
        }
    } else {
        (0.0, false, 0.0)
    };
    Ok(DalesDavieNorm {
        value: if divergent { f64::INFINITY } else { ln_value.exp() },
        ln_terms,
        tail_ratio,
        tail_estimate,
        divergent,
    })
}

/// Submultiplicativity and GRS diagnostics of a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub submultiplicative: bool,
    /// `max ln v(k+l) − ln v(k) − ln v(l)` over the tested pairs.
    pub worst_excess: f64,
    /// `(k, v(k)^{1/k})` on a geometric grid.
    pub grs_trend: Vec<(i64, f64)>,
}

/// Checks `v(k + l) ≤ v(k)v(l)` for `|k|, |l| ≤ range` and reports the GRS
/// trend `v(k)^{1/k}` for `k = 1, 2, 4, …`.
pub fn check_weight(v: &Weight, range: i64) -> Result<WeightReport> {
    if range < 2 {
        return param(format!("range must be at least 2, got {range}"));
    }
    v.validate()?;
    let defined = |k: i64| match v {
        Weight::Table { table } => table.contains_key(&k),
        _ => true,
    };
    let ln: BTreeMap<i64, f64> = (-2 * range..=2 * range)
        .filter(|&k| defined(k))
        .map(|k| v.ln_eval(k).map(|x| (k, x)))
        .collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for k in -range..=range {
        for l in -range..=range {
            if let (Some(a), Some(b), Some(c)) = (ln.get(&k), ln.get(&l), ln.get(&(k + l))) {
                worst = worst.max(c - a - b);
            }
        }
    }
    let grid_cap: i64 = match v {
        Weight::Table { table } => table.keys().copied().max().unwrap_or(0),
        _ => 1 << 30,
    };
    let mut grs_trend = Vec::new();
    let mut k = 1i64;
    while k <= grid_cap {
        if defined(k) {
            grs_trend.push((k, (v.ln_eval(k)? / k as f64).exp()));
        }
        k *= 2;
    }
    Ok(WeightReport {
        submultiplicative: worst <= 1e-12,
        worst_excess: worst,
        grs_trend,
    })
}

/// The combinatorial quantity `A_m` with its maximizing composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmValue {
    pub m: u32,
    pub value: f64,
    pub argmax_k: u32,
    pub argmax_parts: Vec<u32>,
    /// The supremum is only certified over `k ≤ kmax`.
    pub kmax: u32,
}

/// `A_m = (sup_{k ≤ kmax} sup_{k₁+…+k_m = k} (k!/M_k) Π M_{k_j}/k_j!)^{1/m}` by
/// exhaustive enumeration of ordered compositions.
pub fn a_m_bruteforce(seq: &SmoothnessSequence, m: u32, kmax: u32) -> Result<AmValue> {
    seq.validate()?;
    if m == 0 {
        return param("A_m needs m >= 1");
    }
    if kmax < m {
        return param(format!("kmax = {kmax} < m = {m}: no compositions"));
    }
    let a = |k: u32| seq.ln_m(k) - ln_factorial(k as u64);
    let mut best = f64::NEG_INFINITY;
    let mut best_k = m;
    let mut best_parts = vec![1; m as usize];
    for k in m..=kmax {
        let head = -a(k);
        if head == f64::NEG_INFINITY {
            continue;
        }
        for_each_composition(k, m, |parts| {
            let mut s = head;
            for &p in parts {
                s += a(p);
            }
            if s > best {
                best = s;
                best_k = k;
                best_parts = parts.to_vec();
            }
        });
    }
    if best == f64::NEG_INFINITY {
        return param("sequence excludes every composition up to kmax");
    }
    Ok(AmValue {
        m,
        value: (best / m as f64).exp(),
        argmax_k: best_k,
        argmax_parts: best_parts,
        kmax,
    })
}

/// `A_1, …, A_mmax` by brute force.
pub fn a_m_sequence(seq: &SmoothnessSequence, mmax: u32, kmax: u32) -> Result<Vec<f64>> {
    (1..=mmax).map(|m| a_m_bruteforce(seq, m, kmax).map(|a| a.value)).collect()
}

/// Closed form `A_m = m!^{(1−r)/m}` for `M_k = k!^r`.
pub fn a_m_gevrey(r: f64, m: u32) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return param(format!("closed form needs r >= 1, got {r}"));
    }
    if m == 0 {
        return param("A_m needs m >= 1");
    }
    Ok(((1.0 - r) * ln_factorial(m as u64) / m as f64).exp())
}

/// `ln φ_r(x)` and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiValue {
    #[serde(with = "crate::serde_ext::float")]
    pub ln_value: f64,
    pub terms: u64,
    /// Saddle-point approximation used instead of summation.
    pub laplace: bool,
}

const PHI_DIRECT_PEAK_CAP: f64 = 2e6;

/// `ln φ_r(x)` with `φ_r(x) = Σ_k x^k/k!^r`, summed in log space until the
/// geometric tail bound falls below `tol` times the partial sum. When the
/// peak index `x^{1/r}` exceeds two million the saddle-point form
/// `f(k*) + ½ ln(2πk*/r)` is returned; its relative error is `O(1/k*)`.
pub fn ln_phi_r(r: f64, x: f64, tol: f64) -> Result<PhiValue> {
    if !(r > 0.0 && r.is_finite()) || !(x >= 0.0) || !(tol > 0.0) {
        return param(format!("phi_r needs r > 0, x >= 0, tol > 0 (r = {r}, x = {x}, tol = {tol})"));
    }
    if x == 0.0 {
        return Ok(PhiValue {
            ln_value: 0.0,
            terms: 1,
            laplace: false,
        });
    }
    let lx = x.ln();
    if x.is_infinite() {
        return Err(Error::Range { log_value: f64::INFINITY });
    }
    let ln_peak_index = lx / r;
    if ln_peak_index > PHI_DIRECT_PEAK_CAP.ln() {
        if ln_peak_index > 700.0 {
            // ln φ ~ r x^{1/r} itself overflows
            return Err(Error::Range { log_value: f64::INFINITY });
        }
        let ks = ln_peak_index.exp() - 0.5;
        let f = ks * lx - r * statrs::function::gamma::ln_gamma(ks + 1.0);
        return Ok(PhiValue {
            ln_value: f + 0.5 * (std::f64::consts::TAU * (ks + 0.5) / r).ln(),
            terms: 0,
            laplace: true,
        });
    }
    let peak_k = ln_peak_index.exp().floor();
    let ln_term_at = |k: f64| k * lx - r * statrs::function::gamma::ln_gamma(k + 1.0);
    let scale = ln_term_at(peak_k).max(ln_term_at(peak_k + 1.0)).max(0.0);
    let mut acc = Neumaier::default();
    let mut ln_fact = 0.0f64;
    let mut k = 0u64;
    loop {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let lt = k as f64 * lx - r * ln_fact;
        acc.add((lt - scale).exp());
        let ratio = x / ((k + 1) as f64).powf(r);
        if ratio < 1.0 {
            let next = (lt + ratio.ln() - scale).exp();
            if next / (1.0 - ratio) <= tol * acc.value() {
                return Ok(PhiValue {
                    ln_value: scale + acc.value().ln(),
                    terms: k + 1,
                    laplace: false,
                });
            }
        }
        k += 1;
        if k > 100_000_000 {
            return Err(Error::NonConvergence {
                what: "phi_r series",
                iterations: k as usize,
                estimate: scale + acc.value().ln(),
            });
        }
    }
}

/// `ln Σ_{l=0}^{L} x^l/l!^r`.
fn ln_phi_r_partial(r: f64, x: f64, terms: u64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let lx = x.ln();
    let mut out = f64::NEG_INFINITY;
    let mut ln_fact = 0.0;
    for l in 0..=terms {
        if l > 0 {
            ln_fact += (l as f64).ln();
        }
        out = log_add(out, l as f64 * lx - r * ln_fact);
    }
    out
}

/// `φ_r(x)`; a range error carrying `ln φ_r(x)` when it overflows.
pub fn phi_r_eval(r: f64, x: f64, tol: f64) -> Result<f64> {
    let v = ln_phi_r(r, x, tol)?;
    let out = v.ln_value.exp();
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Range { log_value: v.ln_value })
    }
}

/// Slopes of `ln φ_r(x)` against `x^{1/r}` between consecutive grid points.
/// For an entire function of order `1/r` and type `r` they tend to `r`.
pub fn phi_r_type_slopes(r: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| ln_phi_r(r, x, SERIES_TOL).map(|v| (x.powf(1.0 / r), v.ln_value)))
        .collect::<Result<_>>()?;
    Ok(pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_matrix::{geometric_inverse_toeplitz, make_toeplitz, IndexWindow, ToeplitzSymbol};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn w(n: i64) -> IndexWindow {
        IndexWindow::symmetric(n).unwrap()
    }

    fn c_gamma(g: f64, n: i64) -> LatticeMatrix {
        make_toeplitz(&ToeplitzSymbol::c_gamma(g).unwrap(), w(n)).unwrap()
    }

    #[test]
    fn side_diagonals_of_examples() {
        let id = LatticeMatrix::identity(w(4));
        assert_eq!(side_diag_sup(&id, 0), 1.0);
        assert_eq!(side_diag_sup(&id, 2), 0.0);
        let g = 0.3;
        let a = c_gamma(g, 10);
        assert_eq!(side_diag_sup(&a, 1), (-g).exp());
        assert_eq!(side_diag_sup(&a, -1), 0.0);
        assert_eq!(side_diag_sup(&a, 30), 0.0);
        let inv = geometric_inverse_toeplitz(g, w(10), 1e-15).unwrap();
        for k in 0..8 {
            assert_relative_eq!(side_diag_sup(&inv, k), (-g * k as f64).exp(), max_relative = 1e-15);
        }
        // window path agrees with the symbol path
        let general = a.clone().into_general();
        assert_eq!(side_diag_sup(&general, 1), (-g).exp());
    }

    #[test]
    fn jaffard_examples() {
        assert_eq!(jaffard_norm(&LatticeMatrix::identity(w(3)), 2.0).unwrap(), 1.0);
        let a = c_gamma(0.1, 10);
        assert_relative_eq!(jaffard_norm(&a, 2.0).unwrap(), 4.0 * (-0.1f64).exp(), max_relative = 1e-15);
        let g = 0.2;
        let inv = geometric_inverse_toeplitz(g, w(10), 1e-15).unwrap();
        let scan = (0..2000).map(|k| (1.0 + k as f64).powi(3) * (-g * k as f64).exp()).fold(0.0, f64::max);
        assert_relative_eq!(jaffard_norm(&inv, 3.0).unwrap(), scan, max_relative = 1e-13);
        assert!(jaffard_norm(&a, 0.0).is_err());
    }

    #[test]
    fn cv_norm_examples() {
        for v in [Weight::polynomial(2.0), Weight::subexp(2.0)] {
            assert_relative_eq!(cv_norm(&LatticeMatrix::identity(w(3)), &v).unwrap(), 1.0);
        }
        let g: f64 = 0.25;
        for r in [0.0, 1.0, 2.5] {
            let want = 1.0 + 2f64.powf(r) * (-g).exp();
            assert_relative_eq!(cv_norm(&c_gamma(g, 8), &Weight::polynomial(r)).unwrap(), want, max_relative = 1e-15);
        }
        let inv = geometric_inverse_toeplitz(g, w(8), 1e-15).unwrap();
        assert_relative_eq!(cv_norm(&inv, &Weight::constant()).unwrap(), 1.0 / (1.0 - (-g).exp()), max_relative = 1e-14);
    }

    #[test]
    fn geometric_subexp_norm_matches_dales_davie_route() {
        // ‖C_γ⁻¹‖_{C_{v_r}} = Σ_k ‖𝔇^k C_γ⁻¹‖_{C_0}/k!^r
        let g = 0.3;
        let inv = geometric_inverse_toeplitz(g, w(8), 1e-15).unwrap();
        let cv = cv_norm(&inv, &Weight::subexp(2.0)).unwrap();
        let dd = dales_davie_norm(&inv, &SmoothnessSequence::Gevrey { r: 2.0 }, 120, Ambient::C0).unwrap();
        assert!(!dd.divergent);
        assert_relative_eq!(cv, dd.value, max_relative = 1e-12);
    }

    #[test]
    fn banded_error_examples() {
        let g = 0.4;
        let inv = geometric_inverse_toeplitz(g, w(10), 1e-15).unwrap();
        for k in [0u64, 1, 5] {
            let want = (-g * (k + 1) as f64).exp() / (1.0 - (-g).exp());
            assert_relative_eq!(banded_error(&inv, k, None).unwrap(), want, max_relative = 1e-13);
        }
        let banded = LatticeMatrix::from_fn(w(6), |k, l| {
            if (k - l).abs() <= 2 {
                Complex64::new(1.0 / (1 + (k - l).abs()) as f64, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .unwrap();
        assert_eq!(banded_error(&banded, 2, None).unwrap(), 0.0);
        assert_eq!(banded_error(&banded, 7, None).unwrap(), 0.0);
        let table = SideDiagonals::of(&banded).banded_error_table();
        assert_relative_eq!(table[0], banded_error(&banded, 0, None).unwrap());
        assert_relative_eq!(table[1], banded_error(&banded, 1, None).unwrap());
    }

    #[test]
    fn dd_seminorm_examples() {
        let g: f64 = 0.5;
        let want = (-g).exp() * (1.0 + 0.5 + 1.0 / 6.0);
        assert_relative_eq!(dd_seminorm(&c_gamma(g, 6), 3, Ambient::C0).unwrap(), want, max_relative = 1e-15);
        let diag = LatticeMatrix::diagonal(w(3), |k| Complex64::new(k as f64, 0.0)).unwrap();
        assert_eq!(dd_seminorm(&diag, 4, Ambient::C0).unwrap(), 0.0);
        // operator ambient agrees for a single off-diagonal: ‖e^{−γ}T₁‖ = e^{−γ}
        let op = dd_seminorm(&c_gamma(g, 6), 2, Ambient::operator()).unwrap();
        assert_relative_eq!(op, (-g).exp() * 1.5, max_relative = 1e-9);
    }

    #[test]
    fn dales_davie_examples() {
        let id = LatticeMatrix::identity(w(3));
        let v = dales_davie_norm(&id, &SmoothnessSequence::Gevrey { r: 2.0 }, 20, Ambient::C0).unwrap();
        assert_relative_eq!(v.value, 1.0);
        let g = 0.2;
        let r = 1.5;
        let v = dales_davie_norm(&c_gamma(g, 5), &SmoothnessSequence::Gevrey { r }, 60, Ambient::C0).unwrap();
        let phi1 = phi_r_eval(r, 1.0, 1e-16).unwrap();
        assert_relative_eq!(v.value, 1.0 + (-g).exp() * phi1, max_relative = 1e-14);
        let inv = geometric_inverse_toeplitz(0.5, w(5), 1e-15).unwrap();
        assert!(dales_davie_norm(&inv, &SmoothnessSequence::Analytic, 60, Ambient::C0).unwrap().divergent);
    }

    #[test]
    fn weight_checks() {
        let p = check_weight(&Weight::polynomial(2.0), 20).unwrap();
        assert!(p.submultiplicative);
        assert!(p.grs_trend.last().unwrap().1 < 1.0 + 1e-6);
        let s = check_weight(&Weight::subexp(2.0), 20).unwrap();
        assert!(s.submultiplicative);
        assert!(s.grs_trend.last().unwrap().1 < 1.001);
        let table = (-40..=40).map(|k: i64| (k, 2f64.powi(k.abs() as i32))).collect();
        let t = check_weight(&Weight::Table { table }, 20).unwrap();
        assert!(t.submultiplicative);
        assert_relative_eq!(t.grs_trend.last().unwrap().1, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn a_m_examples() {
        for m in 1..=5 {
            assert_relative_eq!(a_m_bruteforce(&SmoothnessSequence::Analytic, m, 12).unwrap().value, 1.0, max_relative = 1e-14);
        }
        let s = SmoothnessSequence::Gevrey { r: 2.0 };
        assert_relative_eq!(a_m_bruteforce(&s, 2, 15).unwrap().value, 0.5f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(a_m_bruteforce(&s, 1, 15).unwrap().value, 1.0, max_relative = 1e-14);
        assert_relative_eq!(a_m_gevrey(2.0, 3).unwrap(), 6f64.powf(-1.0 / 3.0), max_relative = 1e-14);
        assert_eq!(a_m_gevrey(1.0, 7).unwrap(), 1.0);
        assert!(a_m_bruteforce(&s, 4, 3).is_err());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi_r_eval(2.0, 0.0, 1e-15).unwrap(), 1.0);
        assert_relative_eq!(phi_r_eval(1.0, 2.0, 1e-16).unwrap(), 2f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(ln_phi_r(1.0, 500.0, 1e-16).unwrap().ln_value, 500.0, max_relative = 1e-14);
        match phi_r_eval(1.0, 1000.0, 1e-15) {
            Err(Error::Range { log_value }) => assert_relative_eq!(log_value, 1000.0, max_relative = 1e-13),
            other => panic!("expected range error, got {other:?}"),
        }
        // saddle point agrees with e^x for r = 1
        let big = ln_phi_r(1.0, 1e7, 1e-15).unwrap();
        assert!(big.laplace);
        assert_relative_eq!(big.ln_value, 1e7, max_relative = 1e-12);
    }

    #[test]
    fn smoothness_admissibility() {
        assert!(SmoothnessSequence::Analytic.is_admissible(20));
        assert!(SmoothnessSequence::Gevrey { r: 2.0 }.is_admissible(20));
        assert!(SmoothnessSequence::Finite { k: 4 }.is_admissible(10));
        assert!(!SmoothnessSequence::Gevrey { r: 0.5 }.is_admissible(10));
    }

    #[test]
    fn weight_json_shape() {
        let j = serde_json::to_value(Weight::polynomial(2.0)).unwrap();
        assert_eq!(j, serde_json::json!({"kind": "polynomial", "r": 2.0}));
        let back: Weight = serde_json::from_str(r#"{"kind":"table","table":{"0":1.0,"1":2.0}}"#).unwrap();
        assert_eq!(back.eval(1).unwrap(), 2.0);
    }
}
