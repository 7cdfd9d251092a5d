//! Besov seminorms and the hypersingular Bessel seminorm for the phase
//! automorphism group `ψ_t`.
//!
//! With `g(t) = ‖Δ_t^k A‖`, periodicity (`g(t + 1) = g(t)`) and symmetry
//! (`g(−t) = g(t)`) give the exact reduction
//!
//! ```text
//! ∫_ℝ (|t|^{−r} g(t))^p dt/|t| = 2 ∫_0^1 g(s)^p ζ(rp + 1, s) ds
//! ```
//!
//! with `ζ` the Hurwitz zeta function, so no cutoff at large `|t|` is
//! needed. The integral over `(0, 1]` is split into dyadic shells and the
//! part near zero is bounded by `g(s) ≤ (2πs)^k ‖𝔇^k A‖`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{param, Error, Result};
use crate::lattice_matrix::{operator_norm_l2, IndexWindow, LatticeMatrix};
use crate::norms_weights::{ln_derivation_norm, Ambient, SideDiagonals};
use crate::quadrature::integrate;
use crate::special::{gamma, hurwitz_zeta, poly_geometric_sum, zeta, Neumaier};

/// Integrability exponent `p ∈ [1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PExponent {
    Finite(f64),
    Infinity,
}

impl PExponent {
    pub fn validate(&self) -> Result<()> {
        match self {
            PExponent::Finite(p) if !(*p >= 1.0 && p.is_finite()) => param(format!("p must lie in [1, ∞], got {p}")),
            _ => Ok(()),
        }
    }
}

impl Serialize for PExponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PExponent::Finite(p) => s.serialize_f64(*p),
            PExponent::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PExponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(PExponent::Finite(p)),
            Raw::Text(s) if s == "inf" => Ok(PExponent::Infinity),
            Raw::Text(s) => Err(de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

/// Contribution of one dyadic shell `[2^{−j}, 2^{1−j}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellTrace {
    pub shell: u32,
    pub lo: f64,
    pub hi: f64,
    pub contribution: f64,
    pub error: f64,
}

/// A computed seminorm with its error bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub quadrature_error: f64,
    /// Bound on what the omitted region near `t = 0` (and, for truncated
    /// geometric symbols, the omitted offsets) can add to `value`.
    pub tail_bound: f64,
    pub p: PExponent,
    pub r: f64,
    pub k: u32,
    pub ambient: Ambient,
    /// Maximizing `t` (Besov, `p = ∞`) or `ε` (hypersingular).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argmax: Option<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shells: Vec<ShellTrace>,
}

impl SeminormEstimate {
    /// Writes the shell trace as CSV `(shell, lo, hi, contribution, error)`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.shells {
            out.serialize(s)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Quadrature controls for [`besov_seminorm_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovOptions {
    pub rel_tol: f64,
    pub max_shells: u32,
    pub max_panels: usize,
}

impl Default for BesovOptions {
    fn default() -> Self {
        BesovOptions {
            rel_tol: 1e-10,
            max_shells: 200,
            max_panels: 20_000,
        }
    }
}

/// `⌊r⌋ + 1`, the smallest integer strictly above `r`.
pub fn default_order(r: f64) -> u32 {
    r.floor() as u32 + 1
}

/// `t ↦ ‖Δ_t^k A‖` in the chosen ambient norm.
struct DifferenceProfile<'a> {
    a: &'a LatticeMatrix,
    ambient: Ambient,
    k: u32,
    /// `(m, weight)`: `d(m)` for `C_0`, `d(m)(1 + |m|)^s` for `J_s`.
    offsets: Vec<(f64, f64)>,
    max_offset: f64,
    ln_dk: f64,
}

impl<'a> DifferenceProfile<'a> {
    fn new(a: &'a LatticeMatrix, ambient: Ambient, k: u32) -> Result<Self> {
        let sd = SideDiagonals::of(a);
        let offsets: Vec<(f64, f64)> = sd
            .iter()
            .filter(|(m, _)| *m != 0)
            .map(|(m, d)| {
                let w = match ambient {
                    Ambient::Jaffard { s } => d * (1.0 + m.unsigned_abs() as f64).powf(s),
                    _ => d,
                };
                (m as f64, w)
            })
            .collect();
        let max_offset = offsets.iter().map(|(m, _)| m.abs()).fold(0.0, f64::max);
        let ln_dk = ln_derivation_norm(a, &sd, k, ambient)?;
        Ok(DifferenceProfile {
            a,
            ambient,
            k,
            offsets,
            max_offset,
            ln_dk,
        })
    }

    fn eval(&self, t: f64) -> Result<f64> {
        let k = self.k as i32;
        let factor = |m: f64| (2.0 * (PI * (m * t).rem_euclid(1.0)).sin()).abs().powi(k);
        match self.ambient {
            Ambient::C0 => {
                let mut acc = Neumaier::default();
                for &(m, w) in &self.offsets {
                    acc.add(w * factor(m));
                }
                Ok(acc.value())
            }
            Ambient::Jaffard { .. } => Ok(self.offsets.iter().map(|&(m, w)| w * factor(m)).fold(0.0, f64::max)),
            Ambient::Operator { tol } => operator_norm_l2(&self.a.difference_power(t, self.k), tol),
        }
    }

    /// Bound on `g` near zero: `g(s) ≤ (2πs)^k ‖𝔇^k A‖`.
    fn ln_small_t_constant(&self) -> f64 {
        self.k as f64 * TAU.ln() + self.ln_dk
    }

    fn is_zero(&self) -> bool {
        self.offsets.is_empty() || self.ln_dk == f64::NEG_INFINITY
    }
}

/// Bound on the Besov seminorm of the part of a truncated geometric symbol
/// beyond its stored offsets: `|T_m|_Λ = |m|^r |T_1|_Λ` and Minkowski.
fn geometric_truncation_bound(a: &LatticeMatrix, r: f64, unit: f64) -> Result<f64> {
    let sd = SideDiagonals::of(a);
    let Some(p) = sd.continuation() else { return Ok(0.0) };
    // Σ_{m > K} scale e^{−γm} m^r ≤ scale q^{K+1} Σ_{j≥0} q^j (1 + K + 1 + j)^r
    // ≤ scale q^{K+1} (K + 2)^r Σ_j q^j (1 + j)^r
    let q = p.ratio();
    let head = p.modulus(p.terms as i64 + 1) * ((p.terms + 2) as f64).powf(r);
    Ok(unit * head * poly_geometric_sum(q, r, 1e-12)?.value)
}

/// Besov seminorm `(∫_ℝ (|t|^{−r}‖Δ_t^k A‖)^p dt/|t|)^{1/p}`, or
/// `sup_t |t|^{−r}‖Δ_t^k A‖` for `p = ∞`. `k = None` uses `⌊r⌋ + 1`.
pub fn besov_seminorm(a: &LatticeMatrix, p: PExponent, r: f64, k: Option<u32>, ambient: Ambient) -> Result<SeminormEstimate> {
    besov_seminorm_with(a, p, r, k, ambient, BesovOptions::default())
}

pub fn besov_seminorm_with(
    a: &LatticeMatrix,
    p: PExponent,
    r: f64,
    k: Option<u32>,
    ambient: Ambient,
    opts: BesovOptions,
) -> Result<SeminormEstimate> {
    p.validate()?;
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("smoothness r must be positive, got {r}"));
    }
    let k = k.unwrap_or_else(|| default_order(r));
    if (k as f64) <= r {
        return param(format!("difference order k = {k} must exceed r = {r}"));
    }
    let profile = DifferenceProfile::new(a, ambient, k)?;
    let mut est = SeminormEstimate {
        value: 0.0,
        quadrature_error: 0.0,
        tail_bound: 0.0,
        p,
        r,
        k,
        ambient,
        argmax: None,
        converged: true,
        shells: Vec::new(),
    };
    if profile.is_zero() {
        return Ok(est);
    }
    let additive = matches!(ambient, Ambient::C0);
    match p {
        // p = 1 in C_0: linear in the offsets,
        // and |T_m|_Λ = |m|^r |T_1|_Λ
        PExponent::Finite(pf) if pf == 1.0 && additive && profile.offsets.len() > 1 => {
            let unit_sym = crate::lattice_matrix::ToeplitzSymbol::from_real_pairs([(1, 1.0)])?;
            let unit = crate::lattice_matrix::make_toeplitz(&unit_sym, IndexWindow::symmetric(2)?)?;
            let unit_est = besov_seminorm_with(&unit, p, r, Some(k), Ambient::C0, opts)?;
            let mut moment = Neumaier::default();
            for &(m, w) in &profile.offsets {
                moment.add(w * m.abs().powf(r));
            }
            let moment = moment.value();
            est.value = unit_est.value * moment;
            est.quadrature_error = unit_est.quadrature_error * moment;
            est.tail_bound = unit_est.tail_bound * moment;
            est.converged = unit_est.converged;
            est.shells = unit_est
                .shells
                .into_iter()
                .map(|sh| ShellTrace {
                    contribution: sh.contribution * moment,
                    error: sh.error * moment,
                    ..sh
                })
                .collect();
        }
        PExponent::Finite(pf) => besov_finite(&profile, pf, r, &opts, &mut est)?,
        PExponent::Infinity => besov_sup(&profile, r, &opts, &mut est)?,
    }
    if !matches!(ambient, Ambient::Operator { .. }) && SideDiagonals::of(a).continuation().is_some() {
        // seminorm of the single offset T_1 in the same setting
        let unit_sym = crate::lattice_matrix::ToeplitzSymbol::from_real_pairs([(1, 1.0)])?;
        let unit = crate::lattice_matrix::make_toeplitz(&unit_sym, a.window())?;
        let unit_est = besov_seminorm_with(&unit, p, r, Some(k), Ambient::C0, opts)?;
        let weight = match ambient {
            Ambient::Jaffard { s } => s,
            _ => 0.0,
        };
        est.tail_bound += geometric_truncation_bound(a, r + weight, unit_est.value + unit_est.tail_bound)?;
    }
    Ok(est)
}

fn shell_panels(profile: &DifferenceProfile<'_>, lo: f64, hi: f64) -> usize {
    (2.0 * profile.max_offset * (hi - lo)).ceil().clamp(1.0, 4096.0) as usize
}

fn besov_finite(profile: &DifferenceProfile<'_>, p: f64, r: f64, opts: &BesovOptions, est: &mut SeminormEstimate) -> Result<()> {
    let sigma = r * p + 1.0;
    let k = profile.k as f64;
    let failure: std::cell::Cell<Option<Error>> = std::cell::Cell::new(None);
    let integrand = |s: f64| -> f64 {
        match profile.eval(s) {
            Ok(g) => g.powf(p) * hurwitz_zeta(sigma, s),
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        }
    };
    // ∫_0^ε (2πs)^{kp} D^p (s^{−σ} + ζ(σ)) ds
    let near_zero = |eps: f64| -> f64 {
        let c = (p * profile.ln_small_t_constant()).exp();
        c * (eps.powf((k - r) * p) / ((k - r) * p) + zeta(sigma) * eps.powf(k * p + 1.0) / (k * p + 1.0))
    };
    let mut total = Neumaier::default();
    let mut err = 0.0;
    let mut remainder = f64::INFINITY;
    for j in 1..=opts.max_shells {
        let hi = 0.5f64.powi(j as i32 - 1);
        let lo = hi * 0.5;
        let res = integrate(
            integrand,
            lo,
            hi,
            opts.rel_tol * 1e-3 * total.value(),
            opts.rel_tol,
            shell_panels(profile, lo, hi),
            opts.max_panels,
        );
        if let Some(e) = failure.take() {
            return Err(e);
        }
        total.add(res.value);
        err += res.abs_error;
        est.converged &= res.converged;
        est.shells.push(ShellTrace {
            shell: j,
            lo,
            hi,
            contribution: 2.0 * res.value,
            error: 2.0 * res.abs_error,
        });
        remainder = near_zero(lo);
        if j >= 3 && remainder <= opts.rel_tol * total.value() {
            break;
        }
    }
    let s = total.value();
    let value = (2.0 * s).powf(1.0 / p);
    est.value = value;
    est.quadrature_error = (2.0 * (s + err)).powf(1.0 / p) - value;
    est.tail_bound = (2.0 * (s + remainder)).powf(1.0 / p) - value;
    if !est.converged {
        log::warn!("Besov quadrature did not reach tolerance {} (estimate {value:e})", opts.rel_tol);
    }
    Ok(())
}

fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a) > tol * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

fn besov_sup(profile: &DifferenceProfile<'_>, r: f64, opts: &BesovOptions, est: &mut SeminormEstimate) -> Result<()> {
    let f = |s: f64| -> Result<f64> { Ok(s.powf(-r) * profile.eval(s)?) };
    let k = profile.k as f64;
    let c0 = profile.ln_small_t_constant().exp();
    let mut best = (0.0f64, 0.0f64);
    let mut bound_below = f64::INFINITY;
    // g is even and 1-periodic, and s^{−r} decreases, so (0, 1/2] suffices
    for j in 2..=opts.max_shells + 1 {
        let hi = 0.5f64.powi(j as i32 - 1);
        let lo = hi * 0.5;
        let n = 64 + 16 * shell_panels(profile, lo, hi);
        let h = (hi - lo) / n as f64;
        let vals: Vec<f64> = (0..=n).map(|i| f(lo + i as f64 * h)).collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]));
        for &i in order.iter().take(3) {
            let a = lo + (i.max(1) - 1) as f64 * h;
            let b = (lo + (i + 1) as f64 * h).min(hi);
            let (t, v) = golden_max(&f, a, b, 1e-13)?;
            let (t, v) = if vals[i] > v { (lo + i as f64 * h, vals[i]) } else { (t, v) };
            if v > best.1 {
                best = (t, v);
            }
        }
        // below lo: s^{−r} g(s) ≤ c0 s^{k−r} ≤ c0 lo^{k−r}
        bound_below = c0 * lo.powf(k - r);
        if bound_below <= best.1 * 1e-13 {
            break;
        }
    }
    est.value = best.1;
    est.argmax = Some(best.0);
    est.quadrature_error = best.1 * 1e-12;
    est.tail_bound = (bound_below - best.1).max(0.0);
    est.converged = est.tail_bound == 0.0;
    Ok(())
}

/// `I_m(ε) = ∫_{ε ≤ |t| ≤ 1} (e^{2πimt} − 1)|t|^{−r} dt/|t| = 2∫_ε^1 (cos 2πmt − 1) t^{−r−1} dt`.
pub fn hypersingular_weight(m: i64, r: f64, eps: f64, rel_tol: f64) -> (f64, f64) {
    hypersingular_segment(m, r, eps, 1.0, rel_tol)
}

/// `sup_m 2∫_0^∞ (1 − cos 2πmt) t^{−r−1} dt / |m|^r`, which bounds
/// `|I_m(ε)|/|m|^r` uniformly in `ε`.
fn hypersingular_unit(r: f64) -> f64 {
    2.0 * TAU.powf(r) * PI / (2.0 * gamma(r + 1.0) * (PI * r / 2.0).sin())
}

/// `sup_{ε ∈ grid} ‖∫_{ε ≤ |t| ≤ 1} Δ_t(A)|t|^{−r} dt/|t|‖`, for `0 < r < 2`.
///
/// The `t`-integral acts on offset `m` as multiplication by `I_m(ε)`.
pub fn hypersingular_seminorm(a: &LatticeMatrix, r: f64, eps_grid: &[f64], ambient: Ambient) -> Result<SeminormEstimate> {
    if !(r > 0.0 && r < 2.0) {
        return param(format!("hypersingular characterization needs 0 < r < 2, got {r}"));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return param("eps grid must be nonempty and lie in (0, 1)");
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return param("eps grid must be strictly decreasing");
    }
    const REL_TOL: f64 = 1e-11;
    let sd = SideDiagonals::of(a);
    let offsets: Vec<(i64, f64)> = sd.iter().filter(|(m, _)| *m != 0).collect();
    let mut est = SeminormEstimate {
        value: 0.0,
        quadrature_error: 0.0,
        tail_bound: 0.0,
        p: PExponent::Infinity,
        r,
        k: 1,
        ambient,
        argmax: None,
        converged: true,
        shells: Vec::new(),
    };
    if offsets.is_empty() {
        return Ok(est);
    }
    // I_m(ε) = |m|^r (G(|m|) − G(|m|ε)) with G(x) = 2∫_0^x (cos 2πu − 1) u^{−r−1} du
    let mut points: Vec<f64> = Vec::with_capacity(offsets.len() * (eps_grid.len() + 1));
    for &(m, _) in &offsets {
        let mf = m.unsigned_abs() as f64;
        points.push(mf);
        points.extend(eps_grid.iter().map(|e| mf * e));
    }
    let kernel = CumulativeKernel::new(r, points, REL_TOL);
    for &eps in eps_grid {
        let weights: Vec<(f64, f64)> = offsets
            .iter()
            .map(|&(m, _)| {
                let mf = m.unsigned_abs() as f64;
                let (hi, e_hi) = kernel.eval(mf);
                let (lo, e_lo) = kernel.eval(mf * eps);
                let scale = mf.powf(r);
                (scale * (hi - lo), scale * (e_hi + e_lo))
            })
            .collect();
        let (value, qerr) = match ambient {
            Ambient::C0 | Ambient::Jaffard { .. } => {
                let s = match ambient {
                    Ambient::Jaffard { s } => s,
                    _ => 0.0,
                };
                let terms = offsets
                    .iter()
                    .zip(&weights)
                    .map(|(&(m, d), &(w, e))| {
                        let wt = d * (s * (m.unsigned_abs() as f64).ln_1p()).exp();
                        (wt * w.abs(), wt * e)
                    });
                if matches!(ambient, Ambient::C0) {
                    terms.fold((0.0f64, 0.0f64), |acc, (v, e)| (acc.0 + v, acc.1 + e))
                } else {
                    terms.fold((0.0f64, 0.0f64), |acc, (v, e)| (acc.0.max(v), acc.1.max(e)))
                }
            }
            Ambient::Operator { tol } => {
                let table: std::collections::HashMap<i64, f64> =
                    offsets.iter().zip(&weights).map(|(&(m, _), &(w, _))| (m, w)).collect();
                let b = a.scale_offsets(|m| crate::Complex64::new(table.get(&m).copied().unwrap_or(0.0), 0.0));
                let qe: f64 = offsets.iter().zip(&weights).map(|(&(_, d), &(_, e))| d * e).sum();
                (operator_norm_l2(&b, tol)?, qe)
            }
        };
        if value > est.value {
            est.value = value;
            est.quadrature_error = qerr;
            est.argmax = Some(eps);
        }
    }
    if let Some(p) = sd.continuation() {
        let s = match ambient {
            Ambient::Jaffard { s } => s,
            _ => 0.0,
        };
        let head = p.modulus(p.terms as i64 + 1) * ((p.terms + 2) as f64).powf(r + s);
        est.tail_bound = hypersingular_unit(r) * head * poly_geometric_sum(p.ratio(), r + s, 1e-12)?.value;
    }
    Ok(est)
}

/// `G(x) = 2∫_0^x (cos 2πu − 1) u^{−r−1} du` tabulated at given points.
///
/// Below [`KERNEL_SERIES_MAX`] the Taylor series of `cos` is integrated
/// termwise; above it the integral is accumulated by quadrature between
/// consecutive sorted points.
struct CumulativeKernel {
    xs: Vec<f64>,
    values: Vec<(f64, f64)>,
}

const KERNEL_SERIES_MAX: f64 = 0.5;

impl CumulativeKernel {
    fn new(r: f64, mut xs: Vec<f64>, rel_tol: f64) -> Self {
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let f = |u: f64| -> f64 {
            let s = (PI * u.rem_euclid(1.0)).sin();
            -4.0 * s * s * u.powf(-r - 1.0)
        };
        let mut values = Vec::with_capacity(xs.len());
        let mut acc = Neumaier::default();
        let mut err = 0.0;
        let mut prev: Option<f64> = None;
        for &x in &xs {
            if x <= KERNEL_SERIES_MAX {
                values.push((kernel_series(r, x), 1e-15 * kernel_series(r, x).abs()));
                continue;
            }
            let from = prev.unwrap_or_else(|| {
                acc.add(kernel_series(r, KERNEL_SERIES_MAX));
                KERNEL_SERIES_MAX
            });
            let panels = (2.0 * (x - from)).ceil().clamp(1.0, 1048576.0) as usize;
            let res = integrate(f, from, x, 0.0, rel_tol, panels, panels.max(1000) * 8);
            acc.add(res.value);
            err += res.abs_error;
            values.push((acc.value(), err + 1e-15 * acc.value().abs()));
            prev = Some(x);
        }
        CumulativeKernel { xs, values }
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.xs.partition_point(|&y| y < x);
        debug_assert!(self.xs[i] == x);
        self.values[i]
    }
}

/// `2 Σ_{j≥1} (−1)^j (2π)^{2j} x^{2j−r} / ((2j)! (2j − r))`.
fn kernel_series(r: f64, x: f64) -> f64 {
    let y = TAU * x;
    let mut term = 1.0; // y^{2j}/(2j)!
    let mut acc = Neumaier::default();
    for j in 1..200 {
        let jj = 2 * j;
        term *= -y * y / ((jj - 1) * jj) as f64;
        let c = term / (jj as f64 - r);
        acc.add(c);
        if c.abs() <= 1e-17 * acc.value().abs() {
            break;
        }
    }
    2.0 * acc.value() * x.powf(-r)
}

/// `2∫_lo^hi (cos 2πmt − 1) t^{−r−1} dt` over dyadic pieces.
fn hypersingular_segment(m: i64, r: f64, lo: f64, hi: f64, rel_tol: f64) -> (f64, f64) {
    let mf = m.unsigned_abs() as f64;
    let f = |t: f64| -> f64 {
        let s = (PI * (mf * t).rem_euclid(1.0)).sin();
        -2.0 * s * s * t.powf(-r - 1.0)
    };
    let mut acc = Neumaier::default();
    let mut err = 0.0;
    let mut top = hi;
    while top > lo {
        let bottom = (top * 0.5).max(lo);
        let panels = (2.0 * mf * (top - bottom)).ceil().clamp(1.0, 8192.0) as usize;
        let res = integrate(f, bottom, top, 0.0, rel_tol, panels, 100_000);
        acc.add(res.value);
        err += res.abs_error;
        top = bottom;
    }
    (2.0 * acc.value(), 2.0 * err)
}

/// Parametrized Toeplitz families with closed-form `C_r` norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ToeplitzFamily {
    /// `C_γ = I − e^{−γ}T₁`.
    CGamma { gammas: Vec<f64> },
    /// Shifts `T_m`.
    Shift { offsets: Vec<i64> },
}

impl ToeplitzFamily {
    /// `(parameter, member)` pairs on a window large enough for every member.
    pub fn members(&self) -> Result<Vec<(f64, LatticeMatrix)>> {
        use crate::lattice_matrix::{make_toeplitz, IndexWindow, ToeplitzSymbol};
        match self {
            ToeplitzFamily::CGamma { gammas } => {
                let w = IndexWindow::symmetric(4)?;
                gammas
                    .iter()
                    .map(|&g| Ok((g, make_toeplitz(&ToeplitzSymbol::c_gamma(g)?, w)?)))
                    .collect()
            }
            ToeplitzFamily::Shift { offsets } => offsets
                .iter()
                .map(|&m| {
                    let w = IndexWindow::symmetric(m.abs() + 1)?;
                    Ok((m as f64, make_toeplitz(&ToeplitzSymbol::from_real_pairs([(m, 1.0)])?, w)?))
                })
                .collect(),
        }
    }
}

/// Ratios `|A|_{Λ¹_r(C_0)} / ‖A‖_{C_r}` across a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub r: f64,
    /// `(parameter, seminorm, C_r norm, ratio)`.
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Compares the `p = 1` Besov seminorm over `C_0` with the `C_r` norm on a
/// Toeplitz family. Equivalence means ratios bounded away from 0 and ∞; the
/// constants are not known a priori, so nothing is asserted here.
pub fn identification_rate_check(family: &ToeplitzFamily, r: f64) -> Result<IdentificationReport> {
    use crate::norms_weights::{cv_norm, Weight};
    let mut rows = Vec::new();
    for (param_value, a) in family.members()? {
        let semi = besov_seminorm(&a, PExponent::Finite(1.0), r, None, Ambient::C0)?.value;
        let norm = cv_norm(&a, &Weight::polynomial(r))?;
        rows.push((param_value, semi, norm, semi / norm));
    }
    let min_ratio = rows.iter().map(|x| x.3).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|x| x.3).fold(0.0, f64::max);
    Ok(IdentificationReport {
        r,
        rows,
        min_ratio,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_matrix::{make_toeplitz, IndexWindow, ToeplitzSymbol};
    use crate::Complex64;
    use approx::assert_relative_eq;

    fn shift(m: i64, n: i64) -> LatticeMatrix {
        make_toeplitz(&ToeplitzSymbol::from_real_pairs([(m, 1.0)]).unwrap(), IndexWindow::symmetric(n).unwrap()).unwrap()
    }

    #[test]
    fn diagonal_has_zero_seminorms() {
        let d = LatticeMatrix::diagonal(IndexWindow::symmetric(4).unwrap(), |k| Complex64::new(k as f64, 1.0)).unwrap();
        for p in [PExponent::Finite(1.0), PExponent::Finite(2.5), PExponent::Infinity] {
            assert_eq!(besov_seminorm(&d, p, 0.5, None, Ambient::C0).unwrap().value, 0.0);
        }
        assert_eq!(hypersingular_seminorm(&d, 0.5, &[0.1, 0.01], Ambient::C0).unwrap().value, 0.0);
    }

    #[test]
    fn p1_shift_matches_direct_quadrature() {
        // |T_1|_{Λ¹_r} with k = 1 equals ∫_ℝ |t|^{−r−1}|2 sin πt| dt; compare
        // with a direct integral over (0, 64] plus the analytic tail.
        let r = 0.5;
        let est = besov_seminorm(&shift(1, 3), PExponent::Finite(1.0), r, None, Ambient::C0).unwrap();
        let f = |t: f64| t.powf(-r - 1.0) * (2.0 * (PI * t).sin()).abs();
        let mut direct = 0.0;
        for j in 0..60 {
            let hi = 0.5f64.powi(j);
            direct += integrate(f, hi / 2.0, hi, 0.0, 1e-13, 1, 1000).value;
        }
        for n in 1..64 {
            direct += integrate(f, n as f64, n as f64 + 1.0, 0.0, 1e-13, 2, 1000).value;
        }
        // ∫_64^∞ t^{−r−1}|2 sin πt| dt ≈ (4/π)·64^{−r}/r
        direct += 4.0 / PI * 64f64.powf(-r) / r;
        assert_relative_eq!(est.value, 2.0 * direct, max_relative = 2e-4);
    }

    #[test]
    fn p1_offset_scaling_matches_quadrature() {
        let a = make_toeplitz(
            &ToeplitzSymbol::from_real_pairs([(0, 1.0), (1, -0.4), (-2, 0.2), (5, 0.05)]).unwrap(),
            IndexWindow::symmetric(8).unwrap(),
        )
        .unwrap();
        for r in [0.4, 1.3] {
            let fast = besov_seminorm(&a, PExponent::Finite(1.0), r, None, Ambient::C0).unwrap();
            let profile = DifferenceProfile::new(&a, Ambient::C0, default_order(r)).unwrap();
            let mut slow = fast.clone();
            besov_finite(&profile, 1.0, r, &BesovOptions::default(), &mut slow).unwrap();
            assert_relative_eq!(fast.value, slow.value, max_relative = 1e-9);
        }
    }

    #[test]
    fn homogeneity_and_invariance() {
        let a = make_toeplitz(
            &ToeplitzSymbol::from_real_pairs([(0, 1.0), (1, -0.4), (-2, 0.2)]).unwrap(),
            IndexWindow::symmetric(6).unwrap(),
        )
        .unwrap();
        let base = besov_seminorm(&a, PExponent::Finite(1.0), 0.7, None, Ambient::C0).unwrap().value;
        let scaled = besov_seminorm(&a.scale(Complex64::new(0.0, -3.0)), PExponent::Finite(1.0), 0.7, None, Ambient::C0)
            .unwrap()
            .value;
        assert_relative_eq!(scaled, 3.0 * base, max_relative = 1e-12);
        let rotated = besov_seminorm(&a.apply_automorphism(0.3), PExponent::Finite(1.0), 0.7, None, Ambient::C0)
            .unwrap()
            .value;
        assert_relative_eq!(rotated, base, max_relative = 1e-12);
    }

    #[test]
    fn sup_seminorm_of_shift() {
        let (m, r) = (3, 0.6);
        let est = besov_seminorm(&shift(m, 5), PExponent::Infinity, r, Some(1), Ambient::C0).unwrap();
        // independent scan over the first lobe followed by ternary search
        let f = |t: f64| t.powf(-r) * (2.0 * (PI * m as f64 * t).sin()).abs();
        let (mut a, mut b) = (1e-6, 0.5 / m as f64);
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if f(m1) < f(m2) {
                a = m1
            } else {
                b = m2
            }
        }
        assert_relative_eq!(est.value, f(0.5 * (a + b)), max_relative = 1e-8);
    }

    #[test]
    fn order_must_exceed_r() {
        assert!(besov_seminorm(&shift(1, 2), PExponent::Finite(1.0), 1.0, Some(1), Ambient::C0).is_err());
        assert_eq!(default_order(1.0), 2);
        assert_eq!(default_order(0.5), 1);
    }

    #[test]
    fn hypersingular_shift_matches_scalar_integral() {
        let r = 0.5;
        let eps = [0.1, 0.01, 0.001];
        let est = hypersingular_seminorm(&shift(2, 4), r, &eps, Ambient::C0).unwrap();
        let best = eps
            .iter()
            .map(|&e| hypersingular_weight(2, r, e, 1e-12).0.abs())
            .fold(0.0, f64::max);
        assert_relative_eq!(est.value, best, max_relative = 1e-9);
        assert!(hypersingular_seminorm(&shift(2, 4), 2.0, &eps, Ambient::C0).is_err());
    }

    #[test]
    fn p_exponent_json() {
        assert_eq!(serde_json::to_string(&PExponent::Infinity).unwrap(), "\"inf\"");
        let p: PExponent = serde_json::from_str("2.0").unwrap();
        assert_eq!(p, PExponent::Finite(2.0));
    }
}
