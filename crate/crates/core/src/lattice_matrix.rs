//! Finite windows of ℤ×ℤ complex matrices.
//!
//! A [`LatticeMatrix`] stores the section of an infinite matrix on
//! `window × window`. Toeplitz matrices additionally carry their symbol so
//! that norms and inverses can be evaluated from closed forms instead of the
//! truncation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::special::binomial;

/// Default floor on the reciprocal condition estimate accepted by
/// [`invert_truncated`].
pub const DEFAULT_RCOND_FLOOR: f64 = 1e-12;

const POWER_ITERATION_CAP: usize = 20_000;
/// Sections up to this size get their norm from a full SVD.
const DENSE_SVD_MAX: usize = 400;
const GEOMETRIC_TERM_CAP: u64 = 10_000_000;

/// The integer interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindow", into = "RawWindow")]
pub struct IndexWindow {
    lo: i64,
    hi: i64,
}

#[derive(Serialize, Deserialize)]
struct RawWindow {
    lo: i64,
    hi: i64,
}

impl TryFrom<RawWindow> for IndexWindow {
    type Error = Error;
    fn try_from(w: RawWindow) -> Result<Self> {
        IndexWindow::new(w.lo, w.hi)
    }
}

impl From<IndexWindow> for RawWindow {
    fn from(w: IndexWindow) -> Self {
        RawWindow { lo: w.lo, hi: w.hi }
    }
}

impl IndexWindow {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return param(format!("window [{lo}, {hi}] is empty"));
        }
        if hi.checked_sub(lo).is_none_or(|d| d >= (1 << 24)) {
            return param(format!("window [{lo}, {hi}] is too large for dense storage"));
        }
        Ok(IndexWindow { lo, hi })
    }

    /// The symmetric window `[-n, n]`.
    pub fn symmetric(n: i64) -> Result<Self> {
        if n < 0 {
            return param(format!("half-width must be nonnegative, got {n}"));
        }
        Self::new(-n, n)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn size(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn contains_window(&self, other: &IndexWindow) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Storage index of lattice index `k`.
    pub fn index(&self, k: i64) -> usize {
        debug_assert!(self.contains(k));
        (k - self.lo) as usize
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }

    /// Largest `|k − l|` realized in the window.
    pub fn max_offset(&self) -> i64 {
        self.hi - self.lo
    }

    /// `[lo + margin, hi − margin]`.
    pub fn shrink(&self, margin: usize) -> Result<Self> {
        let m = margin as i64;
        if 2 * m > self.hi - self.lo {
            return param(format!("margin {margin} leaves nothing of window {self}"));
        }
        Self::new(self.lo + m, self.hi - m)
    }

    /// A quarter of the half-width; `N/4` for `[-N, N]`.
    pub fn default_margin(&self) -> usize {
        (((self.hi - self.lo) / 2) / 4) as usize
    }
}

impl fmt::Display for IndexWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Moduli `|c(m)| = scale·e^{−γm}` for `0 ≤ m ≤ terms`, zero elsewhere.
///
/// Marks a symbol as the truncation of a geometric series; closed-form norms
/// refer to the untruncated series and `tail_bound` is the `C_0` distance
/// between the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricProfile {
    pub gamma: f64,
    pub scale: f64,
    pub terms: u64,
}

impl GeometricProfile {
    /// `e^{−γ}`.
    pub fn ratio(&self) -> f64 {
        (-self.gamma).exp()
    }

    pub fn tail_bound(&self) -> f64 {
        self.scale * (-self.gamma * (self.terms + 1) as f64).exp() / -(-self.gamma).exp_m1()
    }

    /// `|c(m)|` of the untruncated series.
    pub fn modulus(&self, m: i64) -> f64 {
        if m < 0 {
            0.0
        } else {
            self.scale * (-self.gamma * m as f64).exp()
        }
    }
}

/// Toeplitz symbol `m ↦ c(m)`; the matrix entry at `(k, l)` is `c(k − l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSymbol", into = "RawSymbol")]
pub struct ToeplitzSymbol {
    coefficients: BTreeMap<i64, Complex64>,
    geometric: Option<GeometricProfile>,
}

#[derive(Serialize, Deserialize)]
struct RawSymbol {
    coefficients: BTreeMap<i64, Complex64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geometric: Option<GeometricProfile>,
}

impl TryFrom<RawSymbol> for ToeplitzSymbol {
    type Error = Error;
    fn try_from(raw: RawSymbol) -> Result<Self> {
        let sym = ToeplitzSymbol::new(raw.coefficients)?;
        match raw.geometric {
            None => Ok(sym),
            Some(p) => sym.with_profile(p),
        }
    }
}

impl From<ToeplitzSymbol> for RawSymbol {
    fn from(s: ToeplitzSymbol) -> Self {
        RawSymbol {
            coefficients: s.coefficients,
            geometric: s.geometric,
        }
    }
}

/// Extreme values of `|σ(θ)|`, `σ(θ) = Σ c(m) e^{imθ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolExtrema {
    pub min: f64,
    pub max: f64,
    /// `false` when obtained by sampling `θ`.
    pub exact: bool,
}

impl ToeplitzSymbol {
    /// Builds a finitely supported symbol. Zero coefficients are dropped.
    pub fn new(coefficients: BTreeMap<i64, Complex64>) -> Result<Self> {
        if let Some((m, c)) = coefficients.iter().find(|(_, c)| !(c.re.is_finite() && c.im.is_finite())) {
            return param(format!("symbol coefficient c({m}) = {c} is not finite"));
        }
        Ok(ToeplitzSymbol {
            coefficients: coefficients.into_iter().filter(|(_, c)| *c != Complex64::new(0.0, 0.0)).collect(),
            geometric: None,
        })
    }

    pub fn from_pairs<I: IntoIterator<Item = (i64, Complex64)>>(pairs: I) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (m, c) in pairs {
            *map.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        Self::new(map)
    }

    pub fn from_real_pairs<I: IntoIterator<Item = (i64, f64)>>(pairs: I) -> Result<Self> {
        Self::from_pairs(pairs.into_iter().map(|(m, c)| (m, Complex64::new(c, 0.0))))
    }

    /// `I − e^{−γ}T₁`.
    pub fn c_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return param(format!("gamma must be positive, got {gamma}"));
        }
        Self::from_real_pairs([(0, 1.0), (1, -(-gamma).exp())])
    }

    /// `Σ_{k=0}^{K} e^{−γk}T_k`, with `K` minimal such that the omitted `C_0`
    /// tail `e^{−γ(K+1)}/(1 − e^{−γ})` is at most `tail_tol`.
    pub fn geometric(gamma: f64, tail_tol: f64) -> Result<Self> {
        Self::scaled_geometric(gamma, 1.0, tail_tol)
    }

    fn scaled_geometric(gamma: f64, scale: f64, tail_tol: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return param(format!("gamma must be positive, got {gamma}"));
        }
        if !(tail_tol > 0.0) {
            return param(format!("tail tolerance must be positive, got {tail_tol}"));
        }
        let one_minus_q = -(-gamma).exp_m1();
        // scale·e^{−γ(K+1)}/(1−q) ≤ tol  ⇔  K + 1 ≥ ln(scale/(tol(1−q)))/γ
        let need = ((scale / (tail_tol * one_minus_q)).ln() / gamma).ceil();
        let terms = (need - 1.0).max(0.0);
        if terms > GEOMETRIC_TERM_CAP as f64 {
            return param(format!(
                "geometric series with gamma = {gamma} needs {terms} terms for tolerance {tail_tol}"
            ));
        }
        let mut terms = terms as u64;
        let profile = |k: u64| GeometricProfile { gamma, scale, terms: k };
        while profile(terms).tail_bound() > tail_tol {
            terms += 1;
        }
        let coefficients = (0..=terms)
            .map(|k| (k as i64, Complex64::new(scale * (-gamma * k as f64).exp(), 0.0)))
            .collect();
        Ok(ToeplitzSymbol {
            coefficients,
            geometric: Some(profile(terms)),
        })
    }

    fn with_profile(mut self, p: GeometricProfile) -> Result<Self> {
        if !(p.gamma > 0.0 && p.scale > 0.0 && p.gamma.is_finite() && p.scale.is_finite()) {
            return param("geometric profile needs positive finite gamma and scale");
        }
        let mut prev_arg: Option<f64> = None;
        let mut step: Option<f64> = None;
        for m in 0..=p.terms as i64 {
            let c = self.coefficient(m);
            let want = p.modulus(m);
            if (c.norm() - want).abs() > 1e-12 * want.max(f64::MIN_POSITIVE) {
                return param(format!("coefficient c({m}) does not match the geometric profile"));
            }
            // phases must be affine in m (automorphisms and scalar factors only)
            let arg = c.arg();
            if let Some(a) = prev_arg {
                let d = (arg - a).rem_euclid(std::f64::consts::TAU);
                if let Some(s) = step {
                    let diff = (d - s).abs();
                    if diff.min(std::f64::consts::TAU - diff) > 1e-9 {
                        return param("geometric profile requires phases affine in the offset");
                    }
                } else {
                    step = Some(d);
                }
            }
            prev_arg = Some(arg);
        }
        if self.coefficients.keys().any(|&m| m < 0 || m > p.terms as i64) {
            return param("geometric profile requires support in [0, terms]");
        }
        self.geometric = Some(p);
        Ok(self)
    }

    pub fn coefficients(&self) -> &BTreeMap<i64, Complex64> {
        &self.coefficients
    }

    pub fn coefficient(&self, m: i64) -> Complex64 {
        self.coefficients.get(&m).copied().unwrap_or_default()
    }

    pub fn geometric_profile(&self) -> Option<&GeometricProfile> {
        self.geometric.as_ref()
    }

    /// `C_0` norm of what the truncation omits; zero for finite symbols.
    pub fn truncation_tail(&self) -> f64 {
        self.geometric.map_or(0.0, |p| p.tail_bound())
    }

    /// Largest `|m|` with `c(m) ≠ 0`.
    pub fn max_offset(&self) -> Option<u64> {
        self.coefficients.keys().map(|m| m.unsigned_abs()).max()
    }

    /// `σ(θ) = Σ c(m) e^{imθ}`.
    pub fn eval(&self, theta: f64) -> Complex64 {
        self.coefficients
            .iter()
            .map(|(&m, &c)| c * Complex64::from_polar(1.0, m as f64 * theta))
            .sum()
    }

    /// Range of `|σ|`, which is `[1/‖T⁻¹‖, ‖T‖]` for the Laurent operator on
    /// `ℓ²(ℤ)`.
    pub fn extrema(&self) -> SymbolExtrema {
        if let Some(p) = &self.geometric {
            // untruncated series with affine phases: σ is a rotated and
            // shifted copy of scale/(1 − q e^{iθ})
            let q = p.ratio();
            return SymbolExtrema {
                min: p.scale / (1.0 + q),
                max: p.scale / -(-p.gamma).exp_m1(),
                exact: true,
            };
        }
        let mods: Vec<f64> = self.coefficients.values().map(|c| c.norm()).collect();
        match mods.as_slice() {
            [] => SymbolExtrema { min: 0.0, max: 0.0, exact: true },
            [a] => SymbolExtrema { min: *a, max: *a, exact: true },
            [a, b] => SymbolExtrema {
                min: (a - b).abs(),
                max: a + b,
                exact: true,
            },
            _ => {
                const SAMPLES: usize = 1 << 14;
                let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
                for j in 0..SAMPLES {
                    let v = self.eval(std::f64::consts::TAU * j as f64 / SAMPLES as f64).norm();
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                SymbolExtrema { min: lo, max: hi, exact: false }
            }
        }
    }

    /// Closed-form inverse for single-term symbols and for `a + bT₁` with
    /// `|b| < |a|`, whose inverse is `(1/a) Σ (−b/a)^k T_k`.
    pub fn closed_form_inverse(&self, tail_tol: f64) -> Option<ToeplitzSymbol> {
        let entries: Vec<(i64, Complex64)> = self.coefficients.iter().map(|(&m, &c)| (m, c)).collect();
        match entries.as_slice() {
            [(m, c)] => ToeplitzSymbol::from_pairs([(-*m, c.inv())]).ok(),
            [(0, a), (1, b)] if b.norm() < a.norm() => {
                let rho = -b / a;
                let gamma = -rho.norm().ln();
                let scale = a.inv().norm();
                let base = ToeplitzSymbol::scaled_geometric(gamma, scale, tail_tol).ok()?;
                let (phase0, step) = (a.inv() / scale, rho / rho.norm());
                let coefficients = base
                    .coefficients
                    .iter()
                    .map(|(&k, &c)| (k, c * phase0 * step.powi(k as i32)))
                    .collect();
                Some(ToeplitzSymbol {
                    coefficients,
                    geometric: base.geometric,
                })
            }
            _ => None,
        }
    }

    fn map_coefficients(&self, keep_profile: bool, f: impl Fn(i64, Complex64) -> Complex64) -> ToeplitzSymbol {
        let coefficients = self
            .coefficients
            .iter()
            .map(|(&m, &c)| (m, f(m, c)))
            .filter(|(_, c)| *c != Complex64::new(0.0, 0.0))
            .collect();
        ToeplitzSymbol {
            coefficients,
            geometric: if keep_profile { self.geometric } else { None },
        }
    }
}

/// Structural information carried alongside the entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureTag {
    Toeplitz(ToeplitzSymbol),
    Banded(usize),
    General,
}

/// Section of a ℤ×ℤ complex matrix on `window × window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDescriptor", into = "MatrixDescriptor")]
pub struct LatticeMatrix {
    window: IndexWindow,
    entries: DMatrix<Complex64>,
    tag: StructureTag,
}

/// `e^{2πimt}`, reducing `mt` mod 1 first so integer periods are exact.
pub(crate) fn phase(m: i64, t: f64) -> Complex64 {
    let x = (m as f64 * t).rem_euclid(1.0);
    let theta = std::f64::consts::TAU * x;
    Complex64::new(theta.cos(), theta.sin())
}

/// `e^{2πimt} − 1` without cancellation for small `mt`.
pub(crate) fn phase_minus_one(m: i64, t: f64) -> Complex64 {
    let x = (m as f64 * t).rem_euclid(1.0);
    let half = std::f64::consts::PI * x;
    let s = half.sin();
    Complex64::new(-2.0 * s * s, (2.0 * half).sin())
}

impl LatticeMatrix {
    pub fn new(window: IndexWindow, entries: DMatrix<Complex64>, tag: StructureTag) -> Result<Self> {
        let n = window.size();
        if entries.nrows() != n || entries.ncols() != n {
            return param(format!(
                "entries are {}×{} but window {window} needs {n}×{n}",
                entries.nrows(),
                entries.ncols()
            ));
        }
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return param("matrix entries must be finite");
        }
        let out = LatticeMatrix { window, entries, tag };
        out.check_tag()?;
        Ok(out)
    }

    fn check_tag(&self) -> Result<()> {
        match &self.tag {
            StructureTag::General => Ok(()),
            StructureTag::Banded(b) => {
                for (k, l, z) in self.iter_entries() {
                    if (k - l).unsigned_abs() as usize > *b && z != Complex64::new(0.0, 0.0) {
                        return param(format!("entry ({k}, {l}) lies outside bandwidth {b}"));
                    }
                }
                Ok(())
            }
            StructureTag::Toeplitz(sym) => {
                let scale = self.max_abs().max(f64::MIN_POSITIVE);
                for (k, l, z) in self.iter_entries() {
                    if (z - sym.coefficient(k - l)).norm() > 1e-13 * scale {
                        return param(format!("entry ({k}, {l}) disagrees with the Toeplitz symbol"));
                    }
                }
                Ok(())
            }
        }
    }

    /// General matrix with entries `f(k, l)`.
    pub fn from_fn(window: IndexWindow, f: impl Fn(i64, i64) -> Complex64) -> Result<Self> {
        let lo = window.lo();
        let entries = DMatrix::from_fn(window.size(), window.size(), |i, j| f(lo + i as i64, lo + j as i64));
        Self::new(window, entries, StructureTag::General)
    }

    pub fn zeros(window: IndexWindow) -> Self {
        let n = window.size();
        LatticeMatrix {
            window,
            entries: DMatrix::zeros(n, n),
            tag: StructureTag::Toeplitz(ToeplitzSymbol::new(BTreeMap::new()).expect("empty symbol")),
        }
    }

    pub fn identity(window: IndexWindow) -> Self {
        let n = window.size();
        LatticeMatrix {
            window,
            entries: DMatrix::identity(n, n),
            tag: StructureTag::Toeplitz(ToeplitzSymbol::from_real_pairs([(0, 1.0)]).expect("finite")),
        }
    }

    /// Diagonal matrix with `d(k)` at `(k, k)`.
    pub fn diagonal(window: IndexWindow, d: impl Fn(i64) -> Complex64) -> Result<Self> {
        let lo = window.lo();
        let diag = DVector::from_fn(window.size(), |i, _| d(lo + i as i64));
        Self::new(window, DMatrix::from_diagonal(&diag), StructureTag::Banded(0))
    }

    pub fn window(&self) -> IndexWindow {
        self.window
    }

    pub fn size(&self) -> usize {
        self.window.size()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn tag(&self) -> &StructureTag {
        &self.tag
    }

    pub fn toeplitz_symbol(&self) -> Option<&ToeplitzSymbol> {
        match &self.tag {
            StructureTag::Toeplitz(s) => Some(s),
            _ => None,
        }
    }

    /// Drops structural information.
    pub fn into_general(mut self) -> Self {
        self.tag = StructureTag::General;
        self
    }

    /// `A(k, l)`; zero outside the window.
    pub fn get(&self, k: i64, l: i64) -> Complex64 {
        if self.window.contains(k) && self.window.contains(l) {
            self.entries[(self.window.index(k), self.window.index(l))]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// `(k, l, A(k, l))` in column-major order.
    pub fn iter_entries(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        let lo = self.window.lo();
        let n = self.size();
        self.entries
            .iter()
            .enumerate()
            .map(move |(idx, &z)| (lo + (idx % n) as i64, lo + (idx / n) as i64, z))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    /// Bandwidth implied by the tag, if any.
    pub fn bandwidth(&self) -> Option<usize> {
        match &self.tag {
            StructureTag::Banded(b) => Some(*b),
            StructureTag::Toeplitz(s) => Some(s.max_offset().unwrap_or(0) as usize),
            StructureTag::General => None,
        }
    }

    /// Restriction to a subwindow.
    pub fn restrict(&self, inner: IndexWindow) -> Result<Self> {
        if !self.window.contains_window(&inner) {
            return Err(Error::WindowMismatch {
                left: inner.to_string(),
                right: self.window.to_string(),
            });
        }
        let start = self.window.index(inner.lo());
        let n = inner.size();
        let entries = self.entries.view((start, start), (n, n)).into_owned();
        Ok(LatticeMatrix {
            window: inner,
            entries,
            tag: self.tag.clone(),
        })
    }

    fn check_same_window(&self, other: &Self) -> Result<()> {
        if self.window != other.window {
            return Err(Error::WindowMismatch {
                left: self.window.to_string(),
                right: other.window.to_string(),
            });
        }
        Ok(())
    }

    fn combined_tag(&self, other: &Self, symbol_op: impl Fn(&ToeplitzSymbol, &ToeplitzSymbol) -> ToeplitzSymbol) -> StructureTag {
        match (&self.tag, &other.tag) {
            (StructureTag::Toeplitz(a), StructureTag::Toeplitz(b)) => StructureTag::Toeplitz(symbol_op(a, b)),
            _ => match (self.bandwidth(), other.bandwidth()) {
                (Some(a), Some(b)) => StructureTag::Banded(a.max(b)),
                _ => StructureTag::General,
            },
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_window(other)?;
        let tag = self.combined_tag(other, |a, b| sum_symbols(a, b, 1.0));
        Ok(LatticeMatrix {
            window: self.window,
            entries: &self.entries + &other.entries,
            tag,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_window(other)?;
        let tag = self.combined_tag(other, |a, b| sum_symbols(a, b, -1.0));
        Ok(LatticeMatrix {
            window: self.window,
            entries: &self.entries - &other.entries,
            tag,
        })
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let tag = match &self.tag {
            StructureTag::Toeplitz(s) => {
                let mut scaled = s.map_coefficients(true, |_, z| z * c);
                if let Some(p) = scaled.geometric.as_mut() {
                    p.scale *= c.norm();
                    if p.scale == 0.0 {
                        scaled.geometric = None;
                    }
                }
                StructureTag::Toeplitz(scaled)
            }
            t => t.clone(),
        };
        LatticeMatrix {
            window: self.window,
            entries: &self.entries * c,
            tag,
        }
    }

    /// Window product. On ℤ the product of two sections differs from the
    /// section of the product near the window boundary; callers compare on
    /// inner windows.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_same_window(other)?;
        let entries = complex_gemm(&self.entries, &other.entries);
        let n = self.size();
        let tag = match (self.bandwidth(), other.bandwidth()) {
            (Some(a), Some(b)) if a + b < n.saturating_sub(1) => StructureTag::Banded(a + b),
            _ => StructureTag::General,
        };
        Ok(LatticeMatrix {
            window: self.window,
            entries,
            tag,
        })
    }

    /// Multiplies entry `(k, l)` by `f(k − l)`, evaluating `f` once per offset.
    fn map_offsets(&self, f: impl Fn(i64) -> Complex64) -> DMatrix<Complex64> {
        let n = self.size() as i64;
        let table: Vec<Complex64> = (-(n - 1)..n).map(&f).collect();
        let mut out = self.entries.clone();
        for j in 0..n as usize {
            for i in 0..n as usize {
                out[(i, j)] *= table[(i as i64 - j as i64 + n - 1) as usize];
            }
        }
        out
    }

    fn with_offset_map(&self, keep_profile: bool, f: impl Fn(i64) -> Complex64) -> Self {
        let entries = self.map_offsets(&f);
        let tag = match &self.tag {
            StructureTag::Toeplitz(s) => StructureTag::Toeplitz(s.map_coefficients(keep_profile, |m, c| c * f(m))),
            t => t.clone(),
        };
        LatticeMatrix {
            window: self.window,
            entries,
            tag,
        }
    }

    /// Multiplies entry `(k, l)` by `f(k − l)`; the result is untagged.
    pub fn scale_offsets(&self, f: impl Fn(i64) -> Complex64) -> Self {
        LatticeMatrix {
            window: self.window,
            entries: self.map_offsets(f),
            tag: StructureTag::General,
        }
    }

    pub fn apply_automorphism(&self, t: f64) -> Self {
        self.with_offset_map(true, |m| phase(m, t))
    }

    pub fn derivation_power(&self, k: u32) -> Self {
        if k == 0 {
            return self.clone();
        }
        self.with_offset_map(false, |m| Complex64::new((m as f64).powi(k as i32), 0.0))
    }

    /// `Δ_t^k A`, evaluated entrywise as `(e^{2πi(m−l)t} − 1)^k A(m, l)`.
    pub fn difference_power(&self, t: f64, k: u32) -> Self {
        if k == 0 {
            return self.clone();
        }
        self.with_offset_map(false, |m| phase_minus_one(m, t).powi(k as i32))
    }

    /// `Δ_t^k A = Σ_j binom(k, j)(−1)^{k−j} ψ_{jt}(A)`.
    pub fn difference_power_expanded(&self, t: f64, k: u32) -> Self {
        let mut acc = DMatrix::<Complex64>::zeros(self.size(), self.size());
        for j in 0..=k {
            let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            let coef = sign * binomial(k as u64, j as u64);
            acc += self.apply_automorphism(j as f64 * t).entries * Complex64::new(coef, 0.0);
        }
        LatticeMatrix {
            window: self.window,
            entries: acc,
            tag: StructureTag::General,
        }
    }

    /// Writes Matrix Market `coordinate complex general` with the window in a
    /// comment line. Entries carry 17 significant digits.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let nonzero: Vec<(usize, usize, Complex64)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, z)| **z != Complex64::new(0.0, 0.0))
            .map(|(idx, z)| (idx % self.size(), idx / self.size(), *z))
            .collect();
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(w, "% window {} {}", self.window.lo(), self.window.hi())?;
        writeln!(w, "{} {} {}", self.size(), self.size(), nonzero.len())?;
        for (i, j, z) in nonzero {
            writeln!(w, "{} {} {:.16e} {:.16e}", i + 1, j + 1, z.re, z.im)?;
        }
        Ok(())
    }

    /// Reads the format written by [`write_matrix_market`](Self::write_matrix_market).
    /// Without a window comment the window is `[0, n − 1]`. Real and integer
    /// fields are accepted; symmetric storage is not.
    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty Matrix Market input".into()))??;
        let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
        if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
            return Err(Error::Parse(format!("unsupported Matrix Market header: {header}")));
        }
        let complex = match fields[3].as_str() {
            "complex" => true,
            "real" | "integer" => false,
            other => return Err(Error::Parse(format!("unsupported field type {other}"))),
        };
        if fields[4] != "general" {
            return Err(Error::Parse(format!("unsupported symmetry {}", fields[4])));
        }
        let mut window_lo: Option<i64> = None;
        let mut size_line = None;
        for line in lines.by_ref() {
            let line = line?;
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('%') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() == 3 && parts[0] == "window" {
                    window_lo = Some(parts[1].parse().map_err(|_| Error::Parse(format!("bad window line: {t}")))?);
                }
                continue;
            }
            if !t.is_empty() {
                size_line = Some(t.to_string());
                break;
            }
        }
        let size_line = size_line.ok_or_else(|| Error::Parse("missing size line".into()))?;
        let dims: Vec<usize> = size_line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad size line: {size_line}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 || dims[0] != dims[1] || dims[0] == 0 {
            return Err(Error::Parse(format!("expected a nonempty square matrix, got {size_line}")));
        }
        let n = dims[0];
        let lo = window_lo.unwrap_or(0);
        let window = IndexWindow::new(lo, lo + n as i64 - 1)?;
        let mut entries = DMatrix::<Complex64>::zeros(n, n);
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let want = if complex { 4 } else { 3 };
            if parts.len() != want {
                return Err(Error::Parse(format!("bad entry line: {t}")));
            }
            let bad = || Error::Parse(format!("bad entry line: {t}"));
            let i: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::Parse(format!("entry index out of range: {t}")));
            }
            let re: f64 = parts[2].parse().map_err(|_| bad())?;
            let im: f64 = if complex { parts[3].parse().map_err(|_| bad())? } else { 0.0 };
            entries[(i - 1, j - 1)] = Complex64::new(re, im);
            seen += 1;
        }
        if seen != dims[2] {
            return Err(Error::Parse(format!("expected {} entries, found {seen}", dims[2])));
        }
        Self::new(window, entries, StructureTag::General)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn sum_symbols(a: &ToeplitzSymbol, b: &ToeplitzSymbol, sign: f64) -> ToeplitzSymbol {
    let mut map = a.coefficients.clone();
    for (&m, &c) in &b.coefficients {
        *map.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c * sign;
    }
    ToeplitzSymbol::new(map).expect("sums of finite symbols are finite")
}

/// Complex product as four real products; nalgebra's real kernels are much
/// faster than its generic complex path.
fn complex_gemm(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

#[derive(Serialize, Deserialize)]
struct MatrixDescriptor {
    window: IndexWindow,
    tag: StructureTag,
    /// `(row, col, re, im)` for nonzero entries; omitted for Toeplitz tags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<(i64, i64, f64, f64)>>,
}

impl From<LatticeMatrix> for MatrixDescriptor {
    fn from(a: LatticeMatrix) -> Self {
        let entries = match a.tag {
            StructureTag::Toeplitz(_) => None,
            _ => Some(
                a.iter_entries()
                    .filter(|(_, _, z)| *z != Complex64::new(0.0, 0.0))
                    .map(|(k, l, z)| (k, l, z.re, z.im))
                    .collect(),
            ),
        };
        MatrixDescriptor {
            window: a.window,
            tag: a.tag,
            entries,
        }
    }
}

impl TryFrom<MatrixDescriptor> for LatticeMatrix {
    type Error = Error;
    fn try_from(d: MatrixDescriptor) -> Result<Self> {
        match (d.entries, d.tag) {
            (None, StructureTag::Toeplitz(sym)) => make_toeplitz(&sym, d.window),
            (None, _) => Err(Error::Parse("non-Toeplitz descriptor needs entries".into())),
            (Some(list), tag) => {
                let n = d.window.size();
                let mut entries = DMatrix::<Complex64>::zeros(n, n);
                for (k, l, re, im) in list {
                    if !(d.window.contains(k) && d.window.contains(l)) {
                        return Err(Error::Parse(format!("entry ({k}, {l}) outside window {}", d.window)));
                    }
                    entries[(d.window.index(k), d.window.index(l))] = Complex64::new(re, im);
                }
                LatticeMatrix::new(d.window, entries, tag)
            }
        }
    }
}

/// Section of the Toeplitz matrix with entries `c(k − l)`.
pub fn make_toeplitz(symbol: &ToeplitzSymbol, window: IndexWindow) -> Result<LatticeMatrix> {
    let n = window.size() as i64;
    let table: Vec<Complex64> = (-(n - 1)..n).map(|m| symbol.coefficient(m)).collect();
    let entries = DMatrix::from_fn(n as usize, n as usize, |i, j| table[(i as i64 - j as i64 + n - 1) as usize]);
    Ok(LatticeMatrix {
        window,
        entries,
        tag: StructureTag::Toeplitz(symbol.clone()),
    })
}

/// Section of `C_γ⁻¹ = Σ_{k≥0} e^{−γk}T_k`, truncated so the omitted `C_0`
/// tail is at most `tail_tol`. The tail bound travels with the symbol.
pub fn geometric_inverse_toeplitz(gamma: f64, window: IndexWindow, tail_tol: f64) -> Result<LatticeMatrix> {
    make_toeplitz(&ToeplitzSymbol::geometric(gamma, tail_tol)?, window)
}

pub fn apply_automorphism(a: &LatticeMatrix, t: f64) -> LatticeMatrix {
    a.apply_automorphism(t)
}

pub fn derivation_power(a: &LatticeMatrix, k: u32) -> LatticeMatrix {
    a.derivation_power(k)
}

pub fn difference_power(a: &LatticeMatrix, t: f64, k: u32) -> LatticeMatrix {
    a.difference_power(t, k)
}

/// Dense inverse of the window section with the default condition floor.
pub fn invert_truncated(a: &LatticeMatrix) -> Result<LatticeMatrix> {
    invert_truncated_with_floor(a, DEFAULT_RCOND_FLOOR)
}

/// Dense inverse; fails when `1/(‖A‖₁‖A⁻¹‖₁)` is below `rcond_floor`.
pub fn invert_truncated_with_floor(a: &LatticeMatrix, rcond_floor: f64) -> Result<LatticeMatrix> {
    let inv = a
        .entries
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { rcond: 0.0 })?;
    let rcond = 1.0 / (one_norm(&a.entries) * one_norm(&inv));
    if !(rcond >= rcond_floor) || inv.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Singular {
            rcond: if rcond.is_finite() { rcond } else { 0.0 },
        });
    }
    let tag = match (&a.tag, a.bandwidth()) {
        (_, Some(0)) => StructureTag::Banded(0),
        _ => StructureTag::General,
    };
    Ok(LatticeMatrix {
        window: a.window,
        entries: inv,
        tag,
    })
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value of the window section. Small sections use a
/// dense SVD; larger ones use power iteration on `A*A`, stopped when
/// successive estimates agree to relative `tol`.
pub fn operator_norm_l2(a: &LatticeMatrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return param(format!("tolerance must be positive, got {tol}"));
    }
    let n = a.size();
    let m = &a.entries;
    if m.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(0.0);
    }
    if n <= DENSE_SVD_MAX {
        return Ok(m.clone().singular_values().max());
    }
    let mh = m.adjoint();
    // deterministic start with no symmetry the iteration could get stuck in
    let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.5 * (0.618_033_988_749_895 * (i + 1) as f64).fract(), 0.0));
    x /= Complex64::new(x.norm(), 0.0);
    let mut est = 0.0f64;
    for it in 0..POWER_ITERATION_CAP {
        let y = &mh * (m * &x);
        let lambda = y.norm();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        x = y / Complex64::new(lambda, 0.0);
        if it > 0 && (lambda - est).abs() <= tol * lambda {
            return Ok(lambda.sqrt());
        }
        est = lambda;
    }
    Err(Error::NonConvergence {
        what: "power iteration",
        iterations: POWER_ITERATION_CAP,
        estimate: est.sqrt(),
    })
}

/// A window quantity together with its value on the inner window; the
/// difference is the finite-section error bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub value: f64,
    pub inner_value: f64,
    pub margin: usize,
    pub discrepancy: f64,
}

/// Evaluates `f` on `a` and on `a` restricted to the window shrunk by
/// `margin` (default `N/4`).
pub fn with_boundary_margin(
    a: &LatticeMatrix,
    margin: Option<usize>,
    f: impl Fn(&LatticeMatrix) -> Result<f64>,
) -> Result<MarginEstimate> {
    let margin = margin.unwrap_or_else(|| a.window().default_margin());
    let value = f(a)?;
    let inner_value = f(&a.restrict(a.window().shrink(margin)?)?)?;
    Ok(MarginEstimate {
        value,
        inner_value,
        margin,
        discrepancy: (value - inner_value).abs(),
    })
}
