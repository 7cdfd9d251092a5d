//! Explicit norm-controlled inversion bounds and their comparison with
//! measured inverse norms.
//!
//! Every evaluator returns a [`BoundReport`] holding the inputs, the named
//! intermediates, the bound (also as a logarithm, since most of these
//! overflow `f64` long before they stop being meaningful) and, when a
//! measurement is attached, whether it is satisfied.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::besov_smoothness::PExponent;
use crate::error::{param, Error, Result};
use crate::lattice_matrix::{invert_truncated, make_toeplitz, operator_norm_l2, IndexWindow, LatticeMatrix};
use crate::norms_weights::{ln_phi_r, SideDiagonals, Weight, SERIES_TOL};
use crate::serde_ext;
use crate::special::{integral_test_bracket, ln_gamma, log_add, poly_geometric_sum, SeriesSum};

/// Relative truncation tolerance for the `ℓ_r` series.
pub const ELL_SERIES_TOL: f64 = 1e-12;
/// Tail tolerance for closed-form Toeplitz inverses.
pub const INVERSE_TAIL_TOL: f64 = 1e-15;
/// Operator-norm tolerance for window sections.
const OP_TOL: f64 = 1e-12;
const PHI_CAP: u64 = 1 << 62;

/// One evaluated bound with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: String,
    #[serde(with = "serde_ext::float_map")]
    pub inputs: BTreeMap<String, f64>,
    #[serde(with = "serde_ext::float_map")]
    pub intermediates: BTreeMap<String, f64>,
    #[serde(with = "serde_ext::float")]
    pub bound_value: f64,
    #[serde(with = "serde_ext::float")]
    pub log_bound: f64,
    /// Exponent of `1/δ` in the asymptotic form, when the bound is a power law.
    #[serde(default, with = "serde_ext::opt_float", skip_serializing_if = "Option::is_none")]
    pub rate_exponent: Option<f64>,
    /// `false` for bounds whose multiplicative constant is not known; these
    /// are rate reports and never claim satisfaction.
    pub constant_known: bool,
    #[serde(default, with = "serde_ext::opt_float", skip_serializing_if = "Option::is_none")]
    pub measured_value: Option<f64>,
    #[serde(default, with = "serde_ext::opt_float", skip_serializing_if = "Option::is_none")]
    pub measured_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfied: Option<bool>,
    #[serde(default)]
    pub inconclusive: bool,
}

impl BoundReport {
    fn new(name: &str, log_bound: f64) -> Self {
        BoundReport {
            bound_name: name.to_string(),
            inputs: BTreeMap::new(),
            intermediates: BTreeMap::new(),
            bound_value: log_bound.exp(),
            log_bound,
            rate_exponent: None,
            constant_known: true,
            measured_value: None,
            measured_error: None,
            satisfied: None,
            inconclusive: false,
        }
    }

    fn input(mut self, key: &str, v: f64) -> Self {
        self.inputs.insert(key.to_string(), v);
        self
    }

    fn inter(mut self, key: &str, v: f64) -> Self {
        self.intermediates.insert(key.to_string(), v);
        self
    }

    /// Attaches a measurement; `satisfied` is set only for bounds with a
    /// known constant.
    pub fn with_measured(mut self, value: f64, error: f64) -> Self {
        self.measured_value = Some(value);
        self.measured_error = Some(error);
        self.satisfied = self.constant_known.then(|| value.ln() <= self.log_bound);
        self
    }

    /// `measured / bound`, computed in log space.
    pub fn ratio(&self) -> Option<f64> {
        self.measured_value.map(|m| (m.ln() - self.log_bound).exp())
    }

    pub fn intermediate(&self, key: &str) -> Option<f64> {
        self.intermediates.get(key).copied()
    }
}

/// CSV row for grid sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub family_param: f64,
    pub r: f64,
    #[serde(with = "serde_ext::float")]
    pub bound: f64,
    #[serde(with = "serde_ext::float")]
    pub measured: f64,
    #[serde(with = "serde_ext::float")]
    pub ratio: f64,
    pub satisfied: Option<bool>,
}

impl BoundRow {
    pub fn from_report(family_param: f64, r: f64, rep: &BoundReport) -> Self {
        BoundRow {
            family_param,
            r,
            bound: rep.bound_value,
            measured: rep.measured_value.unwrap_or(f64::NAN),
            ratio: rep.ratio().unwrap_or(f64::NAN),
            satisfied: rep.satisfied,
        }
    }
}

/// Spectral data and side diagonals of `A` and `A⁻¹`.
///
/// Toeplitz matrices with a closed-form inverse use their symbols, so the
/// data describe the bi-infinite operator. Anything else is read as the
/// window section extended by the identity outside the window, whose
/// inverse is the inverted section extended by the identity; for that
/// operator the finite computation is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorData {
    pub norm_op: f64,
    pub norm_inv_op: f64,
    pub side: SideDiagonals,
    pub inverse_side: SideDiagonals,
    pub closed_form: bool,
}

impl OperatorData {
    pub fn from_matrix(a: &LatticeMatrix) -> Result<Self> {
        if let Some(sym) = a.toeplitz_symbol() {
            let ext = sym.extrema();
            if ext.exact && ext.min > 0.0 {
                if let Some(inv) = sym.closed_form_inverse(INVERSE_TAIL_TOL) {
                    let w = IndexWindow::symmetric(1)?;
                    return Ok(OperatorData {
                        norm_op: ext.max,
                        norm_inv_op: 1.0 / ext.min,
                        side: SideDiagonals::of(a),
                        inverse_side: SideDiagonals::of(&make_toeplitz(&inv, w)?),
                        closed_form: true,
                    });
                }
            }
        }
        let inv = invert_truncated(a)?;
        Ok(OperatorData {
            norm_op: operator_norm_l2(a, OP_TOL)?.max(1.0),
            norm_inv_op: operator_norm_l2(&inv, OP_TOL)?.max(1.0),
            side: SideDiagonals::of_window(a).with_identity_floor(),
            inverse_side: SideDiagonals::of_window(&inv).with_identity_floor(),
            closed_form: false,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.norm_op * self.norm_inv_op
    }

    pub fn norm_cr(&self, r: f64) -> Result<f64> {
        Ok(self.side.weighted_sum(&Weight::polynomial(r))?.value)
    }

    pub fn norm_jr(&self, r: f64) -> f64 {
        self.side.weighted_max(r)
    }

    /// `‖A⁻¹‖_{C_r}` with its truncation error.
    pub fn inverse_cr(&self, r: f64) -> Result<(f64, f64)> {
        let e = self.inverse_side.weighted_sum(&Weight::polynomial(r))?;
        Ok((e.value, e.tail_bound))
    }

    pub fn inverse_jr(&self, r: f64) -> f64 {
        self.inverse_side.weighted_max(r)
    }
}

/// `κ(A) = ‖A‖·‖A⁻¹‖` on the window, with the inverse of the section.
pub fn condition_kappa(a: &LatticeMatrix) -> Result<f64> {
    let inv = invert_truncated(a)?;
    Ok(operator_norm_l2(a, OP_TOL)? * operator_norm_l2(&inv, OP_TOL)?)
}

fn check_kappa(kappa: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa >= 1.0 - 1e-9) {
        return param(format!("condition number must be at least 1, got {kappa}"));
    }
    Ok(kappa.max(1.0))
}

/// `β = 1/(24κ + 1)`.
pub fn beta(kappa: f64) -> f64 {
    1.0 / (24.0 * kappa + 1.0)
}

/// `ℓ_r` together with the integral-test bracket of its series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllR {
    pub value: f64,
    pub series: SeriesSum,
    pub beta: f64,
    /// `γ = ln 1/(1 − β)`.
    pub gamma: f64,
    pub bracket: (f64, f64),
    pub in_bracket: bool,
}

/// `ℓ_r = 8‖A⁻¹‖ Σ_{k≥0} (1 − β)^k (1 + k)^r`.
pub fn ell_r(norm_inv_op: f64, kappa: f64, r: f64) -> Result<EllR> {
    let kappa = check_kappa(kappa)?;
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("r must be positive, got {r}"));
    }
    let b = beta(kappa);
    let series = poly_geometric_sum(1.0 - b, r, ELL_SERIES_TOL)?;
    let gamma = -(-b).ln_1p();
    let bracket = integral_test_bracket(gamma, r);
    Ok(EllR {
        value: 8.0 * norm_inv_op * series.value,
        series,
        beta: b,
        gamma,
        bracket,
        in_bracket: bracket.0 <= series.value && series.value <= bracket.1,
    })
}

/// `γ_r = 2^{r+1}(r + 1)/(r − 1)`.
pub fn gamma_r(r: f64) -> f64 {
    2f64.powf(r + 1.0) * (r + 1.0) / (r - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllTilde {
    pub value: f64,
    pub gamma_r: f64,
    pub argmax_k: u64,
    /// `max_k (1 − β)^k (1 + k)^r`.
    pub sup: f64,
}

/// `ℓ̃_r = γ_r ‖A⁻¹‖ max_{k≥0} (1 − β)^k (1 + k)^r`, `r > 1`.
pub fn ell_tilde_r(norm_inv_op: f64, kappa: f64, r: f64) -> Result<EllTilde> {
    let kappa = check_kappa(kappa)?;
    if !(r > 1.0 && r.is_finite()) {
        return param(format!("ell_tilde_r needs r > 1, got {r}"));
    }
    let b = beta(kappa);
    let ln_q = (-b).ln_1p();
    let ln_term = |k: f64| k * ln_q + r * k.ln_1p();
    // concave in k with real maximizer 1 + k = r/γ
    let peak = (r / -ln_q - 1.0).max(0.0);
    let (argmax_k, ln_sup) = [0.0, peak.floor(), peak.ceil()]
        .into_iter()
        .map(|k| (k as u64, ln_term(k)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let g = gamma_r(r);
    Ok(EllTilde {
        value: g * norm_inv_op * ln_sup.exp(),
        gamma_r: g,
        argmax_k,
        sup: ln_sup.exp(),
    })
}

/// `Φ_{A,r}(t)` and the two thresholds it is the maximum of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiResult {
    pub phi: u64,
    /// Smallest `k` with `2·3^r k^{−r}‖A‖_{C_r}ℓ_r ≤ t`.
    pub k_decay: u64,
    /// Smallest `k` with `2E_k(A)‖A⁻¹‖ ≤ t`.
    pub k_banded: u64,
}

/// Minimal `k ≥ 1` with `max(2·3^r k^{−r}‖A‖_{C_r}ℓ_r, 2E_k‖A⁻¹‖) ≤ t`.
/// Both criteria are nonincreasing in `k`, so each threshold is found
/// separately: the first in closed form (checked against the inequality),
/// the second by doubling and bisection.
pub fn phi_from_parts(norm_cr: f64, ell: f64, norm_inv_op: f64, side: &SideDiagonals, r: f64, t: f64) -> Result<PhiResult> {
    if !(t > 0.0 && t <= 0.5) {
        return param(format!("t must lie in (0, 1/2], got {t}"));
    }
    let ln_c = (2.0f64).ln() + r * 3f64.ln() + norm_cr.ln() + ell.ln();
    let first = |k: u64| ln_c - r * (k as f64).ln() <= t.ln();
    let k0 = ((ln_c - t.ln()) / r).exp().ceil().max(1.0);
    if !(k0 < PHI_CAP as f64) {
        return Err(Error::Cap {
            cap: PHI_CAP,
            diagnostic: format!("decay threshold for Phi is {k0:e}"),
        });
    }
    let mut k_decay = k0 as u64;
    while k_decay > 1 && first(k_decay - 1) {
        k_decay -= 1;
    }
    while !first(k_decay) {
        k_decay += 1;
    }
    let second = |k: u64| 2.0 * side.banded_error(k) * norm_inv_op <= t;
    let k_banded = if second(1) {
        1
    } else {
        let mut hi = 2u64;
        while !second(hi) {
            if hi >= PHI_CAP {
                return Err(Error::Cap {
                    cap: PHI_CAP,
                    diagnostic: format!("2 E_k ‖A⁻¹‖ = {:e} > {t} at k = {hi}", 2.0 * side.banded_error(hi) * norm_inv_op),
                });
            }
            hi *= 2;
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if second(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(PhiResult {
        phi: k_decay.max(k_banded),
        k_decay,
        k_banded,
    })
}

pub fn phi_a_r(data: &OperatorData, r: f64, t: f64) -> Result<PhiResult> {
    let ell = ell_r(data.norm_inv_op, data.kappa(), r)?;
    phi_from_parts(data.norm_cr(r)?, ell.value, data.norm_inv_op, &data.side, r, t)
}

/// `‖A⁻¹‖_{C_r} ≤ 4ℓ_r Φ(1 + Φ)^r` with `Φ = Φ_{A,r}(1/2)`.
pub fn baskakov_bound_cr(data: &OperatorData, r: f64) -> Result<BoundReport> {
    baskakov_bound_cr_at(data, r, 0.5)
}

/// As [`baskakov_bound_cr`] with `Φ_{A,r}(t)`; `t = 1/2` gives the smallest
/// value since `Φ` is nonincreasing in `t`.
pub fn baskakov_bound_cr_at(data: &OperatorData, r: f64, t: f64) -> Result<BoundReport> {
    let kappa = data.kappa();
    let ell = ell_r(data.norm_inv_op, kappa, r)?;
    let norm_cr = data.norm_cr(r)?;
    let phi = phi_from_parts(norm_cr, ell.value, data.norm_inv_op, &data.side, r, t)?;
    let p = phi.phi as f64;
    let log_bound = 4f64.ln() + ell.value.ln() + p.ln() + r * p.ln_1p();
    let (measured, err) = data.inverse_cr(r)?;
    Ok(BoundReport::new("baskakov_cr", log_bound)
        .input("norm_A_alg", norm_cr)
        .input("norm_A_op", data.norm_op)
        .input("norm_Ainv_op", data.norm_inv_op)
        .input("r", r)
        .input("t", t)
        .inter("kappa", kappa)
        .inter("beta", ell.beta)
        .inter("ell_r", ell.value)
        .inter("Phi", p)
        .inter("Phi_decay", phi.k_decay as f64)
        .inter("Phi_banded", phi.k_banded as f64)
        .with_measured(measured, err))
}

/// `‖A⁻¹‖_{J_r} ≤ 4ℓ̃_r(2 + (2·3^r‖A‖_{J_r}ℓ̃_r)^{1/(r−1)})^r`, `r > 1`.
pub fn baskakov_bound_jr(data: &OperatorData, r: f64) -> Result<BoundReport> {
    let kappa = data.kappa();
    let lt = ell_tilde_r(data.norm_inv_op, kappa, r)?;
    let norm_jr = data.norm_jr(r);
    let ln_x = 2f64.ln() + r * 3f64.ln() + norm_jr.ln() + lt.value.ln();
    let inner = log_add(2f64.ln(), ln_x / (r - 1.0));
    let log_bound = 4f64.ln() + lt.value.ln() + r * inner;
    Ok(BoundReport::new("baskakov_jr", log_bound)
        .input("norm_A_alg", norm_jr)
        .input("norm_A_op", data.norm_op)
        .input("norm_Ainv_op", data.norm_inv_op)
        .input("r", r)
        .inter("kappa", kappa)
        .inter("beta", beta(kappa))
        .inter("gamma_r", lt.gamma_r)
        .inter("ell_tilde_r", lt.value)
        .inter("ell_tilde_argmax", lt.argmax_k as f64)
        .with_measured(data.inverse_jr(r), 0.0))
}

/// Whether a multiplicative constant is evaluated or left as 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantMode {
    Symbolic,
    Numeric,
}

/// `ln C_r` with `C_r = 128·50^r·64^{1/r}·Γ(r + 1)^{1+1/r}`.
pub fn ln_constant_cr(r: f64) -> f64 {
    128f64.ln() + r * 50f64.ln() + 64f64.ln() / r + (1.0 + 1.0 / r) * ln_gamma(r + 1.0)
}

/// `C_r = 128·50^r·64^{1/r}·Γ(r + 1)^{1+1/r}`.
pub fn constant_cr_numeric(r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("r must be positive, got {r}"));
    }
    let ln_c = ln_constant_cr(r);
    if ln_c > f64::MAX.ln() {
        return Err(Error::Range { log_value: ln_c });
    }
    if r.fract() == 0.0 && r <= 20.0 {
        // integer factorial keeps r = 1 (and other small integers) exact
        let fact: f64 = (2..=r as u64).map(|i| i as f64).product();
        return Ok(128.0 * 50f64.powi(r as i32) * 64f64.powf(1.0 / r) * fact.powf(1.0 + 1.0 / r));
    }
    Ok(ln_c.exp())
}

/// `ln c₇` with `c₇ = (25/24) γ_r (25r/e)^r`: `ℓ̃_r ≤ c₇‖A‖^r‖A⁻¹‖^{r+1}`.
fn ln_c7(r: f64) -> f64 {
    (25.0f64 / 24.0).ln() + gamma_r(r).ln() + r * (25.0 * r / E).ln()
}

/// `ln C̃_r` with `C̃_r = 4·2^r (2·3^r)^{r/(r−1)} c₇^{(2r−1)/(r−1)}`, the
/// constant of the two-norm `J_r` bound obtained from
/// [`baskakov_bound_jr`].
pub fn ln_constant_jr(r: f64) -> Result<f64> {
    if !(r > 1.0 && r.is_finite()) {
        return param(format!("J_r constant needs r > 1, got {r}"));
    }
    Ok(4f64.ln()
        + r * 2f64.ln()
        + r / (r - 1.0) * (2f64.ln() + r * 3f64.ln())
        + (2.0 * r - 1.0) / (r - 1.0) * ln_c7(r))
}

/// `ln` of the one-norm constant `C̃_r((r + 1)/(r − 1))^{2r+1+1/(r−1)}`,
/// using `‖A‖ ≤ ‖A‖_{J_r} Σ_m (1 + |m|)^{−r} ≤ ‖A‖_{J_r}(r + 1)/(r − 1)`.
pub fn ln_constant_jr_single(r: f64) -> Result<f64> {
    Ok(ln_constant_jr(r)? + (2.0 * r + 1.0 + 1.0 / (r - 1.0)) * ((r + 1.0) / (r - 1.0)).ln())
}

fn check_positive(vals: &[(&str, f64)]) -> Result<()> {
    for (name, v) in vals {
        if !(*v > 0.0 && v.is_finite()) {
            return param(format!("{name} must be positive and finite, got {v}"));
        }
    }
    Ok(())
}

/// `C_r‖A‖_{C_r}^{1+1/r}‖A‖^{2r+2/r+3}‖A⁻¹‖^{2r+2/r+5}`.
pub fn explicit_bound_cr(norm_a_cr: f64, norm_a_op: f64, norm_ainv_op: f64, r: f64, mode: ConstantMode) -> Result<BoundReport> {
    check_positive(&[("norm_A_Cr", norm_a_cr), ("norm_A_op", norm_a_op), ("norm_Ainv_op", norm_ainv_op), ("r", r)])?;
    if norm_a_op * norm_ainv_op < 1.0 - 1e-9 {
        return param("‖A‖·‖A⁻¹‖ must be at least 1");
    }
    let ln_c = match mode {
        ConstantMode::Symbolic => 0.0,
        ConstantMode::Numeric => ln_constant_cr(r),
    };
    let e_inv = 2.0 * r + 2.0 / r + 5.0;
    let log_bound = ln_c + (1.0 + 1.0 / r) * norm_a_cr.ln() + (2.0 * r + 2.0 / r + 3.0) * norm_a_op.ln() + e_inv * norm_ainv_op.ln();
    let log_simplified = ln_c + (2.0 * r + 3.0 / r + 4.0) * norm_a_cr.ln() + e_inv * norm_ainv_op.ln();
    let mut rep = BoundReport::new("explicit_cr", log_bound)
        .input("norm_A_alg", norm_a_cr)
        .input("norm_A_op", norm_a_op)
        .input("norm_Ainv_op", norm_ainv_op)
        .input("r", r)
        .inter("ln_C_r", ln_c)
        .inter("log_simplified", log_simplified);
    rep.rate_exponent = Some(e_inv);
    rep.constant_known = mode == ConstantMode::Numeric;
    Ok(rep)
}

/// `J_r` bound in two forms, both with `r > 1`:
/// the one-norm form `C·‖A‖_{J_r}^{2r+2+2/(r−1)}‖A⁻¹‖^{2r+3+2/(r−1)}` and
/// the factored form `C̃_r‖A‖_{J_r}^{1+1/(r−1)}‖A‖^{2r+1+1/(r−1)}‖A⁻¹‖^{2r+3+2/(r−1)}`.
/// The reported bound is the smaller one.
pub fn explicit_bound_jr(norm_a_jr: f64, norm_a_op: f64, norm_ainv_op: f64, r: f64, mode: ConstantMode) -> Result<BoundReport> {
    check_positive(&[("norm_A_Jr", norm_a_jr), ("norm_A_op", norm_a_op), ("norm_Ainv_op", norm_ainv_op), ("r", r)])?;
    if r <= 1.0 {
        return param(format!("J_r bound needs r > 1, got {r}"));
    }
    let (ln_two, ln_one) = match mode {
        ConstantMode::Symbolic => (0.0, 0.0),
        ConstantMode::Numeric => (ln_constant_jr(r)?, ln_constant_jr_single(r)?),
    };
    let e_inv = 2.0 * r + 3.0 + 2.0 / (r - 1.0);
    let log_one = ln_one + (2.0 * r + 2.0 + 2.0 / (r - 1.0)) * norm_a_jr.ln() + e_inv * norm_ainv_op.ln();
    let log_two = ln_two
        + (1.0 + 1.0 / (r - 1.0)) * norm_a_jr.ln()
        + (2.0 * r + 1.0 + 1.0 / (r - 1.0)) * norm_a_op.ln()
        + e_inv * norm_ainv_op.ln();
    let mut rep = BoundReport::new("explicit_jr", log_one.min(log_two))
        .input("norm_A_alg", norm_a_jr)
        .input("norm_A_op", norm_a_op)
        .input("norm_Ainv_op", norm_ainv_op)
        .input("r", r)
        .inter("ln_C_single", ln_one)
        .inter("ln_C_factored", ln_two)
        .inter("log_single", log_one)
        .inter("log_factored", log_two);
    rep.rate_exponent = Some(e_inv);
    rep.constant_known = mode == ConstantMode::Numeric;
    Ok(rep)
}

pub fn explicit_bound_cr_for(data: &OperatorData, r: f64, mode: ConstantMode) -> Result<BoundReport> {
    let (m, e) = data.inverse_cr(r)?;
    Ok(explicit_bound_cr(data.norm_cr(r)?, data.norm_op, data.norm_inv_op, r, mode)?.with_measured(m, e))
}

pub fn explicit_bound_jr_for(data: &OperatorData, r: f64, mode: ConstantMode) -> Result<BoundReport> {
    Ok(explicit_bound_jr(data.norm_jr(r), data.norm_op, data.norm_inv_op, r, mode)?.with_measured(data.inverse_jr(r), 0.0))
}

/// `‖a⁻¹‖²|a| max(k, (q^k − 1)/(q − 1))`, `q = ‖a⁻¹‖|a|`, for the
/// derivation domain seminorm `|a| = Σ_{m≤k} ‖𝔇^m a‖/m!`.
pub fn dd_domain_bound(norm_inv: f64, seminorm: f64, k: u32) -> Result<BoundReport> {
    check_positive(&[("norm_Ainv", norm_inv), ("seminorm", seminorm)])?;
    if k == 0 {
        return param("derivation order must be at least 1");
    }
    let kf = k as f64;
    let ln_q = norm_inv.ln() + seminorm.ln();
    let ln_geo = ln_geometric_sum(ln_q, k);
    let log_bound = 2.0 * norm_inv.ln() + seminorm.ln() + ln_geo.max(kf.ln());
    let log_simplified = 2f64.ln() + (kf + 1.0) * norm_inv.ln() + kf * seminorm.ln();
    let mut rep = BoundReport::new("dd_domain", log_bound)
        .input("norm_Ainv_alg", norm_inv)
        .input("seminorm_A", seminorm)
        .input("k", kf)
        .inter("q", ln_q.exp())
        .inter("log_simplified", log_simplified)
        .inter("simplified_valid", if ln_q.exp() > kf.max(2.0) { 1.0 } else { 0.0 });
    rep.rate_exponent = Some(kf + 1.0);
    Ok(rep)
}

/// `ln((q^n − 1)/(q − 1)) = ln Σ_{j<n} q^j`.
fn ln_geometric_sum(ln_q: f64, n: u32) -> f64 {
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    if ln_q.abs() < 1e-12 {
        return (n as f64).ln();
    }
    let nf = n as f64;
    if ln_q > 0.0 {
        // q^{n−1}(1 − q^{−n})/(1 − q^{−1})
        (nf - 1.0) * ln_q + (-(-nf * ln_q).exp_m1()).ln() - (-(-ln_q).exp_m1()).ln()
    } else {
        ((nf * ln_q).exp_m1() / ln_q.exp_m1()).ln()
    }
}

/// `C‖a⁻¹‖²‖a‖_Λ (q^{⌊r⌋+1} − 1)/(q − 1)`, `q = ‖a⁻¹‖‖a‖_Λ`, with `C = 1`.
/// The true constant is not known, so this is a rate report.
pub fn besov_bound(norm_inv: f64, norm_besov: f64, r: f64, p: PExponent) -> Result<BoundReport> {
    check_positive(&[("norm_Ainv", norm_inv), ("norm_A_besov", norm_besov), ("r", r)])?;
    p.validate()?;
    let n = r.floor() as u32 + 1;
    let ln_q = norm_inv.ln() + norm_besov.ln();
    let log_bound = 2.0 * norm_inv.ln() + norm_besov.ln() + ln_geometric_sum(ln_q, n);
    let mut rep = BoundReport::new("besov", log_bound)
        .input("norm_Ainv_alg", norm_inv)
        .input("norm_A_besov", norm_besov)
        .input("r", r)
        .input("p", p_value(p))
        .inter("q", ln_q.exp())
        .inter("log_asymptotic", (n as f64 + 1.0) * norm_inv.ln() + n as f64 * norm_besov.ln());
    rep.rate_exponent = Some(r.floor() + 2.0);
    rep.constant_known = false;
    Ok(rep)
}

fn p_value(p: PExponent) -> f64 {
    match p {
        PExponent::Finite(v) => v,
        PExponent::Infinity => f64::INFINITY,
    }
}

/// `C‖a⁻¹‖^{2^{⌊r⌋+1}}‖a‖_Λ^{2^{⌊r⌋}}` with `C = 1`; rate report.
pub fn besov_basic_bound(norm_inv: f64, norm_besov: f64, r: f64, p: PExponent) -> Result<BoundReport> {
    check_positive(&[("norm_Ainv", norm_inv), ("norm_A_besov", norm_besov), ("r", r)])?;
    p.validate()?;
    let e = 2f64.powf(r.floor() + 1.0);
    let log_bound = e * norm_inv.ln() + 0.5 * e * norm_besov.ln();
    let mut rep = BoundReport::new("besov_basic", log_bound)
        .input("norm_Ainv_alg", norm_inv)
        .input("norm_A_besov", norm_besov)
        .input("r", r)
        .input("p", p_value(p))
        .inter("log_asymptotic", e * norm_inv.ln());
    rep.rate_exponent = Some(e);
    rep.constant_known = false;
    Ok(rep)
}

/// `C_r‖a⁻¹‖³‖a‖²_{P_r}` for `0 < r < 1` with `C_r = 1`; rate report.
pub fn bessel_bound(norm_inv: f64, norm_bessel: f64, r: f64) -> Result<BoundReport> {
    check_positive(&[("norm_Ainv", norm_inv), ("norm_A_bessel", norm_bessel)])?;
    if !(r > 0.0 && r < 1.0) {
        return param(format!("Bessel bound needs 0 < r < 1, got {r}"));
    }
    let log_bound = 3.0 * norm_inv.ln() + 2.0 * norm_bessel.ln();
    let mut rep = BoundReport::new("bessel", log_bound)
        .input("norm_Ainv_alg", norm_inv)
        .input("norm_A_bessel", norm_bessel)
        .input("r", r)
        .inter("log_asymptotic", 3.0 * norm_inv.ln());
    rep.rate_exponent = Some(3.0);
    rep.constant_known = false;
    Ok(rep)
}

/// Spread of `measured / bound` over a family of rate reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ratios: Vec<f64>,
    /// Smallest constant making every report hold: the largest ratio.
    pub fitted_constant: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`.
    pub spread: f64,
}

pub fn calibration(reports: &[BoundReport]) -> Result<Calibration> {
    let ratios: Vec<f64> = reports
        .iter()
        .map(|r| r.ratio().ok_or_else(|| Error::Parameter(format!("report {} has no measurement", r.bound_name))))
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        return param("calibration needs at least one report");
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Calibration {
        fitted_constant: max_ratio,
        spread: max_ratio / min_ratio,
        ratios,
        min_ratio,
        max_ratio,
    })
}

/// Source of the Dales–Davie estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DalesDavieMode {
    /// `a_m[i] = A_{i+1}`, assumed nonincreasing past the last entry.
    General { a_m: Vec<f64> },
    /// `A_m = m!^{(1−r)/m}`, summed in closed form.
    Gevrey { r: f64 },
}

/// `δ⁻¹ + Σ_{m≥1} δ^{−m−1}A_m^m` with `δ = 1/‖a⁻¹‖`, for `‖a‖_{DD} ≤ 1`.
///
/// In general mode the sum runs over the supplied `A_m`; if the last one is
/// below `δ/2` the remaining terms are below `δ⁻¹2^{−m}` and the tail
/// `δ⁻¹2^{−M}` is added, otherwise the report is marked inconclusive.
pub fn dales_davie_bound(norm_inv: f64, mode: &DalesDavieMode) -> Result<BoundReport> {
    check_positive(&[("norm_Ainv", norm_inv)])?;
    let delta = 1.0 / norm_inv;
    let ln_inv = norm_inv.ln();
    match mode {
        DalesDavieMode::General { a_m } => {
            if a_m.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return param("A_m must be finite and nonnegative");
            }
            let mut acc = ln_inv;
            for (i, &a) in a_m.iter().enumerate() {
                let m = (i + 1) as f64;
                acc = log_add(acc, (m + 1.0) * ln_inv + m * a.ln());
            }
            let big_m = a_m.len() as f64;
            let last = a_m.last().copied().unwrap_or(f64::INFINITY);
            let inconclusive = !(last < delta / 2.0);
            let tail = ln_inv - big_m * 2f64.ln();
            let mut rep = BoundReport::new("dales_davie_general", if inconclusive { acc } else { log_add(acc, tail) })
                .input("norm_Ainv_alg", norm_inv)
                .inter("delta", delta)
                .inter("terms", big_m)
                .inter("log_tail", tail);
            rep.inconclusive = inconclusive;
            Ok(rep)
        }
        DalesDavieMode::Gevrey { r } => {
            if !(*r > 1.0 && r.is_finite()) {
                return param(format!("gevrey mode needs r > 1, got {r}"));
            }
            let phi = ln_phi_r(r - 1.0, norm_inv, SERIES_TOL)?;
            Ok(BoundReport::new("dales_davie_gevrey", ln_inv + phi.ln_value)
                .input("norm_Ainv_alg", norm_inv)
                .input("r", *r)
                .inter("delta", delta)
                .inter("ln_phi", phi.ln_value))
        }
    }
}

/// `x·v_{r−1}(x)` with `x = C_s δ^{−(2s+2/s+5)}`: the `C_s` bound gives
/// `‖a⁻¹‖_{C_0} ≤ x`, which feeds the Gevrey Dales–Davie estimate.
pub fn superpoly_bound(delta: f64, r: f64, s: f64) -> Result<BoundReport> {
    if !(delta > 0.0 && delta <= 1.0) {
        return param(format!("delta must lie in (0, 1], got {delta}"));
    }
    if !(r > 1.0 && r.is_finite()) {
        return param(format!("superpolynomial bound needs r > 1, got {r}"));
    }
    check_positive(&[("s", s)])?;
    let exponent = 2.0 * s + 2.0 / s + 5.0;
    let ln_c0 = ln_constant_cr(s);
    let ln_x = ln_c0 - exponent * delta.ln();
    let phi = ln_phi_r(r - 1.0, ln_x.exp(), SERIES_TOL)?;
    let mut rep = BoundReport::new("superpoly", ln_x + phi.ln_value)
        .input("delta", delta)
        .input("r", r)
        .input("s", s)
        .inter("ln_C0", ln_c0)
        .inter("ln_C1", ln_c0)
        .inter("exponent", exponent)
        .inter("ln_x", ln_x)
        .inter("ln_phi", phi.ln_value);
    rep.rate_exponent = None;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_matrix::ToeplitzSymbol;
    use crate::norms_weights::a_m_gevrey;
    use approx::assert_relative_eq;

    fn c_gamma(g: f64) -> LatticeMatrix {
        make_toeplitz(&ToeplitzSymbol::c_gamma(g).unwrap(), IndexWindow::symmetric(8).unwrap()).unwrap()
    }

    #[test]
    fn kappa_examples() {
        let id = LatticeMatrix::identity(IndexWindow::symmetric(4).unwrap());
        assert_relative_eq!(condition_kappa(&id).unwrap(), 1.0, max_relative = 1e-12);
        let d = LatticeMatrix::diagonal(IndexWindow::symmetric(4).unwrap(), |k| crate::lattice_matrix::phase(k, 0.37)).unwrap();
        assert_relative_eq!(condition_kappa(&d).unwrap(), 1.0, max_relative = 1e-12);
        let g: f64 = 0.3;
        let q = (-g).exp();
        let k = OperatorData::from_matrix(&c_gamma(g)).unwrap().kappa();
        assert_relative_eq!(k, (1.0 + q) / (1.0 - q), max_relative = 1e-14);
    }

    #[test]
    fn ell_r_direct_sum() {
        let e = ell_r(1.0, 1.0, 1.0).unwrap();
        let mut direct = 0.0;
        for k in 0..5000 {
            direct += (24.0f64 / 25.0).powi(k) * (1.0 + k as f64);
        }
        assert_relative_eq!(e.value, 8.0 * direct, max_relative = 1e-11);
        // Σ q^k (1+k) = 1/(1−q)² = 625
        assert_relative_eq!(e.value, 8.0 * 625.0, max_relative = 1e-11);
        assert!(ell_r(1.0, 2.0, 1.0).unwrap().value > e.value);
    }

    #[test]
    fn ell_tilde_by_scan() {
        let e = ell_tilde_r(1.0, 1.0, 2.0).unwrap();
        let q = 24.0f64 / 25.0;
        let (mut best_k, mut best) = (0, 0.0);
        for k in 0..2000 {
            let v = q.powi(k) * (1.0 + k as f64).powi(2);
            if v > best {
                best = v;
                best_k = k;
            }
        }
        assert_eq!(e.argmax_k, best_k as u64);
        assert_relative_eq!(e.value, gamma_r(2.0) * best, max_relative = 1e-13);
        assert!(ell_tilde_r(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn phi_first_criterion_threshold() {
        let side = SideDiagonals::from_values(0, vec![1.0]);
        let r = 2.0;
        let ell = 3.7;
        let res = phi_from_parts(1.0, ell, 1.0, &side, r, 0.5).unwrap();
        // independent minimal-k search
        let mut k = 1u64;
        while 2.0 * 9.0 * ell / (k as f64).powi(2) > 0.5 {
            k += 1;
        }
        assert_eq!(res.phi, k);
        assert_eq!(res.k_banded, 1);
    }

    #[test]
    fn phi_second_criterion_by_scan() {
        let g = 0.05;
        let side = SideDiagonals::of(&c_gamma(g));
        let res = phi_from_parts(1e-9, 1.0, 40.0, &side, 1.0, 0.5).unwrap();
        let mut k = 1u64;
        while 2.0 * side.banded_error(k) * 40.0 > 0.5 {
            k += 1;
        }
        assert_eq!(res.k_banded, k);
        let mut prev = u64::MAX;
        for t in [0.05, 0.1, 0.2, 0.3, 0.5] {
            let p = phi_from_parts(1.0, 5.0, 40.0, &side, 1.0, t).unwrap().phi;
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn identity_bounds_hold() {
        let data = OperatorData::from_matrix(&LatticeMatrix::identity(IndexWindow::symmetric(3).unwrap())).unwrap();
        for rep in [
            baskakov_bound_cr(&data, 1.0).unwrap(),
            baskakov_bound_jr(&data, 2.0).unwrap(),
            explicit_bound_cr_for(&data, 1.0, ConstantMode::Numeric).unwrap(),
            explicit_bound_jr_for(&data, 2.0, ConstantMode::Numeric).unwrap(),
        ] {
            assert_eq!(rep.measured_value, Some(1.0));
            assert_eq!(rep.satisfied, Some(true), "{}", rep.bound_name);
        }
    }

    #[test]
    fn constant_cr_at_one() {
        assert_eq!(constant_cr_numeric(1.0).unwrap(), 409600.0);
        assert_relative_eq!(ln_constant_cr(2.5).exp(), constant_cr_numeric(2.5).unwrap(), max_relative = 1e-14);
        assert!(constant_cr_numeric(400.0).is_err());
    }

    #[test]
    fn jr_exponent_at_three() {
        let a = explicit_bound_jr(1.0, 1.0, 2.0, 3.0, ConstantMode::Symbolic).unwrap();
        assert_relative_eq!(a.rate_exponent.unwrap(), 10.0);
        assert_relative_eq!(a.log_bound, 10.0 * 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn dd_bound_limits() {
        let rep = dd_domain_bound(2.0, 0.5, 3).unwrap();
        assert_relative_eq!(rep.bound_value, 4.0 * 0.5 * 3.0, max_relative = 1e-14);
        let rep = dd_domain_bound(10.0, 1.0, 2).unwrap();
        assert_relative_eq!(rep.bound_value, 100.0 * 11.0, max_relative = 1e-14);
        assert!(rep.bound_value <= rep.intermediate("log_simplified").unwrap().exp());
    }

    #[test]
    fn dales_davie_gevrey_examples() {
        let rep = dales_davie_bound(10.0, &DalesDavieMode::Gevrey { r: 2.0 }).unwrap();
        assert_relative_eq!(rep.bound_value, 10.0 * 10f64.exp(), max_relative = 1e-13);
        let a: Vec<f64> = (1..=80).map(|m| a_m_gevrey(2.0, m).unwrap()).collect();
        let gen = dales_davie_bound(10.0, &DalesDavieMode::General { a_m: a }).unwrap();
        assert!(!gen.inconclusive);
        assert_relative_eq!(gen.bound_value, rep.bound_value, max_relative = 1e-10);
        let r3 = dales_davie_bound(10.0, &DalesDavieMode::Gevrey { r: 3.0 }).unwrap();
        assert!(r3.bound_value < rep.bound_value);
    }

    #[test]
    fn superpoly_composition() {
        let rep = superpoly_bound(0.5, 2.0, 1.0).unwrap();
        let ln_x = 409600f64.ln() + 9.0 * 2f64.ln();
        // v_1(x) = e^x
        assert_relative_eq!(rep.log_bound, ln_x + ln_x.exp(), max_relative = 1e-12);
        assert!(superpoly_bound(0.5, 3.0, 1.0).unwrap().log_bound < rep.log_bound);
    }

    #[test]
    fn report_json_keeps_infinities() {
        let rep = superpoly_bound(0.1, 2.0, 1.0).unwrap().with_measured(1.0, 0.0);
        assert!(rep.bound_value.is_infinite());
        let back: BoundReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.satisfied, Some(true));
    }
}
