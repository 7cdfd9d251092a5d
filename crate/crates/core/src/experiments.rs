//! Experiment drivers: parameter sweeps over the `C_γ` family and seeded
//! random decay matrices, with tabular output and asymptotic slope fits.
//!
//! Rows of a sweep are computed in parallel and collected in parameter
//! order, so identical configurations give identical tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::besov_smoothness::{besov_seminorm, hypersingular_seminorm, PExponent};
use crate::bounds::{
    baskakov_bound_cr, baskakov_bound_jr, besov_bound, bessel_bound, calibration, dales_davie_bound, explicit_bound_cr_for,
    explicit_bound_jr_for, BoundReport, Calibration, ConstantMode, DalesDavieMode, OperatorData,
};
use crate::error::{param, Error, Result};
use crate::lattice_matrix::{invert_truncated, make_toeplitz, IndexWindow, LatticeMatrix, ToeplitzSymbol};
use crate::norms_weights::{
    cv_norm, dales_davie_norm, ln_phi_r, Ambient, SmoothnessSequence, Weight, SERIES_TOL,
};
use crate::quotient_rules::{
    derivation_quotient_rhs_with_inverse, difference_product_rhs, difference_quotient_rhs_with_inverse,
    telescoping_residual, verify_identity, IdentityError,
};
use crate::serde_ext;
use crate::special::{integral_test_bracket, ln_gamma, ln_power_geometric_sum, poly_geometric_sum};
use crate::Complex64;

/// Output table format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => param(format!("unknown output format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub path: std::path::PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_epsilon() -> f64 {
    0.3
}
fn default_instances() -> usize {
    20
}
fn default_k_max() -> u32 {
    5
}
fn default_t_list() -> Vec<f64> {
    vec![0.1, 0.37, 0.5]
}

/// Configuration shared by all experiments. Fields not used by a given
/// experiment are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub gamma_grid: Vec<f64>,
    pub r_list: Vec<f64>,
    #[serde(rename = "window_N")]
    pub window_n: usize,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    /// `ε` in `A = I − εB`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Number of random instances.
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Highest derivation or difference order.
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, gamma_grid: Vec<f64>, r_list: Vec<f64>) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            gamma_grid,
            r_list,
            window_n: 64,
            seed: 0,
            tolerances: BTreeMap::new(),
            output: None,
            epsilon: default_epsilon(),
            instances: default_instances(),
            k_max: default_k_max(),
            t_list: default_t_list(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_n < 32 {
            return param(format!("window_N must be at least 32, got {}", self.window_n));
        }
        if self.gamma_grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return param("gamma_grid entries must be positive");
        }
        if self.gamma_grid.windows(2).any(|w| w[1] >= w[0]) {
            return param("gamma_grid must be strictly decreasing");
        }
        if self.r_list.is_empty() || self.r_list.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return param("r_list must be nonempty with nonnegative entries");
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return param(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        if self.t_list.iter().any(|t| !t.is_finite()) {
            return param("t_list entries must be finite");
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    /// Window of exactly `window_N` indices around 0.
    pub fn window(&self) -> Result<IndexWindow> {
        let n = self.window_n as i64;
        IndexWindow::new(-(n / 2), n - 1 - n / 2)
    }

    fn require_grid(&self, min: usize) -> Result<()> {
        if self.gamma_grid.len() < min {
            return param(format!("gamma_grid needs at least {min} points, got {}", self.gamma_grid.len()));
        }
        Ok(())
    }
}

/// Least-squares line through the asymptotic half of a sequence of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a fitted point from the line.
    pub residual: f64,
}

/// Fits `y = slope·x + intercept` to the last `⌈n/2⌉` points.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return param("slope fit needs at least two points");
    }
    let used = &points[points.len() - points.len().div_ceil(2).max(2)..];
    let n = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / n;
    let my = used.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return param("slope fit needs distinct abscissae");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = used.iter().map(|p| (p.1 - slope * p.0 - intercept).abs()).fold(0.0, f64::max);
    Ok(SlopeFit {
        points: points.to_vec(),
        slope,
        intercept,
        residual,
    })
}

/// `A = I − εB` with `B(k, l) = u_{kl}(1 + |k − l|)^{−r}` and `u_{kl}`
/// uniform on the closed complex unit disc.
pub fn random_decay_matrix<R: Rng>(window: IndexWindow, r: f64, eps: f64, rng: &mut R) -> Result<LatticeMatrix> {
    let n = window.size();
    let mut u = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let rad: f64 = rng.gen::<f64>().sqrt();
        let ang: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        u.push(Complex64::from_polar(rad, ang));
    }
    let lo = window.lo();
    LatticeMatrix::from_fn(window, |k, l| {
        let b = u[(k - lo) as usize * n + (l - lo) as usize] * (1.0 + (k - l).unsigned_abs() as f64).powf(-r);
        let id = if k == l { 1.0 } else { 0.0 };
        Complex64::new(id, 0.0) - b * eps
    })
}

/// Instance `i` of a seeded family: one ChaCha stream per instance.
pub fn instance_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Draws an invertible `I − εB`, redrawing on singular sections.
fn invertible_instance(cfg: &ExperimentConfig, r: f64, i: u64) -> Result<LatticeMatrix> {
    let mut rng = instance_rng(cfg.seed, i);
    for attempt in 0..10 {
        let a = random_decay_matrix(cfg.window()?, r, cfg.epsilon, &mut rng)?;
        match invert_truncated(&a) {
            Ok(_) => return Ok(a),
            Err(Error::Singular { rcond }) => {
                log::warn!("instance {i} attempt {attempt} singular (rcond {rcond:e}); redrawing");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Singular { rcond: 0.0 })
}

fn c_gamma_scaled(gamma: f64, scale: f64) -> Result<ToeplitzSymbol> {
    let q = (-gamma).exp();
    ToeplitzSymbol::from_real_pairs([(0, 1.0 / scale), (1, -q / scale)])
}

fn toeplitz(sym: &ToeplitzSymbol) -> Result<LatticeMatrix> {
    make_toeplitz(sym, IndexWindow::symmetric(2)?)
}

fn closed_inverse(sym: &ToeplitzSymbol) -> Result<LatticeMatrix> {
    let inv = sym
        .closed_form_inverse(crate::bounds::INVERSE_TAIL_TOL)
        .ok_or_else(|| Error::Parameter("symbol has no closed-form inverse".into()))?;
    toeplitz(&inv)
}

/// Writes rows as CSV or a JSON array.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], format: OutputFormat, mut w: W) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut out = csv::Writer::from_writer(w);
            for row in rows {
                out.serialize(row)?;
            }
            out.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(format: OutputFormat, r: R) -> Result<Vec<T>> {
    match format {
        OutputFormat::Csv => csv::Reader::from_reader(r)
            .deserialize()
            .map(|row| row.map_err(Error::from))
            .collect(),
        OutputFormat::Json => Ok(serde_json::from_reader(r)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzRow {
    pub gamma: f64,
    pub r: f64,
    /// `‖C_γ‖_{C_r}` and its closed form `1 + 2^r e^{−γ}`.
    pub norm_cr: f64,
    pub norm_cr_expected: f64,
    /// Norms of the inverse of `C̃_γ = C_γ/‖C_γ‖_{C_r}`.
    pub norm_inv_c0: f64,
    pub norm_inv_cr: f64,
    /// `Σ_{k≥0}(1 + k)^r e^{−γk}` and its integral-test bracket.
    pub series: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub in_bracket: bool,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub r: f64,
    pub slope: f64,
    pub expected: f64,
    pub intercept: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzSharpness {
    pub rows: Vec<ToeplitzRow>,
    pub fits: Vec<FitRow>,
}

/// Normalized `C̃_γ`: fits `ln ‖C̃_γ⁻¹‖_{C_r}` against `ln δ`,
/// `δ = 1/‖C̃_γ⁻¹‖_{C_0}`; the expected slope is `−(r + 1)`.
pub fn run_toeplitz_sharpness(cfg: &ExperimentConfig) -> Result<ToeplitzSharpness> {
    cfg.validate()?;
    cfg.require_grid(4)?;
    let jobs: Vec<(f64, f64)> = cfg.r_list.iter().flat_map(|&r| cfg.gamma_grid.iter().map(move |&g| (r, g))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(r, gamma)| -> Result<ToeplitzRow> {
            let q = (-gamma).exp();
            let norm_cr = cv_norm(&toeplitz(&c_gamma_scaled(gamma, 1.0)?)?, &Weight::polynomial(r))?;
            let norm_cr_expected = 1.0 + 2f64.powf(r) * q;
            let inv = closed_inverse(&c_gamma_scaled(gamma, norm_cr)?)?;
            let norm_inv_c0 = cv_norm(&inv, &Weight::constant())?;
            let norm_inv_cr = cv_norm(&inv, &Weight::polynomial(r))?;
            let series = poly_geometric_sum(q, r, 1e-14)?.value;
            let (bracket_lo, bracket_hi) = integral_test_bracket(gamma, r);
            Ok(ToeplitzRow {
                gamma,
                r,
                norm_cr,
                norm_cr_expected,
                norm_inv_c0,
                norm_inv_cr,
                series,
                bracket_lo,
                bracket_hi,
                in_bracket: bracket_lo <= series && series <= bracket_hi,
                delta: 1.0 / norm_inv_c0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = cfg
        .r_list
        .iter()
        .map(|&r| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|row| row.r == r)
                .map(|row| (row.delta.ln(), row.norm_inv_cr.ln()))
                .collect();
            let fit = fit_slope(&pts)?;
            Ok(FitRow {
                r,
                slope: fit.slope,
                expected: -(r + 1.0),
                intercept: fit.intercept,
                residual: fit.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToeplitzSharpness { rows, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdRow {
    pub gamma: f64,
    pub r: f64,
    /// `‖C_γ⁻¹‖_{C_{v_r}}`.
    pub norm_vr: f64,
    /// `Σ_{k≤k_max} ‖𝔇^k C_γ⁻¹‖_{C_0}/k!^r`.
    pub dd_partial: f64,
    /// Whether the terms are already decreasing at `k_max`.
    pub dd_settled: bool,
    /// `γ⁻¹v_{r−1}(1/γ)`.
    pub reference: f64,
    pub ratio: f64,
    /// Orders `1 ≤ k ≤ k_max` with `‖𝔇^k C_γ⁻¹‖_{C_0}` inside
    /// `[Γ(k+1)γ^{−k−1}, 2Γ(k+1)γ^{−k−1}]`, and with only the upper bound.
    pub derivation_in_bracket: u32,
    pub derivation_below_upper: u32,
    /// Gevrey Dales–Davie bound for `C̃_γ = C_γ/‖C_γ‖_{C_{v_r}}`.
    #[serde(with = "serde_ext::float")]
    pub bound: f64,
    pub log_bound: f64,
    pub measured_normalized: f64,
    pub bound_ratio: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdSharpness {
    pub rows: Vec<DdRow>,
    /// `ln ‖C_γ⁻¹‖_{C_{v_r}}` against `ln γ⁻¹v_{r−1}(1/γ)`; slope 1 means
    /// parallel shapes.
    pub fits: Vec<FitRow>,
}

pub fn run_dd_sharpness(cfg: &ExperimentConfig) -> Result<DdSharpness> {
    cfg.validate()?;
    cfg.require_grid(2)?;
    if cfg.r_list.iter().any(|&r| r <= 1.0) {
        return param("dd-sharpness needs every r > 1");
    }
    let jobs: Vec<(f64, f64)> = cfg.r_list.iter().flat_map(|&r| cfg.gamma_grid.iter().map(move |&g| (r, g))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(r, gamma)| -> Result<DdRow> {
            let a = toeplitz(&c_gamma_scaled(gamma, 1.0)?)?;
            let inv = closed_inverse(&c_gamma_scaled(gamma, 1.0)?)?;
            let v = Weight::subexp(r);
            let norm_vr = cv_norm(&inv, &v)?;
            let dd = dales_davie_norm(&inv, &SmoothnessSequence::Gevrey { r }, cfg.k_max.max(1), Ambient::C0)?;
            let dd_partial = dd.ln_terms.iter().map(|t| t.exp()).sum::<f64>();
            let ln_ref = -gamma.ln() + ln_phi_r(r - 1.0, 1.0 / gamma, SERIES_TOL)?.ln_value;
            let (mut in_bracket, mut below_upper) = (0, 0);
            for k in 1..=cfg.k_max {
                let ln_d = ln_power_geometric_sum(k, gamma, 1e-14)?;
                let ln_lo = ln_gamma(k as f64 + 1.0) - (k as f64 + 1.0) * gamma.ln();
                let upper = ln_d <= ln_lo + 2f64.ln();
                below_upper += upper as u32;
                in_bracket += (upper && ln_d >= ln_lo) as u32;
            }
            let s = cv_norm(&a, &v)?;
            let measured_normalized = s * norm_vr;
            let norm_inv_c0 = s * cv_norm(&inv, &Weight::constant())?;
            let rep = dales_davie_bound(norm_inv_c0, &DalesDavieMode::Gevrey { r })?.with_measured(measured_normalized, 0.0);
            Ok(DdRow {
                gamma,
                r,
                norm_vr,
                dd_partial,
                dd_settled: !dd.divergent,
                reference: ln_ref.exp(),
                ratio: (norm_vr.ln() - ln_ref).exp(),
                derivation_in_bracket: in_bracket,
                derivation_below_upper: below_upper,
                bound: rep.bound_value,
                log_bound: rep.log_bound,
                measured_normalized,
                bound_ratio: rep.ratio().unwrap_or(f64::NAN),
                satisfied: rep.satisfied == Some(true),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = cfg
        .r_list
        .iter()
        .map(|&r| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|row| row.r == r)
                .map(|row| (row.reference.ln(), row.norm_vr.ln()))
                .collect();
            let fit = fit_slope(&pts)?;
            Ok(FitRow {
                r,
                slope: fit.slope,
                expected: 1.0,
                intercept: fit.intercept,
                residual: fit.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DdSharpness { rows, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaffardRow {
    /// `random` (param = instance index) or `c_gamma` (param = γ).
    pub family: String,
    pub param: f64,
    pub r: f64,
    pub epsilon: f64,
    pub measured_jr: f64,
    pub measured_cr: f64,
    #[serde(with = "serde_ext::float")]
    pub bound_explicit_jr: f64,
    #[serde(with = "serde_ext::float")]
    pub bound_baskakov_jr: f64,
    #[serde(with = "serde_ext::float")]
    pub bound_explicit_cr: f64,
    #[serde(with = "serde_ext::float")]
    pub bound_baskakov_cr: f64,
    pub ratio_explicit_jr: f64,
    pub ratio_baskakov_jr: f64,
    pub ratio_explicit_cr: f64,
    pub ratio_baskakov_cr: f64,
    pub all_satisfied: bool,
}

/// The four `C_r`/`J_r` bounds for one operator, in the order explicit
/// `J_r`, Baskakov `J_r`, explicit `C_r`, Baskakov `C_r`.
pub fn decay_bound_reports(data: &OperatorData, r: f64) -> Result<[BoundReport; 4]> {
    Ok([
        explicit_bound_jr_for(data, r, ConstantMode::Numeric)?,
        baskakov_bound_jr(data, r)?,
        explicit_bound_cr_for(data, r, ConstantMode::Numeric)?,
        baskakov_bound_cr(data, r)?,
    ])
}

fn jaffard_row(family: &str, param_value: f64, r: f64, eps: f64, data: &OperatorData) -> Result<JaffardRow> {
    let reps = decay_bound_reports(data, r)?;
    let ratio = |i: usize| reps[i].ratio().unwrap_or(f64::NAN);
    Ok(JaffardRow {
        family: family.to_string(),
        param: param_value,
        r,
        epsilon: eps,
        measured_jr: reps[0].measured_value.unwrap_or(f64::NAN),
        measured_cr: reps[2].measured_value.unwrap_or(f64::NAN),
        bound_explicit_jr: reps[0].bound_value,
        bound_baskakov_jr: reps[1].bound_value,
        bound_explicit_cr: reps[2].bound_value,
        bound_baskakov_cr: reps[3].bound_value,
        ratio_explicit_jr: ratio(0),
        ratio_baskakov_jr: ratio(1),
        ratio_explicit_cr: ratio(2),
        ratio_baskakov_cr: ratio(3),
        all_satisfied: reps.iter().all(|rep| rep.satisfied == Some(true)),
    })
}

/// Random `I − εB` instances (one per seed stream) followed by the `C_γ`
/// grid, each checked against the four decay bounds.
pub fn run_jaffard_check(cfg: &ExperimentConfig) -> Result<Vec<JaffardRow>> {
    cfg.validate()?;
    if cfg.epsilon > 0.5 {
        return param(format!("jaffard-check needs epsilon <= 0.5, got {}", cfg.epsilon));
    }
    if cfg.r_list.iter().any(|&r| r <= 1.0) {
        return param("jaffard-check needs every r > 1");
    }
    let mut jobs: Vec<(bool, f64, f64)> = Vec::new();
    for &r in &cfg.r_list {
        jobs.extend((0..cfg.instances).map(|i| (true, i as f64, r)));
        jobs.extend(cfg.gamma_grid.iter().map(|&g| (false, g, r)));
    }
    jobs.par_iter()
        .map(|&(random, p, r)| {
            if random {
                let a = invertible_instance(cfg, r, p as u64)?;
                jaffard_row("random", p, r, cfg.epsilon, &OperatorData::from_matrix(&a)?)
            } else {
                let a = toeplitz(&c_gamma_scaled(p, 1.0)?)?;
                jaffard_row("c_gamma", p, r, 0.0, &OperatorData::from_matrix(&a)?)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientRow {
    pub instance: u64,
    pub k: u32,
    pub t: Option<f64>,
    pub identity: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

fn quotient_row(instance: u64, k: u32, t: Option<f64>, identity: &str, e: IdentityError) -> QuotientRow {
    QuotientRow {
        instance,
        k,
        t,
        identity: identity.to_string(),
        max_abs_err: e.max_abs_err,
        max_rel_err: e.max_rel_err,
    }
}

/// Iterated product and quotient rules on random instances, with the
/// comparison restricted to the window shrunk by `window_N/4`.
/// The decay order of the instances is the first entry of `r_list`.
pub fn run_quotient_verify(cfg: &ExperimentConfig) -> Result<Vec<QuotientRow>> {
    cfg.validate()?;
    if cfg.k_max == 0 || cfg.k_max > crate::quotient_rules::DEFAULT_K_CAP {
        return param(format!("k_max must lie in 1..={}", crate::quotient_rules::DEFAULT_K_CAP));
    }
    let r = cfg.r_list[0];
    let margin = cfg.window_n / 4;
    let per_instance = (0..cfg.instances as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<QuotientRow>> {
            let a = invertible_instance(cfg, r, 2 * i)?;
            let b = invertible_instance(cfg, r, 2 * i + 1)?;
            let inv = invert_truncated(&a)?;
            let ab = a.matmul(&b)?;
            let mut rows = Vec::new();
            for k in 1..=cfg.k_max {
                let rhs = derivation_quotient_rhs_with_inverse(&a, &inv, k)?;
                rows.push(quotient_row(i, k, None, "derivation_quotient", verify_identity(&inv.derivation_power(k), &rhs, margin)?));
                for &t in &cfg.t_list {
                    let rhs = difference_product_rhs(&a, &b, t, k)?;
                    rows.push(quotient_row(i, k, Some(t), "difference_product", verify_identity(&ab.difference_power(t, k), &rhs, margin)?));
                    let rhs = difference_quotient_rhs_with_inverse(&a, &inv, t, k)?;
                    rows.push(quotient_row(i, k, Some(t), "difference_quotient", verify_identity(&inv.difference_power(t, k), &rhs, margin)?));
                    rows.push(quotient_row(i, k, Some(t), "telescoping", telescoping_residual(&a, &inv, t, k, margin)?));
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovRow {
    /// `c_gamma` (normalized, param = γ), `shift` (param = m) or `diagonal`.
    pub family: String,
    pub param: f64,
    pub r: f64,
    pub besov_p1: f64,
    pub besov_p1_error: f64,
    pub besov_inf: f64,
    pub hypersingular: Option<f64>,
    pub norm_cr: f64,
    pub ratio_p1: f64,
    pub ratio_inf: f64,
    pub ratio_hypersingular: Option<f64>,
    /// First-order norm control `|C̃⁻¹|_Λ ≤ ‖C̃⁻¹‖²|C̃|_Λ` (`r < 1`).
    pub ncbesov_lhs: Option<f64>,
    pub ncbesov_rhs: Option<f64>,
    pub ncbesov_ok: Option<bool>,
    /// `measured / rate` for the Besov and Bessel inversion bounds.
    pub besov_bound_ratio: Option<f64>,
    pub bessel_bound_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub r: f64,
    pub bound: String,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub spread: f64,
    pub fitted_constant: f64,
}

impl CalibrationRow {
    fn new(r: f64, bound: &str, c: &Calibration) -> Self {
        CalibrationRow {
            r,
            bound: bound.to_string(),
            min_ratio: c.min_ratio,
            max_ratio: c.max_ratio,
            spread: c.spread,
            fitted_constant: c.fitted_constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovReport {
    pub rows: Vec<BesovRow>,
    pub calibrations: Vec<CalibrationRow>,
}

/// Decreasing `ε` grid `2^{−1}, …, 2^{−40}` for the hypersingular sup.
pub fn default_eps_grid() -> Vec<f64> {
    (1..=40).map(|j| 0.5f64.powi(j)).collect()
}

const SHIFT_OFFSETS: [i64; 4] = [1, 2, 4, 8];

struct BesovMeasure {
    row: BesovRow,
    reports: Option<(BoundReport, Option<BoundReport>)>,
}

fn besov_measure(family: &str, param_value: f64, a: &LatticeMatrix, r: f64) -> Result<BesovMeasure> {
    let p1 = besov_seminorm(a, PExponent::Finite(1.0), r, None, Ambient::C0)?;
    let pinf = besov_seminorm(a, PExponent::Infinity, r, None, Ambient::C0)?;
    let hyp = if r < 2.0 {
        Some(hypersingular_seminorm(a, r, &default_eps_grid(), Ambient::C0)?.value)
    } else {
        None
    };
    let norm_cr = cv_norm(a, &Weight::polynomial(r))?;
    let ratio = |x: f64| if norm_cr > 0.0 { x / norm_cr } else { f64::NAN };
    let mut row = BesovRow {
        family: family.to_string(),
        param: param_value,
        r,
        besov_p1: p1.value,
        besov_p1_error: p1.quadrature_error + p1.tail_bound,
        besov_inf: pinf.value,
        hypersingular: hyp,
        norm_cr,
        ratio_p1: ratio(p1.value),
        ratio_inf: ratio(pinf.value),
        ratio_hypersingular: hyp.map(ratio),
        ncbesov_lhs: None,
        ncbesov_rhs: None,
        ncbesov_ok: None,
        besov_bound_ratio: None,
        bessel_bound_ratio: None,
    };
    let mut reports = None;
    if family == "c_gamma" {
        let sym = a.toeplitz_symbol().ok_or_else(|| Error::Parameter("expected a Toeplitz matrix".into()))?;
        let inv = closed_inverse(sym)?;
        let inv_semi = besov_seminorm(&inv, PExponent::Finite(1.0), r, None, Ambient::C0)?;
        let inv_c0 = cv_norm(&inv, &Weight::constant())?;
        let a_c0 = cv_norm(a, &Weight::constant())?;
        if r < 1.0 {
            let rhs = inv_c0 * inv_c0 * p1.value;
            row.ncbesov_lhs = Some(inv_semi.value);
            row.ncbesov_rhs = Some(rhs);
            row.ncbesov_ok = Some(inv_semi.value <= rhs * (1.0 + 1e-9));
        }
        let besov = besov_bound(inv_c0, a_c0 + p1.value, r, PExponent::Finite(1.0))?.with_measured(inv_c0 + inv_semi.value, inv_semi.quadrature_error + inv_semi.tail_bound);
        row.besov_bound_ratio = besov.ratio();
        let bessel = match hyp {
            Some(h) if r < 1.0 => {
                let inv_hyp = hypersingular_seminorm(&inv, r, &default_eps_grid(), Ambient::C0)?;
                let rep = bessel_bound(inv_c0, a_c0 + h, r)?.with_measured(inv_c0 + inv_hyp.value, inv_hyp.quadrature_error + inv_hyp.tail_bound);
                row.bessel_bound_ratio = rep.ratio();
                Some(rep)
            }
            _ => None,
        };
        reports = Some((besov, bessel));
    }
    Ok(BesovMeasure { row, reports })
}

/// Besov and hypersingular seminorms on the normalized `C_γ`, shift and
/// diagonal families, with the calibration spread of the Besov and Bessel
/// inversion bounds over the `C_γ` grid.
pub fn run_besov_report(cfg: &ExperimentConfig) -> Result<BesovReport> {
    cfg.validate()?;
    if cfg.r_list.iter().any(|&r| !(r > 0.0 && r <= 3.0)) {
        return param("besov-report needs every r in (0, 3]");
    }
    let mut jobs: Vec<(&'static str, f64, f64)> = Vec::new();
    for &r in &cfg.r_list {
        jobs.extend(cfg.gamma_grid.iter().map(|&g| ("c_gamma", g, r)));
        jobs.extend(SHIFT_OFFSETS.iter().map(|&m| ("shift", m as f64, r)));
        jobs.push(("diagonal", 0.0, r));
    }
    let measures = jobs
        .par_iter()
        .map(|&(family, p, r)| -> Result<BesovMeasure> {
            let a = match family {
                "c_gamma" => {
                    let norm = cv_norm(&toeplitz(&c_gamma_scaled(p, 1.0)?)?, &Weight::polynomial(r))?;
                    toeplitz(&c_gamma_scaled(p, norm)?)?
                }
                "shift" => toeplitz(&ToeplitzSymbol::from_real_pairs([(p as i64, 1.0)])?)?,
                _ => LatticeMatrix::diagonal(IndexWindow::symmetric(4)?, |k| Complex64::new(1.0 + 0.1 * k as f64, 0.0))?,
            };
            besov_measure(family, p, &a, r).map_err(|e| {
                log::warn!("besov-report row ({family}, {p}, r = {r}) failed: {e}");
                e
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut calibrations = Vec::new();
    for &r in &cfg.r_list {
        let mine: Vec<&BesovMeasure> = measures.iter().filter(|m| m.row.r == r && m.reports.is_some()).collect();
        if mine.is_empty() {
            continue;
        }
        let besov: Vec<BoundReport> = mine.iter().map(|m| m.reports.as_ref().unwrap().0.clone()).collect();
        calibrations.push(CalibrationRow::new(r, "besov", &calibration(&besov)?));
        let bessel: Vec<BoundReport> = mine.iter().filter_map(|m| m.reports.as_ref().unwrap().1.clone()).collect();
        if !bessel.is_empty() {
            calibrations.push(CalibrationRow::new(r, "bessel", &calibration(&bessel)?));
        }
    }
    Ok(BesovReport {
        rows: measures.into_iter().map(|m| m.row).collect(),
        calibrations,
    })
}

/// The five experiments, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    ToeplitzSharpness,
    DdSharpness,
    JaffardCheck,
    QuotientVerify,
    BesovReport,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ToeplitzSharpness,
        ExperimentKind::DdSharpness,
        ExperimentKind::JaffardCheck,
        ExperimentKind::QuotientVerify,
        ExperimentKind::BesovReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ToeplitzSharpness => "toeplitz-sharpness",
            ExperimentKind::DdSharpness => "dd-sharpness",
            ExperimentKind::JaffardCheck => "jaffard-check",
            ExperimentKind::QuotientVerify => "quotient-verify",
            ExperimentKind::BesovReport => "besov-report",
        }
    }

    /// Default configuration used when no config file is given.
    pub fn preset(self) -> ExperimentConfig {
        let name = self.name();
        match self {
            ExperimentKind::ToeplitzSharpness => ExperimentConfig::new(name, vec![0.4, 0.2, 0.1, 0.05, 0.025], vec![1.0, 2.0]),
            ExperimentKind::DdSharpness => ExperimentConfig::new(name, vec![0.5, 0.4, 0.3, 0.2, 0.1], vec![2.0]),
            ExperimentKind::JaffardCheck => ExperimentConfig {
                window_n: 128,
                ..ExperimentConfig::new(name, vec![0.5, 0.2, 0.1, 0.05], vec![2.0])
            },
            ExperimentKind::QuotientVerify => ExperimentConfig::new(name, vec![], vec![2.0]),
            ExperimentKind::BesovReport => ExperimentConfig::new(name, vec![0.4, 0.2, 0.1, 0.05], vec![0.5, 1.5]),
        }
    }

    pub fn run(self, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
        Ok(match self {
            ExperimentKind::ToeplitzSharpness => ExperimentOutput::Toeplitz(run_toeplitz_sharpness(cfg)?),
            ExperimentKind::DdSharpness => ExperimentOutput::Dd(run_dd_sharpness(cfg)?),
            ExperimentKind::JaffardCheck => ExperimentOutput::Jaffard(run_jaffard_check(cfg)?.into()),
            ExperimentKind::QuotientVerify => ExperimentOutput::Quotient(run_quotient_verify(cfg)?.into()),
            ExperimentKind::BesovReport => ExperimentOutput::Besov(run_besov_report(cfg)?),
        })
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Parameter(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentOutput {
    Toeplitz(ToeplitzSharpness),
    Dd(DdSharpness),
    Jaffard(JaffardRowsJson),
    Quotient(QuotientRowsJson),
    Besov(BesovReport),
}

/// Row lists wrapped so every output serializes as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaffardRowsJson {
    pub rows: Vec<JaffardRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientRowsJson {
    pub rows: Vec<QuotientRow>,
}

impl From<Vec<JaffardRow>> for JaffardRowsJson {
    fn from(rows: Vec<JaffardRow>) -> Self {
        JaffardRowsJson { rows }
    }
}

impl From<Vec<QuotientRow>> for QuotientRowsJson {
    fn from(rows: Vec<QuotientRow>) -> Self {
        QuotientRowsJson { rows }
    }
}

impl ExperimentOutput {
    /// Writes the main table; JSON carries fits and calibrations too.
    pub fn write_main<W: Write>(&self, format: OutputFormat, mut w: W) -> Result<()> {
        if format == OutputFormat::Json {
            serde_json::to_writer_pretty(&mut w, self)?;
            writeln!(w)?;
            return Ok(());
        }
        match self {
            ExperimentOutput::Toeplitz(t) => write_rows(&t.rows, format, w),
            ExperimentOutput::Dd(d) => write_rows(&d.rows, format, w),
            ExperimentOutput::Jaffard(j) => write_rows(&j.rows, format, w),
            ExperimentOutput::Quotient(q) => write_rows(&q.rows, format, w),
            ExperimentOutput::Besov(b) => write_rows(&b.rows, format, w),
        }
    }

    /// The secondary CSV table (slope fits or calibrations), if any.
    pub fn write_secondary_csv<W: Write>(&self, w: W) -> Result<bool> {
        match self {
            ExperimentOutput::Toeplitz(t) => write_rows(&t.fits, OutputFormat::Csv, w).map(|_| true),
            ExperimentOutput::Dd(d) => write_rows(&d.fits, OutputFormat::Csv, w).map(|_| true),
            ExperimentOutput::Besov(b) => write_rows(&b.calibrations, OutputFormat::Csv, w).map(|_| true),
            _ => Ok(false),
        }
    }

    /// Failed checks, one message each. Tolerance keys: `slope` (0.15),
    /// `ratio_lo`/`ratio_hi` (0.5/2), `identity` (1e-10), `calibration_spread` (10).
    pub fn violations(&self, cfg: &ExperimentConfig) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ExperimentOutput::Toeplitz(t) => {
                let tol = cfg.tolerance("slope", 0.15);
                for row in &t.rows {
                    if !row.in_bracket {
                        out.push(format!("series outside bracket at gamma = {}, r = {}", row.gamma, row.r));
                    }
                    if (row.norm_cr - row.norm_cr_expected).abs() > 1e-14 * row.norm_cr_expected {
                        out.push(format!("C_r norm mismatch at gamma = {}, r = {}", row.gamma, row.r));
                    }
                }
                for f in &t.fits {
                    if !((f.slope - f.expected).abs() <= tol) {
                        out.push(format!("slope {} for r = {} outside {} +- {tol}", f.slope, f.r, f.expected));
                    }
                }
            }
            ExperimentOutput::Dd(d) => {
                let (lo, hi) = (cfg.tolerance("ratio_lo", 0.5), cfg.tolerance("ratio_hi", 2.0));
                for row in &d.rows {
                    if !(row.ratio >= lo && row.ratio <= hi) {
                        out.push(format!("ratio {} outside [{lo}, {hi}] at gamma = {}, r = {}", row.ratio, row.gamma, row.r));
                    }
                    if !row.satisfied {
                        out.push(format!("Dales-Davie bound violated at gamma = {}, r = {}", row.gamma, row.r));
                    }
                }
            }
            ExperimentOutput::Jaffard(j) => {
                for row in j.rows.iter().filter(|row| !row.all_satisfied) {
                    out.push(format!("decay bound violated for {} {} at r = {}", row.family, row.param, row.r));
                }
            }
            ExperimentOutput::Quotient(q) => {
                let tol = cfg.tolerance("identity", 1e-10);
                for row in q.rows.iter().filter(|row| !(row.max_rel_err <= tol)) {
                    out.push(format!(
                        "{} error {:e} > {tol:e} (instance {}, k = {}, t = {:?})",
                        row.identity, row.max_rel_err, row.instance, row.k, row.t
                    ));
                }
            }
            ExperimentOutput::Besov(b) => {
                let tol = cfg.tolerance("calibration_spread", 10.0);
                for row in b.rows.iter().filter(|row| row.ncbesov_ok == Some(false)) {
                    out.push(format!("norm control violated at gamma = {}, r = {}", row.param, row.r));
                }
                for c in b.calibrations.iter().filter(|c| !(c.spread <= tol)) {
                    out.push(format!("{} calibration spread {} > {tol} at r = {}", c.bound, c.spread, c.r));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 3.0 - 2.5 * i as f64)).collect();
        let fit = fit_slope(&pts).unwrap();
        assert_relative_eq!(fit.slope, -2.5, max_relative = 1e-14);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new("toeplitz-sharpness", vec![0.4, 0.2, 0.1, 0.05], vec![1.0]);
        assert!(cfg.validate().is_ok());
        cfg.window_n = 16;
        assert!(cfg.validate().is_err());
        cfg.window_n = 64;
        cfg.gamma_grid = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        assert_eq!(ExperimentConfig::new("x", vec![], vec![1.0]).window().unwrap().size(), 64);
        let short = ExperimentConfig::new("x", vec![0.4, 0.2, 0.1], vec![1.0]);
        assert!(run_toeplitz_sharpness(&short).is_err());
    }

    #[test]
    fn random_matrix_decay_envelope() {
        let w = IndexWindow::new(-5, 5).unwrap();
        let a = random_decay_matrix(w, 2.0, 0.3, &mut instance_rng(7, 0)).unwrap();
        for (k, l, z) in a.iter_entries() {
            let bound = if k == l { 1.3 } else { 0.3 * (1.0 + (k - l).abs() as f64).powi(-2) };
            assert!(z.norm() <= bound + 1e-15);
        }
        let b = random_decay_matrix(w, 2.0, 0.3, &mut instance_rng(7, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toeplitz_rows_match_closed_forms() {
        let cfg = ExperimentConfig::new("toeplitz-sharpness", vec![0.4, 0.2, 0.1, 0.05], vec![2.0]);
        let out = run_toeplitz_sharpness(&cfg).unwrap();
        for row in &out.rows {
            assert_relative_eq!(row.norm_cr, row.norm_cr_expected, max_relative = 1e-14);
            let q = (-row.gamma).exp();
            assert_relative_eq!(row.norm_inv_c0, row.norm_cr / (1.0 - q), max_relative = 1e-12);
        }
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let rows = vec![QuotientRow {
            instance: 3,
            k: 2,
            t: None,
            identity: "derivation_quotient".into(),
            max_abs_err: 1.5e-15,
            max_rel_err: 2.25e-16,
        }];
        let mut buf = Vec::new();
        write_rows(&rows, OutputFormat::Csv, &mut buf).unwrap();
        let back: Vec<QuotientRow> = read_rows(OutputFormat::Csv, buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}
