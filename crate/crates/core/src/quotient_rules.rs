//! Iterated product and quotient rules for the derivation `𝔇` and the
//! difference operators `Δ_t`, evaluated as matrix expressions.
//!
//! Products are formed left to right in the written order. On a finite
//! window `ψ_t` is conjugation by a diagonal unitary and the section inverse
//! is a genuine inverse, so every identity here holds exactly up to rounding;
//! the comparison margin only matters for inverses taken from ℤ.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::lattice_matrix::{invert_truncated, IndexWindow, LatticeMatrix};
use crate::special::binomial;
use crate::Complex64;

/// Default cap on the order of iterated rules.
pub const DEFAULT_K_CAP: u32 = 8;

/// Ordered tuple of positive parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Composition {
    parts: Vec<u32>,
}

impl Composition {
    pub fn new(parts: Vec<u32>) -> Result<Self> {
        if parts.is_empty() || parts.contains(&0) {
            return param("composition parts must be positive and nonempty");
        }
        Ok(Composition { parts })
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.parts.iter().sum()
    }
}

/// Calls `f` on every composition of `k` into `m` positive parts, in
/// lexicographic order.
pub fn for_each_composition(k: u32, m: u32, mut f: impl FnMut(&[u32])) {
    if m == 0 || m > k {
        return;
    }
    let mut parts = vec![0u32; m as usize];
    fn rec(parts: &mut [u32], depth: usize, remaining: u32, f: &mut dyn FnMut(&[u32])) {
        let slots_after = (parts.len() - depth - 1) as u32;
        if slots_after == 0 {
            parts[depth] = remaining;
            f(parts);
            return;
        }
        for p in 1..=remaining - slots_after {
            parts[depth] = p;
            rec(parts, depth + 1, remaining - p, f);
        }
    }
    rec(&mut parts, 0, k, &mut f);
}

/// All compositions of `k` into `m` parts; `binom(k−1, m−1)` of them.
pub fn compositions(k: u32, m: u32) -> Vec<Composition> {
    let mut out = Vec::new();
    for_each_composition(k, m, |p| out.push(Composition { parts: p.to_vec() }));
    out
}

/// `k!/(k₁!⋯k_m!)` in exact integer arithmetic.
pub fn multinomial(k: u32, parts: &Composition) -> Result<u128> {
    if parts.total() != k {
        return param(format!("parts sum to {} but k = {k}", parts.total()));
    }
    let mut acc: u128 = 1;
    let mut n: u32 = 0;
    for &p in parts.parts() {
        n += p;
        acc = acc
            .checked_mul(binom_u128(n, p)?)
            .ok_or_else(|| Error::Parameter(format!("multinomial coefficient for k = {k} overflows u128")))?;
    }
    Ok(acc)
}

fn binom_u128(n: u32, r: u32) -> Result<u128> {
    let r = r.min(n - r);
    let mut c: u128 = 1;
    for i in 0..r {
        // c·(n−i) is divisible by (i+1) at every step
        c = c
            .checked_mul((n - i) as u128)
            .ok_or_else(|| Error::Parameter(format!("binomial({n}, {r}) overflows u128")))?
            / (i + 1) as u128;
    }
    Ok(c)
}

fn check_k(k: u32) -> Result<()> {
    if k == 0 {
        return param("order k must be at least 1");
    }
    if k > 20 {
        return param(format!("order k = {k} is beyond the supported range (2^(k-1) compositions)"));
    }
    Ok(())
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Sums `sign · multinomial · F(parts)` over all compositions of `k`, by
/// depth-first traversal that shares prefix products. `step(prefix, j, part)`
/// extends a prefix product by the factor for part `part` at position `j`
/// (with `used` = parts consumed so far); `finish` closes a full product.
fn sum_over_compositions(
    k: u32,
    start: &LatticeMatrix,
    step: &dyn Fn(&LatticeMatrix, u32, u32) -> Result<LatticeMatrix>,
    finish: &dyn Fn(&LatticeMatrix) -> Result<LatticeMatrix>,
) -> Result<LatticeMatrix> {
    let mut acc = LatticeMatrix::zeros(start.window()).into_general();
    let mut parts = Vec::with_capacity(k as usize);
    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: u32,
        used: u32,
        prefix: &LatticeMatrix,
        parts: &mut Vec<u32>,
        step: &dyn Fn(&LatticeMatrix, u32, u32) -> Result<LatticeMatrix>,
        finish: &dyn Fn(&LatticeMatrix) -> Result<LatticeMatrix>,
        acc: &mut LatticeMatrix,
    ) -> Result<()> {
        for p in 1..=k - used {
            parts.push(p);
            let next = step(prefix, used, p)?;
            if used + p == k {
                let comp = Composition { parts: parts.clone() };
                let sign = if parts.len() % 2 == 0 { 1.0 } else { -1.0 };
                let coef = sign * multinomial(k, &comp)? as f64;
                *acc = acc.add(&finish(&next)?.scale(real(coef)))?;
            } else {
                rec(k, used + p, &next, parts, step, finish, acc)?;
            }
            parts.pop();
        }
        Ok(())
    }
    rec(k, 0, start, &mut parts, step, finish, &mut acc)?;
    Ok(acc)
}

/// `𝔇^k(A⁻¹) = Σ_{m=1}^k (−1)^m Σ_{k₁+…+k_m=k} binom(k; k₁,…,k_m)
/// Π_i [A⁻¹𝔇^{k_i}(A)] · A⁻¹`, with `A⁻¹` the section inverse.
pub fn derivation_quotient_rhs(a: &LatticeMatrix, k: u32) -> Result<LatticeMatrix> {
    check_k(k)?;
    let inv = invert_truncated(a)?;
    derivation_quotient_rhs_with_inverse(a, &inv, k)
}

/// [`derivation_quotient_rhs`] with a caller-supplied inverse.
pub fn derivation_quotient_rhs_with_inverse(a: &LatticeMatrix, inv: &LatticeMatrix, k: u32) -> Result<LatticeMatrix> {
    check_k(k)?;
    let factors: Vec<LatticeMatrix> = (1..=k)
        .map(|j| inv.matmul(&a.derivation_power(j)))
        .collect::<Result<_>>()?;
    let identity = LatticeMatrix::identity(a.window());
    sum_over_compositions(
        k,
        &identity,
        &|prefix, _, p| prefix.matmul(&factors[p as usize - 1]),
        &|prod| prod.matmul(inv),
    )
}

/// `Δ_t^k(AB) = Σ_{l=0}^k binom(k, l) ψ_{(k−l)t}(Δ_t^l A) · Δ_t^{k−l} B`.
pub fn difference_product_rhs(a: &LatticeMatrix, b: &LatticeMatrix, t: f64, k: u32) -> Result<LatticeMatrix> {
    check_k(k)?;
    if a.window() != b.window() {
        return param(format!("windows differ: {} vs {}", a.window(), b.window()));
    }
    let mut acc = LatticeMatrix::zeros(a.window()).into_general();
    for l in 0..=k {
        let left = a.difference_power(t, l).apply_automorphism((k - l) as f64 * t);
        let term = left.matmul(&b.difference_power(t, k - l))?;
        acc = acc.add(&term.scale(real(binomial(k as u64, l as u64))))?;
    }
    Ok(acc)
}

/// `Δ_t^k(A⁻¹) = ψ_{kt}(A⁻¹) Σ_{m=1}^k (−1)^m Σ_{k₁+…+k_m=k}
/// binom(k; k₁,…,k_m) Π_{j=1}^m ψ_{(k − k₁ − … − k_j)t}((Δ_t^{k_j}A)A⁻¹)`.
/// The last factor carries the shift `0`.
pub fn difference_quotient_rhs(a: &LatticeMatrix, t: f64, k: u32) -> Result<LatticeMatrix> {
    check_k(k)?;
    let inv = invert_truncated(a)?;
    difference_quotient_rhs_with_inverse(a, &inv, t, k)
}

/// [`difference_quotient_rhs`] with a caller-supplied inverse.
pub fn difference_quotient_rhs_with_inverse(a: &LatticeMatrix, inv: &LatticeMatrix, t: f64, k: u32) -> Result<LatticeMatrix> {
    check_k(k)?;
    let base: Vec<LatticeMatrix> = (1..=k)
        .map(|j| a.difference_power(t, j).matmul(inv))
        .collect::<Result<_>>()?;
    let head = inv.apply_automorphism(k as f64 * t);
    sum_over_compositions(
        k,
        &head,
        &|prefix, used, p| {
            let shift = (k - used - p) as f64 * t;
            prefix.matmul(&base[p as usize - 1].apply_automorphism(shift))
        },
        &|prod| Ok(prod.clone()),
    )
}

/// Entrywise comparison on the window shrunk by a margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityError {
    pub max_abs_err: f64,
    /// `max_abs_err` divided by the largest entry of either side.
    pub max_rel_err: f64,
    pub scale: f64,
}

/// Compares `lhs` and `rhs` on `[lo + margin, hi − margin]`.
pub fn verify_identity(lhs: &LatticeMatrix, rhs: &LatticeMatrix, margin: usize) -> Result<IdentityError> {
    if lhs.window() != rhs.window() {
        return Err(Error::WindowMismatch {
            left: lhs.window().to_string(),
            right: rhs.window().to_string(),
        });
    }
    let inner: IndexWindow = lhs.window().shrink(margin)?;
    let l = lhs.restrict(inner)?;
    let r = rhs.restrict(inner)?;
    let max_abs_err = l.entries().zip_fold(r.entries(), 0.0f64, |m, x, y| m.max((x - y).norm()));
    let scale = l.max_abs().max(r.max_abs());
    Ok(IdentityError {
        max_abs_err,
        max_rel_err: if scale > 0.0 { max_abs_err / scale } else { max_abs_err },
        scale,
    })
}

/// Residual of `0 = Σ_{l=0}^k binom(k, l) ψ_{lt}(Δ_t^{k−l}A) · Δ_t^l(A⁻¹)` on
/// the inner window, relative to the largest entry of any single term.
pub fn telescoping_residual(a: &LatticeMatrix, inv: &LatticeMatrix, t: f64, k: u32, margin: usize) -> Result<IdentityError> {
    check_k(k)?;
    let inner = a.window().shrink(margin)?;
    let mut acc = LatticeMatrix::zeros(a.window()).into_general();
    let mut scale = 0.0f64;
    for l in 0..=k {
        let left = a.difference_power(t, k - l).apply_automorphism(l as f64 * t);
        let term = left
            .matmul(&inv.difference_power(t, l))?
            .scale(real(binomial(k as u64, l as u64)));
        scale = scale.max(term.restrict(inner)?.max_abs());
        acc = acc.add(&term)?;
    }
    let max_abs_err = acc.restrict(inner)?.max_abs();
    Ok(IdentityError {
        max_abs_err,
        max_rel_err: if scale > 0.0 { max_abs_err / scale } else { max_abs_err },
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_matrix::{make_toeplitz, ToeplitzSymbol};

    fn w(n: i64) -> IndexWindow {
        IndexWindow::symmetric(n).unwrap()
    }

    fn sample(n: i64) -> LatticeMatrix {
        // deterministic, well conditioned, all offsets populated
        LatticeMatrix::from_fn(w(n), |k, l| {
            let d = (k - l) as f64;
            let base = if k == l { 1.0 } else { 0.0 };
            let s = 0.3 / (1.0 + d.abs()).powi(2);
            Complex64::new(base + s * (0.7 * k as f64 + 0.3 * l as f64).sin(), s * (1.3 * k as f64 - l as f64).cos())
        })
        .unwrap()
    }

    #[test]
    fn composition_enumeration() {
        let c32: Vec<Vec<u32>> = compositions(3, 2).into_iter().map(|c| c.parts().to_vec()).collect();
        assert_eq!(c32, vec![vec![1, 2], vec![2, 1]]);
        assert_eq!(compositions(5, 3).len(), 6);
        assert_eq!(compositions(4, 4), vec![Composition::new(vec![1, 1, 1, 1]).unwrap()]);
        assert!(compositions(2, 3).is_empty());
        for k in 1..=10 {
            let total: usize = (1..=k).map(|m| compositions(k, m).len()).sum();
            assert_eq!(total, 1 << (k - 1));
        }
    }

    #[test]
    fn multinomial_values() {
        assert_eq!(multinomial(2, &Composition::new(vec![1, 1]).unwrap()).unwrap(), 2);
        assert_eq!(multinomial(4, &Composition::new(vec![2, 1, 1]).unwrap()).unwrap(), 12);
        assert_eq!(multinomial(7, &Composition::new(vec![7]).unwrap()).unwrap(), 1);
        assert!(multinomial(5, &Composition::new(vec![2, 2]).unwrap()).is_err());
    }

    #[test]
    fn quotient_rule_first_orders() {
        let a = sample(8);
        let inv = invert_truncated(&a).unwrap();
        let d1 = a.derivation_power(1);
        let k1 = inv.matmul(&d1).unwrap().matmul(&inv).unwrap().scale(real(-1.0));
        let rhs1 = derivation_quotient_rhs(&a, 1).unwrap();
        assert!(verify_identity(&rhs1, &k1, 0).unwrap().max_rel_err < 1e-14);
        let d2 = a.derivation_power(2);
        let k2 = inv
            .matmul(&d2)
            .unwrap()
            .matmul(&inv)
            .unwrap()
            .scale(real(-1.0))
            .add(&inv.matmul(&d1).unwrap().matmul(&inv).unwrap().matmul(&d1).unwrap().matmul(&inv).unwrap().scale(real(2.0)))
            .unwrap();
        let rhs2 = derivation_quotient_rhs(&a, 2).unwrap();
        assert!(verify_identity(&rhs2, &k2, 0).unwrap().max_rel_err < 1e-13);
    }

    #[test]
    fn quotient_rules_match_direct_computation() {
        let a = sample(12);
        let inv = invert_truncated(&a).unwrap();
        for k in 1..=5 {
            let lhs = inv.derivation_power(k);
            let e = verify_identity(&lhs, &derivation_quotient_rhs(&a, k).unwrap(), 3).unwrap();
            assert!(e.max_rel_err < 1e-11, "derivation k={k}: {e:?}");
            for t in [0.1, 0.37] {
                let lhs = inv.difference_power(t, k);
                let e = verify_identity(&lhs, &difference_quotient_rhs(&a, t, k).unwrap(), 3).unwrap();
                assert!(e.max_rel_err < 1e-11, "difference k={k} t={t}: {e:?}");
            }
        }
    }

    #[test]
    fn product_rule_and_telescoping() {
        let a = sample(10);
        let b = sample(10).apply_automorphism(0.21).scale(Complex64::new(0.5, -1.0));
        let t = 0.23;
        for k in 1..=4 {
            let lhs = a.matmul(&b).unwrap().difference_power(t, k);
            let e = verify_identity(&lhs, &difference_product_rhs(&a, &b, t, k).unwrap(), 0).unwrap();
            assert!(e.max_rel_err < 1e-12, "k={k}: {e:?}");
        }
        let id = LatticeMatrix::identity(w(10));
        let e = verify_identity(&a.difference_power(t, 3), &difference_product_rhs(&a, &id, t, 3).unwrap(), 0).unwrap();
        assert!(e.max_abs_err < 1e-15);
        let inv = invert_truncated(&a).unwrap();
        for k in 1..=5 {
            assert!(telescoping_residual(&a, &inv, t, k, 2).unwrap().max_rel_err < 1e-12);
        }
    }

    #[test]
    fn diagonal_matrices_have_vanishing_quotients() {
        let d = LatticeMatrix::diagonal(w(5), |k| Complex64::new(2.0 + k as f64 * 0.1, 0.3)).unwrap();
        for k in 1..=3 {
            assert!(difference_quotient_rhs(&d, 0.3, k).unwrap().max_abs() < 1e-15);
        }
        let cg = make_toeplitz(&ToeplitzSymbol::c_gamma(0.4).unwrap(), w(6)).unwrap();
        let first = difference_quotient_rhs(&cg, 0.1, 1).unwrap();
        let inv = invert_truncated(&cg).unwrap();
        let want = inv
            .apply_automorphism(0.1)
            .matmul(&cg.difference_power(0.1, 1))
            .unwrap()
            .matmul(&inv)
            .unwrap()
            .scale(real(-1.0));
        assert!(verify_identity(&first, &want, 0).unwrap().max_rel_err < 1e-14);
    }

    #[test]
    fn verify_identity_metrics() {
        let a = sample(6);
        assert_eq!(verify_identity(&a, &a, 1).unwrap().max_abs_err, 0.0);
        let b = a.add(&LatticeMatrix::identity(w(6)).scale(real(1e-12))).unwrap();
        let e = verify_identity(&a, &b, 1).unwrap();
        assert!((e.max_abs_err - 1e-12).abs() < 1e-15);
    }
}
