//! Polynomials in complex variables and their conjugates.
//!
//! A polynomial is a sparse map `(α, β) → c` standing for `Σ c z^α z̄^β`.
//! Real-field polynomials reuse the same type with `β = 0` everywhere.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for conjugate-symmetry and imaginary-residue checks.
pub const TOL_HERM: f64 = 1e-9;

/// Exponent vector; ordered graded-lex (total degree first, then lexicographic).
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, k: usize) -> Self {
        let mut v = vec![0; n];
        v[k] = 1;
        MultiIndex(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Variables with a nonzero exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &e)| e > 0).map(|(k, _)| k)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Embed into `n` variables by appending zeros.
    pub fn extend(&self, n: usize) -> MultiIndex {
        let mut v = self.0.clone();
        v.resize(n, 0);
        MultiIndex(v)
    }

    pub fn pow(&self, z: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        for (k, &e) in self.0.iter().enumerate() {
            if e > 0 {
                acc *= z[k].powu(e);
            }
        }
        acc
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// All exponent vectors on `vars` (out of `n`) with degree ≤ d, graded-lex.
pub fn monomials(n: usize, vars: &[usize], d: u32) -> Vec<MultiIndex> {
    let mut out = vec![MultiIndex::zero(n)];
    let mut frontier = vec![MultiIndex::zero(n)];
    for _ in 0..d {
        let mut next = BTreeSet::new();
        for m in &frontier {
            for &v in vars {
                let mut e = m.clone();
                e.0[v] += 1;
                next.insert(e);
            }
        }
        frontier = next.into_iter().collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

/// Pair `(α, β)` for the monomial `z^α z̄^β`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermKey {
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
}

impl TermKey {
    pub fn new(alpha: MultiIndex, beta: MultiIndex) -> Self {
        TermKey { alpha, beta }
    }

    pub fn constant(n: usize) -> Self {
        TermKey::new(MultiIndex::zero(n), MultiIndex::zero(n))
    }

    pub fn mirror(&self) -> TermKey {
        TermKey::new(self.beta.clone(), self.alpha.clone())
    }

    pub fn degree(&self) -> u32 {
        self.alpha.degree() + self.beta.degree()
    }

    pub fn vars(&self) -> BTreeSet<usize> {
        self.alpha.support().chain(self.beta.support()).collect()
    }
}

impl Ord for TermKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.alpha.cmp(&other.alpha))
            .then_with(|| self.beta.cmp(&other.beta))
    }
}

impl PartialOrd for TermKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for TermKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?},{:?})", self.alpha, self.beta)
    }
}

/// Sparse polynomial in `z, z̄` with complex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub n: usize,
    pub terms: BTreeMap<TermKey, Complex64>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Poly::zero(n);
        p.add_term(TermKey::constant(n), Complex64::new(c, 0.0));
        p
    }

    /// The monomial `c z^α z̄^β`.
    pub fn monomial(alpha: MultiIndex, beta: MultiIndex, c: Complex64) -> Self {
        let mut p = Poly::zero(alpha.len());
        p.add_term(TermKey::new(alpha, beta), c);
        p
    }

    /// `z_k` as a polynomial.
    pub fn var(n: usize, k: usize) -> Self {
        Poly::monomial(MultiIndex::unit(n, k), MultiIndex::zero(n), Complex64::new(1.0, 0.0))
    }

    /// `|z_k|²`.
    pub fn abs2(n: usize, k: usize) -> Self {
        Poly::monomial(MultiIndex::unit(n, k), MultiIndex::unit(n, k), Complex64::new(1.0, 0.0))
    }

    pub fn add_term(&mut self, key: TermKey, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let e = self.terms.entry(key.clone()).or_insert(Complex64::new(0.0, 0.0));
        *e += c;
        if *e == Complex64::new(0.0, 0.0) {
            self.terms.remove(&key);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, key: &TermKey) -> Complex64 {
        self.terms.get(key).copied().unwrap_or_default()
    }

    pub fn constant_term(&self) -> Complex64 {
        self.coeff(&TermKey::constant(self.n))
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: Complex64) -> Poly {
        let mut out = Poly::zero(self.n);
        for (k, c) in &self.terms {
            out.add_term(k.clone(), c * s);
        }
        out
    }

    pub fn scale_re(&self, s: f64) -> Poly {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.n);
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                out.add_term(
                    TermKey::new(k1.alpha.add(&k2.alpha), k1.beta.add(&k2.beta)),
                    c1 * c2,
                );
            }
        }
        out
    }

    /// Multiply by `z^γ z̄^δ`.
    pub fn shift(&self, gamma: &MultiIndex, delta: &MultiIndex) -> Poly {
        let mut out = Poly::zero(self.n);
        for (k, c) in &self.terms {
            out.add_term(TermKey::new(k.alpha.add(gamma), k.beta.add(delta)), *c);
        }
        out
    }

    /// Complex conjugate: `(α,β,c) → (β,α,c̄)`.
    pub fn conj(&self) -> Poly {
        let mut out = Poly::zero(self.n);
        for (k, c) in &self.terms {
            out.add_term(k.mirror(), c.conj());
        }
        out
    }

    /// Re-embed into `n ≥ self.n` variables.
    pub fn extend(&self, n: usize) -> Poly {
        let mut out = Poly::zero(n);
        for (k, c) in &self.terms {
            out.add_term(TermKey::new(k.alpha.extend(n), k.beta.extend(n)), *c);
        }
        out
    }

    /// Drop coefficients with modulus ≤ tol.
    pub fn prune(&self, tol: f64) -> Poly {
        let mut out = Poly::zero(self.n);
        for (k, c) in &self.terms {
            if c.norm() > tol {
                out.add_term(k.clone(), *c);
            }
        }
        out
    }

    /// `max{|α|, |β|}` over nonzero terms.
    pub fn complex_half_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|k| k.alpha.degree().max(k.beta.degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|k| k.degree()).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<usize> {
        self.terms.keys().flat_map(|k| k.vars()).collect()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.terms
            .iter()
            .all(|(k, c)| (c - self.coeff(&k.mirror()).conj()).norm() <= tol)
    }

    /// True when every term has `β = 0` and a real coefficient.
    pub fn is_real_form(&self, tol: f64) -> bool {
        self.terms.iter().all(|(k, c)| k.beta.is_zero() && c.im.abs() <= tol)
    }

    /// `Σ c z^α z̄^β` as a complex number.
    pub fn eval_complex(&self, z: &[Complex64]) -> Complex64 {
        let zc: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
        self.terms
            .iter()
            .map(|(k, c)| c * k.alpha.pow(z) * k.beta.pow(&zc))
            .sum()
    }
}

/// A polynomial satisfying `f_{α,β} = conj(f_{β,α})`, hence real-valued.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianPoly(Poly);

impl HermitianPoly {
    pub fn poly(&self) -> &Poly {
        &self.0
    }

    pub fn into_poly(self) -> Poly {
        self.0
    }

    pub fn half_degree(&self) -> u32 {
        self.0.complex_half_degree()
    }
}

impl std::ops::Deref for HermitianPoly {
    type Target = Poly;
    fn deref(&self) -> &Poly {
        &self.0
    }
}

/// Build a Hermitian polynomial from raw `(α, β, c)` triples, averaging
/// each coefficient with the conjugate of its mirror.
pub fn normalize_hermitian<I>(n: usize, raw: I) -> Result<HermitianPoly>
where
    I: IntoIterator<Item = (MultiIndex, MultiIndex, Complex64)>,
{
    let mut p = Poly::zero(n);
    for (a, b, c) in raw {
        if a.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.len() });
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        p.add_term(TermKey::new(a, b), c);
    }
    hermitian_from_poly(&p)
}

pub fn hermitian_from_poly(p: &Poly) -> Result<HermitianPoly> {
    let mut out = Poly::zero(p.n);
    for (k, c) in &p.terms {
        let m = p.coeff(&k.mirror());
        if (c - m.conj()).norm() > TOL_HERM {
            return Err(Error::NonHermitian { alpha: k.alpha.0.clone(), beta: k.beta.0.clone() });
        }
        out.add_term(k.clone(), (c + m.conj()) * 0.5);
    }
    Ok(HermitianPoly(out))
}

/// Real value of a Hermitian polynomial at `z`.
pub fn evaluate(p: &Poly, z: &[Complex64]) -> Result<f64> {
    if z.len() != p.n {
        return Err(Error::DimensionMismatch { expected: p.n, got: z.len() });
    }
    let v = p.eval_complex(z);
    let scale = 1.0 + p.max_coeff();
    if v.im.abs() > TOL_HERM * scale.max(v.re.abs()) {
        return Err(Error::NonHermitian { alpha: vec![], beta: vec![] });
    }
    Ok(v.re)
}

/// Substitute `z_k = x_k + i x_{k+n}` and return the real polynomial in 2n
/// variables (stored with `β = 0`).
pub fn realify(p: &Poly) -> Poly {
    let n = p.n;
    let nn = 2 * n;
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let lin = |k: usize, sign: f64| {
        let mut q = Poly::zero(nn);
        q.add_term(TermKey::new(MultiIndex::unit(nn, k), MultiIndex::zero(nn)), one);
        q.add_term(TermKey::new(MultiIndex::unit(nn, k + n), MultiIndex::zero(nn)), i * sign);
        q
    };
    let mut out = Poly::zero(nn);
    for (key, c) in &p.terms {
        let mut t = Poly::constant(nn, 1.0).scale(*c);
        for k in 0..n {
            for _ in 0..key.alpha.0[k] {
                t = t.mul(&lin(k, 1.0));
            }
            for _ in 0..key.beta.0[k] {
                t = t.mul(&lin(k, -1.0));
            }
        }
        out = out.add(&t);
    }
    let mut real = Poly::zero(nn);
    for (k, c) in out.terms {
        if c.re.abs() > 1e-14 * (1.0 + p.max_coeff()) {
            real.add_term(k, Complex64::new(c.re, 0.0));
        }
    }
    real
}

/// Evaluate a real-form polynomial at a real point.
pub fn evaluate_real(p: &Poly, x: &[f64]) -> f64 {
    let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    p.eval_complex(&z).re
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    #[test]
    fn normalize_accepts_conjugate_pairs() {
        let p = normalize_hermitian(1, vec![(mi(&[1]), mi(&[0]), c(1.0, 0.0)), (mi(&[0]), mi(&[1]), c(1.0, 0.0))])
            .unwrap();
        assert_eq!(p.terms.len(), 2);
        let q = normalize_hermitian(1, vec![(mi(&[1]), mi(&[0]), c(0.0, 1.0)), (mi(&[0]), mi(&[1]), c(0.0, -1.0))])
            .unwrap();
        assert_eq!(q.coeff(&TermKey::new(mi(&[1]), mi(&[0]))), c(0.0, 1.0));
    }

    #[test]
    fn normalize_rejects_missing_mirror() {
        let e = normalize_hermitian(1, vec![(mi(&[1]), mi(&[0]), c(1.0, 0.0))]);
        assert!(matches!(e, Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn normalize_rejects_ragged() {
        let e = normalize_hermitian(2, vec![(mi(&[1]), mi(&[0, 0]), c(1.0, 0.0))]);
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn normalize_is_idempotent() {
        let p = normalize_hermitian(
            2,
            vec![
                (mi(&[1, 0]), mi(&[0, 1]), c(2.0, 3.0)),
                (mi(&[0, 1]), mi(&[1, 0]), c(2.0, -3.0 + 1e-12)),
            ],
        )
        .unwrap();
        let q = hermitian_from_poly(p.poly()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn evaluate_torus_linear() {
        let p = Poly::var(1, 0).add(&Poly::var(1, 0).conj());
        assert_eq!(evaluate(&p, &[c(-1.0, 0.0)]).unwrap(), -2.0);
    }

    #[test]
    fn evaluate_disc_objective_on_circle() {
        let z2 = Poly::abs2(1, 0);
        let p = Poly::constant(1, 1.0)
            .add(&z2.scale_re(-4.0 / 3.0))
            .add(&z2.mul(&z2).scale_re(7.0 / 18.0));
        let v = evaluate(&p, &[Complex64::from_polar(1.0, 0.7)]).unwrap();
        assert!((v - 1.0 / 18.0).abs() < 1e-14);
        assert_eq!(evaluate(&p, &[c(0.0, 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn realify_examples() {
        let p = Poly::var(1, 0).add(&Poly::var(1, 0).conj());
        let r = realify(&p);
        assert_eq!(r.terms.len(), 1);
        assert_eq!(r.coeff(&TermKey::new(mi(&[1, 0]), mi(&[0, 0]))), c(2.0, 0.0));

        let r = realify(&Poly::abs2(1, 0));
        assert_eq!(r.terms.len(), 2);
        assert_eq!(r.coeff(&TermKey::new(mi(&[2, 0]), mi(&[0, 0]))), c(1.0, 0.0));
        assert_eq!(r.coeff(&TermKey::new(mi(&[0, 2]), mi(&[0, 0]))), c(1.0, 0.0));

        let r = realify(&Poly::constant(1, 5.0));
        assert_eq!(r.constant_term(), c(5.0, 0.0));
        assert_eq!(r.terms.len(), 1);
    }

    #[test]
    fn graded_lex_basis() {
        let b = monomials(2, &[0, 1], 2);
        let want = vec![mi(&[0, 0]), mi(&[1, 0]), mi(&[0, 1]), mi(&[2, 0]), mi(&[1, 1]), mi(&[0, 2])];
        assert_eq!(b, want);
    }

    use proptest::prelude::*;

    /// Hermitian polynomial of half-degree ≤ k with coefficients drawn from `w`.
    fn herm_from(n: usize, k: u32, w: &[f64]) -> Poly {
        let all: Vec<usize> = (0..n).collect();
        let bas = monomials(n, &all, k);
        let mut it = w.iter().copied().cycle();
        let mut p = Poly::zero(n);
        for (i, a) in bas.iter().enumerate() {
            p.add_term(TermKey::new(a.clone(), a.clone()), c(it.next().unwrap(), 0.0));
            for b in &bas[i + 1..] {
                let v = c(it.next().unwrap(), it.next().unwrap());
                p.add_term(TermKey::new(a.clone(), b.clone()), v);
                p.add_term(TermKey::new(b.clone(), a.clone()), v.conj());
            }
        }
        p
    }

    fn point() -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-1.5..1.5f64, -1.5..1.5f64), 3).prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
    }

    proptest! {
        #[test]
        fn hermitian_values_are_real(n in 1usize..=3, k in 1u32..=2, w in prop::collection::vec(-1.0..1.0f64, 7..40), z in point()) {
            let p = herm_from(n, k, &w);
            let v = p.eval_complex(&z[..n]);
            prop_assert!(v.im.abs() <= TOL_HERM * (1.0 + v.re.abs()));
            prop_assert!(evaluate(&p, &z[..n]).is_ok());
        }

        #[test]
        fn realify_agrees(n in 1usize..=3, k in 1u32..=2, w in prop::collection::vec(-1.0..1.0f64, 7..40), z in point()) {
            let p = herm_from(n, k, &w);
            let x: Vec<f64> = z[..n].iter().map(|v| v.re).chain(z[..n].iter().map(|v| v.im)).collect();
            let a = evaluate_real(&realify(&p), &x);
            let b = evaluate(&p, &z[..n]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }

        #[test]
        fn half_degree_of_product_adds(n in 1usize..=3, kp in 0u32..=2, kq in 0u32..=2,
                                       w in prop::collection::vec(0.1..1.0f64, 7..40), v in prop::collection::vec(-1.0..-0.1f64, 7..40)) {
            let p = herm_from(n, kp, &w);
            let q = herm_from(n, kq, &v);
            prop_assert_eq!(p.mul(&q).complex_half_degree(), kp + kq);
        }

        #[test]
        fn normalization_idempotent_on_random(n in 1usize..=3, k in 0u32..=2, w in prop::collection::vec(-1.0..1.0f64, 7..40)) {
            let p = herm_from(n, k, &w);
            let once = hermitian_from_poly(&p).unwrap().into_poly();
            let twice = hermitian_from_poly(&once).unwrap().into_poly();
            prop_assert_eq!(once, twice);
        }
    }
}
