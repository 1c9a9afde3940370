//! Sparse multivariate polynomials with exact rational coefficients.
//!
//! Every function, vector-field component and jet in this crate is a [`Poly`].
//! Terms are kept in a `BTreeMap` keyed by exponent vectors, zero coefficients
//! are never stored, so two polynomials are equal exactly when their maps are.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Deref, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::PolyError;

/// Exponent vector of a monomial.
pub type Exponents = Vec<u32>;

/// Parses `"p/q"` or `"p"` into a rational.
pub fn parse_rational(s: &str) -> Result<BigRational, PolyError> {
    BigRational::from_str(s.trim()).map_err(|_| PolyError::BadRational(s.to_string()))
}

/// Small helper for building rationals in code and tests.
pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Converts a rational to the nearest `f64`.
pub fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for a direct conversion
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// A valuation: a nonnegative integer or `+∞` (the valuation of zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Valuation {
    Finite(u32),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<u32> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

impl Add for Valuation {
    type Output = Valuation;
    fn add(self, rhs: Valuation) -> Valuation {
        match (self, rhs) {
            (Valuation::Finite(a), Valuation::Finite(b)) => Valuation::Finite(a + b),
            _ => Valuation::Infinite,
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Finite(v) => write!(f, "{v}"),
            Valuation::Infinite => write!(f, "inf"),
        }
    }
}

/// Positive integer weights `q_1 ≤ … ≤ q_n`, one per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct WeightVector(Vec<u32>);

impl WeightVector {
    pub fn new(weights: Vec<u32>) -> Result<Self, PolyError> {
        if weights.contains(&0) {
            return Err(PolyError::BadWeights("weights must be positive".into()));
        }
        if weights.windows(2).any(|p| p[0] > p[1]) {
            return Err(PolyError::BadWeights("weights must be nondecreasing".into()));
        }
        Ok(WeightVector(weights))
    }

    /// Weight sequence of a filtration with the given cumulative ranks: each
    /// `q` appears `rank(H^q) - rank(H^{q-1})` times.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, PolyError> {
        let mut weights = Vec::new();
        let mut prev = 0usize;
        for (i, &rank) in ranks.iter().enumerate() {
            if rank < prev {
                return Err(PolyError::BadWeights(format!(
                    "ranks must be nondecreasing, got {ranks:?}"
                )));
            }
            weights.extend(std::iter::repeat_n(i as u32 + 1, rank - prev));
            prev = rank;
        }
        WeightVector::new(weights)
    }

    /// Largest weight, i.e. the step of the filtration.
    pub fn step(&self) -> u32 {
        self.0.last().copied().unwrap_or(0)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl Deref for WeightVector {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

/// Weighted degree `Σ w_i e_i` of an exponent vector.
pub fn weighted_degree(exps: &[u32], weights: &[u32]) -> u32 {
    exps.iter().zip(weights).map(|(e, w)| e * w).sum()
}

/// Exact multivariate polynomial over ℚ in a fixed number of variables.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Exponents, BigRational>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(nvars: usize) -> Self {
        Poly::constant(nvars, BigRational::one())
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        Poly::monomial(nvars, vec![0; nvars], c)
    }

    pub fn from_int(nvars: usize, c: i64) -> Self {
        Poly::constant(nvars, BigRational::from_integer(c.into()))
    }

    /// The coordinate function `u_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range for {nvars} variables");
        let mut e = vec![0; nvars];
        e[i] = 1;
        Poly::monomial(nvars, e, BigRational::one())
    }

    pub fn monomial(nvars: usize, exps: Exponents, c: BigRational) -> Self {
        assert_eq!(exps.len(), nvars, "exponent vector has wrong length");
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(exps, c);
        }
        Poly { nvars, terms }
    }

    /// Builds a polynomial from arbitrary (possibly repeated or zero) terms.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Exponents, BigRational)>,
    {
        let mut p = Poly::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(PolyError::DimensionMismatch {
                    expected: nvars,
                    found: e.len(),
                });
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &BigRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, exps: &[u32]) -> BigRational {
        self.terms.get(exps).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn constant_term(&self) -> BigRational {
        self.coeff(&vec![0; self.nvars])
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&x| x == 0))
    }

    fn add_term(&mut self, exps: Exponents, c: BigRational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn check_dim(&self, other: &Poly) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.check_dim(other)?;
        Ok(self + other)
    }

    pub fn try_mul(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.check_dim(other)?;
        Ok(self * other)
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero(self.nvars);
        }
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::one(self.nvars);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// `∂f/∂u_i`.
    pub fn partial(&self, i: usize) -> Poly {
        assert!(i < self.nvars, "variable index {i} out of range");
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[i] -= 1;
            out.add_term(e2, c * BigRational::from_integer(e[i].into()));
        }
        out
    }

    /// Substitutes `images[i]` for `u_i`. All images must share one ambient
    /// dimension, which becomes the dimension of the result.
    pub fn substitute(&self, images: &[Poly]) -> Result<Poly, PolyError> {
        if images.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: images.len(),
            });
        }
        let target = match images.first() {
            Some(p) => p.nvars,
            None => return Ok(self.clone()),
        };
        if let Some(bad) = images.iter().find(|p| p.nvars != target) {
            return Err(PolyError::DimensionMismatch {
                expected: target,
                found: bad.nvars,
            });
        }
        // cache of powers per variable
        let mut powers: Vec<Vec<Poly>> = images.iter().map(|p| vec![Poly::one(target), p.clone()]).collect();
        let mut out = Poly::zero(target);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(target, c.clone());
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap() * &images[i];
                    powers[i].push(next);
                }
                term = &term * &powers[i][k as usize];
            }
            out += &term;
        }
        Ok(out)
    }

    /// Relabels variables into a ring of `nvars` variables: variable `i` of
    /// `self` becomes variable `map[i]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Poly {
        assert_eq!(map.len(), self.nvars);
        let mut out = Poly::zero(nvars);
        for (e, c) in &self.terms {
            let mut e2 = vec![0; nvars];
            for (i, &k) in e.iter().enumerate() {
                e2[map[i]] += k;
            }
            out.add_term(e2, c.clone());
        }
        out
    }

    /// Sets the listed variables to zero (restriction to a coordinate subspace).
    pub fn restrict_zero(&self, vars: &[usize]) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| vars.iter().all(|&v| e[v] == 0))
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Fixes `u_i = value` for the listed pairs, keeping the ring unchanged.
    pub fn partial_eval(&self, assignment: &[(usize, BigRational)]) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut coeff = c.clone();
            let mut e2 = e.clone();
            for (v, val) in assignment {
                if e2[*v] > 0 {
                    coeff *= num_traits::pow(val.clone(), e2[*v] as usize);
                    e2[*v] = 0;
                }
            }
            out.add_term(e2, coeff);
        }
        out
    }

    pub fn eval(&self, point: &[BigRational]) -> BigRational {
        assert_eq!(point.len(), self.nvars, "point has wrong dimension");
        let mut acc = BigRational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (x, &k) in point.iter().zip(e) {
                if k > 0 {
                    t *= num_traits::pow(x.clone(), k as usize);
                }
            }
            acc += t;
        }
        acc
    }

    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.nvars, "point has wrong dimension");
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut t = rat_to_f64(c);
                for (x, &k) in point.iter().zip(e) {
                    if k > 0 {
                        t *= x.powi(k as i32);
                    }
                }
                t
            })
            .sum()
    }

    /// Minimum weighted degree over monomials, counting only the variables in
    /// `subset` when given. `+∞` for the zero polynomial.
    pub fn weighted_valuation(&self, weights: &[u32], subset: Option<&[usize]>) -> Valuation {
        assert_eq!(weights.len(), self.nvars, "weight vector has wrong length");
        self.terms
            .keys()
            .map(|e| match subset {
                None => weighted_degree(e, weights),
                Some(vars) => vars.iter().map(|&v| e[v] * weights[v]).sum(),
            })
            .min()
            .map_or(Valuation::Infinite, Valuation::Finite)
    }

    /// Maximum weighted degree over monomials; `None` for zero.
    pub fn weighted_degree(&self, weights: &[u32]) -> Option<u32> {
        self.terms.keys().map(|e| weighted_degree(e, weights)).max()
    }

    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn degree_in(&self, var: usize) -> Option<u32> {
        self.terms.keys().map(|e| e[var]).max()
    }

    /// Drops every monomial of weighted degree above `cap`.
    pub fn jet_truncate(&self, weights: &[u32], cap: u32) -> Poly {
        assert_eq!(weights.len(), self.nvars, "weight vector has wrong length");
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| weighted_degree(e, weights) <= cap)
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Part of weighted degree exactly `deg`.
    pub fn homogeneous_part(&self, weights: &[u32], deg: u32) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| weighted_degree(e, weights) == deg)
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Exact division by `u_var^k`; `None` if some monomial has lower degree in `u_var`.
    pub fn div_var_power(&self, var: usize, k: u32) -> Option<Poly> {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] < k {
                return None;
            }
            let mut e2 = e.clone();
            e2[var] -= k;
            out.terms.insert(e2, c.clone());
        }
        Some(out)
    }

    /// Multiplies by `u_var^k`.
    pub fn mul_var_power(&self, var: usize, k: u32) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let mut e2 = e.clone();
                    e2[var] += k;
                    (e2, c.clone())
                })
                .collect(),
        }
    }

    /// Leading term under the lexicographic order on exponent vectors.
    fn leading(&self) -> Option<(&Exponents, &BigRational)> {
        self.terms.iter().next_back()
    }

    /// Exact division `self / divisor`, or `None` when `divisor` does not
    /// divide `self` in ℚ[u].
    pub fn div_exact(&self, divisor: &Poly) -> Option<Poly> {
        assert_eq!(self.nvars, divisor.nvars);
        let (dlead_e, dlead_c) = divisor.leading()?;
        let mut rem = self.clone();
        let mut quot = Poly::zero(self.nvars);
        while let Some((re, rc)) = rem.leading() {
            if re.iter().zip(dlead_e).any(|(a, b)| a < b) {
                return None;
            }
            let qe: Exponents = re.iter().zip(dlead_e).map(|(a, b)| a - b).collect();
            let qc = rc / dlead_c;
            let step = Poly::monomial(self.nvars, qe, qc);
            rem -= &(&step * divisor);
            quot += &step;
        }
        Some(quot)
    }

    pub fn max_abs_coeff(&self) -> BigRational {
        self.terms
            .values()
            .map(|c| c.abs())
            .max()
            .unwrap_or_else(BigRational::zero)
    }

    pub fn to_json_terms(&self) -> Vec<TermJson> {
        self.terms
            .iter()
            .map(|(e, c)| TermJson {
                coeff: c.to_string(),
                exps: e.clone(),
            })
            .collect()
    }

    pub fn from_json_terms(nvars: usize, terms: &[TermJson]) -> Result<Poly, PolyError> {
        let parsed = terms
            .iter()
            .map(|t| Ok((t.exps.clone(), parse_rational(&t.coeff)?)))
            .collect::<Result<Vec<_>, PolyError>>()?;
        Poly::from_terms(nvars, parsed)
    }
}

/// One serialized term: `{"coeff": "p/q", "exps": [e1, …, en]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermJson {
    pub coeff: String,
    pub exps: Vec<u32>,
}

impl Serialize for Poly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json_terms().serialize(s)
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly[{}]({})", self.nvars, self)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            first = false;
            let a = c.abs();
            let is_const = e.iter().all(|&k| k == 0);
            if !a.is_one() || is_const {
                write!(f, "{a}")?;
                if !is_const {
                    write!(f, "*")?;
                }
            }
            let mut sep = "";
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                write!(f, "{sep}u{i}")?;
                if k > 1 {
                    write!(f, "^{k}")?;
                }
                sep = "*";
            }
        }
        Ok(())
    }
}

impl Add<&Poly> for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        self += &rhs;
        self
    }
}

impl AddAssign<&Poly> for Poly {
    fn add_assign(&mut self, rhs: &Poly) {
        assert_eq!(self.nvars, rhs.nvars, "dimension mismatch in addition");
        for (e, c) in &rhs.terms {
            self.add_term(e.clone(), c.clone());
        }
    }
}

impl SubAssign<&Poly> for Poly {
    fn sub_assign(&mut self, rhs: &Poly) {
        assert_eq!(self.nvars, rhs.nvars, "dimension mismatch in subtraction");
        for (e, c) in &rhs.terms {
            self.add_term(e.clone(), -c.clone());
        }
    }
}

impl Sub<&Poly> for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(mut self, rhs: Poly) -> Poly {
        self -= &rhs;
        self
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -c.clone())).collect(),
        }
    }
}

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        -&self
    }
}

impl Mul<&Poly> for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars, "dimension mismatch in multiplication");
        let mut out = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Exponents = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}

/// Enumerates all exponent vectors of length `n` with weighted degree in `lo..=hi`.
pub fn exponents_with_weight(weights: &[u32], lo: u32, hi: u32) -> Vec<Exponents> {
    fn rec(weights: &[u32], i: usize, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<Exponents>, lo: u32, hi: u32) {
        if i == weights.len() {
            let d = hi - budget;
            if d >= lo {
                out.push(cur.clone());
            }
            return;
        }
        let w = weights[i];
        let mut k = 0;
        loop {
            cur.push(k);
            rec(weights, i + 1, budget - k * w, cur, out, lo, hi);
            cur.pop();
            k += 1;
            if k * w > budget {
                break;
            }
        }
    }
    let mut out = Vec::new();
    rec(weights, 0, hi, &mut Vec::new(), &mut out, lo, hi);
    out.sort_by(|a, b| {
        weighted_degree(a, weights)
            .cmp(&weighted_degree(b, weights))
            .then_with(|| b.cmp(a))
    });
    out
}
