//! Osculating graded nilpotent Lie algebras, their group laws and the orbit map.
//!
//! Group elements are stored in exponential coordinates of the first kind, so
//! the product is `log(exp ξ · exp η)`, computed once symbolically from the
//! Dynkin series and then evaluated.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::chart::{check_invertible_at, FilteredChart, Locus};
use crate::error::{Error, PolyError, Result};
use crate::linalg;
use crate::poly::{exponents_with_weight, weighted_degree, Poly};
use crate::report::{Rat, ValidationReport};

/// Largest nilpotency step the group law supports.
pub const MAX_STEP: u32 = 6;

/// `ℚ`-linear combination of basis vectors `e_a`; also a group element in
/// exponential coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupElement(pub Vec<BigRational>);

impl GroupElement {
    pub fn zero(n: usize) -> Self {
        GroupElement(vec![BigRational::zero(); n])
    }

    pub fn from_ints(xs: &[i64]) -> Self {
        GroupElement(xs.iter().map(|&x| BigRational::from_integer(x.into())).collect())
    }

    pub fn neg(&self) -> Self {
        GroupElement(self.0.iter().map(|x| -x).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Zero::is_zero)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A graded nilpotent Lie algebra with basis `e_a` of weight `q_a`.
pub struct GradedNilpotentLieAlgebra {
    weights: Vec<u32>,
    consts: Vec<Vec<Vec<BigRational>>>,
    group_law: OnceLock<Vec<Poly>>,
}

impl Clone for GradedNilpotentLieAlgebra {
    fn clone(&self) -> Self {
        GradedNilpotentLieAlgebra {
            weights: self.weights.clone(),
            consts: self.consts.clone(),
            group_law: self.group_law.clone(),
        }
    }
}

impl std::fmt::Debug for GradedNilpotentLieAlgebra {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradedNilpotentLieAlgebra")
            .field("weights", &self.weights)
            .field("brackets", &self.bracket_table())
            .finish()
    }
}

impl PartialEq for GradedNilpotentLieAlgebra {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.consts == other.consts
    }
}

impl GradedNilpotentLieAlgebra {
    /// Builds the algebra from `consts[a][b][c] = c^c_{ab}`, checking
    /// antisymmetry, the grading and the Jacobi identity.
    pub fn new(weights: Vec<u32>, consts: Vec<Vec<Vec<BigRational>>>) -> Result<Self> {
        let n = weights.len();
        let shape_ok = consts.len() == n && consts.iter().all(|row| row.len() == n && row.iter().all(|v| v.len() == n));
        if !shape_ok {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: consts.len(),
            }
            .into());
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let v = &consts[a][b][c];
                    if *v != -consts[b][a][c].clone() {
                        return Err(Error::InvalidChart(format!("structure constants not antisymmetric at ({a},{b})")));
                    }
                    if !v.is_zero() && weights[c] != weights[a] + weights[b] {
                        return Err(Error::InvalidChart(format!(
                            "bracket [e{a}, e{b}] has a component along e{c} of the wrong weight"
                        )));
                    }
                }
            }
        }
        let alg = GradedNilpotentLieAlgebra {
            weights,
            consts,
            group_law: OnceLock::new(),
        };
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    if !alg.jacobiator(a, b, c).iter().all(Zero::is_zero) {
                        return Err(Error::JacobiFailure(a, b, c));
                    }
                }
            }
        }
        Ok(alg)
    }

    pub fn abelian(weights: Vec<u32>) -> Self {
        let n = weights.len();
        GradedNilpotentLieAlgebra {
            weights,
            consts: vec![vec![vec![BigRational::zero(); n]; n]; n],
            group_law: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn step(&self) -> u32 {
        self.weights.iter().copied().max().unwrap_or(0)
    }

    pub fn structure_constant(&self, a: usize, b: usize, c: usize) -> &BigRational {
        &self.consts[a][b][c]
    }

    pub fn is_abelian(&self) -> bool {
        self.consts.iter().flatten().flatten().all(Zero::is_zero)
    }

    fn jacobiator(&self, a: usize, b: usize, c: usize) -> Vec<BigRational> {
        let e = |i: usize| {
            let mut v = vec![BigRational::zero(); self.dim()];
            v[i] = BigRational::one();
            v
        };
        let t1 = self.bracket(&e(a), &self.bracket(&e(b), &e(c)));
        let t2 = self.bracket(&e(b), &self.bracket(&e(c), &e(a)));
        let t3 = self.bracket(&e(c), &self.bracket(&e(a), &e(b)));
        (0..self.dim()).map(|i| &t1[i] + &t2[i] + &t3[i]).collect()
    }

    pub fn bracket(&self, x: &[BigRational], y: &[BigRational]) -> Vec<BigRational> {
        let n = self.dim();
        let mut out = vec![BigRational::zero(); n];
        for a in 0..n {
            if x[a].is_zero() {
                continue;
            }
            for b in 0..n {
                if y[b].is_zero() {
                    continue;
                }
                let xy = &x[a] * &y[b];
                for (c, k) in self.consts[a][b].iter().enumerate() {
                    if !k.is_zero() {
                        out[c] += &xy * k;
                    }
                }
            }
        }
        out
    }

    /// Bracket of vectors whose entries are polynomials.
    pub fn bracket_symbolic(&self, x: &[Poly], y: &[Poly]) -> Vec<Poly> {
        let n = self.dim();
        let nvars = x[0].nvars();
        let mut out = vec![Poly::zero(nvars); n];
        for a in 0..n {
            if x[a].is_zero() {
                continue;
            }
            for b in 0..n {
                if y[b].is_zero() || self.consts[a][b].iter().all(Zero::is_zero) {
                    continue;
                }
                let xy = &x[a] * &y[b];
                for (c, k) in self.consts[a][b].iter().enumerate() {
                    if !k.is_zero() {
                        out[c] += &xy.scale(k);
                    }
                }
            }
        }
        out
    }

    /// Nonzero brackets `[e_a, e_b]` with `a < b`, as `(a, b, {c: coefficient})`.
    pub fn bracket_table(&self) -> Vec<(usize, usize, BTreeMap<usize, BigRational>)> {
        let n = self.dim();
        let mut out = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let coeffs: BTreeMap<usize, BigRational> = self.consts[a][b]
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| !k.is_zero())
                    .map(|(c, k)| (c, k.clone()))
                    .collect();
                if !coeffs.is_empty() {
                    out.push((a, b, coeffs));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> AlgebraJson {
        AlgebraJson {
            weights: self.weights.clone(),
            brackets: self
                .bracket_table()
                .into_iter()
                .map(|(a, b, coeffs)| BracketJson {
                    a,
                    b,
                    coeffs: coeffs.into_iter().map(|(c, k)| (c.to_string(), Rat(k))).collect(),
                })
                .collect(),
        }
    }

    /// Components of `log(exp ξ · exp η)` as polynomials in `(ξ_1..ξ_n, η_1..η_n)`.
    pub fn group_law(&self) -> Result<&[Poly]> {
        if self.step() > MAX_STEP {
            return Err(Error::UnsupportedStep(self.step()));
        }
        Ok(self.group_law.get_or_init(|| dynkin_group_law(self)))
    }

    pub fn bch_multiply(&self, xi: &GroupElement, eta: &GroupElement) -> Result<GroupElement> {
        let n = self.dim();
        if xi.dim() != n || eta.dim() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: if xi.dim() != n { xi.dim() } else { eta.dim() },
            }
            .into());
        }
        let law = self.group_law()?;
        let point: Vec<BigRational> = xi.0.iter().chain(&eta.0).cloned().collect();
        Ok(GroupElement(law.iter().map(|p| p.eval(&point)).collect()))
    }

    /// The graded dilation `ξ_a ↦ λ^{q_a} ξ_a`.
    pub fn dilate(&self, lambda: &BigRational, xi: &GroupElement) -> GroupElement {
        GroupElement(
            xi.0.iter()
                .zip(&self.weights)
                .map(|(x, &q)| x * num_traits::pow(lambda.clone(), q as usize))
                .collect(),
        )
    }

    /// Right-multiplies `ξ` by the element of the subgroup spanned by `tangential`
    /// that makes the tangential exponential coordinates of the product vanish.
    pub fn normalize_coset(&self, tangential: &[usize], xi: &GroupElement) -> Result<GroupElement> {
        let n = self.dim();
        let mut gamma = GroupElement::zero(n);
        let mut levels: Vec<u32> = tangential.iter().map(|&a| self.weights[a]).collect();
        levels.sort_unstable();
        levels.dedup();
        for q in levels {
            let p = self.bch_multiply(xi, &gamma)?;
            for &a in tangential {
                if self.weights[a] == q {
                    gamma.0[a] -= &p.0[a];
                }
            }
        }
        self.bch_multiply(xi, &gamma)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketJson {
    pub a: usize,
    pub b: usize,
    pub coeffs: BTreeMap<String, Rat>,
}

/// `{"weights": […], "brackets": [{"a", "b", "coeffs"}]}`.
#[derive(Debug, Clone, Serialize)]
pub struct AlgebraJson {
    pub weights: Vec<u32>,
    pub brackets: Vec<BracketJson>,
}

fn factorial(k: u32) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// Dynkin's series `log(e^X e^Y) = Σ_k (−1)^{k−1}/k Σ [X^{r_1}Y^{s_1}⋯X^{r_k}Y^{s_k}] /
/// ((Σ r_i + s_i) Π r_i! s_i!)`, collected by bracket word up to length `depth`.
fn dynkin_word_coefficients(depth: u32) -> BTreeMap<Vec<bool>, BigRational> {
    // words over {false = X, true = Y}
    let mut out: BTreeMap<Vec<bool>, BigRational> = BTreeMap::new();
    let mut stack: Vec<(u32, u32)> = Vec::new();
    fn rec(
        depth: u32,
        used: u32,
        stack: &mut Vec<(u32, u32)>,
        out: &mut BTreeMap<Vec<bool>, BigRational>,
    ) {
        if !stack.is_empty() {
            let k = stack.len() as i64;
            let total: u32 = stack.iter().map(|(r, s)| r + s).sum();
            let denom = stack
                .iter()
                .fold(BigInt::from(total), |acc, &(r, s)| acc * factorial(r) * factorial(s))
                * BigInt::from(k);
            let sign = if k % 2 == 1 { 1 } else { -1 };
            let coeff = BigRational::new(BigInt::from(sign), denom);
            let word: Vec<bool> = stack
                .iter()
                .flat_map(|&(r, s)| std::iter::repeat_n(false, r as usize).chain(std::iter::repeat_n(true, s as usize)))
                .collect();
            // brackets ending in [X, X] or [Y, Y] vanish
            let vanishes = word.len() >= 2 && word[word.len() - 1] == word[word.len() - 2];
            if !vanishes {
                *out.entry(word).or_insert_with(BigRational::zero) += coeff;
            }
        }
        for r in 0..=(depth - used) {
            for s in 0..=(depth - used - r) {
                if r + s == 0 {
                    continue;
                }
                stack.push((r, s));
                rec(depth, used + r + s, stack, out);
                stack.pop();
            }
        }
    }
    rec(depth, 0, &mut stack, &mut out);
    out.retain(|_, c| !c.is_zero());
    out
}

fn dynkin_group_law(alg: &GradedNilpotentLieAlgebra) -> Vec<Poly> {
    let n = alg.dim();
    let nv = 2 * n;
    let x: Vec<Poly> = (0..n).map(|a| Poly::var(nv, a)).collect();
    let y: Vec<Poly> = (0..n).map(|a| Poly::var(nv, n + a)).collect();
    let words = dynkin_word_coefficients(alg.step().max(1));
    let mut nested: HashMap<Vec<bool>, Vec<Poly>> = HashMap::new();
    let mut result = vec![Poly::zero(nv); n];
    for (word, coeff) in &words {
        let value = nested_bracket(alg, word, &x, &y, &mut nested);
        for (r, v) in result.iter_mut().zip(&value) {
            *r += &v.scale(coeff);
        }
    }
    result
}

/// Right-nested bracket `[w_1, [w_2, …, [w_{m−1}, w_m]]]`, memoized by suffix.
fn nested_bracket(
    alg: &GradedNilpotentLieAlgebra,
    word: &[bool],
    x: &[Poly],
    y: &[Poly],
    memo: &mut HashMap<Vec<bool>, Vec<Poly>>,
) -> Vec<Poly> {
    if let Some(v) = memo.get(word) {
        return v.clone();
    }
    let letter = |b: bool| if b { y.to_vec() } else { x.to_vec() };
    let value = if word.len() == 1 {
        letter(word[0])
    } else {
        let inner = nested_bracket(alg, &word[1..], x, y, memo);
        if inner.iter().all(Poly::is_zero) {
            inner
        } else {
            alg.bracket_symbolic(&letter(word[0]), &inner)
        }
    };
    memo.insert(word.to_vec(), value.clone());
    value
}

/// The osculating algebra `𝔥_v`: `[e_a, e_b]` is the weight-`(q_a+q_b)` part of
/// `[X_a, X_b](v)` in the frame at `v`.
pub fn osculating_algebra(chart: &FilteredChart, v: &[BigRational]) -> Result<GradedNilpotentLieAlgebra> {
    let n = chart.dim();
    if v.len() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            found: v.len(),
        }
        .into());
    }
    let report = chart.validate_lie_filtration();
    if !report.pass {
        return Err(Error::InvalidChart(report.witnesses[0].message.clone()));
    }
    check_invertible_at(chart, v)?;
    let q = chart.weights();
    let frame_v = chart.frame_at(v);
    let mut consts = vec![vec![vec![BigRational::zero(); n]; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            if q[a] + q[b] > chart.step() {
                continue;
            }
            let br = crate::chart::lie_bracket(chart.field(a), chart.field(b))?.eval(v);
            let coeffs = linalg::solve(&frame_v, &br).ok_or_else(|| Error::SingularFrame(format!("{v:?}")))?;
            for c in 0..n {
                if q[c] == q[a] + q[b] {
                    consts[b][a][c] = -coeffs[c].clone();
                    consts[a][b][c] = coeffs[c].clone();
                }
            }
        }
    }
    GradedNilpotentLieAlgebra::new(q.to_vec(), consts)
}

/// A homogeneous element `⟨a⟩_q` of the graded algebra `A₀(V,v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedClass {
    pub grade: u32,
    pub rep: Poly,
}

impl GradedClass {
    pub fn new(grade: u32, rep: Poly) -> Self {
        GradedClass { grade, rep }
    }
}

/// A polynomial on the osculating group, in exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedFunction {
    pub poly: Poly,
    pub weights: Vec<u32>,
}

fn check_grade(chart: &FilteredChart, v: &[BigRational], class: &GradedClass) -> Result<()> {
    if class.grade == 0 {
        return Ok(());
    }
    let order = chart.vanishing_h_order(&class.rep, &Locus::Point(v.to_vec()), class.grade)?;
    if !order.at_least(class.grade) {
        return Err(Error::GradeMismatch {
            grade: class.grade,
            found: order.to_string(),
        });
    }
    Ok(())
}

/// `δ_ξ ⟨a⟩_q = Σ_a ξ_a ⟨X_a a⟩_{q − q_a}`, grouped by grade; negative grades drop.
pub fn derivation_action(
    chart: &FilteredChart,
    v: &[BigRational],
    xi: &GroupElement,
    class: &GradedClass,
) -> Result<BTreeMap<u32, Poly>> {
    check_grade(chart, v, class)?;
    let q = chart.weights();
    let mut out: BTreeMap<u32, Poly> = BTreeMap::new();
    for (a, coeff) in xi.0.iter().enumerate() {
        if coeff.is_zero() || q[a] > class.grade {
            continue;
        }
        let image = chart.apply_field(a, &class.rep).scale(coeff);
        let entry = out.entry(class.grade - q[a]).or_insert_with(|| Poly::zero(chart.dim()));
        *entry += &image;
    }
    out.retain(|_, p| !p.is_zero());
    Ok(out)
}

/// `F_a(ξ) = Σ_k (−1)^k/k! ε(δ_ξ^k a)` as a polynomial in `ξ`.
pub fn orbit_homomorphism(chart: &FilteredChart, v: &[BigRational], class: &GradedClass) -> Result<GradedFunction> {
    check_grade(chart, v, class)?;
    Ok(orbit_unchecked(chart, v, class))
}

pub(crate) fn orbit_unchecked(chart: &FilteredChart, v: &[BigRational], class: &GradedClass) -> GradedFunction {
    let n = chart.dim();
    let q = chart.weights().to_vec();
    let mut out = Poly::zero(n);
    // depth-first over ordered sequences a_1, …, a_k with Σ q_{a_i} = grade
    let mut stack: Vec<usize> = Vec::new();
    fn rec(
        chart: &FilteredChart,
        v: &[BigRational],
        q: &[u32],
        remaining: u32,
        g: &Poly,
        stack: &mut Vec<usize>,
        out: &mut Poly,
    ) {
        if g.is_zero() {
            return;
        }
        if remaining == 0 {
            let value = g.eval(v);
            if value.is_zero() {
                return;
            }
            let k = stack.len() as u32;
            let sign = if k % 2 == 0 { 1 } else { -1 };
            let coeff = value * BigRational::new(BigInt::from(sign), factorial(k));
            let mut exps = vec![0u32; q.len()];
            for &a in stack.iter() {
                exps[a] += 1;
            }
            *out += &Poly::monomial(q.len(), exps, coeff);
            return;
        }
        for a in 0..q.len() {
            if q[a] > remaining {
                continue;
            }
            stack.push(a);
            let next = chart.apply_field(a, g);
            rec(chart, v, q, remaining - q[a], &next, stack, out);
            stack.pop();
        }
    }
    rec(chart, v, &q, class.grade, &class.rep, &mut stack, &mut out);
    GradedFunction { poly: out, weights: q }
}

/// Report of [`verify_orbit_isomorphism`].
#[derive(Debug, Clone, Serialize)]
pub struct OrbitReport {
    pub pass: bool,
    pub dimension: usize,
    pub rank: usize,
    pub multiplicativity_pairs: usize,
    pub validation: ValidationReport,
}

/// Checks that the orbit map is a linear bijection from the grade-`≤ r` part of
/// `A₀(V,v)` (spanned by monomials in privileged coordinates) onto polynomials
/// of weighted degree `≤ r`, and multiplicative on `pairs` random pairs.
pub fn verify_orbit_isomorphism(chart: &FilteredChart, v: &[BigRational], pairs: usize, seed: u64) -> Result<OrbitReport> {
    let coords = crate::coords::privileged_coordinates(chart, v)?;
    let q = chart.weights().to_vec();
    let r = chart.step();
    let n = chart.dim();
    let betas = exponents_with_weight(&q, 0, r);
    let basis_reps: Vec<Poly> = betas.iter().map(|beta| monomial_in(&coords, beta, n)).collect();
    let images: Vec<Poly> = betas
        .iter()
        .zip(&basis_reps)
        .map(|(beta, rep)| orbit_unchecked(chart, v, &GradedClass::new(weighted_degree(beta, &q), rep.clone())).poly)
        .collect();
    let column_index: HashMap<&Vec<u32>, usize> = betas.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut validation = ValidationReport::new();
    let mut matrix = vec![vec![BigRational::zero(); betas.len()]; betas.len()];
    for (i, img) in images.iter().enumerate() {
        for (e, c) in img.terms() {
            match column_index.get(e) {
                Some(&j) => matrix[i][j] = c.clone(),
                None => validation.fail(
                    format!("orbit image of basis class {i} has a term of weighted degree above {r}"),
                    json!({"basis": betas[i], "exps": e}),
                ),
            }
        }
    }
    let rank = linalg::rank(&matrix);
    if rank != betas.len() {
        validation.fail(
            format!("orbit map has rank {rank} on a space of dimension {}", betas.len()),
            json!({"rank": rank, "dimension": betas.len()}),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..pairs {
        let a = random_element(&mut rng, &betas, &q, &basis_reps);
        let b = random_element(&mut rng, &betas, &q, &basis_reps);
        let fa = graded_orbit(chart, v, &a);
        let fb = graded_orbit(chart, v, &b);
        let mut prod: BTreeMap<u32, Poly> = BTreeMap::new();
        for (p, ap) in &a {
            for (s, bs) in &b {
                if p + s <= r {
                    let e = prod.entry(p + s).or_insert_with(|| Poly::zero(n));
                    *e += &(ap * bs);
                }
            }
        }
        let fab = graded_orbit(chart, v, &prod);
        let expected = (&fa * &fb).jet_truncate(&q, r);
        if fab != expected {
            validation.fail(
                format!("orbit map not multiplicative on random pair {trial}"),
                json!({"trial": trial, "difference": &fab - &expected}),
            );
        }
    }
    Ok(OrbitReport {
        pass: validation.pass,
        dimension: betas.len(),
        rank,
        multiplicativity_pairs: pairs,
        validation,
    })
}

fn monomial_in(coords: &[Poly], beta: &[u32], n: usize) -> Poly {
    let mut m = Poly::one(n);
    for (x, &k) in coords.iter().zip(beta) {
        if k > 0 {
            m = &m * &x.pow(k);
        }
    }
    m
}

fn random_element(
    rng: &mut ChaCha8Rng,
    betas: &[Vec<u32>],
    q: &[u32],
    reps: &[Poly],
) -> BTreeMap<u32, Poly> {
    let n = q.len();
    let mut out: BTreeMap<u32, Poly> = BTreeMap::new();
    for (beta, rep) in betas.iter().zip(reps) {
        if rng.gen_bool(0.5) {
            continue;
        }
        let c = BigRational::new(BigInt::from(rng.gen_range(-5i64..=5)), BigInt::from(rng.gen_range(1i64..=4)));
        let e = out.entry(weighted_degree(beta, q)).or_insert_with(|| Poly::zero(n));
        *e += &rep.scale(&c);
    }
    out
}

fn graded_orbit(chart: &FilteredChart, v: &[BigRational], pieces: &BTreeMap<u32, Poly>) -> Poly {
    let mut out = Poly::zero(chart.dim());
    for (&grade, rep) in pieces {
        out += &orbit_unchecked(chart, v, &GradedClass::new(grade, rep.clone())).poly;
    }
    out
}

/// `𝔥_m` together with the indices spanning `𝔤_m` (frame fields tangent to `M`).
pub fn osculating_quotient(chart: &FilteredChart, m: &[BigRational]) -> Result<(GradedNilpotentLieAlgebra, Vec<usize>)> {
    let normal = chart.normal().ok_or(Error::NoSubmanifold)?;
    if m.len() != chart.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: chart.dim(),
            found: m.len(),
        }
        .into());
    }
    if normal.iter().any(|&c| !m[c].is_zero()) {
        return Err(Error::NotOnSubmanifold);
    }
    let alg = osculating_algebra(chart, m)?;
    let tangential = chart.tangential();
    // the tangential span must be a subalgebra
    for &a in &tangential {
        for &b in &tangential {
            for &c in normal {
                if !alg.structure_constant(a, b, c).is_zero() {
                    return Err(Error::InvalidChart(format!(
                        "tangential basis vectors e{a}, e{b} bracket into normal e{c}"
                    )));
                }
            }
        }
    }
    Ok((alg, tangential))
}

/// Random rational vector with entries `p/d`, `|p| ≤ range·d`.
pub fn random_rational_vector<R: Rng>(rng: &mut R, n: usize, range: i64, den: i64) -> Vec<BigRational> {
    (0..n)
        .map(|_| BigRational::new(BigInt::from(rng.gen_range(-range * den..=range * den)), BigInt::from(den)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::fixtures::{engel, heisenberg};
    use crate::linalg::Matrix;
    use crate::poly::rat;

    fn zero3() -> Vec<BigRational> {
        vec![rat(0, 1); 3]
    }

    #[test]
    fn heisenberg_osculating_algebra() {
        let h = heisenberg();
        for v in [zero3(), vec![rat(3, 2), rat(-1, 1), rat(7, 1)]] {
            let alg = osculating_algebra(&h, &v).unwrap();
            let table = alg.bracket_table();
            assert_eq!(table.len(), 1);
            assert_eq!((table[0].0, table[0].1), (0, 1));
            assert_eq!(table[0].2, BTreeMap::from([(2, rat(1, 1))]));
        }
    }

    #[test]
    fn engel_osculating_algebra() {
        let alg = osculating_algebra(&engel(), &[rat(0, 1), rat(0, 1), rat(0, 1), rat(0, 1)]).unwrap();
        assert_eq!(*alg.structure_constant(0, 1, 2), rat(1, 1));
        assert_eq!(*alg.structure_constant(2, 1, 3), rat(1, 1));
        assert_eq!(*alg.structure_constant(1, 2, 3), rat(-1, 1));
        assert_eq!(alg.bracket_table().len(), 2);
    }

    #[test]
    fn flat_chart_is_abelian() {
        let flat = FilteredChart::flat(vec![3], None).unwrap();
        assert!(osculating_algebra(&flat, &zero3()).unwrap().is_abelian());
    }

    #[test]
    fn jacobi_failure_is_reported() {
        // [e0,e1] = e3 and [e2,e3] = e4 respect the grading, but the Jacobiator
        // of (e0, e1, e2) is [e2, e3] = e4
        let w = vec![1, 1, 1, 2, 3];
        let mut c = vec![vec![vec![rat(0, 1); 5]; 5]; 5];
        let mut set = |a: usize, b: usize, k: usize| {
            c[a][b][k] = rat(1, 1);
            c[b][a][k] = rat(-1, 1);
        };
        set(0, 1, 3);
        set(2, 3, 4);
        assert_eq!(GradedNilpotentLieAlgebra::new(w, c).unwrap_err(), Error::JacobiFailure(0, 1, 2));
    }

    #[test]
    fn dynkin_coefficients_low_order() {
        let words = dynkin_word_coefficients(3);
        let c = |w: &[bool]| words.get(w).cloned().unwrap_or_else(|| rat(0, 1));
        let (x, y) = (false, true);
        assert_eq!(c(&[x]), rat(1, 1));
        assert_eq!(c(&[y]), rat(1, 1));
        // ½[X,Y] from the words XY and YX = −XY
        assert_eq!(c(&[x, y]) - c(&[y, x]), rat(1, 2));
        // 1/12 [X,[X,Y]] − 1/12 [Y,[X,Y]]
        assert_eq!(c(&[x, x, y]) - c(&[x, y, x]), rat(1, 12));
        assert_eq!(c(&[y, x, y]) - c(&[y, y, x]), rat(-1, 12));
    }

    fn heis_matrix(x: &GroupElement) -> Matrix {
        // exp(x e12 + y e23 + z e13) = I + N + N²/2, N² = x y e13
        let (a, b, c) = (&x.0[0], &x.0[1], &x.0[2]);
        vec![
            vec![rat(1, 1), a.clone(), c + a * b * rat(1, 2)],
            vec![rat(0, 1), rat(1, 1), b.clone()],
            vec![rat(0, 1), rat(0, 1), rat(1, 1)],
        ]
    }

    fn heis_log(m: &Matrix) -> GroupElement {
        // log(I + N) = N − N²/2 for N strictly upper triangular 3×3
        let a = m[0][1].clone();
        let b = m[1][2].clone();
        let c = &m[0][2] - &(&a * &b * rat(1, 2));
        GroupElement(vec![a, b, c])
    }

    fn matmul(p: &Matrix, q: &Matrix) -> Matrix {
        (0..3)
            .map(|i| (0..3).map(|j| (0..3).map(|k| &p[i][k] * &q[k][j]).sum()).collect())
            .collect()
    }

    #[test]
    fn heisenberg_group_law_matches_matrix_oracle() {
        let alg = osculating_algebra(&heisenberg(), &zero3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let xi = GroupElement(random_rational_vector(&mut rng, 3, 3, 5));
            let eta = GroupElement(random_rational_vector(&mut rng, 3, 3, 7));
            let oracle = heis_log(&matmul(&heis_matrix(&xi), &heis_matrix(&eta)));
            let got = alg.bch_multiply(&xi, &eta).unwrap();
            assert_eq!(got, oracle);
            let closed = &xi.0[2] + &eta.0[2] + (&xi.0[0] * &eta.0[1] - &xi.0[1] * &eta.0[0]) * rat(1, 2);
            assert_eq!(got.0[2], closed);
        }
    }

    #[test]
    fn heisenberg_example_product() {
        let alg = osculating_algebra(&heisenberg(), &zero3()).unwrap();
        let p = alg
            .bch_multiply(&GroupElement::from_ints(&[1, 0, 0]), &GroupElement::from_ints(&[0, 1, 0]))
            .unwrap();
        assert_eq!(p.0, vec![rat(1, 1), rat(1, 1), rat(1, 2)]);
    }

    #[test]
    fn engel_group_law_is_associative() {
        let alg = osculating_algebra(&engel(), &[rat(0, 1), rat(0, 1), rat(0, 1), rat(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let a = GroupElement(random_rational_vector(&mut rng, 4, 2, 3));
            let b = GroupElement(random_rational_vector(&mut rng, 4, 2, 3));
            let c = GroupElement(random_rational_vector(&mut rng, 4, 2, 3));
            let left = alg.bch_multiply(&alg.bch_multiply(&a, &b).unwrap(), &c).unwrap();
            let right = alg.bch_multiply(&a, &alg.bch_multiply(&b, &c).unwrap()).unwrap();
            assert_eq!(left, right);
            assert!(alg.bch_multiply(&a, &a.neg()).unwrap().is_zero());
        }
    }

    #[test]
    fn unsupported_step() {
        let alg = GradedNilpotentLieAlgebra::abelian(vec![1, 7]);
        assert_eq!(
            alg.bch_multiply(&GroupElement::zero(2), &GroupElement::zero(2)),
            Err(Error::UnsupportedStep(7))
        );
    }

    #[test]
    fn derivation_examples() {
        let h = heisenberg();
        let v = zero3();
        let z = GradedClass::new(2, Poly::var(3, 2));
        let out = derivation_action(&h, &v, &GroupElement::from_ints(&[0, 1, 0]), &z).unwrap();
        assert_eq!(out, BTreeMap::from([(1, Poly::var(3, 0))]));
        let x = GradedClass::new(1, Poly::var(3, 0));
        let out = derivation_action(&h, &v, &GroupElement::from_ints(&[1, 0, 0]), &x).unwrap();
        assert_eq!(out, BTreeMap::from([(0, Poly::one(3))]));
        let one = GradedClass::new(0, Poly::one(3));
        assert!(derivation_action(&h, &v, &GroupElement::from_ints(&[1, 1, 1]), &one)
            .unwrap()
            .is_empty());
        let bad = GradedClass::new(2, Poly::var(3, 0));
        assert!(matches!(
            derivation_action(&h, &v, &GroupElement::from_ints(&[1, 0, 0]), &bad),
            Err(Error::GradeMismatch { .. })
        ));
    }

    /// Oracle: on a chart whose fields generate a nilpotent algebra of
    /// polynomial vector fields, `ε(exp(−δ_ξ) a)` is `a` evaluated along the
    /// flow of `−Σ ξ_a X_a` from the base point for unit time, computed as the
    /// Lie series `Σ_k (−1)^k/k! (ξ·X)^k a` with `ξ·X` a single field.
    fn lie_series_oracle(chart: &FilteredChart, f: &Poly, depth: u32) -> Poly {
        let n = chart.dim();
        // extend to variables (u, ξ): field Y = Σ ξ_a X_a acting on u only
        let nv = 2 * n;
        let lift = |p: &Poly| p.embed(nv, &(0..n).collect::<Vec<_>>());
        let mut y_comps = vec![Poly::zero(nv); nv];
        for a in 0..n {
            let xi_a = Poly::var(nv, n + a);
            for i in 0..n {
                y_comps[i] += &(&xi_a * &lift(chart.field(a).component(i)));
            }
        }
        let y = crate::chart::VectorField::from_components(y_comps);
        let mut term = lift(f);
        let mut total = term.clone();
        let mut fact = BigRational::one();
        for k in 1..=depth {
            term = y.apply(&term);
            fact *= BigRational::from_integer(k.into());
            let sign = if k % 2 == 0 { rat(1, 1) } else { rat(-1, 1) };
            total += &term.scale(&(sign / &fact));
        }
        // evaluate u at the origin, keep ξ
        let mut images: Vec<Poly> = vec![Poly::zero(n); n];
        images.extend((0..n).map(|a| Poly::var(n, a)));
        total.substitute(&images).unwrap()
    }

    #[test]
    fn orbit_map_matches_lie_series_on_homogeneous_charts() {
        let h = heisenberg();
        let v = zero3();
        for (grade, f) in [(1, Poly::var(3, 0)), (1, Poly::var(3, 1)), (2, Poly::var(3, 2))] {
            let got = orbit_homomorphism(&h, &v, &GradedClass::new(grade, f.clone())).unwrap();
            assert_eq!(got.poly, lie_series_oracle(&h, &f, 4));
        }
        let e = engel();
        let v4 = vec![rat(0, 1); 4];
        for (grade, f) in [(1, Poly::var(4, 0)), (2, Poly::var(4, 2)), (3, Poly::var(4, 3))] {
            let got = orbit_homomorphism(&e, &v4, &GradedClass::new(grade, f.clone())).unwrap();
            assert_eq!(got.poly, lie_series_oracle(&e, &f, 5));
        }
    }

    #[test]
    fn orbit_examples_pinned() {
        let h = heisenberg();
        let v = zero3();
        let fx = orbit_homomorphism(&h, &v, &GradedClass::new(1, Poly::var(3, 0))).unwrap();
        assert_eq!(fx.poly, -Poly::var(3, 0));
        let f1 = orbit_homomorphism(&h, &v, &GradedClass::new(0, Poly::one(3))).unwrap();
        assert_eq!(f1.poly, Poly::one(3));
        let fz = orbit_homomorphism(&h, &v, &GradedClass::new(2, Poly::var(3, 2))).unwrap();
        let expected = &(-Poly::var(3, 2)) + &(&Poly::var(3, 0) * &Poly::var(3, 1)).scale(&rat(1, 2));
        assert_eq!(fz.poly, expected);
    }

    #[test]
    fn orbit_map_equivariance() {
        // F_{δ_Y a}(h) = −d/ds F_a(exp(sY)·h) at s = 0
        for chart in [heisenberg(), engel()] {
            let n = chart.dim();
            let v = vec![rat(0, 1); n];
            let alg = osculating_algebra(&chart, &v).unwrap();
            let law = alg.group_law().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..5 {
                let ycoef = random_rational_vector(&mut rng, n, 2, 3);
                // ring (s, h_1..h_n)
                let nv = n + 1;
                let s = Poly::var(nv, 0);
                let mut images: Vec<Poly> = ycoef.iter().map(|c| s.scale(c)).collect();
                images.extend((0..n).map(|a| Poly::var(nv, a + 1)));
                let translated: Vec<Poly> = law.iter().map(|p| p.substitute(&images).unwrap()).collect();
                for a_idx in 0..n {
                    let grade = chart.weights()[a_idx];
                    let class = GradedClass::new(grade, Poly::var(n, a_idx));
                    let fa = orbit_homomorphism(&chart, &v, &class).unwrap().poly;
                    let lhs_pieces = derivation_action(&chart, &v, &GroupElement(ycoef.clone()), &class).unwrap();
                    let mut lhs = Poly::zero(n);
                    for (g, rep) in lhs_pieces {
                        lhs += &orbit_homomorphism(&chart, &v, &GradedClass::new(g, rep)).unwrap().poly;
                    }
                    let composed = fa.substitute(&translated).unwrap();
                    let deriv = composed.partial(0).partial_eval(&[(0, rat(0, 1))]);
                    let mut back: Vec<Poly> = vec![Poly::zero(n)];
                    back.extend((0..n).map(|a| Poly::var(n, a)));
                    let rhs = -deriv.substitute(&back).unwrap();
                    assert_eq!(lhs, rhs, "coordinate {a_idx}");
                }
            }
        }
    }

    #[test]
    fn orbit_isomorphism_on_shipped_charts() {
        let flat = FilteredChart::flat(vec![3], None).unwrap();
        for chart in [flat, heisenberg(), engel()] {
            let v = vec![rat(0, 1); chart.dim()];
            let report = verify_orbit_isomorphism(&chart, &v, 10, 1).unwrap();
            assert!(report.pass, "{:?}", report.validation);
            assert_eq!(report.rank, report.dimension);
        }
    }

    #[test]
    fn quotient_indices() {
        let h = heisenberg();
        let xaxis = h.with_normal(Some(vec![1, 2])).unwrap();
        let (_, tangential) = osculating_quotient(&xaxis, &zero3()).unwrap();
        assert_eq!(tangential, vec![0]);
        let point = h.with_normal(Some(vec![0, 1, 2])).unwrap();
        let (alg, tangential) = osculating_quotient(&point, &zero3()).unwrap();
        assert!(tangential.is_empty());
        assert_eq!(alg.dim(), 3);
        assert_eq!(
            osculating_quotient(&xaxis, &[rat(0, 1), rat(1, 1), rat(0, 1)]).unwrap_err(),
            Error::NotOnSubmanifold
        );
    }

    #[test]
    fn coset_normalization_kills_tangential_coordinates() {
        let alg = osculating_algebra(&engel(), &[rat(0, 1), rat(0, 1), rat(0, 1), rat(0, 1)]).unwrap();
        let xi = GroupElement(vec![rat(1, 2), rat(-1, 3), rat(2, 1), rat(5, 7)]);
        let out = alg.normalize_coset(&[0, 2], &xi).unwrap();
        assert!(out.0[0].is_zero() && out.0[2].is_zero());
    }
}
