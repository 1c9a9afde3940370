//! The tangent groupoid: the deformation space of the diagonal in `M × M`.
//!
//! Coordinates of the doubled chart are interleaved by weight: inside each
//! weight block the diagonal fields `X_a ⊕ X_a` come first, then the
//! second-factor fields `0 ⊕ X_a`. Level-λ arrows are pairs `(p, q)` with
//! target `p` and source `q`; zero-fiber arrows are osculating group elements.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::chart::{FilteredChart, VectorField};
use crate::coords::{adapted_coordinates, chart_coordinates_adapted};
use crate::error::{Error, PolyError, Result};
use crate::linalg;
use crate::nilpotent::{orbit_unchecked, osculating_algebra, osculating_quotient, GradedClass, GradedNilpotentLieAlgebra, GroupElement};
use crate::poly::{rat_to_f64, Poly};
use crate::report::{Rat, ValidationReport, F64};

/// The doubled chart together with the coordinate change from `(u, u′)`.
#[derive(Debug, Clone)]
pub struct DoubledChart {
    chart: FilteredChart,
    diagonal: Vec<usize>,
    second: Vec<usize>,
    /// Final coordinates `(u, z)` as polynomials in the raw `(u, u′)`.
    forward: Vec<Poly>,
    /// Raw `(u, u′)` as polynomials in the final coordinates.
    inverse: Vec<Poly>,
}

impl DoubledChart {
    /// Filtered chart on `M × M` with the diagonal marked and adapted.
    pub fn chart(&self) -> &FilteredChart {
        &self.chart
    }

    /// Position of `X_a ⊕ X_a` (equivalently of `u_a`) for each original index.
    pub fn diagonal_index(&self) -> &[usize] {
        &self.diagonal
    }

    /// Position of `0 ⊕ X_a` (equivalently of `z_a`) for each original index.
    pub fn second_index(&self) -> &[usize] {
        &self.second
    }

    pub fn forward(&self) -> &[Poly] {
        &self.forward
    }

    pub fn inverse(&self) -> &[Poly] {
        &self.inverse
    }

    /// Raw coordinates of the pair `(p, q)`.
    pub fn raw_point(&self, p: &[BigRational], q: &[BigRational]) -> Vec<BigRational> {
        let mut out = vec![BigRational::zero(); 2 * p.len()];
        for (a, (x, y)) in p.iter().zip(q).enumerate() {
            out[self.diagonal[a]] = x.clone();
            out[self.second[a]] = y.clone();
        }
        out
    }

    /// Final coordinates of the pair `(p, q)`.
    pub fn coordinates(&self, p: &[BigRational], q: &[BigRational]) -> Vec<BigRational> {
        let raw = self.raw_point(p, q);
        self.forward.iter().map(|f| f.eval(&raw)).collect()
    }

    /// The pair `(p, q)` with the given final coordinates.
    pub fn pair(&self, coords: &[BigRational]) -> (Vec<BigRational>, Vec<BigRational>) {
        let raw: Vec<BigRational> = self.inverse.iter().map(|f| f.eval(coords)).collect();
        (
            self.diagonal.iter().map(|&i| raw[i].clone()).collect(),
            self.second.iter().map(|&i| raw[i].clone()).collect(),
        )
    }
}

/// Builds the chart of `M × M` with frame `X_a ⊕ X_a`, `0 ⊕ X_a` and the
/// diagonal as a coordinate subspace in adapted coordinates.
pub fn doubled_chart(chart: &FilteredChart) -> Result<DoubledChart> {
    if chart.normal().is_some() {
        return Err(Error::InvalidChart("doubling expects a chart without a marked submanifold".into()));
    }
    let report = chart.validate_lie_filtration();
    if !report.pass {
        return Err(Error::InvalidChart(report.witnesses[0].message.clone()));
    }
    let n = chart.dim();
    let nn = 2 * n;
    let q = chart.weights().to_vec();
    let mut diagonal = vec![0; n];
    let mut second = vec![0; n];
    let mut ranks = Vec::new();
    let mut pos = 0;
    let mut levels = q.clone();
    levels.dedup();
    for &level in &levels {
        let block: Vec<usize> = (0..n).filter(|&a| q[a] == level).collect();
        for &a in &block {
            diagonal[a] = pos;
            pos += 1;
        }
        for &a in &block {
            second[a] = pos;
            pos += 1;
        }
        ranks.push(pos);
    }

    // raw frame in (u, u′)
    let first_map: Vec<usize> = diagonal.clone();
    let second_map: Vec<usize> = second.clone();
    let mut frame = vec![VectorField::zero(nn); nn];
    for a in 0..n {
        let mut d = vec![Poly::zero(nn); nn];
        let mut s = vec![Poly::zero(nn); nn];
        for i in 0..n {
            let c = chart.field(a).component(i);
            d[diagonal[i]] = c.embed(nn, &first_map);
            let c2 = c.embed(nn, &second_map);
            d[second[i]] = c2.clone();
            s[second[i]] = c2;
        }
        frame[diagonal[a]] = VectorField::new(d)?;
        frame[second[a]] = VectorField::new(s)?;
    }
    let normal: Vec<usize> = second.clone();
    let raw = FilteredChart::new(ranks, frame, None)?;

    // (u, w = u′ − u)
    let mut to_w: Vec<Poly> = (0..nn).map(|i| Poly::var(nn, i)).collect();
    let mut from_w = to_w.clone();
    for a in 0..n {
        let (d, s) = (diagonal[a], second[a]);
        to_w[s] = &Poly::var(nn, s) - &Poly::var(nn, d);
        from_w[s] = &Poly::var(nn, s) + &Poly::var(nn, d);
    }
    let shifted = raw.recoordinatize(&to_w, &from_w, Some(normal.clone()))?;
    if chart_coordinates_adapted(&shifted)?.is_none() {
        return Ok(DoubledChart {
            chart: shifted,
            diagonal,
            second,
            forward: to_w,
            inverse: from_w,
        });
    }

    // adapted normal coordinates z_a(u, w) and their polynomial inverse
    let z = adapted_coordinates(&shifted)?;
    let mut to_z: Vec<Poly> = (0..nn).map(|i| Poly::var(nn, i)).collect();
    for (zc, &c) in z.iter().zip(&normal) {
        to_z[c] = zc.clone();
    }
    let from_z = polynomial_inverse(&to_z, &normal, &q_doubled(&q, &diagonal, &second))?;
    let adapted = shifted.recoordinatize(&to_z, &from_z, Some(normal))?;
    let forward = to_z
        .iter()
        .map(|f| f.substitute(&to_w))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let inverse = from_w
        .iter()
        .map(|f| f.substitute(&from_z))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(DoubledChart {
        chart: adapted,
        diagonal,
        second,
        forward,
        inverse,
    })
}

fn q_doubled(q: &[u32], diagonal: &[usize], second: &[usize]) -> Vec<u32> {
    let mut out = vec![0; 2 * q.len()];
    for (a, &w) in q.iter().enumerate() {
        out[diagonal[a]] = w;
        out[second[a]] = w;
    }
    out
}

/// Inverts `z = F(u, w)` (identity on the other variables) by substituting
/// `w = z − (F(u, w) − w)` until the result stabilizes.
fn polynomial_inverse(forward: &[Poly], normal: &[usize], weights: &[u32]) -> Result<Vec<Poly>> {
    let nn = forward.len();
    let mut guess: Vec<Poly> = (0..nn).map(|i| Poly::var(nn, i)).collect();
    let max_weight = weights.iter().copied().max().unwrap_or(1);
    for _ in 0..=(2 * max_weight as usize + 2) {
        let mut next = guess.clone();
        for &c in normal {
            let correction = &forward[c] - &Poly::var(nn, c);
            next[c] = &Poly::var(nn, c) - &correction.substitute(&guess)?;
        }
        if next == guess {
            let check: Vec<Poly> = forward
                .iter()
                .map(|f| f.substitute(&guess))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if check.iter().enumerate().all(|(i, p)| *p == Poly::var(nn, i)) {
                return Ok(guess);
            }
            break;
        }
        guess = next;
    }
    Err(Error::InvalidChart(
        "adapted coordinates on the doubled chart have no polynomial inverse".into(),
    ))
}

/// An arrow of the tangent groupoid.
#[derive(Debug, Clone, PartialEq)]
pub enum TGElement {
    /// `λ ≠ 0`: the pair `(p, q)`, from `q` to `p`.
    Pair {
        lambda: BigRational,
        p: Vec<BigRational>,
        q: Vec<BigRational>,
    },
    /// `λ = 0`: an element of the osculating group at `m`.
    Fiber { m: Vec<BigRational>, xi: GroupElement },
}

impl TGElement {
    pub fn lambda(&self) -> BigRational {
        match self {
            TGElement::Pair { lambda, .. } => lambda.clone(),
            TGElement::Fiber { .. } => BigRational::zero(),
        }
    }

    pub fn source(&self) -> (Vec<BigRational>, BigRational) {
        match self {
            TGElement::Pair { lambda, q, .. } => (q.clone(), lambda.clone()),
            TGElement::Fiber { m, .. } => (m.clone(), BigRational::zero()),
        }
    }

    pub fn target(&self) -> (Vec<BigRational>, BigRational) {
        match self {
            TGElement::Pair { lambda, p, .. } => (p.clone(), lambda.clone()),
            TGElement::Fiber { m, .. } => (m.clone(), BigRational::zero()),
        }
    }

    pub fn inverse(&self) -> TGElement {
        match self {
            TGElement::Pair { lambda, p, q } => TGElement::Pair {
                lambda: lambda.clone(),
                p: q.clone(),
                q: p.clone(),
            },
            TGElement::Fiber { m, xi } => TGElement::Fiber {
                m: m.clone(),
                xi: xi.neg(),
            },
        }
    }

    pub fn unit(m: &[BigRational], lambda: &BigRational) -> TGElement {
        if lambda.is_zero() {
            TGElement::Fiber {
                m: m.to_vec(),
                xi: GroupElement::zero(m.len()),
            }
        } else {
            TGElement::Pair {
                lambda: lambda.clone(),
                p: m.to_vec(),
                q: m.to_vec(),
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            TGElement::Pair { lambda, p, q } => json!({
                "lambda": Rat(lambda.clone()),
                "p": p.iter().cloned().map(Rat).collect::<Vec<_>>(),
                "q": q.iter().cloned().map(Rat).collect::<Vec<_>>(),
            }),
            TGElement::Fiber { m, xi } => json!({
                "lambda": Rat(BigRational::zero()),
                "m": m.iter().cloned().map(Rat).collect::<Vec<_>>(),
                "xi": xi.0.iter().cloned().map(Rat).collect::<Vec<_>>(),
            }),
        }
    }
}

/// The tangent groupoid of a chart, with osculating groups cached per point.
pub struct TangentGroupoid {
    chart: FilteredChart,
    doubled: DoubledChart,
    algebras: Mutex<BTreeMap<Vec<BigRational>, Arc<GradedNilpotentLieAlgebra>>>,
}

impl TangentGroupoid {
    pub fn new(chart: &FilteredChart) -> Result<Self> {
        Ok(TangentGroupoid {
            chart: chart.clone(),
            doubled: doubled_chart(chart)?,
            algebras: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn chart(&self) -> &FilteredChart {
        &self.chart
    }

    pub fn doubled(&self) -> &DoubledChart {
        &self.doubled
    }

    /// The osculating algebra of the original chart at `m`.
    pub fn algebra(&self, m: &[BigRational]) -> Result<Arc<GradedNilpotentLieAlgebra>> {
        if let Some(alg) = self.algebras.lock().expect("algebra cache poisoned").get(m) {
            return Ok(alg.clone());
        }
        let alg = Arc::new(osculating_algebra(&self.chart, m)?);
        self.algebras
            .lock()
            .expect("algebra cache poisoned")
            .insert(m.to_vec(), alg.clone());
        Ok(alg)
    }

    pub fn compose(&self, g: &TGElement, h: &TGElement) -> Result<TGElement> {
        match (g, h) {
            (TGElement::Pair { lambda: l1, p, q }, TGElement::Pair { lambda: l2, p: q2, q: w }) => {
                if l1 != l2 {
                    return Err(Error::NotComposable(format!("levels {l1} and {l2} differ")));
                }
                if q != q2 {
                    return Err(Error::NotComposable("source of the first arrow is not the target of the second".into()));
                }
                Ok(TGElement::Pair {
                    lambda: l1.clone(),
                    p: p.clone(),
                    q: w.clone(),
                })
            }
            (TGElement::Fiber { m: m1, xi }, TGElement::Fiber { m: m2, xi: eta }) => {
                if m1 != m2 {
                    return Err(Error::NotComposable("zero-fiber arrows over different points".into()));
                }
                let alg = self.algebra(m1)?;
                Ok(TGElement::Fiber {
                    m: m1.clone(),
                    xi: alg.bch_multiply(xi, eta)?,
                })
            }
            _ => Err(Error::NotComposable("arrows lie on different levels".into())),
        }
    }

    /// Point of the doubled chart at `(m, m)` in final coordinates.
    fn diagonal_point(&self, m: &[BigRational]) -> Vec<BigRational> {
        self.doubled.coordinates(m, m)
    }

    /// Zoomed normal coordinates `z̃(ξ)` of the zero-fiber arrow `ξ` at `m`.
    ///
    /// `ξ` is represented by the coset of `(1, ξ⁻¹)` in the doubled group and
    /// `z̃_c` is the orbit function of the class of `z_c`.
    pub fn fiber_map(&self, m: &[BigRational]) -> Result<FiberMap> {
        let n = self.chart.dim();
        let chart = self.doubled.chart();
        let point = self.diagonal_point(m);
        let nn = 2 * n;
        let q = self.chart.weights().to_vec();
        // doubled group coordinates as polynomials in ξ: S-components −ξ_a
        let mut iota = vec![Poly::zero(n); nn];
        for a in 0..n {
            iota[self.doubled.second[a]] = -Poly::var(n, a);
        }
        let polys = (0..n)
            .map(|a| {
                let c = self.doubled.second[a];
                let f = orbit_unchecked(chart, &point, &GradedClass::new(q[a], Poly::var(nn, c)));
                f.poly.substitute(&iota)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        FiberMap::new(polys, q)
    }

    /// The level-λ arrow whose target is `p` and whose zoomed normal coordinates are `z̃`.
    pub fn arrow_from(&self, lambda: &BigRational, p: &[BigRational], ztilde: &[BigRational]) -> TGElement {
        let q = self.chart.weights();
        let mut coords = self.doubled.coordinates(p, p);
        for (a, z) in ztilde.iter().enumerate() {
            coords[self.doubled.second[a]] = z * num_traits::pow(lambda.clone(), q[a] as usize);
        }
        let (pp, qq) = self.doubled.pair(&coords);
        TGElement::Pair {
            lambda: lambda.clone(),
            p: pp,
            q: qq,
        }
    }

    /// Zoomed normal coordinates of a level-λ arrow.
    pub fn zoomed(&self, g: &TGElement) -> Result<Vec<BigRational>> {
        match g {
            TGElement::Pair { lambda, p, q } => {
                let w = self.chart.weights();
                let coords = self.doubled.coordinates(p, q);
                Ok((0..self.chart.dim())
                    .map(|a| &coords[self.doubled.second[a]] / num_traits::pow(lambda.clone(), w[a] as usize))
                    .collect())
            }
            TGElement::Fiber { .. } => Err(Error::ZeroLambda),
        }
    }

    /// Errors `e(λ)` between zoomed pair composition and the BCH product.
    pub fn convergence_test(
        &self,
        m: &[BigRational],
        xi: &GroupElement,
        eta: &GroupElement,
        lambdas: &[BigRational],
    ) -> Result<ConvergenceReport> {
        let n = self.chart.dim();
        if m.len() != n || xi.dim() != n || eta.dim() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: if m.len() != n { m.len() } else if xi.dim() != n { xi.dim() } else { eta.dim() },
            }
            .into());
        }
        if lambdas.iter().any(Zero::is_zero) {
            return Err(Error::ZeroLambda);
        }
        let alg = self.algebra(m)?;
        let product = alg.bch_multiply(xi, eta)?;
        let fiber = self.fiber_map(m)?;
        let zx = fiber.apply(xi);
        let ze = fiber.apply(eta);
        let rows: Vec<Result<(BigRational, BigRational)>> = lambdas
            .par_iter()
            .map(|lambda| {
                let g = self.arrow_from(lambda, m, &zx);
                let (q1, _) = g.source();
                let h = self.arrow_from(lambda, &q1, &ze);
                let gh = self.compose(&g, &h)?;
                let zt = self.zoomed(&gh)?;
                let limit = fiber.invert(&zt)?;
                let err = limit
                    .0
                    .iter()
                    .zip(&product.0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(BigRational::zero(), |acc, x| if x > acc { x } else { acc });
                Ok((lambda.clone(), err))
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let fitted = fit_order(&rows);
        Ok(ConvergenceReport {
            xi: xi.0.iter().cloned().map(Rat).collect(),
            eta: eta.0.iter().cloned().map(Rat).collect(),
            product: product.0.iter().cloned().map(Rat).collect(),
            errors: rows
                .iter()
                .map(|(l, e)| ConvergenceRow {
                    lambda: Rat(l.clone()),
                    error: F64(rat_to_f64(e)),
                    exact_zero: e.is_zero(),
                })
                .collect(),
            fitted_order: fitted.map(F64),
            identically_zero: rows.iter().all(|(_, e)| e.is_zero()),
        })
    }

    /// Compares the zero-fiber algebra of the doubled chart at `(m, m)` with
    /// the osculating algebra of the original chart at `m`.
    pub fn zero_fiber_isomorphism(&self, m: &[BigRational]) -> Result<ValidationReport> {
        let (doubled_alg, tangential) = osculating_quotient(self.doubled.chart(), &self.diagonal_point(m))?;
        let original = self.algebra(m)?;
        let mut report = ValidationReport::new();
        let n = self.chart.dim();
        let diag = &self.doubled.diagonal;
        let sec = &self.doubled.second;
        let mut expected_tangential: Vec<usize> = diag.clone();
        expected_tangential.sort_unstable();
        if tangential != expected_tangential {
            report.fail("tangential fields are not the diagonal fields", json!({"tangential": tangential}));
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let want = original.structure_constant(a, b, c);
                    for (label, x, y) in [("second", sec, sec), ("diagonal", diag, diag)] {
                        let got = doubled_alg.structure_constant(x[a], y[b], x[c]);
                        if got != want {
                            report.fail(
                                format!("{label} bracket [e{a}, e{b}] has e{c}-coefficient {got}, expected {want}"),
                                json!({"a": a, "b": b, "c": c, "factor": label}),
                            );
                        }
                    }
                    // the two factors commute with each other modulo the diagonal
                    let cross = doubled_alg.structure_constant(diag[a], sec[b], sec[c]);
                    if *cross != *want {
                        report.fail(
                            format!("[diagonal e{a}, second e{b}] has e{c}-coefficient {cross}, expected {want}"),
                            json!({"a": a, "b": b, "c": c, "factor": "mixed"}),
                        );
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Weight-triangular polynomial map `ξ ↦ z̃` between group and normal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberMap {
    polys: Vec<Poly>,
    weights: Vec<u32>,
    /// Inverse linear part on each weight block.
    blocks: Vec<(Vec<usize>, linalg::Matrix)>,
}

impl FiberMap {
    fn new(polys: Vec<Poly>, weights: Vec<u32>) -> Result<Self> {
        let n = weights.len();
        let mut levels = weights.clone();
        levels.dedup();
        let mut blocks = Vec::new();
        for level in levels {
            let idx: Vec<usize> = (0..n).filter(|&a| weights[a] == level).collect();
            let m: linalg::Matrix = idx
                .iter()
                .map(|&c| {
                    idx.iter()
                        .map(|&a| {
                            let mut e = vec![0u32; n];
                            e[a] = 1;
                            polys[c].coeff(&e)
                        })
                        .collect()
                })
                .collect();
            let inv = linalg::inverse(&m)
                .ok_or_else(|| Error::RankDeficient(format!("fiber identification degenerates in weight {level}")))?;
            blocks.push((idx, inv));
        }
        Ok(FiberMap { polys, weights, blocks })
    }

    pub fn polys(&self) -> &[Poly] {
        &self.polys
    }

    pub fn apply(&self, xi: &GroupElement) -> Vec<BigRational> {
        self.polys.iter().map(|p| p.eval(&xi.0)).collect()
    }

    /// Solves `apply(ξ) = z` one weight block at a time.
    pub fn invert(&self, z: &[BigRational]) -> Result<GroupElement> {
        let n = self.weights.len();
        let mut xi = vec![BigRational::zero(); n];
        for (idx, inv) in &self.blocks {
            // with the block unknowns at zero, the residual is linear in them
            let current: Vec<BigRational> = idx.iter().map(|&c| self.polys[c].eval(&xi)).collect();
            let rhs: Vec<BigRational> = idx.iter().zip(&current).map(|(&c, v)| &z[c] - v).collect();
            let sol = linalg::mat_vec(inv, &rhs);
            for (&a, s) in idx.iter().zip(sol) {
                xi[a] = s;
            }
        }
        Ok(GroupElement(xi))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub lambda: Rat,
    pub error: F64,
    pub exact_zero: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub xi: Vec<Rat>,
    pub eta: Vec<Rat>,
    pub product: Vec<Rat>,
    pub errors: Vec<ConvergenceRow>,
    /// Least-squares slope of `log e` against `log λ` over the nonzero errors.
    pub fitted_order: Option<F64>,
    pub identically_zero: bool,
}

/// The default sequence `λ = 2⁻¹, …, 2⁻¹⁰`.
pub fn default_lambdas() -> Vec<BigRational> {
    (1..=10)
        .map(|k| BigRational::new(BigInt::one(), BigInt::from(2).pow(k)))
        .collect()
}

fn fit_order(rows: &[(BigRational, BigRational)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, e)| !e.is_zero())
        .map(|(l, e)| (rat_to_f64(l).ln(), rat_to_f64(e).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::fixtures::{engel, heisenberg, p};
    use crate::nilpotent::random_rational_vector;
    use crate::poly::rat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(xs: &[i64]) -> Vec<BigRational> {
        xs.iter().map(|&x| rat(x, 1)).collect()
    }

    /// Heisenberg-type frame with a non-homogeneous twist: X2 = ∂y + (x + x²)∂z.
    fn twisted() -> FilteredChart {
        let x = p(3, 0);
        let x1 = VectorField::coordinate(3, 0);
        let x2 = VectorField::new(vec![Poly::zero(3), Poly::one(3), &x + &x.pow(2)]).unwrap();
        FilteredChart::new(vec![2, 3], vec![x1, x2, VectorField::coordinate(3, 2)], None).unwrap()
    }

    #[test]
    fn doubled_flat_is_classical() {
        let flat = FilteredChart::flat(vec![2], None).unwrap();
        let d = doubled_chart(&flat).unwrap();
        assert_eq!(d.chart().ranks(), &[4]);
        assert_eq!(d.diagonal_index(), &[0, 1]);
        assert_eq!(d.second_index(), &[2, 3]);
        // w = u′ − u
        assert_eq!(d.forward()[2], &p(4, 2) - &p(4, 0));
        assert!(d.chart().validate_lie_filtration().pass);
    }

    #[test]
    fn doubled_heisenberg() {
        let d = doubled_chart(&heisenberg()).unwrap();
        assert_eq!(d.chart().ranks(), &[4, 6]);
        assert_eq!(d.chart().normal(), Some(&[2usize, 3, 5][..]));
        assert!(d.chart().validate_lie_filtration().pass);
        assert!(chart_coordinates_adapted(d.chart()).unwrap().is_none());
        let id: Vec<Poly> = d
            .forward()
            .iter()
            .map(|f| f.substitute(d.inverse()).unwrap())
            .collect();
        assert!(id.iter().enumerate().all(|(i, f)| *f == p(6, i)));
        let e = doubled_chart(&engel()).unwrap();
        assert_eq!(e.chart().ranks(), &[4, 6, 8]);
        assert!(e.chart().validate_lie_filtration().pass);
    }

    #[test]
    fn zero_fiber_matches_osculating_algebra() {
        for chart in [heisenberg(), engel(), twisted()] {
            let tg = TangentGroupoid::new(&chart).unwrap();
            for m in [vec![rat(0, 1); chart.dim()], (0..chart.dim()).map(|i| rat(i as i64 + 1, 3)).collect()] {
                let report = tg.zero_fiber_isomorphism(&m).unwrap();
                assert!(report.pass, "{report:?}");
            }
        }
    }

    #[test]
    fn structure_maps() {
        let tg = TangentGroupoid::new(&heisenberg()).unwrap();
        let l = rat(1, 2);
        let (a, b, c) = (r(&[1, 2, 3]), r(&[0, 1, 0]), r(&[5, -1, 2]));
        let g = TGElement::Pair { lambda: l.clone(), p: a.clone(), q: b.clone() };
        let h = TGElement::Pair { lambda: l.clone(), p: b.clone(), q: c.clone() };
        assert_eq!(
            tg.compose(&g, &h).unwrap(),
            TGElement::Pair { lambda: l.clone(), p: a.clone(), q: c.clone() }
        );
        assert!(matches!(tg.compose(&h, &g), Err(Error::NotComposable(_))));
        assert_eq!(g.inverse(), TGElement::Pair { lambda: l.clone(), p: b.clone(), q: a.clone() });
        let u = TGElement::unit(&a, &l);
        assert_eq!(u.source(), u.target());
        assert_eq!(u.source(), (a.clone(), l.clone()));

        let m = r(&[0, 0, 0]);
        let xi = GroupElement::from_ints(&[1, 0, 0]);
        let eta = GroupElement::from_ints(&[0, 1, 0]);
        let f = |x: &GroupElement| TGElement::Fiber { m: m.clone(), xi: x.clone() };
        assert_eq!(
            tg.compose(&f(&xi), &f(&eta)).unwrap(),
            f(&GroupElement(vec![rat(1, 1), rat(1, 1), rat(1, 2)]))
        );
        assert_eq!(tg.compose(&f(&xi), &f(&xi).inverse()).unwrap(), TGElement::unit(&m, &rat(0, 1)));
        assert!(matches!(tg.compose(&f(&xi), &g), Err(Error::NotComposable(_))));
    }

    #[test]
    fn groupoid_axioms_random() {
        let tg = TangentGroupoid::new(&engel()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let l = rat(1, 3);
            let pts: Vec<Vec<BigRational>> = (0..4).map(|_| random_rational_vector(&mut rng, 4, 2, 3)).collect();
            let arrow = |i: usize, j: usize| TGElement::Pair { lambda: l.clone(), p: pts[i].clone(), q: pts[j].clone() };
            let (f, g, h) = (arrow(0, 1), arrow(1, 2), arrow(2, 3));
            let left = tg.compose(&tg.compose(&f, &g).unwrap(), &h).unwrap();
            let right = tg.compose(&f, &tg.compose(&g, &h).unwrap()).unwrap();
            assert_eq!(left, right);
            assert_eq!(tg.compose(&TGElement::unit(&pts[0], &l), &f).unwrap(), f);
            assert_eq!(tg.compose(&f, &f.inverse()).unwrap(), TGElement::unit(&pts[0], &l));

            let m = random_rational_vector(&mut rng, 4, 1, 2);
            let e = |x: Vec<BigRational>| TGElement::Fiber { m: m.clone(), xi: GroupElement(x) };
            let (a, b, c) = (
                e(random_rational_vector(&mut rng, 4, 1, 3)),
                e(random_rational_vector(&mut rng, 4, 1, 3)),
                e(random_rational_vector(&mut rng, 4, 1, 3)),
            );
            let left = tg.compose(&tg.compose(&a, &b).unwrap(), &c).unwrap();
            let right = tg.compose(&a, &tg.compose(&b, &c).unwrap()).unwrap();
            assert_eq!(left, right);
            assert_eq!(tg.compose(&a, &a.inverse()).unwrap(), TGElement::unit(&m, &rat(0, 1)));
            assert_eq!(tg.compose(&TGElement::unit(&m, &rat(0, 1)), &a).unwrap(), a);
        }
    }

    #[test]
    fn flat_convergence_is_exact() {
        let tg = TangentGroupoid::new(&FilteredChart::flat(vec![3], None).unwrap()).unwrap();
        let xi = GroupElement(vec![rat(1, 3), rat(-2, 7), rat(1, 5)]);
        let eta = GroupElement(vec![rat(1, 5), rat(3, 11), rat(-1, 9)]);
        let report = tg.convergence_test(&r(&[0, 0, 0]), &xi, &eta, &default_lambdas()).unwrap();
        assert!(report.identically_zero);
        assert!(report.fitted_order.is_none());
    }

    #[test]
    fn units_compose_trivially() {
        let tg = TangentGroupoid::new(&twisted()).unwrap();
        let xi = GroupElement(vec![rat(1, 2), rat(-1, 3), rat(1, 4)]);
        let zero = GroupElement::zero(3);
        let m = r(&[0, 0, 0]);
        assert!(tg.convergence_test(&m, &xi, &zero, &default_lambdas()).unwrap().identically_zero);
        assert!(tg.convergence_test(&m, &zero, &xi, &default_lambdas()).unwrap().identically_zero);
    }

    #[test]
    fn heisenberg_convergence() {
        let tg = TangentGroupoid::new(&heisenberg()).unwrap();
        let xi = GroupElement::from_ints(&[1, 0, 0]);
        let eta = GroupElement::from_ints(&[0, 1, 0]);
        let report = tg.convergence_test(&r(&[0, 0, 0]), &xi, &eta, &default_lambdas()).unwrap();
        eprintln!("{}", serde_json::to_string(&report).unwrap());
        let last = report.errors.last().unwrap().error.0;
        assert!(last < 1e-6);
    }

    #[test]
    fn twisted_convergence_rate() {
        let tg = TangentGroupoid::new(&twisted()).unwrap();
        let xi = GroupElement(vec![rat(1, 2), rat(-1, 3), rat(1, 4)]);
        let eta = GroupElement(vec![rat(-1, 5), rat(2, 3), rat(1, 7)]);
        let report = tg.convergence_test(&r(&[0, 0, 0]), &xi, &eta, &default_lambdas()).unwrap();
        eprintln!("{}", serde_json::to_string(&report).unwrap());
        assert!(report.fitted_order.unwrap().0 >= 0.8);
    }
}
