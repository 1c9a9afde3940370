//! Privileged coordinates at a point, adapted coordinates along a marked
//! submanifold, the Carnot predicate and the model Euler-like field.

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::chart::{check_invertible_at, FilteredChart, Locus, VanishingOrder, VectorField};
use crate::error::{Error, PolyError, Result};
use crate::linalg::{self, Matrix};
use crate::nilpotent::{orbit_homomorphism, GradedClass};
use crate::poly::{exponents_with_weight, Exponents, Poly};

/// Exponent vectors of total degree `lo..=hi` in `n` variables, by degree and
/// then with `u_1` before `u_2` before ….
fn monomials_by_degree(n: usize, lo: u32, hi: u32) -> Vec<Exponents> {
    exponents_with_weight(&vec![1; n], lo, hi)
}

/// `Π (u_i − v_i)^{β_i}`.
fn shifted_monomial(beta: &[u32], v: &[BigRational]) -> Poly {
    let n = v.len();
    let mut m = Poly::one(n);
    for (i, &k) in beta.iter().enumerate() {
        if k > 0 {
            let shifted = &Poly::var(n, i) - &Poly::constant(n, v[i].clone());
            m = &m * &shifted.pow(k);
        }
    }
    m
}

/// Privileged coordinates centred at `v`: the members of the dual family
/// `(X^α f_β)(v) = δ_{αβ}` (all `α, β` of weighted order `≤ r`) indexed by the
/// unit multi-indices, found among polynomials of total degree `≤ r` in `u − v`.
pub fn privileged_coordinates(chart: &FilteredChart, v: &[BigRational]) -> Result<Vec<Poly>> {
    let n = chart.dim();
    if v.len() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            found: v.len(),
        }
        .into());
    }
    check_invertible_at(chart, v)?;
    let r = chart.step();
    let q = chart.weights().to_vec();
    let alphas = exponents_with_weight(&q, 0, r);
    let betas = monomials_by_degree(n, 0, r);
    let candidates: Vec<Poly> = betas.iter().map(|b| shifted_monomial(b, v)).collect();
    let matrix = pairing_matrix(chart, &alphas, &candidates, r, |g| g.eval(v));
    let rank = linalg::rank(&matrix);
    if rank < alphas.len() {
        return Err(Error::RankDeficient(format!(
            "pairing matrix has rank {rank} < {} at {v:?}",
            alphas.len()
        )));
    }
    let mut coords = Vec::with_capacity(n);
    for a in 0..n {
        let mut unit = vec![0u32; n];
        unit[a] = 1;
        let rhs: Vec<BigRational> = alphas
            .iter()
            .map(|al| if *al == unit { BigRational::one() } else { BigRational::zero() })
            .collect();
        let sol = linalg::solve(&matrix, &rhs).ok_or_else(|| Error::RankDeficient("dual system inconsistent".into()))?;
        coords.push(combine(&candidates, &sol, n));
    }
    let report = check_privileged(chart, v, &coords)?;
    if let Some(msg) = report {
        return Err(Error::RankDeficient(format!("post-check failed: {msg}")));
    }
    Ok(coords)
}

/// `M[α][β] = eval(X^α g_β)` over all frame multi-indices `α` listed.
fn pairing_matrix(
    chart: &FilteredChart,
    alphas: &[Exponents],
    candidates: &[Poly],
    cap: u32,
    eval: impl Fn(&Poly) -> BigRational,
) -> Matrix {
    let mut matrix = vec![vec![BigRational::zero(); candidates.len()]; alphas.len()];
    for (j, g) in candidates.iter().enumerate() {
        let table = chart.frame_monomial_table(g, cap);
        for (i, alpha) in alphas.iter().enumerate() {
            matrix[i][j] = eval(&table[alpha]);
        }
    }
    matrix
}

fn combine(candidates: &[Poly], coeffs: &[BigRational], n: usize) -> Poly {
    let mut f = Poly::zero(n);
    for (g, c) in candidates.iter().zip(coeffs) {
        if !c.is_zero() {
            f += &g.scale(c);
        }
    }
    f
}

/// Re-verifies the two privileged conditions through the chart module;
/// returns a description of the first failure.
pub fn check_privileged(chart: &FilteredChart, v: &[BigRational], coords: &[Poly]) -> Result<Option<String>> {
    let q = chart.weights();
    let r = chart.step();
    for (b, x) in coords.iter().enumerate() {
        let order = chart.vanishing_h_order(x, &Locus::Point(v.to_vec()), r)?;
        if order != VanishingOrder::Exact(q[b]) {
            return Ok(Some(format!("coordinate {b} vanishes to H-order {order}, expected {}", q[b])));
        }
        for a in 0..chart.dim() {
            let value = chart.apply_field(a, x).eval(v);
            let expected = if a == b { BigRational::one() } else { BigRational::zero() };
            if value != expected {
                return Ok(Some(format!("X{a}(x{b}) = {value} at the centre")));
            }
        }
    }
    Ok(None)
}

/// Adapted coordinates `z_c`, one per normal frame field, with `z_c` vanishing
/// on `M` to H-order `q_c` and `X_c(z_d) = δ_cd` on `M`.
pub fn adapted_coordinates(chart: &FilteredChart) -> Result<Vec<Poly>> {
    let normal = chart.normal().ok_or(Error::NoSubmanifold)?.to_vec();
    let n = chart.dim();
    let origin = vec![BigRational::zero(); n];
    if normal.len() == n {
        // M is the origin: the point problem is the whole story
        return privileged_coordinates(chart, &origin);
    }
    let via_series = adapted_by_correction(chart, &normal);
    match via_series {
        Ok(z) if check_adapted(chart, &z)?.is_none() => return Ok(z),
        Ok(_) => log::debug!("matrix correction did not produce adapted coordinates; solving directly"),
        Err(e) => log::debug!("matrix correction unavailable ({e}); solving directly"),
    }
    let r = chart.step();
    for extra in 0..=4 {
        if let Some(z) = adapted_by_ansatz(chart, &normal, r + extra)? {
            if let Some(msg) = check_adapted(chart, &z)? {
                return Err(Error::RankDeficient(format!("post-check failed: {msg}")));
            }
            return Ok(z);
        }
    }
    Err(Error::RankDeficient(
        "no polynomial adapted coordinates of moderate degree".into(),
    ))
}

/// Point problem at the origin followed by `f_β = Σ_γ (h⁻¹)_{γβ} g_γ` with
/// `h_{αβ} = X^α g_β` on `M`.
fn adapted_by_correction(chart: &FilteredChart, normal: &[usize]) -> Result<Vec<Poly>> {
    let n = chart.dim();
    let r = chart.step();
    let q = chart.weights().to_vec();
    let alphas: Vec<Exponents> = exponents_with_weight(&q, 1, r)
        .into_iter()
        .filter(|al| al.iter().enumerate().all(|(i, &k)| k == 0 || normal.contains(&i)))
        .collect();
    // monomials vanishing on M
    let betas: Vec<Exponents> = monomials_by_degree(n, 1, r)
        .into_iter()
        .filter(|b| normal.iter().any(|&c| b[c] > 0))
        .collect();
    let candidates: Vec<Poly> = betas
        .iter()
        .map(|b| Poly::monomial(n, b.clone(), BigRational::one()))
        .collect();
    let matrix = pairing_matrix(chart, &alphas, &candidates, r, Poly::constant_term);
    let mut g = Vec::with_capacity(alphas.len());
    for target in &alphas {
        let rhs: Vec<BigRational> = alphas
            .iter()
            .map(|al| if al == target { BigRational::one() } else { BigRational::zero() })
            .collect();
        let sol = linalg::solve(&matrix, &rhs)
            .ok_or_else(|| Error::RankDeficient("normal pairing matrix is rank-deficient at the origin".into()))?;
        g.push(combine(&candidates, &sol, n));
    }
    // h on M, as polynomials in the tangential variables
    let m = alphas.len();
    let h: Vec<Vec<Poly>> = alphas
        .iter()
        .map(|al| g.iter().map(|gb| chart.frame_monomial_apply(al, gb).restrict_zero(normal)).collect())
        .collect();
    let mut nil = h.clone();
    for (i, row) in nil.iter_mut().enumerate() {
        row[i] -= &Poly::one(n);
    }
    // (I + N)⁻¹ = Σ (−N)^k, which terminates when N is nilpotent
    let mut inverse = identity_poly(m, n);
    let mut power = identity_poly(m, n);
    let mut terminated = false;
    for k in 1..=m + 1 {
        power = poly_matmul(&power, &nil, n);
        if power.iter().flatten().all(Poly::is_zero) {
            terminated = true;
            break;
        }
        for (row_i, row_p) in inverse.iter_mut().zip(&power) {
            for (x, p) in row_i.iter_mut().zip(row_p) {
                if k % 2 == 1 {
                    *x -= p;
                } else {
                    *x += p;
                }
            }
        }
    }
    if !terminated {
        return Err(Error::RankDeficient("h − 1 is not nilpotent on M".into()));
    }
    let mut z = Vec::with_capacity(normal.len());
    for &c in normal {
        let mut unit = vec![0u32; n];
        unit[c] = 1;
        let beta = alphas
            .iter()
            .position(|al| *al == unit)
            .ok_or_else(|| Error::InvalidChart(format!("normal field {c} has weight above the step")))?;
        let mut f = Poly::zero(n);
        for (gamma, gg) in g.iter().enumerate() {
            let k = &inverse[gamma][beta];
            if !k.is_zero() {
                f += &(k * gg);
            }
        }
        z.push(f);
    }
    Ok(z)
}

fn identity_poly(m: usize, n: usize) -> Vec<Vec<Poly>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { Poly::one(n) } else { Poly::zero(n) }).collect())
        .collect()
}

fn poly_matmul(a: &[Vec<Poly>], b: &[Vec<Poly>], n: usize) -> Vec<Vec<Poly>> {
    let m = a.len();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut acc = Poly::zero(n);
                    for k in 0..m {
                        if !a[i][k].is_zero() && !b[k][j].is_zero() {
                            acc += &(&a[i][k] * &b[k][j]);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Solves the defining conditions of adapted coordinates directly as a linear
/// system over monomials vanishing on `M` of total degree `≤ degree`.
fn adapted_by_ansatz(chart: &FilteredChart, normal: &[usize], degree: u32) -> Result<Option<Vec<Poly>>> {
    let n = chart.dim();
    let q = chart.weights().to_vec();
    let betas: Vec<Exponents> = monomials_by_degree(n, 1, degree)
        .into_iter()
        .filter(|b| normal.iter().any(|&c| b[c] > 0))
        .collect();
    let candidates: Vec<Poly> = betas
        .iter()
        .map(|b| Poly::monomial(n, b.clone(), BigRational::one()))
        .collect();
    let max_q = normal.iter().map(|&c| q[c]).max().unwrap_or(1);
    let tables: Vec<_> = candidates
        .iter()
        .map(|g| chart.frame_monomial_table(g, max_q.saturating_sub(1).max(1)))
        .collect();
    let mut out = Vec::with_capacity(normal.len());
    for &c in normal {
        // (operator image, target) pairs; each restricted image must equal the target on M
        let mut rows: Vec<Vec<BigRational>> = Vec::new();
        let mut rhs: Vec<BigRational> = Vec::new();
        let mut push_condition = |images: Vec<Poly>, target: BigRational| {
            let mut monos: std::collections::BTreeSet<Exponents> = std::collections::BTreeSet::new();
            for img in &images {
                for (e, _) in img.terms() {
                    monos.insert(e.clone());
                }
            }
            let zero_exp = vec![0u32; n];
            monos.insert(zero_exp.clone());
            for e in monos {
                rows.push(images.iter().map(|img| img.coeff(&e)).collect());
                rhs.push(if e == zero_exp { target.clone() } else { BigRational::zero() });
            }
        };
        for alpha in exponents_with_weight(&q, 1, q[c].saturating_sub(1)) {
            let images = tables.iter().map(|t| t[&alpha].restrict_zero(normal)).collect();
            push_condition(images, BigRational::zero());
        }
        for &d in normal {
            let images = candidates
                .iter()
                .map(|g| chart.apply_field(d, g).restrict_zero(normal))
                .collect();
            let target = if d == c { BigRational::one() } else { BigRational::zero() };
            push_condition(images, target);
        }
        match linalg::solve(&rows, &rhs) {
            Some(sol) => out.push(combine(&candidates, &sol, n)),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

/// Checks both adapted-coordinate conditions by exact restriction to `M`.
pub fn check_adapted(chart: &FilteredChart, z: &[Poly]) -> Result<Option<String>> {
    let normal = chart.normal().ok_or(Error::NoSubmanifold)?;
    let q = chart.weights();
    if z.len() != normal.len() {
        return Ok(Some(format!("expected {} coordinates, got {}", normal.len(), z.len())));
    }
    for (zc, &c) in z.iter().zip(normal) {
        let order = chart.vanishing_h_order(zc, &Locus::Marked, q[c])?;
        if !order.at_least(q[c]) {
            return Ok(Some(format!("z{c} vanishes on M only to H-order {order}")));
        }
        for &d in normal {
            let value = chart.apply_field(d, zc).restrict_zero(normal);
            let expected = if c == d { Poly::one(chart.dim()) } else { Poly::zero(chart.dim()) };
            if value != expected {
                return Ok(Some(format!("X{d}(z{c}) = {value} on M")));
            }
        }
    }
    Ok(None)
}

/// Whether the chart's own normal coordinates are adapted to `M`.
pub fn chart_coordinates_adapted(chart: &FilteredChart) -> Result<Option<String>> {
    let normal = chart.normal().ok_or(Error::NoSubmanifold)?;
    let z: Vec<Poly> = normal.iter().map(|&c| Poly::var(chart.dim(), c)).collect();
    check_adapted(chart, &z)
}

/// Outcome of [`is_carnot`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarnotCheck {
    pub carnot: bool,
    pub witness: Option<CarnotWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarnotWitness {
    pub index: usize,
    /// Orbit image of `⟨x_index⟩`.
    pub image: Poly,
    /// `image − (−ξ_index)`.
    pub deviation: Poly,
}

/// Carnot predicate: every `⟨x_a⟩_{q_a}` must map under the orbit homomorphism
/// to `−ξ_a`, the `a`-th exponential coordinate of `h⁻¹` (the orbit map uses
/// `h ↦ ε(h⁻¹ a)`).
pub fn is_carnot(chart: &FilteredChart, v: &[BigRational], coords: &[Poly]) -> Result<CarnotCheck> {
    let n = chart.dim();
    if coords.len() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            found: coords.len(),
        }
        .into());
    }
    let q = chart.weights();
    for (a, x) in coords.iter().enumerate() {
        let image = orbit_homomorphism(chart, v, &GradedClass::new(q[a], x.clone()))?.poly;
        let expected = -Poly::var(n, a);
        if image != expected {
            let deviation = &image - &expected;
            return Ok(CarnotCheck {
                carnot: false,
                witness: Some(CarnotWitness { index: a, image, deviation }),
            });
        }
    }
    Ok(CarnotCheck {
        carnot: true,
        witness: None,
    })
}

/// The single rational `c` making `coords` Carnot after `x_index ↦ x_index + c·m`,
/// if one exists.
pub fn carnot_repair(
    chart: &FilteredChart,
    v: &[BigRational],
    coords: &[Poly],
    index: usize,
    m: &Poly,
) -> Result<Option<BigRational>> {
    let n = chart.dim();
    let q = chart.weights();
    let base = orbit_homomorphism(chart, v, &GradedClass::new(q[index], coords[index].clone()))?.poly;
    let deviation = &base + &Poly::var(n, index);
    let dir = orbit_homomorphism(chart, v, &GradedClass::new(q[index], m.clone()))?.poly;
    // deviation + c·dir = 0
    let Some((e, d)) = dir.terms().next() else {
        return Ok(if deviation.is_zero() { Some(BigRational::zero()) } else { None });
    };
    let c = -deviation.coeff(e) / d;
    if !(&deviation + &dir.scale(&c)).is_zero() {
        return Ok(None);
    }
    let mut repaired = coords.to_vec();
    repaired[index] = &repaired[index] + &m.scale(&c);
    Ok(if is_carnot(chart, v, &repaired)?.carnot { Some(c) } else { None })
}

/// `Σ_{c ∈ normal} q_c u_c ∂/∂u_c`.
pub fn model_euler_field(weights: &[u32], normal: &[usize]) -> VectorField {
    let n = weights.len();
    let mut comps = vec![Poly::zero(n); n];
    for &c in normal {
        comps[c] = Poly::var(n, c).scale(&BigRational::from_integer(weights[c].into()));
    }
    VectorField::from_components(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::fixtures::{engel, heisenberg};
    use crate::poly::rat;

    fn origin(n: usize) -> Vec<BigRational> {
        vec![rat(0, 1); n]
    }

    #[test]
    fn flat_privileged_coordinates_are_the_coordinates() {
        let flat = FilteredChart::flat(vec![3], None).unwrap();
        let x = privileged_coordinates(&flat, &origin(3)).unwrap();
        assert_eq!(x, (0..3).map(|i| Poly::var(3, i)).collect::<Vec<_>>());
    }

    #[test]
    fn heisenberg_privileged_coordinates() {
        let h = heisenberg();
        let x = privileged_coordinates(&h, &origin(3)).unwrap();
        assert!(check_privileged(&h, &origin(3), &x).unwrap().is_none());
        // (x, y, z) is also valid
        let plain: Vec<Poly> = (0..3).map(|i| Poly::var(3, i)).collect();
        assert!(check_privileged(&h, &origin(3), &plain).unwrap().is_none());
        let v = vec![rat(1, 2), rat(-2, 1), rat(3, 1)];
        let xv = privileged_coordinates(&h, &v).unwrap();
        assert!(check_privileged(&h, &v, &xv).unwrap().is_none());
    }

    #[test]
    fn engel_privileged_orders() {
        let e = engel();
        let x = privileged_coordinates(&e, &origin(4)).unwrap();
        let orders: Vec<_> = x
            .iter()
            .map(|xa| e.vanishing_h_order(xa, &Locus::Origin, 3).unwrap())
            .collect();
        assert_eq!(
            orders,
            vec![
                VanishingOrder::Exact(1),
                VanishingOrder::Exact(1),
                VanishingOrder::Exact(2),
                VanishingOrder::Exact(3)
            ]
        );
    }

    #[test]
    fn adapted_on_heisenberg_x_axis() {
        let h = heisenberg().with_normal(Some(vec![1, 2])).unwrap();
        let z = adapted_coordinates(&h).unwrap();
        assert!(check_adapted(&h, &z).unwrap().is_none());
        // the raw coordinate z is not adapted: X2 z = x on the x-axis
        assert!(chart_coordinates_adapted(&h).unwrap().is_some());
        assert_eq!(z[1], &Poly::var(3, 2) - &(&Poly::var(3, 0) * &Poly::var(3, 1)));
    }

    #[test]
    fn adapted_on_heisenberg_z_axis_and_point() {
        let h = heisenberg().with_normal(Some(vec![0, 1])).unwrap();
        let z = adapted_coordinates(&h).unwrap();
        assert!(check_adapted(&h, &z).unwrap().is_none());
        let p = heisenberg().with_normal(Some(vec![0, 1, 2])).unwrap();
        let zp = adapted_coordinates(&p).unwrap();
        assert_eq!(zp, privileged_coordinates(&heisenberg(), &origin(3)).unwrap());
    }

    #[test]
    fn carnot_predicate() {
        let flat = FilteredChart::flat(vec![3], None).unwrap();
        let u: Vec<Poly> = (0..3).map(|i| Poly::var(3, i)).collect();
        assert!(is_carnot(&flat, &origin(3), &u).unwrap().carnot);
        let h = heisenberg();
        let check = is_carnot(&h, &origin(3), &u).unwrap();
        assert!(!check.carnot);
        let w = check.witness.unwrap();
        assert_eq!(w.index, 2);
        assert_eq!(w.deviation, (&Poly::var(3, 0) * &Poly::var(3, 1)).scale(&rat(1, 2)));
        let xy = &Poly::var(3, 0) * &Poly::var(3, 1);
        let c = carnot_repair(&h, &origin(3), &u, 2, &xy).unwrap().unwrap();
        assert_eq!(c, rat(-1, 2));
        let mut repaired = u.clone();
        repaired[2] = &repaired[2] + &xy.scale(&c);
        assert!(is_carnot(&h, &origin(3), &repaired).unwrap().carnot);
    }

    #[test]
    fn model_fields() {
        let e = model_euler_field(&[1, 1, 1], &[0, 1, 2]);
        for i in 0..3 {
            assert_eq!(e.component(i), &Poly::var(3, i));
        }
        let eh = model_euler_field(&[1, 1, 2], &[2]);
        assert!(eh.component(0).is_zero());
        assert_eq!(eh.component(2), &Poly::var(3, 2).scale(&rat(2, 1)));
    }
}
