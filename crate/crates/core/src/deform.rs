//! The deformation space in its global chart `(λ, y, z̃)` with `z̃_c = z_c λ^{-q_c}`.
//!
//! Coordinates of the extended ring are ordered `[λ, u_1, …, u_n]` where `u_a`
//! stands for `y_a` when the frame index is tangential and for `z̃_a` when it
//! is normal. The chart's own coordinates must be adapted to `M`.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chart::{lie_bracket, FilteredChart, Locus, VectorField};
use crate::coords::{adapted_coordinates, chart_coordinates_adapted};
use crate::error::{Error, PolyError, Result};
use crate::poly::{exponents_with_weight, Poly};
use crate::report::{floats, ValidationReport, F64};

/// An element `Σ_q a_q t^{-q}` of the Rees algebra, keyed by `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReesElement {
    terms: BTreeMap<i32, Poly>,
}

impl ReesElement {
    /// Checks that `a_q` vanishes on `M` to H-order `q` for every `q > 0`.
    pub fn new(chart: &FilteredChart, terms: impl IntoIterator<Item = (i32, Poly)>) -> Result<Self> {
        let mut map: BTreeMap<i32, Poly> = BTreeMap::new();
        for (q, a) in terms {
            if a.nvars() != chart.dim() {
                return Err(PolyError::DimensionMismatch {
                    expected: chart.dim(),
                    found: a.nvars(),
                }
                .into());
            }
            let entry = map.entry(q).or_insert_with(|| Poly::zero(chart.dim()));
            *entry += &a;
        }
        map.retain(|_, p| !p.is_zero());
        let element = ReesElement { terms: map };
        element.validate(chart)?;
        Ok(element)
    }

    fn validate(&self, chart: &FilteredChart) -> Result<()> {
        chart.normal().ok_or(Error::NoSubmanifold)?;
        for (&q, a) in &self.terms {
            if q > 0 {
                let order = chart.vanishing_h_order(a, &Locus::Marked, q as u32)?;
                if !order.at_least(q as u32) {
                    return Err(Error::InvalidRees {
                        q,
                        order: order.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn terms(&self) -> &BTreeMap<i32, Poly> {
        &self.terms
    }

    /// The element `t`.
    pub fn t(chart: &FilteredChart) -> Result<Self> {
        ReesElement::new(chart, [(-1, Poly::one(chart.dim()))])
    }
}

/// Laurent convolution; the product is re-validated.
pub fn rees_multiply(chart: &FilteredChart, f: &ReesElement, g: &ReesElement) -> Result<ReesElement> {
    let mut terms: Vec<(i32, Poly)> = Vec::new();
    for (p, a) in &f.terms {
        for (q, b) in &g.terms {
            if a.nvars() != b.nvars() {
                return Err(PolyError::DimensionMismatch {
                    expected: a.nvars(),
                    found: b.nvars(),
                }
                .into());
            }
            terms.push((p + q, a * b));
        }
    }
    ReesElement::new(chart, terms)
}

/// A point `(λ, y, z̃)` of the deformation-space chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformPoint {
    #[serde(default)]
    pub lambda: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// The deformation space of a chart whose coordinates are adapted to `M`.
#[derive(Debug, Clone)]
pub struct DeformationSpace {
    chart: FilteredChart,
    normal: Vec<usize>,
    tangential: Vec<usize>,
}

impl DeformationSpace {
    pub fn new(chart: &FilteredChart) -> Result<Self> {
        let normal = chart.normal().ok_or(Error::NoSubmanifold)?.to_vec();
        if let Some(msg) = chart_coordinates_adapted(chart)? {
            return Err(Error::NotAdapted(msg));
        }
        Ok(DeformationSpace {
            chart: chart.clone(),
            tangential: chart.tangential(),
            normal,
        })
    }

    pub fn chart(&self) -> &FilteredChart {
        &self.chart
    }

    pub fn normal(&self) -> &[usize] {
        &self.normal
    }

    pub fn tangential(&self) -> &[usize] {
        &self.tangential
    }

    fn weight(&self, i: usize) -> u32 {
        self.chart.weights()[i]
    }

    /// Pulls a chart function back to the extended ring via `z_c = λ^{q_c} z̃_c`.
    pub fn substitute(&self, f: &Poly) -> Result<Poly> {
        let n = self.chart.dim();
        let nv = n + 1;
        let lambda = Poly::var(nv, 0);
        let images: Vec<Poly> = (0..n)
            .map(|i| {
                let u = Poly::var(nv, i + 1);
                if self.normal.contains(&i) {
                    &lambda.pow(self.weight(i)) * &u
                } else {
                    u
                }
            })
            .collect();
        Ok(f.substitute(&images)?)
    }

    /// `Σ_q a_q(y, λ^q z̃) λ^{-q}` as a polynomial in `(λ, y, z̃)`.
    pub fn rees_symbol(&self, f: &ReesElement) -> Result<Poly> {
        let nv = self.chart.dim() + 1;
        let mut out = Poly::zero(nv);
        for (&q, a) in &f.terms {
            let s = self.substitute(a)?;
            let term = if q > 0 {
                s.div_var_power(0, q as u32).ok_or_else(|| {
                    Error::NonExactDivision(format!("coefficient of t^-{q} is not divisible by λ^{q}"))
                })?
            } else {
                s.mul_var_power(0, (-q) as u32)
            };
            out += &term;
        }
        Ok(out)
    }

    pub fn rees_evaluate(&self, f: &ReesElement, p: &DeformPoint) -> Result<f64> {
        let symbol = self.rees_symbol(f)?;
        Ok(symbol.eval_f64(&self.flatten(p)?))
    }

    /// `[λ, u_1, …, u_n]` from a deformation point.
    pub fn flatten(&self, p: &DeformPoint) -> Result<Vec<f64>> {
        if p.y.len() != self.tangential.len() || p.z.len() != self.normal.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.chart.dim(),
                found: p.y.len() + p.z.len(),
            }
            .into());
        }
        let mut out = vec![0.0; self.chart.dim() + 1];
        out[0] = p.lambda;
        for (&i, &v) in self.tangential.iter().zip(&p.y) {
            out[i + 1] = v;
        }
        for (&i, &v) in self.normal.iter().zip(&p.z) {
            out[i + 1] = v;
        }
        Ok(out)
    }

    fn unflatten(&self, v: &[f64]) -> DeformPoint {
        DeformPoint {
            lambda: v[0],
            y: self.tangential.iter().map(|&i| v[i + 1]).collect(),
            z: self.normal.iter().map(|&i| v[i + 1]).collect(),
        }
    }

    /// Manifold point `p` (chart coordinates) to `(λ, y, z_c λ^{-q_c})`.
    pub fn zoom(&self, lambda: f64, p: &[f64]) -> Result<DeformPoint> {
        if lambda == 0.0 {
            return Err(Error::ZeroLambda);
        }
        self.check_len(p)?;
        Ok(DeformPoint {
            lambda,
            y: self.tangential.iter().map(|&i| p[i]).collect(),
            z: self
                .normal
                .iter()
                .map(|&i| p[i] / lambda.powi(self.weight(i) as i32))
                .collect(),
        })
    }

    pub fn unzoom(&self, p: &DeformPoint) -> Result<Vec<f64>> {
        if p.lambda == 0.0 {
            return Err(Error::ZeroLambda);
        }
        let flat = self.flatten(p)?;
        Ok(self.manifold_point(&flat))
    }

    fn manifold_point(&self, flat: &[f64]) -> Vec<f64> {
        let lambda = flat[0];
        (0..self.chart.dim())
            .map(|i| {
                if self.normal.contains(&i) {
                    flat[i + 1] * lambda.powi(self.weight(i) as i32)
                } else {
                    flat[i + 1]
                }
            })
            .collect()
    }

    fn check_len(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.chart.dim() {
            return Err(PolyError::DimensionMismatch {
                expected: self.chart.dim(),
                found: p.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Filtered dilation of a normal-space point: `z̃_c ↦ σ^{q_c} z̃_c`.
    pub fn dilate(&self, sigma: f64, p: &DeformPoint) -> DeformPoint {
        DeformPoint {
            lambda: p.lambda,
            y: p.y.clone(),
            z: self
                .normal
                .iter()
                .zip(&p.z)
                .map(|(&i, &z)| z * sigma.powi(self.weight(i) as i32))
                .collect(),
        }
    }

    /// Tests `E(f) = q f + (order ≥ q+1)` on generators `z^β y^κ` of `I_q/I_{q+1}`
    /// for `q = 1..=cap`, plus raw monomials of normal weight `q` as a safeguard.
    pub fn euler_like_check(&self, e: &VectorField, cap: u32) -> Result<ValidationReport> {
        euler_like_check(&self.chart, e, cap)
    }

    /// The symbolic fields `T`, `C` and `E` on the extended ring.
    pub fn t_field(&self, e: &VectorField) -> Result<TField> {
        let n = self.chart.dim();
        if e.dim() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: e.dim(),
            }
            .into());
        }
        let report = self.euler_like_check(e, self.chart.step())?;
        if !report.pass {
            return Err(Error::NotEulerLike(report.witnesses[0].message.clone()));
        }
        let nv = n + 1;
        let lambda = Poly::var(nv, 0);
        let mut t = vec![Poly::one(nv)];
        let mut c = vec![lambda.clone()];
        let mut ebold = vec![Poly::zero(nv)];
        for i in 0..n {
            let ei = self.substitute(e.component(i))?;
            if self.normal.contains(&i) {
                let q = self.weight(i);
                let ui = Poly::var(n, i).scale(&BigRational::from_integer(q.into()));
                let shifted = self.substitute(&(e.component(i) - &ui))?;
                t.push(shifted.div_var_power(0, q + 1).ok_or_else(|| {
                    Error::NonExactDivision(format!("E(z{i}) - {q} z{i} is not divisible by λ^{}", q + 1))
                })?);
                ebold.push(ei.div_var_power(0, q).ok_or_else(|| {
                    Error::NonExactDivision(format!("E(z{i}) is not divisible by λ^{q}"))
                })?);
                c.push(-Poly::var(nv, i + 1).scale(&BigRational::from_integer(q.into())));
            } else {
                t.push(ei.div_var_power(0, 1).ok_or_else(|| {
                    Error::NonExactDivision(format!("E(y{i}) does not vanish on M"))
                })?);
                ebold.push(ei);
                c.push(Poly::zero(nv));
            }
        }
        Ok(TField {
            t: VectorField::new(t)?,
            c: VectorField::new(c)?,
            e: VectorField::new(ebold)?,
        })
    }

    /// Integrates `T` from `(0, y₀, z̃₀)` to `λ = target`.
    pub fn integrate_tube(&self, field: &TField, start: &DeformPoint, opts: &TubeOptions) -> Result<DeformPoint> {
        if start.lambda != 0.0 {
            return Err(Error::Parse("tube start must lie on the λ = 0 fiber".into()));
        }
        let mut state = self.flatten(start)?;
        let mut target = opts.lambda_target;
        if let Some(sigma) = opts.rescale {
            // φ_s(X) = φ_{σs}(δ_{1/σ} X), then re-zoom at the original level
            let dilated = self.dilate(1.0 / sigma, start);
            state = self.flatten(&dilated)?;
            target *= sigma;
        }
        let compiled = CompiledField::new(&field.t);
        let end = integrate_adaptive(&compiled, &state, target, opts, |s, x| self.in_bounds(s, x, opts.bounds))?;
        let point = self.unflatten(&end);
        if opts.rescale.is_some() && opts.lambda_target != 0.0 {
            let m = self.manifold_point(&end);
            return self.zoom(opts.lambda_target, &m);
        }
        Ok(point)
    }

    /// Manifold point `φ_target(start)`, i.e. `unzoom` of the flow endpoint.
    pub fn tube_map(&self, field: &TField, start: &DeformPoint, opts: &TubeOptions) -> Result<Vec<f64>> {
        let end = self.integrate_tube(field, start, opts)?;
        self.unzoom(&end)
    }

    fn in_bounds(&self, s: f64, x: &[f64], bound: f64) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let mut probe = x.to_vec();
        probe[0] = s;
        self.manifold_point(&probe).iter().all(|v| v.abs() <= bound)
    }

    /// Batch version of [`DeformationSpace::integrate_tube`]; trajectories run in parallel.
    pub fn integrate_many(&self, field: &TField, starts: &[DeformPoint], opts: &TubeOptions) -> Vec<Result<DeformPoint>> {
        starts.par_iter().map(|p| self.integrate_tube(field, p, opts)).collect()
    }

    /// Numerical and symbolic checks of the tubular map built from `E`.
    pub fn verify_tube(&self, field: &TField, samples: &[DeformPoint], opts: &VerifyOptions) -> Result<TubeReport> {
        let mut validation = ValidationReport::new();
        let tube = TubeOptions {
            lambda_target: 1.0,
            ..opts.tube.clone()
        };

        // (a) identity on M and normal differential at the zero section
        let mut diff_residual: f64 = 0.0;
        let mut identity_residual: f64 = 0.0;
        let h = opts.fd_step;
        let per_sample: Vec<Result<(f64, f64)>> = samples
            .par_iter()
            .map(|sample| {
                let base = DeformPoint {
                    lambda: 0.0,
                    y: sample.y.clone(),
                    z: vec![0.0; self.normal.len()],
                };
                let image = self.tube_map(field, &base, &tube)?;
                let expected = self.manifold_point(&{
                    let mut f = self.flatten(&base)?;
                    f[0] = 1.0;
                    f
                });
                let id_res = max_abs_diff(&image, &expected);
                let mut d_res: f64 = 0.0;
                for (k, &c) in self.normal.iter().enumerate() {
                    let mut plus = base.clone();
                    plus.z[k] = h;
                    let mut minus = base.clone();
                    minus.z[k] = -h;
                    let fp = self.tube_map(field, &plus, &tube)?;
                    let fm = self.tube_map(field, &minus, &tube)?;
                    for &d in &self.normal {
                        let qd = self.weight(d);
                        let qc = self.weight(c);
                        if qd < qc {
                            continue;
                        }
                        let derivative = (fp[d] - fm[d]) / (2.0 * h);
                        let target = if d == c { 1.0 } else { 0.0 };
                        d_res = d_res.max((derivative - target).abs());
                    }
                }
                Ok((id_res, d_res))
            })
            .collect();
        for r in per_sample {
            let (id_res, d_res) = r?;
            identity_residual = identity_residual.max(id_res);
            diff_residual = diff_residual.max(d_res);
        }
        if identity_residual > opts.tol {
            validation.fail(
                format!("tubular map moves the zero section by {identity_residual:e}"),
                json!({"check": "a", "residual": identity_residual}),
            );
        }
        if diff_residual > opts.tol {
            validation.fail(
                format!("normal differential differs from the identity by {diff_residual:e}"),
                json!({"check": "a", "residual": diff_residual}),
            );
        }

        // (b) φ_{e^t s}(X) = φ_s(δ_{e^t} X)
        let s = opts.scaling_s;
        let count = samples.len().max(1);
        let scaling: Vec<Result<f64>> = samples
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let t = -opts.scaling_t + 2.0 * opts.scaling_t * (k as f64 + 0.5) / count as f64;
                let start = DeformPoint {
                    lambda: 0.0,
                    ..x.clone()
                };
                let left = self.tube_map(
                    field,
                    &start,
                    &TubeOptions {
                        lambda_target: t.exp() * s,
                        ..opts.tube.clone()
                    },
                )?;
                let right = self.tube_map(
                    field,
                    &self.dilate(t.exp(), &start),
                    &TubeOptions {
                        lambda_target: s,
                        ..opts.tube.clone()
                    },
                )?;
                Ok(max_abs_diff(&left, &right))
            })
            .collect();
        let mut scaling_residual: f64 = 0.0;
        for r in scaling {
            scaling_residual = scaling_residual.max(r?);
        }
        if scaling_residual > opts.tol {
            validation.fail(
                format!("scaling relation fails by {scaling_residual:e}"),
                json!({"check": "b", "residual": scaling_residual}),
            );
        }

        // (c) exact bracket relations
        let symbolic = field.relations()?;
        for (name, ok) in [
            ("lambda*T = C + E", symbolic.lambda_t_equals_c_plus_e),
            ("[T, C] = T", symbolic.t_c),
            ("[T, E] = 0", symbolic.t_e),
            ("[C, E] = 0", symbolic.c_e),
        ] {
            if !ok {
                validation.fail(format!("{name} fails"), json!({"check": "c", "relation": name}));
            }
        }
        Ok(TubeReport {
            pass: validation.pass,
            identity_residual: F64(identity_residual),
            normal_differential_residual: F64(diff_residual),
            scaling_residual: F64(scaling_residual),
            scaling_samples: samples.len(),
            symbolic,
            validation,
        })
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Euler-like test on the chart's marked submanifold.
pub fn euler_like_check(chart: &FilteredChart, e: &VectorField, cap: u32) -> Result<ValidationReport> {
    let normal = chart.normal().ok_or(Error::NoSubmanifold)?.to_vec();
    let n = chart.dim();
    if e.dim() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            found: e.dim(),
        }
        .into());
    }
    let q = chart.weights().to_vec();
    let r = chart.step();
    let tangential = chart.tangential();
    let z = adapted_coordinates(chart)?;
    let raw_adapted = chart_coordinates_adapted(chart)?.is_none();
    let normal_weights: Vec<u32> = normal.iter().map(|&c| q[c]).collect();
    let tangential_monomials = exponents_with_weight(&vec![1; tangential.len()], 0, r);
    let mut report = ValidationReport::new();
    for level in 1..=cap {
        let mut generators: Vec<(String, Poly)> = Vec::new();
        for beta in exponents_with_weight(&normal_weights, level, level) {
            let mut zb = Poly::one(n);
            for (zc, &k) in z.iter().zip(&beta) {
                if k > 0 {
                    zb = &zb * &zc.pow(k);
                }
            }
            for kappa in &tangential_monomials {
                let mut f = zb.clone();
                for (&a, &k) in tangential.iter().zip(kappa) {
                    if k > 0 {
                        f = &f * &Poly::var(n, a).pow(k);
                    }
                }
                generators.push((format!("adapted z^{beta:?} y^{kappa:?}"), f));
            }
        }
        if raw_adapted {
            for kappa in &tangential_monomials {
                for beta in exponents_with_weight(&normal_weights, level, level) {
                    let mut exps = vec![0u32; n];
                    for (&c, &k) in normal.iter().zip(&beta) {
                        exps[c] = k;
                    }
                    for (&a, &k) in tangential.iter().zip(kappa) {
                        exps[a] = k;
                    }
                    generators.push((format!("monomial u^{exps:?}"), Poly::monomial(n, exps, BigRational::one())));
                }
            }
        }
        for (label, f) in generators {
            let residual = &e.apply(&f) - &f.scale(&BigRational::from_integer(level.into()));
            let order = chart.vanishing_h_order(&residual, &Locus::Marked, level + 1)?;
            if !order.at_least(level + 1) {
                report.fail(
                    format!("E(f) - {level} f vanishes only to H-order {order} for f = {f} ({label})"),
                    json!({"q": level, "generator": f, "residual_order": order}),
                );
            }
        }
    }
    Ok(report)
}

/// The fields `T`, `C`, `E` on the extended ring `(λ, y, z̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TField {
    pub t: VectorField,
    pub c: VectorField,
    pub e: VectorField,
}

/// Results of the exact identities among `T`, `C`, `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Relations {
    pub lambda_t_equals_c_plus_e: bool,
    pub t_c: bool,
    pub t_e: bool,
    pub c_e: bool,
}

impl TField {
    pub fn relations(&self) -> Result<Relations> {
        let nv = self.t.dim();
        let lambda = Poly::var(nv, 0);
        let lt = self.t.mul_poly(&lambda);
        let ce = self.c.add(&self.e);
        Ok(Relations {
            lambda_t_equals_c_plus_e: lt == ce,
            t_c: lie_bracket(&self.t, &self.c)? == self.t,
            t_e: lie_bracket(&self.t, &self.e)?.is_zero(),
            c_e: lie_bracket(&self.c, &self.e)?.is_zero(),
        })
    }

    /// Whether all spatial components of `T` vanish (trivial flow).
    pub fn is_trivial(&self) -> bool {
        self.t.components()[1..].iter().all(Poly::is_zero)
    }
}

/// Options for [`DeformationSpace::integrate_tube`].
#[derive(Debug, Clone, PartialEq)]
pub struct TubeOptions {
    pub lambda_target: f64,
    pub step: f64,
    pub tol: f64,
    /// Bound on every manifold coordinate along the trajectory.
    pub bounds: f64,
    /// Optional rescale factor `σ ∈ (0, 1]` for the restart mode.
    pub rescale: Option<f64>,
}

impl Default for TubeOptions {
    fn default() -> Self {
        TubeOptions {
            lambda_target: 1.0,
            step: 1e-2,
            tol: 1e-9,
            bounds: 1e6,
            rescale: None,
        }
    }
}

/// Options for [`DeformationSpace::verify_tube`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub tube: TubeOptions,
    pub fd_step: f64,
    pub tol: f64,
    pub scaling_s: f64,
    pub scaling_t: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tube: TubeOptions::default(),
            fd_step: 1e-4,
            tol: 1e-6,
            scaling_s: 0.5,
            scaling_t: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub pass: bool,
    pub identity_residual: F64,
    pub normal_differential_residual: F64,
    pub scaling_residual: F64,
    pub scaling_samples: usize,
    pub symbolic: Relations,
    pub validation: ValidationReport,
}

/// Float form of a polynomial vector field for fast evaluation.
struct CompiledField {
    comps: Vec<Vec<(f64, Vec<(usize, i32)>)>>,
}

impl CompiledField {
    fn new(field: &VectorField) -> Self {
        CompiledField {
            comps: field
                .components()
                .iter()
                .map(|p| {
                    p.terms()
                        .map(|(e, c)| {
                            let vars = e
                                .iter()
                                .enumerate()
                                .filter(|(_, &k)| k > 0)
                                .map(|(i, &k)| (i, k as i32))
                                .collect();
                            (c.to_f64().unwrap_or(f64::NAN), vars)
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.comps) {
            *o = terms
                .iter()
                .map(|(c, vars)| vars.iter().fold(*c, |acc, &(i, k)| acc * x[i].powi(k)))
                .sum();
        }
    }
}

/// Fixed-step RK4 over `λ ∈ [0, target]` (the state's entry 0 is `λ`).
fn rk4(field: &CompiledField, start: &[f64], target: f64, steps: usize, ok: &impl Fn(f64, &[f64]) -> bool) -> Result<Vec<f64>> {
    let dim = start.len();
    let h = target / steps as f64;
    let mut x = start.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for step in 0..steps {
        let s = step as f64 * h;
        x[0] = s;
        field.eval(&x, &mut k1);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        field.eval(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        field.eval(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = x[i] + h * k3[i];
        }
        field.eval(&tmp, &mut k4);
        for i in 0..dim {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let s_next = (step + 1) as f64 * h;
        x[0] = s_next;
        if !ok(s_next, &x) {
            return Err(Error::DomainExit { s: s_next });
        }
    }
    x[0] = target;
    Ok(x)
}

/// RK4 with a Richardson-style self-check against a run at ten times the
/// resolution; the step shrinks tenfold until the two runs agree within `tol`.
fn integrate_adaptive(
    field: &CompiledField,
    start: &[f64],
    target: f64,
    opts: &TubeOptions,
    ok: impl Fn(f64, &[f64]) -> bool,
) -> Result<Vec<f64>> {
    if target == 0.0 {
        return Ok(start.to_vec());
    }
    let mut steps = ((target.abs() / opts.step).ceil() as usize).max(1);
    loop {
        let coarse = rk4(field, start, target, steps, &ok)?;
        let fine = rk4(field, start, target, steps * 10, &ok)?;
        let diff = max_abs_diff(&coarse[1..], &fine[1..]);
        if diff <= opts.tol {
            return Ok(fine);
        }
        log::debug!("refining RK4 step: {steps} steps disagree by {diff:e}");
        steps *= 10;
        if target.abs() / (steps as f64) < 1e-7 {
            return Err(Error::StepUnderflow { s: target });
        }
    }
}

/// Serializable endpoint record used by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct TubeEndpoint {
    pub start: DeformPointJson,
    pub end: DeformPointJson,
    pub manifold: Vec<F64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeformPointJson {
    pub lambda: F64,
    pub y: Vec<F64>,
    pub z: Vec<F64>,
}

impl From<&DeformPoint> for DeformPointJson {
    fn from(p: &DeformPoint) -> Self {
        DeformPointJson {
            lambda: F64(p.lambda),
            y: floats(&p.y),
            z: floats(&p.z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::fixtures::heisenberg;
    use crate::coords::model_euler_field;
    use crate::poly::rat;

    fn point_chart() -> FilteredChart {
        heisenberg().with_normal(Some(vec![0, 1, 2])).unwrap()
    }

    /// Heisenberg in coordinates adapted to the x-axis: z' = z − xy.
    fn xaxis_chart() -> FilteredChart {
        let n = 3;
        let x1 = VectorField::new(vec![Poly::one(n), Poly::zero(n), -Poly::var(n, 1)]).unwrap();
        let x2 = VectorField::coordinate(n, 1);
        let x3 = VectorField::coordinate(n, 2);
        FilteredChart::new(vec![2, 3], vec![x1, x2, x3], Some(vec![1, 2])).unwrap()
    }

    fn perturbed(chart: &FilteredChart) -> VectorField {
        let model = model_euler_field(chart.weights(), chart.normal().unwrap());
        let mut comps = model.components().to_vec();
        comps[2] = &comps[2] + &Poly::var(3, 2).pow(2);
        VectorField::new(comps).unwrap()
    }

    #[test]
    fn rees_products() {
        let c = point_chart();
        let z = Poly::var(3, 2);
        let a = ReesElement::new(&c, [(2, z.clone())]).unwrap();
        let sq = rees_multiply(&c, &a, &a).unwrap();
        assert_eq!(sq.terms(), &BTreeMap::from([(4, z.pow(2))]));
        let one = ReesElement::new(&c, [(0, Poly::one(3))]).unwrap();
        assert_eq!(rees_multiply(&c, &a, &one).unwrap(), a);
        let t = ReesElement::t(&c).unwrap();
        assert_eq!(rees_multiply(&c, &t, &a).unwrap().terms(), &BTreeMap::from([(1, z.clone())]));
        assert!(matches!(
            ReesElement::new(&c, [(3, z.clone())]),
            Err(Error::InvalidRees { q: 3, .. })
        ));
    }

    #[test]
    fn rees_evaluation() {
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let a = ReesElement::new(&c, [(2, Poly::var(3, 2))]).unwrap();
        let p = DeformPoint {
            lambda: 0.5,
            y: vec![],
            z: vec![0.3, -0.2, 1.7],
        };
        assert_eq!(space.rees_evaluate(&a, &p).unwrap(), 1.7);
        let t = ReesElement::t(&c).unwrap();
        let p0 = DeformPoint { lambda: 0.0, ..p.clone() };
        assert_eq!(space.rees_evaluate(&t, &p0).unwrap(), 0.0);

        let xc = xaxis_chart();
        let xs = DeformationSpace::new(&xc).unwrap();
        let xy = &Poly::var(3, 0) * &Poly::var(3, 1);
        let f = ReesElement::new(&xc, [(1, xy.clone())]).unwrap();
        let m = [0.7, 0.2, -0.1];
        for lambda in [1.0, 0.5, 0.25] {
            let zp = xs.zoom(lambda, &m).unwrap();
            let value = xs.rees_evaluate(&f, &zp).unwrap();
            assert!((value - m[0] * m[1] / lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn zoom_examples() {
        let space = DeformationSpace::new(&point_chart()).unwrap();
        let p = space.zoom(0.5, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.z, vec![2.0, 2.0, 4.0]);
        assert_eq!(space.zoom(1.0, &[0.3, 0.4, 0.5]).unwrap().z, vec![0.3, 0.4, 0.5]);
        let back = space.unzoom(&space.zoom(0.37, &[0.3, -0.4, 0.5]).unwrap()).unwrap();
        assert!(max_abs_diff(&back, &[0.3, -0.4, 0.5]) < 1e-15);
        assert_eq!(space.unzoom(&DeformPoint { lambda: 0.0, y: vec![], z: vec![0.0; 3] }), Err(Error::ZeroLambda));
    }

    #[test]
    fn non_adapted_coordinates_rejected() {
        let raw = heisenberg().with_normal(Some(vec![1, 2])).unwrap();
        assert!(matches!(DeformationSpace::new(&raw), Err(Error::NotAdapted(_))));
    }

    #[test]
    fn euler_like_examples() {
        let c = point_chart();
        let model = model_euler_field(c.weights(), c.normal().unwrap());
        assert!(euler_like_check(&c, &model, 2).unwrap().pass);
        assert!(euler_like_check(&c, &perturbed(&c), 2).unwrap().pass);
        let doubled = model.scale(&rat(2, 1));
        let report = euler_like_check(&c, &doubled, 2).unwrap();
        assert!(!report.pass);
        assert_eq!(report.witnesses[0].locant["q"], 1);
        assert_eq!(report.witnesses[0].locant["generator"], serde_json::to_value(Poly::var(3, 0)).unwrap());
    }

    #[test]
    fn t_field_examples() {
        let flat = FilteredChart::flat(vec![3], Some(vec![0, 1, 2])).unwrap();
        let fs = DeformationSpace::new(&flat).unwrap();
        let tf = fs.t_field(&model_euler_field(&[1, 1, 1], &[0, 1, 2])).unwrap();
        assert!(tf.is_trivial());
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let model = model_euler_field(c.weights(), c.normal().unwrap());
        assert!(space.t_field(&model).unwrap().is_trivial());
        let tp = space.t_field(&perturbed(&c)).unwrap();
        let expected = &Poly::var(4, 0) * &Poly::var(4, 3).pow(2);
        assert_eq!(tp.t.component(3), &expected);
        let rel = tp.relations().unwrap();
        assert!(rel.lambda_t_equals_c_plus_e && rel.t_c && rel.t_e && rel.c_e);
        assert!(matches!(space.t_field(&model.scale(&rat(2, 1))), Err(Error::NotEulerLike(_))));
    }

    #[test]
    fn analytic_flow_oracle() {
        // dz̃/ds = s z̃², so z̃(s) = z̃₀ / (1 − s² z̃₀ / 2)
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let tf = space.t_field(&perturbed(&c)).unwrap();
        for z0 in [0.0, 1.0, -0.5, 0.8] {
            let start = DeformPoint {
                lambda: 0.0,
                y: vec![],
                z: vec![0.1, -0.2, z0],
            };
            let end = space.integrate_tube(&tf, &start, &TubeOptions::default()).unwrap();
            let exact = z0 / (1.0 - z0 / 2.0);
            assert!((end.z[2] - exact).abs() < 1e-9, "z0 = {z0}: {} vs {exact}", end.z[2]);
            assert_eq!(&end.z[..2], &[0.1, -0.2]);
        }
    }

    #[test]
    fn rescale_restart_agrees() {
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let tf = space.t_field(&perturbed(&c)).unwrap();
        let start = DeformPoint {
            lambda: 0.0,
            y: vec![],
            z: vec![0.3, 0.1, 0.9],
        };
        let direct = space.integrate_tube(&tf, &start, &TubeOptions::default()).unwrap();
        let restarted = space
            .integrate_tube(
                &tf,
                &start,
                &TubeOptions {
                    rescale: Some(0.5),
                    ..TubeOptions::default()
                },
            )
            .unwrap();
        assert!(max_abs_diff(&direct.z, &restarted.z) < 1e-8);
    }

    #[test]
    fn domain_exit_reported() {
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let tf = space.t_field(&perturbed(&c)).unwrap();
        // z̃₀ = 2 blows up at s = 1
        let start = DeformPoint {
            lambda: 0.0,
            y: vec![],
            z: vec![0.0, 0.0, 2.5],
        };
        let opts = TubeOptions {
            bounds: 100.0,
            ..TubeOptions::default()
        };
        assert!(matches!(space.integrate_tube(&tf, &start, &opts), Err(Error::DomainExit { .. })));
    }

    #[test]
    fn verify_tube_on_perturbed_heisenberg() {
        let c = point_chart();
        let space = DeformationSpace::new(&c).unwrap();
        let tf = space.t_field(&perturbed(&c)).unwrap();
        let samples: Vec<DeformPoint> = (0..20)
            .map(|k| {
                let a = k as f64 / 20.0;
                DeformPoint {
                    lambda: 0.0,
                    y: vec![],
                    z: vec![a - 0.5, 0.3 - a * 0.4, 0.6 * (a - 0.4)],
                }
            })
            .collect();
        let report = space.verify_tube(&tf, &samples, &VerifyOptions::default()).unwrap();
        assert!(report.pass, "{report:?}");
    }
}
