//! Polynomial charts of filtered manifolds.
//!
//! A [`FilteredChart`] carries an H-frame `X_1, …, X_n` ordered by weight, the
//! rank sequence of the filtration and optionally a marked coordinate
//! submanifold `M = {u_c = 0 : c ∈ normal}`. From it we get H-orders of frame
//! operators and H-orders of vanishing of functions at points or along `M`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, PolyError, Result};
use crate::linalg::{self, Matrix};
use crate::poly::{exponents_with_weight, weighted_degree, Exponents, Poly, TermJson, WeightVector};
use crate::report::ValidationReport;

/// A polynomial vector field `Σ_i c_i ∂/∂u_i`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VectorField {
    comps: Vec<Poly>,
}

impl VectorField {
    pub fn new(comps: Vec<Poly>) -> Result<Self> {
        let n = comps.len();
        if let Some(bad) = comps.iter().find(|p| p.nvars() != n) {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: bad.nvars(),
            }
            .into());
        }
        Ok(VectorField { comps })
    }

    /// Components over a ring of `nvars` variables that need not equal the
    /// number of components (used for fields on extended coordinate rings).
    pub fn from_components(comps: Vec<Poly>) -> Self {
        VectorField { comps }
    }

    pub fn zero(n: usize) -> Self {
        VectorField {
            comps: vec![Poly::zero(n); n],
        }
    }

    /// The coordinate field `∂/∂u_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut comps = vec![Poly::zero(n); n];
        comps[i] = Poly::one(n);
        VectorField { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Poly] {
        &self.comps
    }

    pub fn component(&self, i: usize) -> &Poly {
        &self.comps[i]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Poly::is_zero)
    }

    /// `X(f) = Σ_i c_i ∂f/∂u_i`.
    pub fn apply(&self, f: &Poly) -> Poly {
        let mut out = Poly::zero(f.nvars());
        for (i, c) in self.comps.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let d = f.partial(i);
            if !d.is_zero() {
                out += &(c * &d);
            }
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(|p| p.scale(c)).collect(),
        }
    }

    pub fn mul_poly(&self, g: &Poly) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(|p| p * g).collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn eval(&self, point: &[BigRational]) -> Vec<BigRational> {
        self.comps.iter().map(|c| c.eval(point)).collect()
    }

    pub fn eval_f64(&self, point: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval_f64(point)).collect()
    }

    pub fn to_json(&self) -> Vec<Vec<TermJson>> {
        self.comps.iter().map(Poly::to_json_terms).collect()
    }

    pub fn from_json(n: usize, comps: &[Vec<TermJson>]) -> Result<Self> {
        if comps.len() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: comps.len(),
            }
            .into());
        }
        let comps = comps
            .iter()
            .map(|c| Poly::from_json_terms(n, c))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        VectorField::new(comps)
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField(")?;
        let mut first = true;
        for (i, c) in self.comps.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})∂{i}")?;
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, ")")
    }
}

/// `[X, Y]` with components `X(Y_i) − Y(X_i)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.dim() != y.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        }
        .into());
    }
    Ok(bracket_unchecked(x, y))
}

pub(crate) fn bracket_unchecked(x: &VectorField, y: &VectorField) -> VectorField {
    VectorField {
        comps: x
            .comps
            .iter()
            .zip(&y.comps)
            .map(|(xi, yi)| &x.apply(yi) - &y.apply(xi))
            .collect(),
    }
}

/// Where a function is required to vanish.
#[derive(Debug, Clone, PartialEq)]
pub enum Locus {
    /// The chart origin.
    Origin,
    /// A rational point.
    Point(Vec<BigRational>),
    /// The marked submanifold of the chart.
    Marked,
    /// An arbitrary coordinate subspace `{u_c = 0 : c ∈ vars}`.
    Subspace(Vec<usize>),
}

/// Result of [`FilteredChart::vanishing_h_order`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum VanishingOrder {
    /// Vanishes to H-order exactly this value.
    Exact(u32),
    /// Vanishes to at least this H-order (the cap was reached).
    AtLeast(u32),
}

impl VanishingOrder {
    /// Whether the function vanishes to H-order at least `q`.
    pub fn at_least(self, q: u32) -> bool {
        match self {
            VanishingOrder::Exact(v) | VanishingOrder::AtLeast(v) => v >= q,
        }
    }

    pub fn lower_bound(self) -> u32 {
        match self {
            VanishingOrder::Exact(v) | VanishingOrder::AtLeast(v) => v,
        }
    }
}

impl fmt::Display for VanishingOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VanishingOrder::Exact(v) => write!(f, "{v}"),
            VanishingOrder::AtLeast(v) => write!(f, ">={v}"),
        }
    }
}

/// Coefficients `f^c_{ab}` with `[X_a, X_b] = Σ_c f^c_{ab} X_c`; `None` where
/// Cramer's rule did not divide exactly.
pub type StructureFunctions = Vec<Vec<Option<Vec<Poly>>>>;

/// A filtered manifold chart: an H-frame ordered by weight plus ranks.
pub struct FilteredChart {
    dim: usize,
    ranks: Vec<usize>,
    weights: WeightVector,
    frame: Vec<VectorField>,
    normal: Option<Vec<usize>>,
    det: Poly,
    structure: OnceLock<StructureFunctions>,
}

impl Clone for FilteredChart {
    fn clone(&self) -> Self {
        FilteredChart {
            dim: self.dim,
            ranks: self.ranks.clone(),
            weights: self.weights.clone(),
            frame: self.frame.clone(),
            normal: self.normal.clone(),
            det: self.det.clone(),
            structure: self.structure.clone(),
        }
    }
}

impl fmt::Debug for FilteredChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilteredChart")
            .field("dim", &self.dim)
            .field("ranks", &self.ranks)
            .field("frame", &self.frame)
            .field("normal", &self.normal)
            .finish()
    }
}

impl FilteredChart {
    /// Builds a chart, checking dimensions, the rank sequence, invertibility of
    /// the frame at the origin and, when `normal` is given, that the other
    /// frame fields are tangent to `M`.
    pub fn new(ranks: Vec<usize>, frame: Vec<VectorField>, normal: Option<Vec<usize>>) -> Result<Self> {
        let n = frame.len();
        if n == 0 {
            return Err(Error::InvalidChart("empty frame".into()));
        }
        if ranks.last() != Some(&n) {
            return Err(Error::InvalidChart(format!(
                "last rank must equal the dimension {n}, got {ranks:?}"
            )));
        }
        for (a, x) in frame.iter().enumerate() {
            if x.dim() != n || x.comps.iter().any(|c| c.nvars() != n) {
                return Err(Error::InvalidChart(format!("frame field {a} has wrong dimension")));
            }
        }
        let weights = WeightVector::from_ranks(&ranks)?;
        let det = linalg::poly_det(&frame_matrix(&frame), n);
        if det.constant_term().is_zero() {
            return Err(Error::SingularFrame("the origin".into()));
        }
        let normal = match normal {
            Some(mut vars) => {
                vars.sort_unstable();
                vars.dedup();
                if let Some(&bad) = vars.iter().find(|&&v| v >= n) {
                    return Err(Error::InvalidChart(format!("normal variable {bad} out of range")));
                }
                for (a, x) in frame.iter().enumerate() {
                    if vars.contains(&a) {
                        continue;
                    }
                    if vars.iter().any(|&c| !x.comps[c].restrict_zero(&vars).is_zero()) {
                        return Err(Error::NotTangent { field: a });
                    }
                }
                Some(vars)
            }
            None => None,
        };
        Ok(FilteredChart {
            dim: n,
            ranks,
            weights,
            frame,
            normal,
            det,
            structure: OnceLock::new(),
        })
    }

    /// The flat chart on ℝⁿ with frame `∂/∂u_i` and the given ranks.
    pub fn flat(ranks: Vec<usize>, normal: Option<Vec<usize>>) -> Result<Self> {
        let n = *ranks.last().unwrap_or(&0);
        let frame = (0..n).map(|i| VectorField::coordinate(n, i)).collect();
        FilteredChart::new(ranks, frame, normal)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn step(&self) -> u32 {
        self.weights.step()
    }

    pub fn frame(&self) -> &[VectorField] {
        &self.frame
    }

    pub fn field(&self, a: usize) -> &VectorField {
        &self.frame[a]
    }

    pub fn normal(&self) -> Option<&[usize]> {
        self.normal.as_deref()
    }

    /// Indices of frame fields tangent to the marked submanifold (all of them
    /// when nothing is marked).
    pub fn tangential(&self) -> Vec<usize> {
        let normal = self.normal.as_deref().unwrap_or(&[]);
        (0..self.dim).filter(|i| !normal.contains(i)).collect()
    }

    pub fn frame_determinant(&self) -> &Poly {
        &self.det
    }

    /// Same frame with a different marked submanifold.
    pub fn with_normal(&self, normal: Option<Vec<usize>>) -> Result<FilteredChart> {
        FilteredChart::new(self.ranks.clone(), self.frame.clone(), normal)
    }

    /// Matrix whose column `a` holds the components of `X_a` at `point`.
    pub fn frame_at(&self, point: &[BigRational]) -> Matrix {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|a| self.frame[a].comps[i].eval(point)).collect())
            .collect()
    }

    /// Coefficients `f^c_{ab}` of `[X_a, X_b]` in the frame, by Cramer's rule
    /// with exact division by the frame determinant.
    pub fn structure_functions(&self) -> &StructureFunctions {
        self.structure.get_or_init(|| {
            let n = self.dim;
            let fm = frame_matrix(&self.frame);
            let mut out: StructureFunctions = vec![vec![None; n]; n];
            for a in 0..n {
                out[a][a] = Some(vec![Poly::zero(n); n]);
                for b in (a + 1)..n {
                    let br = bracket_unchecked(&self.frame[a], &self.frame[b]);
                    let coeffs = if br.is_zero() {
                        Some(vec![Poly::zero(n); n])
                    } else {
                        (0..n)
                            .map(|c| {
                                let num = linalg::poly_det(&linalg::replace_column(&fm, c, &br.comps), n);
                                num.div_exact(&self.det)
                            })
                            .collect::<Option<Vec<_>>>()
                    };
                    out[b][a] = coeffs.as_ref().map(|v| v.iter().map(|p| -p).collect());
                    out[a][b] = coeffs;
                }
            }
            out
        })
    }

    /// Checks `[X_a, X_b] ∈ span{X_c : q_c ≤ q_a + q_b}` for every pair.
    pub fn validate_lie_filtration(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        let sf = self.structure_functions();
        let q = &self.weights;
        let r = self.step();
        for a in 0..self.dim {
            for b in (a + 1)..self.dim {
                match &sf[a][b] {
                    None => report.fail(
                        format!("[X{a}, X{b}] is not a polynomial combination of the frame"),
                        json!({"a": a, "b": b}),
                    ),
                    Some(coeffs) => {
                        let bound = (q[a] + q[b]).min(r);
                        for (c, f) in coeffs.iter().enumerate() {
                            if q[c] > bound && !f.is_zero() {
                                report.fail(
                                    format!(
                                        "[X{a}, X{b}] has component along X{c} of weight {} > {}",
                                        q[c], bound
                                    ),
                                    json!({"a": a, "b": b, "c": c, "coefficient": f}),
                                );
                            }
                        }
                    }
                }
            }
        }
        report
    }

    pub fn apply_field(&self, a: usize, f: &Poly) -> Poly {
        self.frame[a].apply(f)
    }

    /// `X^α f = X_1^{α_1} ⋯ X_n^{α_n} f` (the rightmost factor acts first).
    pub fn frame_monomial_apply(&self, alpha: &[u32], f: &Poly) -> Poly {
        assert_eq!(alpha.len(), self.dim, "multi-index has wrong length");
        let mut g = f.clone();
        for a in (0..self.dim).rev() {
            for _ in 0..alpha[a] {
                g = self.frame[a].apply(&g);
            }
        }
        g
    }

    /// All `X^α f` with weighted order `Σ q_a α_a ≤ cap`, keyed by `α`.
    pub fn frame_monomial_table(&self, f: &Poly, cap: u32) -> BTreeMap<Exponents, Poly> {
        let alphas = exponents_with_weight(&self.weights, 0, cap);
        let mut table: HashMap<Exponents, Poly> = HashMap::new();
        for alpha in &alphas {
            let value = match alpha.iter().position(|&k| k > 0) {
                None => f.clone(),
                Some(j) => {
                    let mut rest = alpha.clone();
                    rest[j] -= 1;
                    // enumerated by increasing weight, so `rest` is present
                    let inner = &table[&rest];
                    self.frame[j].apply(inner)
                }
            };
            table.insert(alpha.clone(), value);
        }
        table.into_iter().collect()
    }

    fn vanishes_on(&self, g: &Poly, locus: &Locus) -> Result<bool> {
        Ok(match locus {
            Locus::Origin => g.constant_term().is_zero(),
            Locus::Point(v) => {
                if v.len() != self.dim {
                    return Err(PolyError::DimensionMismatch {
                        expected: self.dim,
                        found: v.len(),
                    }
                    .into());
                }
                g.eval(v).is_zero()
            }
            Locus::Marked => {
                let normal = self.normal.as_deref().ok_or(Error::NoSubmanifold)?;
                g.restrict_zero(normal).is_zero()
            }
            Locus::Subspace(vars) => g.restrict_zero(vars).is_zero(),
        })
    }

    /// H-order to which `f` vanishes on `locus`: the least weighted order `w ≤ cap`
    /// of a frame monomial with `X^α f` not vanishing there, or `AtLeast(cap+1)`.
    pub fn vanishing_h_order(&self, f: &Poly, locus: &Locus, cap: u32) -> Result<VanishingOrder> {
        if cap < 1 {
            return Err(Error::BadCap(cap));
        }
        if f.nvars() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                found: f.nvars(),
            }
            .into());
        }
        let table = self.frame_monomial_table(f, cap);
        let mut first_failure: Option<u32> = None;
        for (alpha, g) in &table {
            let w = weighted_degree(alpha, &self.weights);
            if first_failure.is_some_and(|m| m <= w) {
                continue;
            }
            if !self.vanishes_on(g, locus)? {
                first_failure = Some(w);
            }
        }
        Ok(match first_failure {
            Some(w) => VanishingOrder::Exact(w),
            None => VanishingOrder::AtLeast(cap + 1),
        })
    }

    /// Pushes the frame forward along a polynomial change of coordinates
    /// `u' = forward(u)` with polynomial inverse `u = inverse(u')`.
    pub fn recoordinatize(&self, forward: &[Poly], inverse: &[Poly], normal: Option<Vec<usize>>) -> Result<FilteredChart> {
        let frame = self
            .frame
            .iter()
            .map(|x| {
                let comps = forward
                    .iter()
                    .map(|phi| x.apply(phi).substitute(inverse))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                VectorField::new(comps)
            })
            .collect::<Result<Vec<_>>>()?;
        FilteredChart::new(self.ranks.clone(), frame, normal)
    }

    pub fn to_spec(&self) -> ChartSpec {
        ChartSpec {
            name: None,
            dim: self.dim,
            ranks: self.ranks.clone(),
            frame: self.frame.iter().map(VectorField::to_json).collect(),
            normal_vars: self.normal.clone(),
            fields: BTreeMap::new(),
        }
    }
}

fn frame_matrix(frame: &[VectorField]) -> Vec<Vec<Poly>> {
    let n = frame.len();
    (0..n)
        .map(|i| (0..n).map(|a| frame[a].comps[i].clone()).collect())
        .collect()
}

/// An operator `Σ_α f_α X^α` written in ordered frame monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOperator {
    terms: BTreeMap<Exponents, Poly>,
    dim: usize,
}

impl FrameOperator {
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (Exponents, Poly)>) -> Self {
        let mut op = FrameOperator {
            terms: BTreeMap::new(),
            dim,
        };
        for (alpha, f) in terms {
            op.add_term(alpha, &f);
        }
        op
    }

    /// The operator `X_a`.
    pub fn field(dim: usize, a: usize) -> Self {
        let mut alpha = vec![0; dim];
        alpha[a] = 1;
        FrameOperator::new(dim, [(alpha, Poly::one(dim))])
    }

    fn add_term(&mut self, alpha: Exponents, f: &Poly) {
        if f.is_zero() {
            return;
        }
        let entry = self.terms.entry(alpha).or_insert_with(|| Poly::zero(f.nvars()));
        *entry += f;
        self.terms.retain(|_, p| !p.is_zero());
    }

    pub fn terms(&self) -> &BTreeMap<Exponents, Poly> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn apply(&self, chart: &FilteredChart, f: &Poly) -> Poly {
        let mut out = Poly::zero(f.nvars());
        for (alpha, c) in &self.terms {
            out += &(c * &chart.frame_monomial_apply(alpha, f));
        }
        out
    }

    /// Composition `self ∘ other`, re-expressed in ordered frame monomials by
    /// commuting fields past each other with the structure functions.
    pub fn compose(&self, chart: &FilteredChart, other: &FrameOperator) -> Result<FrameOperator> {
        let sf = chart.structure_functions();
        let mut pending: Vec<(Poly, Vec<usize>)> = Vec::new();
        for (a1, c1) in &self.terms {
            for (a2, c2) in &other.terms {
                // c1 X^{a1} (c2 X^{a2}) by Leibniz on the word of X^{a1}
                let w1 = word_of(a1);
                let w2 = word_of(a2);
                for (coeff, prefix) in leibniz(chart, &w1, c2) {
                    let mut word = prefix;
                    word.extend_from_slice(&w2);
                    pending.push((c1 * &coeff, word));
                }
            }
        }
        let mut result = FrameOperator::new(chart.dim, []);
        while let Some((coeff, word)) = pending.pop() {
            if coeff.is_zero() {
                continue;
            }
            let Some(i) = (0..word.len().saturating_sub(1)).find(|&i| word[i] > word[i + 1]) else {
                let mut alpha = vec![0; chart.dim];
                for &a in &word {
                    alpha[a] += 1;
                }
                result.add_term(alpha, &coeff);
                continue;
            };
            let (a, b) = (word[i], word[i + 1]);
            let mut swapped = word.clone();
            swapped.swap(i, i + 1);
            pending.push((coeff.clone(), swapped));
            // X_a X_b = X_b X_a + Σ_c f^c_{ab} X_c
            let f = sf[a][b]
                .as_ref()
                .ok_or_else(|| Error::InvalidChart(format!("bracket [X{a}, X{b}] not expressible in the frame")))?;
            for (c, fc) in f.iter().enumerate() {
                if fc.is_zero() {
                    continue;
                }
                let prefix = &word[..i];
                for (g, pre) in leibniz(chart, prefix, fc) {
                    let mut w = pre;
                    w.push(c);
                    w.extend_from_slice(&word[i + 2..]);
                    pending.push((&coeff * &g, w));
                }
            }
        }
        Ok(result)
    }
}

fn word_of(alpha: &[u32]) -> Vec<usize> {
    alpha
        .iter()
        .enumerate()
        .flat_map(|(a, &k)| std::iter::repeat_n(a, k as usize))
        .collect()
}

/// `X_{w_1} ⋯ X_{w_k} ∘ g = Σ_S (X_{w_S} g) · X_{w_{S^c}}`, both subsequences in order.
fn leibniz(chart: &FilteredChart, word: &[usize], g: &Poly) -> Vec<(Poly, Vec<usize>)> {
    let k = word.len();
    let mut out = Vec::with_capacity(1 << k);
    for mask in 0u32..(1 << k) {
        // letters in the mask act on g, rightmost first
        let mut h = g.clone();
        for j in (0..k).rev() {
            if mask & (1 << j) != 0 {
                h = chart.frame[word[j]].apply(&h);
            }
        }
        if h.is_zero() {
            continue;
        }
        let rest = (0..k).filter(|j| mask & (1 << j) == 0).map(|j| word[j]).collect();
        out.push((h, rest));
    }
    out
}

/// H-order of a nonzero frame operator: `max Σ q_a α_a` over its terms.
pub fn h_order_of_operator(chart: &FilteredChart, op: &FrameOperator) -> Result<u32> {
    op.terms
        .keys()
        .map(|alpha| weighted_degree(alpha, chart.weights()))
        .max()
        .ok_or(Error::ZeroOperator)
}

/// Chart document: `{"dim", "ranks", "frame", "normal_vars"?, "fields"?}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dim: usize,
    pub ranks: Vec<usize>,
    pub frame: Vec<Vec<Vec<TermJson>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_vars: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, Vec<Vec<TermJson>>>,
}

impl ChartSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("chart file: {e}")))
    }

    pub fn build(&self) -> Result<FilteredChart> {
        if self.frame.len() != self.dim {
            return Err(Error::InvalidChart(format!(
                "expected {} frame fields, found {}",
                self.dim,
                self.frame.len()
            )));
        }
        let frame = self
            .frame
            .iter()
            .map(|x| VectorField::from_json(self.dim, x))
            .collect::<Result<Vec<_>>>()?;
        FilteredChart::new(self.ranks.clone(), frame, self.normal_vars.clone())
    }

    /// A named field from the `fields` table.
    pub fn named_field(&self, name: &str) -> Result<VectorField> {
        let comps = self
            .fields
            .get(name)
            .ok_or_else(|| Error::Parse(format!("no field named {name:?} in chart file")))?;
        VectorField::from_json(self.dim, comps)
    }
}

/// Evaluates the frame determinant at `v` and reports singularity.
pub fn check_invertible_at(chart: &FilteredChart, v: &[BigRational]) -> Result<()> {
    if chart.frame_determinant().eval(v).is_zero() {
        return Err(Error::SingularFrame(format!("{v:?}")));
    }
    Ok(())
}

/// `[X_a, X_b]` at `v` expressed in the frame at `v`.
pub fn bracket_coefficients_at(chart: &FilteredChart, a: usize, b: usize, v: &[BigRational]) -> Result<Vec<BigRational>> {
    let br = bracket_unchecked(chart.field(a), chart.field(b)).eval(v);
    linalg::solve(&chart.frame_at(v), &br).ok_or_else(|| Error::SingularFrame(format!("{v:?}")))
}
