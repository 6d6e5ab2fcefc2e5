//! Kostlan random polynomial maps, the rescaled field, truncated Bargmann–Fock
//! samples, and their covariance kernels.
//!
//! A degree-`d` Kostlan map `P: R^{m+1} → R^k` has independent coefficients
//! `ξ_α ~ N(0, (d choose α) 1_k)` in front of the monomials `x^α`, `|α| = d`.
//! Coefficients are stored already multiplied by `(d choose α)^{1/2}`, so
//! evaluation is a plain monomial sum. Multi-indices are enumerated in graded
//! lexicographic order (higher power of the first variable first).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gaussian::RngStream;

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `β! = Π βᵢ!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&b| factorial(b)).product()
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Multinomial coefficient `d! / (α₀!···α_m!)` as a product of binomials.
pub fn multinomial(alpha: &MultiIndex) -> f64 {
    let mut total = 0u32;
    let mut out = 1.0;
    for &a in &alpha.0 {
        total += a;
        out *= binomial(total, a);
    }
    out
}

pub fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// All exponent vectors of `vars` variables with total degree exactly `degree`,
/// in graded lexicographic order.
pub fn enumerate_multi_indices(vars: usize, degree: u32) -> Vec<MultiIndex> {
    fn rec(vars: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if vars == 1 {
            prefix.push(degree);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for a in (0..=degree).rev() {
            prefix.push(a);
            rec(vars - 1, degree - a, prefix, out);
            prefix.pop();
        }
    }
    assert!(vars >= 1, "at least one variable required");
    let mut out = Vec::new();
    rec(vars, degree, &mut Vec::with_capacity(vars), &mut out);
    out
}

/// Exponent vectors with total degree `≤ max_degree`, grouped by degree.
pub fn enumerate_affine_indices(vars: usize, max_degree: u32) -> Vec<MultiIndex> {
    (0..=max_degree)
        .flat_map(|d| enumerate_multi_indices(vars, d))
        .collect()
}

fn power_table(x: &[f64], max_pow: u32) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&xi| {
            let mut row = Vec::with_capacity(max_pow as usize + 1);
            let mut p = 1.0;
            for _ in 0..=max_pow {
                row.push(p);
                p *= xi;
            }
            row
        })
        .collect()
}

/// Value and gradient of `Σ_t coeffs[t, :] x^{idx_t}`.
fn eval_monomials(
    indices: &[MultiIndex],
    coeffs: &[f64],
    k: usize,
    x: &[f64],
    max_pow: u32,
    with_grad: bool,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = x.len();
    let pw = power_table(x, max_pow);
    let mut value = vec![0.0; k];
    let mut jac = DMatrix::zeros(k, if with_grad { n } else { 0 });
    for (t, alpha) in indices.iter().enumerate() {
        let row = &coeffs[t * k..(t + 1) * k];
        let mono: f64 = alpha.0.iter().enumerate().map(|(j, &a)| pw[j][a as usize]).product();
        for c in 0..k {
            value[c] += row[c] * mono;
        }
        if with_grad {
            for j in 0..n {
                let aj = alpha.0[j];
                if aj == 0 {
                    continue;
                }
                let mut partial = f64::from(aj);
                for (i, &a) in alpha.0.iter().enumerate() {
                    partial *= if i == j { pw[i][a as usize - 1] } else { pw[i][a as usize] };
                }
                for c in 0..k {
                    jac[(c, j)] += row[c] * partial;
                }
            }
        }
    }
    (value, jac)
}

/// Dense homogeneous polynomial map `R^{m+1} → R^k` of degree `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousPolyMap {
    m: usize,
    k: usize,
    d: u32,
    indices: Vec<MultiIndex>,
    /// Row-major `(terms × k)`.
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    m: usize,
    k: usize,
    d: u32,
    order: String,
    coeffs: Vec<f64>,
}

impl HomogeneousPolyMap {
    pub fn zeros(m: usize, k: usize, d: u32) -> Self {
        let indices = enumerate_multi_indices(m + 1, d);
        let coeffs = vec![0.0; indices.len() * k];
        Self { m, k, d, indices, coeffs }
    }

    /// Builds a map from a flat row-major `(terms × k)` coefficient array.
    pub fn from_coeffs(m: usize, k: usize, d: u32, coeffs: Vec<f64>) -> Result<Self> {
        let indices = enumerate_multi_indices(m + 1, d);
        if coeffs.len() != indices.len() * k {
            return Err(Error::DimensionMismatch {
                expected: indices.len() * k,
                got: coeffs.len(),
            });
        }
        Ok(Self { m, k, d, indices, coeffs })
    }

    /// Scalar polynomial from `(exponents, coefficient)` terms.
    pub fn from_terms(m: usize, d: u32, terms: &[(&[u32], f64)]) -> Result<Self> {
        let mut p = Self::zeros(m, 1, d);
        for (exps, c) in terms {
            let t = p.offset(exps).ok_or_else(|| {
                Error::InvalidArgument(format!("exponents {exps:?} are not a degree-{d} monomial in {} variables", m + 1))
            })?;
            p.coeffs[t] += c;
        }
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn degree(&self) -> u32 {
        self.d
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, term: usize, component: usize) -> f64 {
        self.coeffs[term * self.k + component]
    }

    /// Storage offset of a monomial.
    pub fn offset(&self, exps: &[u32]) -> Option<usize> {
        if exps.len() != self.m + 1 || exps.iter().sum::<u32>() != self.d {
            return None;
        }
        // Graded-lex rank: count the monomials preceding `exps`.
        let mut rank = 0usize;
        let mut remaining = self.d;
        for (j, &a) in exps.iter().enumerate().take(self.m) {
            let vars_left = self.m - j; // variables after position j
            for b in (a + 1)..=remaining {
                rank += binomial(remaining - b + vars_left as u32 - 1, vars_left as u32 - 1) as usize;
            }
            remaining -= a;
        }
        Some(rank)
    }

    /// Single component as a scalar map.
    pub fn component(&self, c: usize) -> HomogeneousPolyMap {
        let coeffs = (0..self.indices.len()).map(|t| self.coeff(t, c)).collect();
        Self {
            m: self.m,
            k: 1,
            d: self.d,
            indices: self.indices.clone(),
            coeffs,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.m + 1,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(eval_monomials(&self.indices, &self.coeffs, self.k, x, self.d, false).0)
    }

    /// Value in `R^k` and Jacobian `k × (m+1)`.
    pub fn eval_and_grad(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_dim(x)?;
        Ok(eval_monomials(&self.indices, &self.coeffs, self.k, x, self.d, true))
    }

    /// The map `x ↦ P(R x)` for a square matrix `R`.
    pub fn compose_linear(&self, r: &DMatrix<f64>) -> Result<HomogeneousPolyMap> {
        let n = self.m + 1;
        if r.nrows() != n || r.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.nrows(),
            });
        }
        type Sparse = HashMap<Vec<u32>, f64>;
        fn mul(a: &Sparse, b: &Sparse) -> Sparse {
            let mut out = Sparse::new();
            for (ea, ca) in a {
                for (eb, cb) in b {
                    let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                    *out.entry(e).or_insert(0.0) += ca * cb;
                }
            }
            out
        }
        let one: Sparse = [(vec![0; n], 1.0)].into_iter().collect();
        // powers[i][e] = (row_i(R) · x)^e
        let mut powers: Vec<Vec<Sparse>> = Vec::with_capacity(n);
        for i in 0..n {
            let lin: Sparse = (0..n)
                .map(|j| {
                    let mut e = vec![0; n];
                    e[j] = 1;
                    (e, r[(i, j)])
                })
                .collect();
            let mut row = vec![one.clone()];
            for e in 1..=self.d as usize {
                let next = mul(&row[e - 1], &lin);
                row.push(next);
            }
            powers.push(row);
        }
        let mut out = HomogeneousPolyMap::zeros(self.m, self.k, self.d);
        for (t, alpha) in self.indices.iter().enumerate() {
            let mut prod = one.clone();
            for (i, &a) in alpha.0.iter().enumerate() {
                if a > 0 {
                    prod = mul(&prod, &powers[i][a as usize]);
                }
            }
            for (e, c) in prod {
                let off = out.offset(&e).expect("homogeneous product keeps degree");
                for comp in 0..self.k {
                    out.coeffs[off * self.k + comp] += c * self.coeff(t, comp);
                }
            }
        }
        Ok(out)
    }

    /// JSON object `{m, k, d, order: "graded-lex", coeffs}`; floats round-trip exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolyJson {
            m: self.m,
            k: self.k,
            d: self.d,
            order: "graded-lex".to_string(),
            coeffs: self.coeffs.clone(),
        })
        .expect("finite coefficients serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PolyJson =
            serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("polynomial JSON: {e}")))?;
        if p.order != "graded-lex" {
            return Err(Error::InvalidArgument(format!("unsupported order {:?}", p.order)));
        }
        Self::from_coeffs(p.m, p.k, p.d, p.coeffs)
    }
}

/// Samples a degree-`d` Kostlan map `R^{m+1} → R^k`.
pub fn sample_kostlan(m: usize, k: usize, d: u32, s: &mut RngStream) -> HomogeneousPolyMap {
    let mut p = HomogeneousPolyMap::zeros(m, k, d);
    for t in 0..p.indices.len() {
        let w = multinomial(&p.indices[t]).sqrt();
        for c in 0..k {
            p.coeffs[t * k + c] = w * s.normal();
        }
    }
    p
}

/// The rescaled field `X_d(u) = P(1, u/√d)`.
pub fn rescaled_eval(p: &HomogeneousPolyMap, u: &[f64]) -> Result<Vec<f64>> {
    if p.d == 0 {
        return Err(Error::InvalidArgument("rescaling needs degree ≥ 1".into()));
    }
    let scale = 1.0 / f64::from(p.d).sqrt();
    let mut x = Vec::with_capacity(u.len() + 1);
    x.push(1.0);
    x.extend(u.iter().map(|ui| ui * scale));
    p.eval(&x)
}

/// A sum `Σ_ℓ A_ℓ ψ_ℓ` of independent Kostlan maps of degrees `0..=d` mixed by
/// `k × k` matrices.
#[derive(Clone, Debug)]
pub struct MixedKostlanMap {
    parts: Vec<(DMatrix<f64>, HomogeneousPolyMap)>,
}

impl MixedKostlanMap {
    pub fn sample(m: usize, mixing: &[DMatrix<f64>], s: &mut RngStream) -> Result<Self> {
        let k = mixing.first().map(|a| a.nrows()).unwrap_or(1);
        let mut parts = Vec::with_capacity(mixing.len());
        for (l, a) in mixing.iter().enumerate() {
            if a.nrows() != k || a.ncols() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: a.nrows(),
                });
            }
            parts.push((a.clone(), sample_kostlan(m, k, l as u32, s)));
        }
        Ok(Self { parts })
    }

    /// Scalar mixture `Σ √c_ℓ ψ_ℓ` with covariance `Σ c_ℓ (xᵀy)^ℓ`.
    pub fn sample_series(m: usize, series: &[f64], s: &mut RngStream) -> Result<Self> {
        if series.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidArgument("series coefficients must be nonnegative".into()));
        }
        let mixing: Vec<DMatrix<f64>> = series.iter().map(|c| DMatrix::from_element(1, 1, c.sqrt())).collect();
        Self::sample(m, &mixing, s)
    }

    pub fn parts(&self) -> &[(DMatrix<f64>, HomogeneousPolyMap)] {
        &self.parts
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.parts.first().map(|p| p.1.k()).unwrap_or(1);
        let mut out = nalgebra::DVector::zeros(k);
        for (a, p) in &self.parts {
            out += a * nalgebra::DVector::from_vec(p.eval(x)?);
        }
        Ok(out.iter().copied().collect())
    }
}

/// Covariance kernel families; every variant is `φ(xᵀy)·1_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelVariant {
    /// `(xᵀy)^d` on `R^{m+1}`.
    Kostlan(u32),
    /// `(1 + uᵀv)^d` on `R^m`.
    Dehomogenized(u32),
    /// `(1 + uᵀv/d)^d` on `R^m`.
    Rescaled(u32),
    /// `exp(uᵀv)` on `R^m`.
    BargmannFock,
    /// `Σ c_ℓ (xᵀy)^ℓ` on `R^{m+1}`.
    IsotropicSeries(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub k: usize,
}

impl KernelSpec {
    pub fn new(variant: KernelVariant, k: usize) -> Result<Self> {
        if let KernelVariant::IsotropicSeries(c) = &variant {
            if c.is_empty() || c.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidArgument(
                    "isotropic series needs nonnegative finite coefficients".into(),
                ));
            }
        }
        if let KernelVariant::Rescaled(0) = variant {
            return Err(Error::InvalidArgument("rescaled kernel needs d ≥ 1".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        Ok(Self { variant, k })
    }

    pub fn scalar(variant: KernelVariant) -> Self {
        Self::new(variant, 1).expect("valid scalar kernel")
    }

    /// Homogeneous variants live on `R^{m+1}` (or the sphere); the others on a chart `R^m`.
    pub fn is_homogeneous(&self) -> bool {
        matches!(self.variant, KernelVariant::Kostlan(_) | KernelVariant::IsotropicSeries(_))
    }

    /// `[φ(t), φ'(t), φ''(t)]` for the profile with `K(x, y) = φ(xᵀy)`.
    pub fn profile(&self, t: f64) -> [f64; 3] {
        fn power_derivs(base: f64, d: u32, inner: f64) -> [f64; 3] {
            // derivatives of base(t)^d where base' = inner
            let df = f64::from(d);
            let p = |e: i64| if e < 0 { 0.0 } else { base.powi(e as i32) };
            let d_i = i64::from(d);
            [
                p(d_i),
                df * inner * p(d_i - 1),
                df * (df - 1.0) * inner * inner * p(d_i - 2),
            ]
        }
        match &self.variant {
            KernelVariant::Kostlan(d) => power_derivs(t, *d, 1.0),
            KernelVariant::Dehomogenized(d) => power_derivs(1.0 + t, *d, 1.0),
            KernelVariant::Rescaled(d) => {
                let df = f64::from(*d);
                let base = 1.0 + t / df;
                if base > 0.0 {
                    let lb = (t / df).ln_1p();
                    let v0 = (df * lb).exp();
                    let v1 = ((df - 1.0) * lb).exp();
                    let v2 = ((df - 2.0) * lb).exp();
                    [v0, v1, (df - 1.0) / df * v2]
                } else {
                    power_derivs(base, *d, 1.0 / df)
                }
            }
            KernelVariant::BargmannFock => {
                let e = t.exp();
                [e, e, e]
            }
            KernelVariant::IsotropicSeries(c) => {
                let mut out = [0.0; 3];
                for (l, &cl) in c.iter().enumerate() {
                    let d = power_derivs(t, l as u32, 1.0);
                    for i in 0..3 {
                        out[i] += cl * d[i];
                    }
                }
                out
            }
        }
    }

    pub fn scalar_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let t: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        Ok(self.profile(t)[0])
    }

    /// Scalar kernel on chart coordinates: homogeneous variants are pulled
    /// back along `u ↦ (1, u)`.
    pub fn chart_eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if self.is_homogeneous() {
            let lift = |w: &[f64]| std::iter::once(1.0).chain(w.iter().copied()).collect::<Vec<_>>();
            self.scalar_eval(&lift(u), &lift(v))
        } else {
            self.scalar_eval(u, v)
        }
    }
}

/// `K(x, y)` as a `k × k` matrix.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let r = spec.scalar_eval(x, y)?;
    Ok(DMatrix::identity(spec.k, spec.k) * r)
}

/// Finite-difference step for kernel derivative distances of a given total order.
fn fd_step(total_order: u32) -> f64 {
    if total_order <= 2 {
        1e-4
    } else {
        1e-3
    }
}

fn stencil(order: u32, h: f64) -> Vec<(f64, f64)> {
    match order {
        0 => vec![(0.0, 1.0)],
        1 => vec![(h, 0.5 / h), (-h, -0.5 / h)],
        2 => vec![(h, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (-h, 1.0 / (h * h))],
        _ => unreachable!("derivative order per coordinate is at most 2"),
    }
}

/// Central-difference mixed partial `∂^orders f(z)`.
fn fd_partial(f: &dyn Fn(&[f64]) -> f64, z: &[f64], orders: &[u32]) -> f64 {
    let total: u32 = orders.iter().sum();
    let h = fd_step(total);
    let stencils: Vec<Vec<(f64, f64)>> = orders.iter().map(|&o| stencil(o, h)).collect();
    let mut acc = 0.0;
    let mut idx = vec![0usize; z.len()];
    let mut point = z.to_vec();
    loop {
        let mut w = 1.0;
        for (j, st) in stencils.iter().enumerate() {
            let (off, wt) = st[idx[j]];
            point[j] = z[j] + off;
            w *= wt;
        }
        acc += w * f(&point);
        // advance odometer
        let mut j = 0;
        loop {
            if j == z.len() {
                return acc;
            }
            idx[j] += 1;
            if idx[j] < stencils[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn orders_up_to(vars: usize, r: u32) -> Vec<Vec<u32>> {
    (0..=r).flat_map(|d| enumerate_multi_indices(vars, d).into_iter().map(|m| m.0)).collect()
}

/// Sup over grid pairs of the max-norm difference of all mixed partials
/// `∂_x^a ∂_y^b` with `|a|, |b| ≤ r`, on chart coordinates.
///
/// Derivatives are central differences with step `1e-4` up to total order 2
/// and `1e-3` for orders 3 and 4.
pub fn kernel_sup_distance(a: &KernelSpec, b: &KernelSpec, grid: &[Vec<f64>], r: u32) -> Result<f64> {
    if r > 2 {
        return Err(Error::InvalidArgument(format!("derivative order {r} > 2")));
    }
    if a.k != b.k {
        return Err(Error::DimensionMismatch {
            expected: a.k,
            got: b.k,
        });
    }
    let Some(first) = grid.first() else {
        return Ok(0.0);
    };
    let n = first.len();
    let diff = |z: &[f64]| -> f64 {
        let (x, y) = z.split_at(n);
        a.chart_eval(x, y).unwrap_or(f64::NAN) - b.chart_eval(x, y).unwrap_or(f64::NAN)
    };
    let orders = orders_up_to(n, r);
    let mut sup: f64 = 0.0;
    let mut z = vec![0.0; 2 * n];
    for x in grid {
        for y in grid {
            if x.len() != n || y.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: x.len().max(y.len()),
                });
            }
            z[..n].copy_from_slice(x);
            z[n..].copy_from_slice(y);
            for oa in &orders {
                for ob in &orders {
                    let o: Vec<u32> = oa.iter().chain(ob).copied().collect();
                    let v = if r == 0 { diff(&z) } else { fd_partial(&diff, &z, &o) };
                    if v.is_nan() {
                        return Err(Error::InvalidArgument("kernel evaluation failed on grid".into()));
                    }
                    sup = sup.max(v.abs());
                }
            }
        }
    }
    Ok(sup)
}

/// Regular grid of `n` points per axis on `[lo, hi]^dim`.
pub fn cube_grid(dim: usize, lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect();
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// `Σ_{j>N} x^j/j!` with `x = m R²`: the pointwise variance of the truncated
/// Bargmann–Fock tail on the box `|uᵢ| ≤ R`.
pub fn bf_tail(m: usize, radius: f64, order: usize) -> f64 {
    let x = m as f64 * radius * radius;
    if x == 0.0 {
        return 0.0;
    }
    let j0 = order as f64 + 1.0;
    let mut term = (j0 * x.ln() - ln_factorial(order + 1)).exp();
    let mut sum = 0.0;
    let mut j = j0;
    loop {
        sum += term;
        j += 1.0;
        term *= x / j;
        if term == 0.0 || (j > x && term < sum * 1e-17) {
            break;
        }
    }
    sum
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Smallest `N` whose Bargmann–Fock tail variance on the box of radius `R` is `≤ eps`.
pub fn bf_truncation_order(m: usize, radius: f64, eps: f64) -> Result<usize> {
    if !(radius > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument("radius and eps must be positive".into()));
    }
    (0..100_000)
        .find(|&n| bf_tail(m, radius, n) <= eps)
        .ok_or_else(|| Error::InvalidArgument("truncation order exceeds 100000".into()))
}

/// Truncation data for a Bargmann–Fock sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub order: usize,
    /// Evaluation is restricted to `max |uᵢ| ≤ radius`.
    pub radius: f64,
    pub tail_bound: f64,
}

impl Truncation {
    pub fn for_box(m: usize, radius: f64, eps: f64) -> Result<Self> {
        let order = bf_truncation_order(m, radius, eps)?;
        Ok(Self {
            order,
            radius,
            tail_bound: bf_tail(m, radius, order),
        })
    }

    pub fn with_order(m: usize, order: usize, radius: f64) -> Self {
        Self {
            order,
            radius,
            tail_bound: bf_tail(m, radius, order),
        }
    }
}

/// Truncated Bargmann–Fock field `Σ_{|β|≤N} ξ_β u^β`, `ξ_β ~ N(0, 1/β! 1_k)`.
#[derive(Clone, Debug)]
pub struct BargmannFockSample {
    m: usize,
    k: usize,
    truncation: Truncation,
    indices: Vec<MultiIndex>,
    coeffs: Vec<f64>,
}

impl BargmannFockSample {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: u.len(),
            });
        }
        if u.iter().any(|x| x.abs() > self.truncation.radius) {
            return Err(Error::OutsideDomain(u.to_vec(), self.truncation.radius));
        }
        Ok(())
    }

    pub fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(eval_monomials(&self.indices, &self.coeffs, self.k, u, self.truncation.order as u32, false).0)
    }

    pub fn eval_and_grad(&self, u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check(u)?;
        Ok(eval_monomials(&self.indices, &self.coeffs, self.k, u, self.truncation.order as u32, true))
    }
}

pub fn sample_bargmann_fock(m: usize, k: usize, truncation: Truncation, s: &mut RngStream) -> BargmannFockSample {
    let indices = enumerate_affine_indices(m, truncation.order as u32);
    let mut coeffs = Vec::with_capacity(indices.len() * k);
    for beta in &indices {
        let sd = 1.0 / beta.factorial().sqrt();
        for _ in 0..k {
            coeffs.push(sd * s.normal());
        }
    }
    BargmannFockSample {
        m,
        k,
        truncation,
        indices,
        coeffs,
    }
}
