//! Real zero counting for sampled polynomial maps: Sturm sequences for
//! univariate and projective-line counts, resultant elimination for pairs of
//! plane curves, and the Monte-Carlo averaging harness.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::RngStream;
use crate::kostlan::{HomogeneousPolyMap, MixedKostlanMap};
use crate::stats::Welford;

/// Relative tolerance for treating a coefficient as zero.
pub const COEFF_TOL: f64 = 1e-12;
/// Remainders whose leading coefficient sits below this (relative) are near-degenerate.
const CERT_TOL: f64 = 1e-9;
pub const MAX_DEGREE: usize = 64;

/// Dense univariate polynomial `c₀ + c₁t + … + c_d t^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariatePoly {
    coeffs: Vec<f64>,
}

impl UnivariatePoly {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree {} exceeds {MAX_DEGREE}",
                coeffs.len() - 1
            )));
        }
        if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFiniteValue(*c, 0.0));
        }
        Ok(Self { coeffs })
    }

    /// `Π (t − rᵢ)`.
    pub fn from_roots(roots: &[f64]) -> Self {
        let mut c = vec![1.0];
        for &r in roots {
            c = mul_raw(&c, &[-r, 1.0]);
        }
        Self { coeffs: c }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn scale(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.scale() == 0.0
    }

    /// Degree after dropping leading coefficients below `1e-12·max|cᵢ|`.
    pub fn degree(&self) -> usize {
        trim(&self.coeffs, COEFF_TOL * self.scale()).len().saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        horner(&self.coeffs, t)
    }

    pub fn derivative(&self) -> Self {
        Self {
            coeffs: derivative_raw(&self.coeffs),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            coeffs: mul_raw(&self.coeffs, &other.coeffs),
        }
    }

    /// `t^d p(1/t)` for the trimmed degree `d`.
    pub fn reversed(&self) -> Self {
        let mut c = trim(&self.coeffs, COEFF_TOL * self.scale()).to_vec();
        c.reverse();
        Self { coeffs: c }
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * t + x)
}

fn derivative_raw(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &x)| i as f64 * x).collect()
}

fn mul_raw(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn add_raw(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

fn trim(c: &[f64], tol: f64) -> &[f64] {
    let mut n = c.len();
    while n > 0 && c[n - 1].abs() <= tol {
        n -= 1;
    }
    &c[..n]
}

fn normalized(c: &[f64]) -> Vec<f64> {
    let s = c.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if s == 0.0 {
        return c.to_vec();
    }
    c.iter().map(|x| x / s).collect()
}

/// Remainder of `a` divided by `b` (`b` trimmed, nonzero leading coefficient).
fn rem_raw(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.to_vec();
    let db = b.len() - 1;
    let lead = b[db];
    while r.len() > db {
        let q = r[r.len() - 1] / lead;
        let shift = r.len() - 1 - db;
        for (j, bj) in b.iter().enumerate() {
            r[shift + j] -= q * bj;
        }
        r.pop();
    }
    r
}

/// Outcome of a counting routine.
#[derive(Clone, Debug, PartialEq)]
pub struct CountResult {
    pub count: usize,
    pub certified: bool,
    /// Max normalized `|p|` at the reported roots.
    pub residual: f64,
    /// Affine roots located, in increasing order.
    pub roots: Vec<f64>,
}

struct Sturm {
    seq: Vec<Vec<f64>>,
    certified: bool,
}

impl Sturm {
    /// Sturm sequence of a trimmed nonconstant polynomial, every element normalized to max 1.
    fn new(p: &[f64]) -> Self {
        let mut seq = vec![normalized(p), normalized(&derivative_raw(p))];
        let mut certified = true;
        loop {
            let n = seq.len();
            let r: Vec<f64> = rem_raw(&seq[n - 2], &seq[n - 1]).iter().map(|x| -x).collect();
            let rt = trim(&r, COEFF_TOL);
            if rt.is_empty() {
                // gcd of positive degree: a repeated root
                if seq[n - 1].len() > 1 {
                    certified = false;
                }
                break;
            }
            if rt[rt.len() - 1].abs() < CERT_TOL {
                certified = false;
            }
            seq.push(normalized(rt));
            if rt.len() == 1 {
                break;
            }
        }
        Sturm { seq, certified }
    }

    fn variations(&self, t: f64) -> usize {
        let mut count = 0;
        let mut last = 0.0f64;
        for p in &self.seq {
            let v = horner(p, t);
            if v != 0.0 {
                if last != 0.0 && (v > 0.0) != (last > 0.0) {
                    count += 1;
                }
                last = v;
            }
        }
        count
    }

    /// Distinct roots in `(a, b]`.
    fn count(&self, a: f64, b: f64) -> usize {
        self.variations(a).saturating_sub(self.variations(b))
    }

    fn squarefree(&self) -> bool {
        self.seq.last().map(|p| p.len() == 1).unwrap_or(true)
    }
}

/// Roots of `p` in `(lo, hi]`, isolated by Sturm bisection and polished by
/// sign bisection. Returns `(roots, certified)`.
fn isolate(p: &[f64], sturm: &Sturm, lo: f64, hi: f64) -> (Vec<f64>, bool) {
    let mut roots = Vec::new();
    let mut certified = true;
    let mut stack = vec![(lo, hi, sturm.count(lo, hi), 0u32)];
    while let Some((a, b, n, depth)) = stack.pop() {
        if n == 0 {
            continue;
        }
        if n == 1 {
            match bisect_root(p, a, b) {
                Some(r) => roots.push(r),
                None => {
                    certified = false;
                    roots.push(0.5 * (a + b));
                }
            }
            continue;
        }
        if depth > 60 {
            certified = false;
            roots.extend(std::iter::repeat(0.5 * (a + b)).take(n));
            continue;
        }
        let mid = 0.5 * (a + b);
        let left = sturm.count(a, mid);
        let right = sturm.count(mid, b);
        if left + right != n {
            certified = false;
        }
        stack.push((a, mid, left, depth + 1));
        stack.push((mid, b, right, depth + 1));
    }
    roots.sort_by(f64::total_cmp);
    (roots, certified)
}

/// Bisection on a sign change in `(a, b]`; `None` if the endpoints agree in sign.
fn bisect_root(p: &[f64], mut a: f64, mut b: f64) -> Option<f64> {
    let fb = horner(p, b);
    if fb == 0.0 {
        return Some(b);
    }
    let fa = horner(p, a);
    if fa == 0.0 || (fa > 0.0) == (fb > 0.0) {
        return None;
    }
    let sa = fa > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = horner(p, m);
        if fm == 0.0 {
            return Some(m);
        }
        if (fm > 0.0) == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

fn residual(p: &[f64], t: f64) -> f64 {
    let scale: f64 = p.iter().enumerate().map(|(i, c)| c.abs() * t.abs().powi(i as i32)).sum();
    if scale == 0.0 {
        0.0
    } else {
        horner(p, t).abs() / scale
    }
}

/// Distinct real roots of `p` on `[lo, hi]`.
fn roots_in(p: &[f64], lo: f64, hi: f64) -> (Vec<f64>, bool) {
    if p.len() <= 1 {
        return (vec![], true);
    }
    let sturm = Sturm::new(p);
    let (mut roots, cert) = isolate(p, &sturm, lo, hi);
    if horner(p, lo) == 0.0 {
        roots.insert(0, lo);
    }
    (roots, cert && sturm.certified)
}

/// Number of distinct real roots on the whole line.
///
/// Roots in `[−1, 1]` come from `p`; the rest are reciprocals of the roots of
/// the reversed polynomial in `(−1, 1)`.
pub fn count_real_roots(p: &UnivariatePoly) -> Result<CountResult> {
    if p.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let c = normalized(trim(&p.coeffs, COEFF_TOL * p.scale()));
    let d = c.len() - 1;
    if d == 0 {
        return Ok(CountResult {
            count: 0,
            certified: true,
            residual: 0.0,
            roots: vec![],
        });
    }
    let sturm = Sturm::new(&c);
    let (mut roots, mut certified) = isolate(&c, &sturm, -1.0, 1.0);
    if horner(&c, -1.0) == 0.0 {
        roots.insert(0, -1.0);
    }
    certified &= sturm.certified;
    let mut rev = c.clone();
    rev.reverse();
    let rsturm = Sturm::new(&rev);
    let (outer, rc) = isolate(&rev, &rsturm, -1.0, 1.0);
    certified &= rc && rsturm.certified;
    let mut res: f64 = roots.iter().map(|&r| residual(&c, r)).fold(0.0, f64::max);
    for r in outer {
        if r >= 1.0 || r == 0.0 {
            continue;
        }
        res = res.max(residual(&rev, r));
        roots.push(1.0 / r);
    }
    roots.sort_by(f64::total_cmp);
    let count = roots.len();
    if sturm.squarefree() && count % 2 != d % 2 {
        certified = false;
    }
    Ok(CountResult {
        count,
        certified,
        residual: res,
        roots,
    })
}

/// Zeros in `RP¹` of a scalar binary form: roots of `P(1, t)` plus the point
/// `[0:1]` when the `x₁ᵈ` coefficient vanishes.
pub fn projective_zero_count(p: &HomogeneousPolyMap) -> Result<CountResult> {
    if p.m() != 1 || p.k() != 1 {
        return Err(Error::Unsupported("projective_zero_count needs m = 1, k = 1".into()));
    }
    let d = p.degree() as usize;
    // Graded-lex storage is x₀ᵈ, x₀^{d−1}x₁, …, x₁ᵈ: coefficient j belongs to t^j.
    let coeffs = p.coeffs().to_vec();
    let scale = coeffs.iter().fold(0.0, |m: f64, c| m.max(c.abs()));
    if scale == 0.0 {
        return Err(Error::ZeroPolynomial);
    }
    let mut r = count_real_roots(&UnivariatePoly::new(coeffs.clone())?)?;
    if coeffs[d].abs() <= COEFF_TOL * scale {
        r.count += 1;
    }
    Ok(r)
}

/// Zeros on `S¹` of a binary form: twice the projective count.
pub fn sphere_zero_count(p: &HomogeneousPolyMap) -> Result<CountResult> {
    let mut r = projective_zero_count(p)?;
    r.count *= 2;
    Ok(r)
}

/// Zeros on `S¹` of `Σ a_ℓ ψ_ℓ` for binary forms `ψ_ℓ` of mixed degrees.
///
/// With `t = tan(θ/2)` the restriction becomes `G(t)/(1+t²)^D` for
/// `G(t) = Σ a_ℓ ψ_ℓ(1−t², 2t)(1+t²)^{D−ℓ}`; the point `θ = π` is a zero
/// exactly when `deg G < 2D`.
pub fn circle_zero_count_parts(parts: &[(f64, &HomogeneousPolyMap)]) -> Result<CountResult> {
    let top = parts.iter().map(|(_, p)| p.degree()).max().unwrap_or(0) as usize;
    let mut g = vec![0.0];
    for (a, p) in parts {
        if p.m() != 1 || p.k() != 1 {
            return Err(Error::Unsupported("circle counts need m = 1, k = 1".into()));
        }
        let l = p.degree() as usize;
        let mut term = vec![0.0];
        for (t, idx) in p.indices().iter().enumerate() {
            let c = a * p.coeff(t, 0);
            if c == 0.0 {
                continue;
            }
            let mut mono = vec![c];
            for _ in 0..idx.0[0] {
                mono = mul_raw(&mono, &[1.0, 0.0, -1.0]);
            }
            for _ in 0..idx.0[1] {
                mono = mul_raw(&mono, &[0.0, 2.0]);
            }
            term = add_raw(&term, &mono);
        }
        for _ in l..top {
            term = mul_raw(&term, &[1.0, 0.0, 1.0]);
        }
        g = add_raw(&g, &term);
    }
    let poly = UnivariatePoly::new(g)?;
    if poly.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let mut r = count_real_roots(&poly)?;
    if poly.degree() < 2 * top {
        r.count += 1;
    }
    Ok(r)
}

pub fn circle_zero_count(map: &MixedKostlanMap) -> Result<CountResult> {
    let parts: Vec<(f64, &HomogeneousPolyMap)> = map
        .parts()
        .iter()
        .map(|(a, p)| {
            if a.nrows() != 1 {
                Err(Error::Unsupported("circle counts need k = 1".into()))
            } else {
                Ok((a[(0, 0)], p))
            }
        })
        .collect::<Result<_>>()?;
    circle_zero_count_parts(&parts)
}

/// Bivariate polynomial `Σ c[i][j] aⁱ bʲ`.
type Bivariate = Vec<Vec<f64>>;

fn chart_poly(p: &HomogeneousPolyMap, chart: usize) -> Bivariate {
    let d = p.degree() as usize;
    let (ja, jb) = other_axes(chart);
    let mut c = vec![vec![0.0; d + 1]; d + 1];
    for (t, idx) in p.indices().iter().enumerate() {
        c[idx.0[ja] as usize][idx.0[jb] as usize] += p.coeff(t, 0);
    }
    c
}

fn other_axes(chart: usize) -> (usize, usize) {
    match chart {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

fn biv_eval(c: &Bivariate, a: f64, b: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, row| acc * a + horner(row, b))
}

fn biv_grad(c: &Bivariate, a: f64, b: f64) -> (f64, f64) {
    let mut da = 0.0;
    let mut db = 0.0;
    for (i, row) in c.iter().enumerate() {
        let ai = a.powi(i as i32);
        if i > 0 {
            da += i as f64 * a.powi(i as i32 - 1) * horner(row, b);
        }
        db += ai * horner(&derivative_raw(row), b);
    }
    (da, db)
}

/// Coefficients in `a` after fixing `b`.
fn in_a(c: &Bivariate, b: f64) -> Vec<f64> {
    c.iter().map(|row| horner(row, b)).collect()
}

fn biv_scale(c: &Bivariate) -> f64 {
    c.iter().flatten().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Degree in `a`, ignoring rows below tolerance.
fn degree_in_a(c: &Bivariate, tol: f64) -> usize {
    (0..c.len()).rev().find(|&i| c[i].iter().any(|x| x.abs() > tol)).unwrap_or(0)
}

/// `Res_a(P, Q)(b)` by evaluating Sylvester determinants at roots of unity.
fn resultant(p: &Bivariate, q: &Bivariate, dp: usize, dq: usize, degree_bound: usize) -> (Vec<f64>, f64) {
    let n = degree_bound + 1;
    let size = dp + dq;
    let evals: Vec<Complex64> = (0..n)
        .map(|k| {
            let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
            let pa: Vec<Complex64> = (0..=dp).map(|i| ceval(&p[i], z)).collect();
            let qa: Vec<Complex64> = (0..=dq).map(|i| ceval(&q[i], z)).collect();
            if size == 0 {
                return Complex64::new(1.0, 0.0);
            }
            let mut m = DMatrix::<Complex64>::zeros(size, size);
            for r in 0..dq {
                for i in 0..=dp {
                    m[(r, r + dp - i)] = pa[i];
                }
            }
            for r in 0..dp {
                for i in 0..=dq {
                    m[(dq + r, r + dq - i)] = qa[i];
                }
            }
            m.determinant()
        })
        .collect();
    let mut coeffs = vec![0.0; n];
    let mut imag = 0.0f64;
    for (j, c) in coeffs.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, e) in evals.iter().enumerate() {
            acc += e * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64);
        }
        acc /= n as f64;
        *c = acc.re;
        imag = imag.max(acc.im.abs());
    }
    let scale = coeffs.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    (coeffs, if scale > 0.0 { imag / scale } else { f64::INFINITY })
}

fn ceval(c: &[f64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &x| acc * z + x)
}

/// Chart margin beyond the unit box.
const CHART_MARGIN: f64 = 1e-3;
/// Points closer than this (unit representatives, up to sign) count once.
pub const DEDUP_RADIUS: f64 = 1e-7;

/// Common zeros in `RP²` of two scalar ternary forms, as unit representatives.
///
/// Each point has a coordinate of maximal modulus; dividing by it lands in the
/// box `[−1, 1]²` of the corresponding chart, so the three charts `xᵢ = 1`
/// restricted to that box cover `RP²` with bounded coordinates. In each chart
/// the second coordinate is eliminated by a Sylvester resultant, the resultant's
/// roots in the box are isolated by Sturm bisection, and the remaining
/// coordinate is recovered from the univariate roots and Newton-polished.
pub fn system_solutions_rp2(p1: &HomogeneousPolyMap, p2: &HomogeneousPolyMap) -> Result<(Vec<[f64; 3]>, CountResult)> {
    for p in [p1, p2] {
        if p.m() != 2 || p.k() != 1 {
            return Err(Error::Unsupported("system_count_rp2 needs m = 2, k = 1".into()));
        }
        if p.degree() == 0 || p.degree() > 4 {
            return Err(Error::Unsupported("degrees must lie in 1..=4".into()));
        }
    }
    let (d1, d2) = (p1.degree() as usize, p2.degree() as usize);
    let mut points: Vec<[f64; 3]> = Vec::new();
    let mut certified = true;
    let mut worst = 0.0f64;
    let lim = 1.0 + CHART_MARGIN;
    for chart in 0..3 {
        let (c1, c2) = (chart_poly(p1, chart), chart_poly(p2, chart));
        let (s1, s2) = (biv_scale(&c1), biv_scale(&c2));
        if s1 == 0.0 || s2 == 0.0 {
            return Err(Error::DegenerateSystem("a form vanishes identically".into()));
        }
        let c1: Bivariate = c1.iter().map(|r| r.iter().map(|x| x / s1).collect()).collect();
        let c2: Bivariate = c2.iter().map(|r| r.iter().map(|x| x / s2).collect()).collect();
        let e1 = degree_in_a(&c1, COEFF_TOL);
        let e2 = degree_in_a(&c2, COEFF_TOL);
        // A form free of `a` restricts `b` on its own; its resultant would only be a power of it.
        let (res, imag) = match (e1, e2) {
            (0, _) => (c1[0].clone(), 0.0),
            (_, 0) => (c2[0].clone(), 0.0),
            _ => resultant(&c1, &c2, e1, e2, d1 * d2),
        };
        if imag > 1e-8 {
            certified = false;
        }
        let rs = trim(&res, COEFF_TOL * res.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
        if rs.is_empty() {
            return Err(Error::DegenerateSystem("resultant vanishes identically".into()));
        }
        let rs = normalized(rs);
        let (bs, cert) = roots_in(&rs, -lim, lim);
        certified &= cert;
        for b in bs {
            let f1 = in_a(&c1, b);
            let f2 = in_a(&c2, b);
            let t1 = trim(&f1, 1e-9);
            let t2 = trim(&f2, 1e-9);
            if t1.len() <= 1 && t2.len() <= 1 {
                // both leading coefficients vanish: the common zero sits at a = ∞
                continue;
            }
            let (src, other) = if t1.len() > 1 { (t1, &c2) } else { (t2, &c1) };
            let cands = count_real_roots(&UnivariatePoly::new(src.to_vec())?)?.roots;
            let mut found = false;
            for a0 in cands {
                if biv_eval(other, a0, b).abs() > 1e-4 {
                    continue;
                }
                let (a, bb, r) = newton2(&c1, &c2, a0, b);
                if r > 1e-9 {
                    continue;
                }
                found = true;
                worst = worst.max(r);
                if a.abs() > lim || bb.abs() > lim {
                    continue;
                }
                let (ja, jb) = other_axes(chart);
                let mut x = [0.0; 3];
                x[chart] = 1.0;
                x[ja] = a;
                x[jb] = bb;
                let x = canonical(x);
                if !points.iter().any(|q| dist(q, &x) < DEDUP_RADIUS) {
                    points.push(x);
                }
            }
            if !found {
                certified = false;
            }
        }
    }
    let count = points.len();
    if count > d1 * d2 || count % 2 != (d1 * d2) % 2 {
        certified = false;
    }
    Ok((
        points,
        CountResult {
            count,
            certified,
            residual: worst,
            roots: vec![],
        },
    ))
}

pub fn system_count_rp2(p1: &HomogeneousPolyMap, p2: &HomogeneousPolyMap) -> Result<CountResult> {
    system_solutions_rp2(p1, p2).map(|r| r.1)
}

fn newton2(c1: &Bivariate, c2: &Bivariate, mut a: f64, mut b: f64) -> (f64, f64, f64) {
    let res = |a: f64, b: f64| biv_eval(c1, a, b).abs().max(biv_eval(c2, a, b).abs());
    for _ in 0..30 {
        let (f, g) = (biv_eval(c1, a, b), biv_eval(c2, a, b));
        let (fa, fb) = biv_grad(c1, a, b);
        let (ga, gb) = biv_grad(c2, a, b);
        let det = fa * gb - fb * ga;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let da = (f * gb - fb * g) / det;
        let db = (fa * g - f * ga) / det;
        let (na, nb) = (a - da, b - db);
        if res(na, nb) > res(a, b) {
            break;
        }
        a = na;
        b = nb;
        if da.abs().max(db.abs()) < 1e-15 {
            break;
        }
    }
    (a, b, res(a, b))
}

/// Unit representative with a positive largest coordinate.
fn canonical(x: [f64; 3]) -> [f64; 3] {
    let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let i = (0..3).max_by(|&i, &j| x[i].abs().total_cmp(&x[j].abs())).unwrap_or(0);
    let s = if x[i] < 0.0 { -1.0 } else { 1.0 } / n;
    [x[0] * s, x[1] * s, x[2] * s]
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let plus = (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>();
    let minus = (0..3).map(|i| (p[i] + q[i]).powi(2)).sum::<f64>();
    plus.min(minus).sqrt()
}

/// Monte-Carlo summary over certified counts.
#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    pub mean: f64,
    pub stderr: f64,
    /// Uncertified draws over all draws.
    pub resample_rate: f64,
    pub trials: usize,
    pub resamples: usize,
}

pub const MAX_ATTEMPTS: u64 = 20;
pub const MAX_RESAMPLE_RATE: f64 = 0.05;

/// Averages `counter(sampler(stream))` over `trials` draws.
///
/// Trial `i`, attempt `j` uses `s.derive(i).derive(j)`; uncertified or
/// degenerate draws are replaced by the next attempt. Trials run in
/// parallel and are aggregated in index order, so results do not depend on
/// the thread count.
pub fn mc_expected_count<T, S, C>(sampler: S, counter: C, trials: usize, s: &RngStream) -> Result<McSummary>
where
    S: Fn(&mut RngStream) -> T + Sync,
    C: Fn(&T) -> Result<CountResult> + Sync,
{
    if trials < 30 {
        return Err(Error::InvalidArgument("mc_expected_count needs at least 30 trials".into()));
    }
    let outcomes: Vec<Result<(usize, u64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..MAX_ATTEMPTS {
                let mut stream = s.derive(i).derive(attempt);
                let instance = sampler(&mut stream);
                match counter(&instance) {
                    Ok(r) if r.certified => return Ok((r.count, attempt)),
                    Ok(_) | Err(Error::ZeroPolynomial) | Err(Error::DegenerateSystem(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Err(Error::ExcessiveResampling { rate: 1.0 })
        })
        .collect();
    let mut acc = Welford::new();
    let mut resamples = 0u64;
    let mut exhausted = false;
    for o in outcomes {
        match o {
            Ok((count, extra)) => {
                acc.push(count as f64);
                resamples += extra;
            }
            Err(Error::ExcessiveResampling { .. }) => {
                exhausted = true;
                resamples += MAX_ATTEMPTS;
            }
            Err(e) => return Err(e),
        }
    }
    let rate = resamples as f64 / (trials as u64 + resamples) as f64;
    if exhausted || rate >= MAX_RESAMPLE_RATE {
        return Err(Error::ExcessiveResampling { rate });
    }
    Ok(McSummary {
        mean: acc.mean(),
        stderr: acc.stderr(),
        resample_rate: rate,
        trials,
        resamples: resamples as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::seed_stream;
    use crate::kostlan::sample_kostlan;
    use proptest::prelude::*;

    fn poly(c: &[f64]) -> UnivariatePoly {
        UnivariatePoly::new(c.to_vec()).unwrap()
    }

    /// Sign changes on a fine grid over both charts.
    fn grid_count(p: &UnivariatePoly) -> usize {
        let c = p.coeffs();
        let mut rev = c.to_vec();
        rev.reverse();
        let n = 200_000;
        let changes = |q: &[f64], open: bool| {
            let mut count = 0;
            let mut prev = horner(q, -1.0);
            for i in 1..=n {
                let t = -1.0 + 2.0 * i as f64 / n as f64;
                if open && i == n {
                    break;
                }
                let v = horner(q, t);
                if (v > 0.0) != (prev > 0.0) {
                    count += 1;
                }
                prev = v;
            }
            count
        };
        // Sign changes of the reversed polynomial at 0 are poles of p(1/t), not roots.
        let rev_changes = changes(&rev, true);
        let pole = if (horner(&rev, -1e-9) > 0.0) != (horner(&rev, 1e-9) > 0.0) { 1 } else { 0 };
        changes(c, false) + rev_changes - pole
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_real_roots(&poly(&[1.0, 0.0, 1.0])).unwrap().count, 0);
        let r = count_real_roots(&poly(&[0.0, -1.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.count, 3);
        assert!(r.certified);
        assert!(r.roots.iter().zip([-1.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-14));
        assert_eq!(count_real_roots(&poly(&[0.0, 0.0])), Err(Error::ZeroPolynomial));
        assert_eq!(count_real_roots(&poly(&[3.0])).unwrap().count, 0);
        let r = count_real_roots(&poly(&[-200.0, 1.0])).unwrap();
        assert_eq!(r.count, 1);
        assert!((r.roots[0] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn constructed_factorizations() {
        let mut s = seed_stream(21, 0);
        for _ in 0..50 {
            let roots: Vec<f64> = (0..5).map(|i| -4.0 + 2.0 * i as f64 + s.uniform()).collect();
            // q positive: product of (t − a)² + b² with b ≥ 0.5
            let mut q = UnivariatePoly::new(vec![1.0]).unwrap();
            for _ in 0..3 {
                let a = 3.0 * s.normal();
                let b = 0.5 + s.uniform();
                q = q.mul(&poly(&[a * a + b * b, -2.0 * a, 1.0]));
            }
            let q = q.mul(&poly(&[1.0 + s.uniform()]));
            let p = UnivariatePoly::from_roots(&roots).mul(&q);
            assert_eq!(p.degree(), 11);
            let p = p.mul(&poly(&[1.0, 0.0, 1.0]));
            assert_eq!(p.degree(), 13);
            let r = count_real_roots(&p).unwrap();
            assert_eq!(r.count, 5);
            assert!(r.certified);
            for (x, y) in r.roots.iter().zip(&roots) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn repeated_root_is_uncertified_but_counted_once() {
        let p = UnivariatePoly::from_roots(&[0.5, 0.5, -2.0]);
        let r = count_real_roots(&p).unwrap();
        assert_eq!(r.count, 2);
        assert!(!r.certified);
    }

    #[test]
    fn sturm_matches_grid_oracle() {
        let mut s = seed_stream(22, 0);
        for _ in 0..100 {
            let d = 1 + (s.next_u64() % 20) as u32;
            let p = sample_kostlan(1, 1, d, &mut s);
            let u = UnivariatePoly::new(p.coeffs().to_vec()).unwrap();
            let r = count_real_roots(&u).unwrap();
            assert!(r.certified);
            assert_eq!(r.count, grid_count(&u), "degree {d}: {:?}", u.coeffs());
        }
    }

    #[test]
    fn projective_examples() {
        let p = HomogeneousPolyMap::from_terms(1, 3, &[(&[3, 0], 1.0)]).unwrap();
        assert_eq!(projective_zero_count(&p).unwrap().count, 1);
        let p = HomogeneousPolyMap::from_terms(1, 2, &[(&[1, 1], 1.0)]).unwrap();
        assert_eq!(projective_zero_count(&p).unwrap().count, 2);
        assert_eq!(sphere_zero_count(&p).unwrap().count, 4);
        let z = HomogeneousPolyMap::zeros(1, 1, 3);
        assert_eq!(projective_zero_count(&z), Err(Error::ZeroPolynomial));
    }

    #[test]
    fn antipodal_doubling_via_half_angle() {
        let mut s = seed_stream(23, 0);
        for _ in 0..200 {
            let d = 1 + (s.next_u64() % 12) as u32;
            let p = sample_kostlan(1, 1, d, &mut s);
            let sphere = sphere_zero_count(&p).unwrap();
            let circle = circle_zero_count_parts(&[(1.0, &p)]).unwrap();
            if sphere.certified && circle.certified {
                assert_eq!(sphere.count, circle.count);
                assert_eq!(sphere.count, 2 * projective_zero_count(&p).unwrap().count);
            }
        }
    }

    #[test]
    fn circle_count_of_mixture_matches_grid() {
        let mut s = seed_stream(24, 0);
        for _ in 0..50 {
            let map = MixedKostlanMap::sample_series(1, &[0.0, 0.5, 0.5], &mut s).unwrap();
            let r = circle_zero_count(&map).unwrap();
            let n = 100_000;
            let mut changes = 0;
            let mut prev = map.eval(&[1.0, 0.0]).unwrap()[0];
            for i in 1..=n {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let v = map.eval(&[th.cos(), th.sin()]).unwrap()[0];
                if (v > 0.0) != (prev > 0.0) {
                    changes += 1;
                }
                prev = v;
            }
            assert_eq!(r.count, changes);
        }
    }

    #[test]
    fn rp2_examples() {
        let x1 = HomogeneousPolyMap::from_terms(2, 1, &[(&[0, 1, 0], 1.0)]).unwrap();
        let x2 = HomogeneousPolyMap::from_terms(2, 1, &[(&[0, 0, 1], 1.0)]).unwrap();
        let (pts, r) = system_solutions_rp2(&x1, &x2).unwrap();
        assert_eq!(r.count, 1);
        assert!(r.certified);
        assert!(dist(&pts[0], &[1.0, 0.0, 0.0]) < 1e-12);

        let mut s = seed_stream(25, 0);
        for _ in 0..100 {
            let a = sample_kostlan(2, 1, 1, &mut s);
            let b = sample_kostlan(2, 1, 1, &mut s);
            let r = system_count_rp2(&a, &b).unwrap();
            assert_eq!(r.count, 1);
            assert!(r.certified);
        }
    }

    #[test]
    fn rp2_known_conics() {
        // Circle (u − 0.2)² + v² = 1 against the line pair u² = 4v²: four points.
        let c = HomogeneousPolyMap::from_terms(
            2,
            2,
            &[(&[0, 2, 0], 1.0), (&[0, 0, 2], 1.0), (&[1, 1, 0], -0.4), (&[2, 0, 0], -0.96)],
        )
        .unwrap();
        let l = HomogeneousPolyMap::from_terms(2, 2, &[(&[0, 2, 0], 1.0), (&[0, 0, 2], -4.0)]).unwrap();
        let (pts, r) = system_solutions_rp2(&c, &l).unwrap();
        assert_eq!(r.count, 4);
        assert!(r.certified);
        for p in pts {
            assert!(c.eval(&p).unwrap()[0].abs() < 1e-12 && l.eval(&p).unwrap()[0].abs() < 1e-12);
        }
        // Against a disjoint circle u² + v² = 9: no real points.
        let c2 = HomogeneousPolyMap::from_terms(2, 2, &[(&[0, 2, 0], 1.0), (&[0, 0, 2], 1.0), (&[2, 0, 0], -9.0)]).unwrap();
        let r = system_count_rp2(&c, &c2).unwrap();
        assert_eq!(r.count, 0);
    }

    #[test]
    fn rp2_solutions_solve_and_respect_bezout() {
        let mut s = seed_stream(26, 0);
        let mut uncertified = 0;
        for i in 0..300 {
            let d1 = 1 + (i % 4) as u32;
            let d2 = 1 + ((i / 4) % 4) as u32;
            let a = sample_kostlan(2, 1, d1, &mut s);
            let b = sample_kostlan(2, 1, d2, &mut s);
            let (pts, r) = system_solutions_rp2(&a, &b).unwrap();
            if !r.certified {
                uncertified += 1;
                continue;
            }
            assert!(r.count <= (d1 * d2) as usize);
            for p in pts {
                let na: f64 = a.coeffs().iter().map(|c| c.abs()).sum();
                let nb: f64 = b.coeffs().iter().map(|c| c.abs()).sum();
                assert!(a.eval(&p).unwrap()[0].abs() < 1e-8 * na);
                assert!(b.eval(&p).unwrap()[0].abs() < 1e-8 * nb);
            }
        }
        assert!(uncertified <= 3, "{uncertified} uncertified");
    }

    #[test]
    fn mc_constant_counter() {
        let s = seed_stream(27, 0);
        let r = mc_expected_count(
            |_| (),
            |_| {
                Ok(CountResult {
                    count: 7,
                    certified: true,
                    residual: 0.0,
                    roots: vec![],
                })
            },
            50,
            &s,
        )
        .unwrap();
        assert_eq!((r.mean, r.stderr, r.resample_rate), (7.0, 0.0, 0.0));
        let never = mc_expected_count(
            |_| (),
            |_| {
                Ok(CountResult {
                    count: 1,
                    certified: false,
                    residual: 0.0,
                    roots: vec![],
                })
            },
            30,
            &s,
        );
        assert!(matches!(never, Err(Error::ExcessiveResampling { .. })));
        assert!(mc_expected_count(|_| (), |_| Err(Error::ZeroPolynomial), 10, &s).is_err());
    }

    #[test]
    fn mc_projective_degree_four() {
        let s = seed_stream(28, 0);
        let r = mc_expected_count(|st| sample_kostlan(1, 1, 4, st), projective_zero_count, 2000, &s).unwrap();
        assert!((r.mean - 2.0).abs() < 4.0 * r.stderr, "{r:?}");
        assert!(r.resample_rate < 0.01);
        let again = mc_expected_count(|st| sample_kostlan(1, 1, 4, st), projective_zero_count, 2000, &s).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let s = seed_stream(29, 0);
        let run = || mc_expected_count(|st| sample_kostlan(1, 1, 9, st), sphere_zero_count, 200, &s).unwrap();
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rotation_invariance(seed in 0u64..10_000, d in 1u32..10, angle in 0.0f64..6.28) {
            let mut s = seed_stream(seed, 0);
            let p = sample_kostlan(1, 1, d, &mut s);
            let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
            let q = p.compose_linear(&rot).unwrap();
            let (a, b) = (projective_zero_count(&p).unwrap(), projective_zero_count(&q).unwrap());
            prop_assume!(a.certified && b.certified);
            prop_assert_eq!(a.count, b.count);
        }

        #[test]
        fn rotation_invariance_rp2(seed in 0u64..10_000, d1 in 1u32..4, d2 in 1u32..4) {
            let mut s = seed_stream(seed, 1);
            let p1 = sample_kostlan(2, 1, d1, &mut s);
            let p2 = sample_kostlan(2, 1, d2, &mut s);
            let g = DMatrix::from_fn(3, 3, |_, _| s.normal());
            let q = g.qr().q();
            let (a, b) = (
                system_count_rp2(&p1, &p2).unwrap(),
                system_count_rp2(&p1.compose_linear(&q).unwrap(), &p2.compose_linear(&q).unwrap()).unwrap(),
            );
            prop_assume!(a.certified && b.certified);
            prop_assert_eq!(a.count, b.count);
        }
    }
}
