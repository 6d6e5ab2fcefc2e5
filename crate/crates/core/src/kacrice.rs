//! Kac-Rice expectations: closed forms for isotropic fields on spheres, a
//! quadrature engine for the Kac-Rice integral built on Gaussian regression,
//! and the subspace angle and Jacobian utilities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gaussian::{
    abs_moment_normal, expected_abs_det_mc_shifted, gaussian_density, regression_split, RngStream,
};
use crate::kostlan::{KernelSpec, MixedKostlanMap};
use crate::linalg::jacobi_svd;
use crate::quadrature;

/// `Σ₀ = K(1)` and `Σ₁ = K'(1)` of an isotropic field with `K(t) = Σ K_ℓ t^ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicMoments {
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
}

/// Moments of the scalar series `K(t) = Σ c_ℓ t^ℓ`, repeated on `k` independent components.
pub fn isotropic_moments(series: &[f64], k: usize) -> Result<IsotropicMoments> {
    if series.iter().any(|&c| c < 0.0) {
        return Err(Error::InvalidArgument("series coefficients must be nonnegative".into()));
    }
    let s0: f64 = series.iter().sum();
    let s1: f64 = series.iter().enumerate().map(|(l, c)| l as f64 * c).sum();
    Ok(IsotropicMoments {
        sigma0: DMatrix::identity(k, k) * s0,
        sigma1: DMatrix::identity(k, k) * s1,
    })
}

/// Moments of a matrix series `K(t) = Σ K_ℓ t^ℓ`.
pub fn isotropic_moments_matrix(coefficients: &[DMatrix<f64>]) -> Result<IsotropicMoments> {
    let k = coefficients.first().map(|c| c.nrows()).unwrap_or(1);
    let mut sigma0 = DMatrix::zeros(k, k);
    let mut sigma1 = DMatrix::zeros(k, k);
    for (l, c) in coefficients.iter().enumerate() {
        if c.nrows() != k || c.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: c.nrows(),
            });
        }
        sigma0 += c;
        sigma1 += c * l as f64;
    }
    Ok(IsotropicMoments { sigma0, sigma1 })
}

fn pd_inverse_det(sigma0: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let det = sigma0.determinant();
    if !(det > 1e-300) {
        return Err(Error::SingularSigma0);
    }
    let chol = sigma0.clone().cholesky().ok_or(Error::SingularSigma0)?;
    Ok((chol.inverse(), det))
}

/// Expected number of points of `X⁻¹(y)` for an isotropic field `S^m → R^m`.
pub fn isotropic_point_expectation(mom: &IsotropicMoments, y: &[f64]) -> Result<f64> {
    let k = mom.sigma0.nrows();
    if y.len() != k || mom.sigma1.nrows() != k {
        return Err(Error::DimensionMismatch { expected: k, got: y.len() });
    }
    let (inv, det0) = pd_inverse_det(&mom.sigma0)?;
    let det1 = mom.sigma1.determinant().max(0.0);
    let yv = DVector::from_column_slice(y);
    let q = yv.dot(&(&inv * &yv));
    Ok(2.0 * (det1 / det0).sqrt() * (-0.5 * q).exp())
}

/// Expected number of common real projective zeros of independent Kostlan
/// polynomials of the given degrees: `√(d₁···d_m)`.
pub fn shub_smale_expectation(degrees: &[u32]) -> Result<f64> {
    if degrees.is_empty() || degrees.contains(&0) {
        return Err(Error::InvalidArgument("degrees must be ≥ 1".into()));
    }
    Ok(degrees.iter().map(|&d| f64::from(d)).product::<f64>().sqrt())
}

/// Mixing matrices `A₀, …, A_d` of `X̃ = Σ A_ℓ ψ_ℓ` with independent Kostlan `ψ_ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedKostlanSpec {
    pub mixing: Vec<DMatrix<f64>>,
}

impl MixedKostlanSpec {
    pub fn scalar(coefficients: &[f64]) -> Self {
        Self {
            mixing: coefficients.iter().map(|&a| DMatrix::from_element(1, 1, a)).collect(),
        }
    }

    /// `Σ₀ = Σ A_ℓA_ℓᵀ`, `Σ₁ = Σ ℓ A_ℓA_ℓᵀ`.
    pub fn moments(&self) -> Result<IsotropicMoments> {
        let k: Vec<DMatrix<f64>> = self.mixing.iter().map(|a| a * a.transpose()).collect();
        isotropic_moments_matrix(&k)
    }

    pub fn sample(&self, m: usize, s: &mut RngStream) -> Result<MixedKostlanMap> {
        MixedKostlanMap::sample(m, &self.mixing, s)
    }
}

/// `2·√(det(A₁A₁ᵀ + 2A₂A₂ᵀ + ⋯ + dA_dA_dᵀ) / det(A₀A₀ᵀ + ⋯ + A_dA_dᵀ))`.
pub fn mixed_kostlan_expectation(spec: &MixedKostlanSpec) -> Result<f64> {
    let mom = spec.moments()?;
    let k = mom.sigma0.nrows();
    isotropic_point_expectation(&mom, &vec![0.0; k])
}

/// One parameterized piece of a submanifold `W ⊂ R^k`.
pub struct FramedChart<'a> {
    /// Parameter box (empty for a point).
    pub bounds: Vec<(f64, f64)>,
    /// Parameter ↦ (point `y`, `k × m` normal frame `ν(y)`, volume weight).
    pub map: Box<dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>, f64) + Sync + 'a>,
}

/// A submanifold of codimension `m` with an orthonormal normal frame per chart.
pub struct NormalFraming<'a> {
    pub codim: usize,
    pub charts: Vec<FramedChart<'a>>,
}

impl<'a> NormalFraming<'a> {
    /// The zero-dimensional submanifold `{y}`.
    pub fn point(y: DVector<f64>) -> NormalFraming<'static> {
        let k = y.len();
        NormalFraming {
            codim: k,
            charts: vec![FramedChart {
                bounds: vec![],
                map: Box::new(move |_| (y.clone(), DMatrix::identity(k, k), 1.0)),
            }],
        }
    }
}

/// Expected number of preimages `#X⁻¹(W)` for an isotropic field `S^m → R^k`,
/// integrated over the charts of `W` with a `nodes`-point Gauss–Legendre rule
/// per chart axis.
pub fn isotropic_submanifold_expectation(
    mom: &IsotropicMoments,
    framing: &NormalFraming<'_>,
    nodes: usize,
) -> Result<f64> {
    let k = mom.sigma0.nrows();
    let m = framing.codim;
    let (inv0, det0) = pd_inverse_det(&mom.sigma0)?;
    let norm = (2.0 * PI).powf((k - m) as f64 / 2.0) * det0.sqrt();
    let mut total = 0.0;
    for chart in &framing.charts {
        let rules: Vec<Vec<(f64, f64)>> = chart
            .bounds
            .iter()
            .map(|&(a, b)| quadrature::composite(a, b, 1, nodes))
            .collect();
        for (param, w) in quadrature::tensor(&rules) {
            let (y, nu, vol) = (chart.map)(&param);
            if y.len() != k || nu.nrows() != k || nu.ncols() != m {
                return Err(Error::DimensionMismatch { expected: k, got: y.len() });
            }
            let dev = (nu.transpose() * &nu - DMatrix::identity(m, m)).amax();
            if dev > 1e-9 {
                return Err(Error::NonOrthonormalFraming(dev));
            }
            let proj = nu.transpose() * &mom.sigma1 * &nu;
            let q = y.dot(&(&inv0 * &y));
            total += w * vol * proj.determinant().max(0.0).sqrt() * (-0.5 * q).exp() / norm;
        }
    }
    Ok(2.0 * total)
}

/// Covariance of `(X(u), ∇X(u))` for one component of the field.
///
/// Affine variants use `u` directly; homogeneous variants are parameterized by
/// the angle on the unit circle (`m = 1` only), where `K(θ, φ) = φ(cos(θ − φ))`.
pub fn joint_value_gradient_covariance(spec: &KernelSpec, u: &[f64]) -> Result<DMatrix<f64>> {
    let m = u.len();
    if m == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut j = DMatrix::zeros(m + 1, m + 1);
    if spec.is_homogeneous() {
        if m != 1 {
            return Err(Error::Unsupported(
                "homogeneous kernels are parameterized by the circle angle only".into(),
            ));
        }
        let p = spec.profile(1.0);
        j[(0, 0)] = p[0];
        j[(1, 1)] = p[1];
        return Ok(j);
    }
    let s: f64 = u.iter().map(|x| x * x).sum();
    let [p0, p1, p2] = spec.profile(s);
    j[(0, 0)] = p0;
    for a in 0..m {
        j[(0, a + 1)] = p1 * u[a];
        j[(a + 1, 0)] = p1 * u[a];
        for b in 0..m {
            j[(a + 1, b + 1)] = p2 * u[a] * u[b] + if a == b { p1 } else { 0.0 };
        }
    }
    Ok(j)
}

/// Kac-Rice integrand `E{|X'(u)| | X(u) = t}·ρ_{X(u)}(t)` for a scalar field on a line.
pub fn kac_rice_density_1d(spec: &KernelSpec, u: f64, t: f64) -> Result<f64> {
    if spec.k != 1 {
        return Err(Error::Unsupported("one-dimensional density needs k = 1".into()));
    }
    let joint = joint_value_gradient_covariance(spec, &[u])?;
    let var = joint[(0, 0)];
    if var <= 1e-14 {
        return Err(Error::DegenerateAtPoint(var));
    }
    let split = regression_split(&joint, 1)?;
    let mu = split.regression_matrix[(0, 0)] * t;
    let sigma = split.conditional_covariance[(0, 0)].max(0.0).sqrt();
    let rho = gaussian_density(&DMatrix::from_element(1, 1, var), &[t])?;
    Ok(abs_moment_normal(mu, sigma) * rho)
}

/// Kac-Rice integrand for a field `R^m → R^m` with kernel `φ(uᵀv)·1_m`, as
/// `(value, Monte-Carlo standard error)`. The conditional Jacobian expectation
/// is exact for `m = 1` and Monte-Carlo otherwise.
pub fn kac_rice_density(
    spec: &KernelSpec,
    u: &[f64],
    t: &[f64],
    mc_trials: usize,
    s: &mut RngStream,
) -> Result<(f64, f64)> {
    let m = u.len();
    if spec.k != m || t.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: spec.k });
    }
    if m == 1 {
        return Ok((kac_rice_density_1d(spec, u[0], t[0])?, 0.0));
    }
    let joint = joint_value_gradient_covariance(spec, u)?;
    let var = joint[(0, 0)];
    if var <= 1e-14 {
        return Err(Error::DegenerateAtPoint(var));
    }
    let split = regression_split(&joint, 1)?;
    // Jacobian rows are independent across components; row c ~ N(A t_c, K_cond).
    let mut mean = DMatrix::zeros(m, m);
    for c in 0..m {
        for a in 0..m {
            mean[(a, c)] = split.regression_matrix[(a, 0)] * t[c];
        }
    }
    let (e, se) = expected_abs_det_mc_shifted(&mean, &split.conditional_covariance, mc_trials, s)?;
    let rho = gaussian_density(&(DMatrix::identity(m, m) * var), t)?;
    Ok((e * rho, se * rho))
}

/// Integration domain of the Kac-Rice quadrature.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Interval(f64, f64),
    Box(Vec<(f64, f64)>),
}

impl Domain {
    fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Domain::Interval(a, b) => vec![(*a, *b)],
            Domain::Box(b) => b.clone(),
        }
    }
}

/// Gauss–Legendre order of each quadrature panel.
pub const PANEL_ORDER: usize = 16;

/// Expected number of points of `X⁻¹(t)` in the domain, with an error estimate.
///
/// Composite Gauss–Legendre with `quad_nodes` nodes per unit length per axis
/// (panels of [`PANEL_ORDER`] points); the value is computed on the refined
/// rule (panels halved) and the error estimate adds the difference to the
/// coarse rule to the propagated Monte-Carlo standard error.
pub fn kac_rice_expectation(
    spec: &KernelSpec,
    domain: &Domain,
    t: &[f64],
    quad_nodes: usize,
    mc_trials: usize,
    s: &RngStream,
) -> Result<(f64, f64)> {
    let bounds = domain.bounds();
    if bounds.is_empty() || quad_nodes == 0 {
        return Err(Error::InvalidArgument("empty domain or zero quadrature nodes".into()));
    }
    let panels: Vec<usize> = bounds
        .iter()
        .map(|(a, b)| (((b - a).abs() * quad_nodes as f64) / PANEL_ORDER as f64).ceil().max(1.0) as usize)
        .collect();
    let integrate = |refine: usize, key: u64| -> Result<(f64, f64)> {
        let rules: Vec<Vec<(f64, f64)>> = bounds
            .iter()
            .zip(&panels)
            .map(|(&(a, b), &p)| quadrature::composite(a, b, p * refine, PANEL_ORDER))
            .collect();
        let pts = quadrature::tensor(&rules);
        let vals: Result<Vec<(f64, f64)>> = pts
            .par_iter()
            .enumerate()
            .map(|(i, (u, w))| {
                let mut stream = s.derive(key).derive(i as u64);
                let (v, se) = kac_rice_density(spec, u, t, mc_trials, &mut stream)?;
                Ok((w * v, w * se))
            })
            .collect();
        let vals = vals?;
        let value: f64 = vals.iter().map(|v| v.0).sum();
        let var: f64 = vals.iter().map(|v| v.1 * v.1).sum();
        Ok((value, var.sqrt()))
    };
    let (coarse, _) = integrate(1, 0)?;
    let (fine, mc_err) = integrate(2, 1)?;
    Ok((fine, (fine - coarse).abs() + mc_err))
}

/// Column vectors spanning a subspace of `R^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceFrame(pub DMatrix<f64>);

impl SubspaceFrame {
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let n = cols.first().map(|c| c.len()).unwrap_or(0);
        SubspaceFrame(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    /// Orthonormal basis of the orthogonal complement of the span.
    pub fn perp(&self) -> SubspaceFrame {
        SubspaceFrame(complement(&orth(&self.0)))
    }
}

const RANK_TOL: f64 = 1e-9;

/// Orthonormal basis of the column span (rank tolerance `1e-9` relative).
pub(crate) fn orth(a: &DMatrix<f64>) -> DMatrix<f64> {
    let smax = jacobi_svd(a).s.iter().cloned().fold(0.0, f64::max);
    orth_abs(a, RANK_TOL * smax)
}

/// Orthonormal basis of the span of the singular directions above `tol`.
fn orth_abs(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || a.amax() == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = jacobi_svd(a);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > tol).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| svd.u[(i, keep[j])])
}

/// Orthonormal basis of the complement of an orthonormal `q`.
fn complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let proj = DMatrix::identity(n, n) - q * q.transpose();
    orth_abs(&proj, RANK_TOL)
}

/// Null space of `a` (right singular vectors with singular value `≤ tol`).
fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = jacobi_svd(a);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] <= tol).collect();
    DMatrix::from_fn(a.ncols(), keep.len(), |i, j| svd.v[(i, keep[j])])
}

fn singular_values(a: &DMatrix<f64>) -> (f64, f64) {
    let s = jacobi_svd(a).s;
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// `vol(f) = √det(fᵀf)`; zero for dependent columns.
pub fn frame_volume(f: &SubspaceFrame) -> f64 {
    let a = &f.0;
    if a.ncols() == 0 {
        return 1.0;
    }
    if a.ncols() > a.nrows() {
        return 0.0;
    }
    let (smin, smax) = singular_values(a);
    if smax == 0.0 || smin <= 1e-12 * smax {
        return 0.0;
    }
    (a.transpose() * a).determinant().max(0.0).sqrt()
}

/// Angle `σ(V, W)` between two subspaces: the volume ratio of frames of the
/// parts of `V` and `W` orthogonal to `V ∩ W`; `1` when one contains the other.
pub fn subspace_angle(v: &SubspaceFrame, w: &SubspaceFrame) -> Result<f64> {
    if v.ambient_dim() != w.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: v.ambient_dim(),
            got: w.ambient_dim(),
        });
    }
    let n = v.ambient_dim();
    let qv = orth(&v.0);
    let qw = orth(&w.0);
    if qv.ncols() == 0 || qw.ncols() == 0 {
        return Ok(1.0);
    }
    // V ∩ W from the null space of [Qv, -Qw].
    let mut stacked = DMatrix::zeros(n, qv.ncols() + qw.ncols());
    stacked.view_mut((0, 0), (n, qv.ncols())).copy_from(&qv);
    stacked.view_mut((0, qv.ncols()), (n, qw.ncols())).copy_from(&(-&qw));
    let null = null_space(&stacked, RANK_TOL);
    let inter = orth_abs(&(&qv * null.rows(0, qv.ncols())), RANK_TOL);
    let remove = DMatrix::identity(n, n) - &inter * inter.transpose();
    let fv = orth_abs(&(&remove * &qv), RANK_TOL);
    let fw = orth_abs(&(&remove * &qw), RANK_TOL);
    if fv.ncols() == 0 || fw.ncols() == 0 {
        return Ok(1.0);
    }
    let mut both = DMatrix::zeros(n, fv.ncols() + fw.ncols());
    both.view_mut((0, 0), (n, fv.ncols())).copy_from(&fv);
    both.view_mut((0, fv.ncols()), (n, fw.ncols())).copy_from(&fw);
    let vol = (both.transpose() * &both).determinant().max(0.0).sqrt();
    Ok(vol / (frame_volume(&SubspaceFrame(fv)) * frame_volume(&SubspaceFrame(fw))))
}

/// `σ(V, W) = vol(Π_{V⊥} w)/vol(w)` for a basis `w` of `W ∩ (V ∩ W)^⊥`.
///
/// Independent of [`subspace_angle`]: the intersection is read off the
/// singular vectors of `Π_{V⊥} Q_W`.
pub fn projection_angle(v: &SubspaceFrame, w: &SubspaceFrame) -> Result<f64> {
    if v.ambient_dim() != w.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: v.ambient_dim(),
            got: w.ambient_dim(),
        });
    }
    let n = v.ambient_dim();
    let qv = orth(&v.0);
    let qw = orth(&w.0);
    let proj = DMatrix::identity(n, n) - &qv * qv.transpose();
    let pw = &proj * &qw;
    if qw.ncols() == 0 {
        return Err(Error::ContainmentViolation);
    }
    let svd = jacobi_svd(&pw);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > RANK_TOL).collect();
    if keep.is_empty() {
        return Err(Error::ContainmentViolation);
    }
    // Right singular vectors with nonzero singular value span W ∩ (V ∩ W)^⊥.
    let coeffs = DMatrix::from_fn(qw.ncols(), keep.len(), |i, j| svd.v[(i, keep[j])]);
    let basis = &qw * coeffs;
    let projected = &proj * &basis;
    Ok(frame_volume(&SubspaceFrame(projected)) / frame_volume(&SubspaceFrame(basis)))
}

/// Jacobian of a linear map `A: (R^m, g₁) → (R^n, g₂)`; zero when `A` is rank deficient.
pub fn jacobian(a: &DMatrix<f64>, g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> Result<f64> {
    let (n, m) = a.shape();
    if g1.shape() != (m, m) || g2.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: g1.nrows(),
        });
    }
    // Rank test on the wider orientation so `m > n` is judged by its rows.
    let (smin, smax) = if m <= n { singular_values(a) } else { singular_values(&a.transpose()) };
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Ok(0.0);
    }
    let det1 = g1.determinant();
    let det2 = g2.determinant();
    if m <= n {
        Ok(((a.transpose() * g2 * a).determinant() / det1).max(0.0).sqrt())
    } else {
        let inv1 = g1.clone().try_inverse().ok_or(Error::SingularCovariance(det1))?;
        Ok(((a * inv1 * a.transpose()).determinant() * det2).max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::seed_stream;
    use crate::kostlan::KernelVariant;

    fn scalar(v: KernelVariant) -> KernelSpec {
        KernelSpec::scalar(v)
    }

    fn random_frame(n: usize, p: usize, s: &mut RngStream) -> SubspaceFrame {
        SubspaceFrame(DMatrix::from_fn(n, p, |_, _| s.normal()))
    }

    #[test]
    fn moments_examples() {
        let m = isotropic_moments(&[0.0, 0.0, 0.0, 1.0], 1).unwrap();
        assert_eq!((m.sigma0[(0, 0)], m.sigma1[(0, 0)]), (1.0, 3.0));
        let m = isotropic_moments(&[0.0, 0.5, 0.5], 1).unwrap();
        assert_eq!((m.sigma0[(0, 0)], m.sigma1[(0, 0)]), (1.0, 1.5));
        let m = isotropic_moments(&[1.0], 1).unwrap();
        assert_eq!((m.sigma0[(0, 0)], m.sigma1[(0, 0)]), (1.0, 0.0));
    }

    #[test]
    fn point_expectation_examples() {
        for d in [1.0f64, 4.0, 7.0] {
            let m = IsotropicMoments {
                sigma0: DMatrix::from_element(1, 1, 1.0),
                sigma1: DMatrix::from_element(1, 1, d),
            };
            assert!((isotropic_point_expectation(&m, &[0.0]).unwrap() - 2.0 * d.sqrt()).abs() < 1e-14);
        }
        let m = isotropic_moments(&[0.0, 0.5, 0.5], 1).unwrap();
        assert!((isotropic_point_expectation(&m, &[0.0]).unwrap() - 2.449_489_742_783_178).abs() < 1e-12);
        let m = isotropic_moments(&[1.0], 1).unwrap();
        assert_eq!(isotropic_point_expectation(&m, &[0.0]).unwrap(), 0.0);
        let z = IsotropicMoments {
            sigma0: DMatrix::zeros(1, 1),
            sigma1: DMatrix::from_element(1, 1, 1.0),
        };
        assert_eq!(isotropic_point_expectation(&z, &[0.0]), Err(Error::SingularSigma0));
    }

    #[test]
    fn shub_smale_examples() {
        assert_eq!(shub_smale_expectation(&[1, 1]).unwrap(), 1.0);
        assert_eq!(shub_smale_expectation(&[4, 9]).unwrap(), 6.0);
        assert!((shub_smale_expectation(&[7]).unwrap() - 7f64.sqrt()).abs() < 1e-15);
        assert!(shub_smale_expectation(&[0, 2]).is_err());
    }

    #[test]
    fn mixed_examples() {
        let mut mix = vec![0.0; 5];
        mix[4] = 1.0;
        assert!((mixed_kostlan_expectation(&MixedKostlanSpec::scalar(&mix)).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(mixed_kostlan_expectation(&MixedKostlanSpec::scalar(&[1.0])).unwrap(), 0.0);
        let h = 0.5f64.sqrt();
        let v = mixed_kostlan_expectation(&MixedKostlanSpec::scalar(&[h, h])).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-14);
        // k = m = 2 with identity on the top degree: 2·√(d²)
        let spec = MixedKostlanSpec {
            mixing: vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2)],
        };
        assert!((mixed_kostlan_expectation(&spec).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn submanifold_point_reduces_to_point_formula() {
        let mom = IsotropicMoments {
            sigma0: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            sigma1: DMatrix::from_row_slice(2, 2, &[3.0, 0.1, 0.1, 2.0]),
        };
        let y = DVector::from_vec(vec![0.4, -0.7]);
        let a = isotropic_submanifold_expectation(&mom, &NormalFraming::point(y.clone()), 8).unwrap();
        let b = isotropic_point_expectation(&mom, y.as_slice()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn submanifold_line_through_origin() {
        let d = 5.0f64;
        let mom = IsotropicMoments {
            sigma0: DMatrix::identity(2, 2),
            sigma1: DMatrix::identity(2, 2) * d,
        };
        let dir = DVector::from_vec(vec![0.6, 0.8]);
        let normal = DMatrix::from_column_slice(2, 1, &[-0.8, 0.6]);
        let framing = NormalFraming {
            codim: 1,
            charts: vec![FramedChart {
                bounds: vec![(-12.0, 12.0)],
                map: Box::new(move |p| (&dir * p[0], normal.clone(), 1.0)),
            }],
        };
        let v = isotropic_submanifold_expectation(&mom, &framing, 80).unwrap();
        assert!((v - 2.0 * d.sqrt()).abs() < 1e-10, "{v}");

        let zero = IsotropicMoments {
            sigma0: DMatrix::identity(2, 2),
            sigma1: DMatrix::zeros(2, 2),
        };
        assert_eq!(isotropic_submanifold_expectation(&zero, &framing, 20).unwrap(), 0.0);

        let bad = NormalFraming {
            codim: 1,
            charts: vec![FramedChart {
                bounds: vec![(0.0, 1.0)],
                map: Box::new(|p| (DVector::from_vec(vec![p[0], 0.0]), DMatrix::from_column_slice(2, 1, &[0.0, 2.0]), 1.0)),
            }],
        };
        assert!(matches!(
            isotropic_submanifold_expectation(&mom, &bad, 4),
            Err(Error::NonOrthonormalFraming(_))
        ));
    }

    #[test]
    fn bargmann_fock_density_is_one_over_pi() {
        let bf = scalar(KernelVariant::BargmannFock);
        for u in [0.0, 0.5, 1.0] {
            let v = kac_rice_density_1d(&bf, u, 0.0).unwrap();
            assert!((v - 1.0 / PI).abs() < 1e-8, "u={u}: {v}");
        }
    }

    #[test]
    fn cos_power_density() {
        for d in [1u32, 4, 25] {
            let k = scalar(KernelVariant::Kostlan(d));
            for th in [0.0, 1.0, 4.0] {
                let v = kac_rice_density_1d(&k, th, 0.0).unwrap();
                assert!((v - f64::from(d).sqrt() / PI).abs() < 1e-14);
            }
        }
        let c = scalar(KernelVariant::IsotropicSeries(vec![1.0]));
        assert_eq!(kac_rice_density_1d(&c, 0.3, 0.0).unwrap(), 0.0);
        let z = scalar(KernelVariant::IsotropicSeries(vec![0.0, 0.0]));
        assert!(matches!(kac_rice_density_1d(&z, 0.3, 0.0), Err(Error::DegenerateAtPoint(_))));
    }

    #[test]
    fn density_matches_finite_difference_joint() {
        // Joint covariance from kernel finite differences, regression done by hand.
        let spec = scalar(KernelVariant::Rescaled(7));
        let h = 1e-4;
        for u in [-0.8, 0.2, 0.9] {
            let k = |a: f64, b: f64| spec.chart_eval(&[a], &[b]).unwrap();
            let k00 = k(u, u);
            let k01 = (k(u, u + h) - k(u, u - h)) / (2.0 * h);
            let k11 = (k(u + h, u + h) - k(u + h, u - h) - k(u - h, u + h) + k(u - h, u - h)) / (4.0 * h * h);
            let t = 0.3;
            let mu = k01 / k00 * t;
            let sd = (k11 - k01 * k01 / k00).sqrt();
            let expected = abs_moment_normal(mu, sd) * (-(t * t) / (2.0 * k00)).exp() / (2.0 * PI * k00).sqrt();
            let got = kac_rice_density_1d(&spec, u, t).unwrap();
            assert!((got - expected).abs() < 1e-6, "u={u}: {got} vs {expected}");
        }
    }

    #[test]
    fn quadrature_examples() {
        let s = seed_stream(1, 0);
        for d in [1u32, 4, 25] {
            let k = scalar(KernelVariant::Kostlan(d));
            let (v, err) = kac_rice_expectation(&k, &Domain::Interval(0.0, 2.0 * PI), &[0.0], 32, 0, &s).unwrap();
            let exact = 2.0 * f64::from(d).sqrt();
            assert!((v - exact).abs() < 1e-6 * exact, "d={d}: {v}");
            assert!(err < 1e-9);
        }
        let bf = scalar(KernelVariant::BargmannFock);
        let (v, _) = kac_rice_expectation(&bf, &Domain::Interval(0.0, 1.0), &[0.0], 32, 0, &s).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-6);
        let r = scalar(KernelVariant::Rescaled(10_000));
        let (v, _) = kac_rice_expectation(&r, &Domain::Interval(0.0, 1.0), &[0.0], 32, 0, &s).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn planar_bargmann_fock_quadrature() {
        // E|det| of a 2x2 standard Gaussian matrix is 1 and the BF field has
        // identity conditional Jacobian law at t = 0, so the density is
        // e^{|u|^2}·1/(2π e^{|u|^2}) = 1/(2π) everywhere.
        let spec = KernelSpec::new(KernelVariant::BargmannFock, 2).unwrap();
        let s = seed_stream(2, 0);
        let (v, err) = kac_rice_expectation(
            &spec,
            &Domain::Box(vec![(0.0, 1.0), (0.0, 1.0)]),
            &[0.0, 0.0],
            16,
            400,
            &s,
        )
        .unwrap();
        let exact = 1.0 / (2.0 * PI);
        assert!((v - exact).abs() < 4.0 * err, "{v} ± {err}");
        // Determinism.
        let again = kac_rice_expectation(
            &spec,
            &Domain::Box(vec![(0.0, 1.0), (0.0, 1.0)]),
            &[0.0, 0.0],
            16,
            400,
            &s,
        )
        .unwrap();
        assert_eq!((v, err), again);
    }

    #[test]
    fn rescaled_density_converges_at_rate_one_over_d() {
        let errs: Vec<f64> = [100u32, 1000, 10_000]
            .iter()
            .map(|&d| {
                let spec = scalar(KernelVariant::Rescaled(d));
                (0..=40)
                    .map(|i| -1.0 + i as f64 / 20.0)
                    .map(|u| (kac_rice_density_1d(&spec, u, 0.0).unwrap() - 1.0 / PI).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[1] / w[0]).log10();
            assert!((-1.3..=-0.7).contains(&slope), "slope {slope} from {errs:?}");
        }
    }

    #[test]
    fn frame_volume_examples() {
        let f = SubspaceFrame::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!((frame_volume(&f) - 1.0).abs() < 1e-15);
        assert!((frame_volume(&SubspaceFrame::from_columns(&[vec![3.0, 0.0, 0.0]])) - 3.0).abs() < 1e-15);
        let f = SubspaceFrame::from_columns(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!((frame_volume(&f) - 1.0).abs() < 1e-15);
        let dep = SubspaceFrame::from_columns(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(frame_volume(&dep), 0.0);
    }

    #[test]
    fn angle_examples() {
        let th = PI / 6.0;
        let v = SubspaceFrame::from_columns(&[vec![1.0, 0.0]]);
        let w = SubspaceFrame::from_columns(&[vec![th.cos(), th.sin()]]);
        assert!((subspace_angle(&v, &w).unwrap() - 0.5).abs() < 1e-12);
        assert!((projection_angle(&v, &w).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(subspace_angle(&v, &v).unwrap(), 1.0);
        let e2 = SubspaceFrame::from_columns(&[vec![0.0, 1.0]]);
        assert!((subspace_angle(&v, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert!((projection_angle(&v, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(projection_angle(&v, &v), Err(Error::ContainmentViolation));
    }

    #[test]
    fn angle_is_product_of_sines_for_lines() {
        let mut s = seed_stream(3, 0);
        for _ in 0..50 {
            let th: f64 = s.uniform() * PI;
            let v = SubspaceFrame::from_columns(&[vec![1.0, 0.0]]);
            let w = SubspaceFrame::from_columns(&[vec![th.cos(), th.sin()]]);
            assert!((subspace_angle(&v, &w).unwrap() - th.sin().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_sums_have_angle_one() {
        // V = A ⊕ B, W = A ⊕ C with A, B, C mutually orthogonal.
        let e = |i: usize| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            v
        };
        let v = SubspaceFrame::from_columns(&[e(0), e(1)]);
        let w = SubspaceFrame::from_columns(&[e(0), e(2), e(3)]);
        assert!((subspace_angle(&v, &w).unwrap() - 1.0).abs() < 1e-12);
        let w2 = SubspaceFrame::from_columns(&[e(0), vec![0.0, 1.0, 1.0, 0.0, 0.0]]);
        assert!(subspace_angle(&v, &w2).unwrap() < 1.0 - 1e-6);
    }

    #[test]
    fn dual_routes_agree_and_perp_duality() {
        let mut s = seed_stream(4, 0);
        for _ in 0..200 {
            let n = 2 + (s.next_u64() % 7) as usize;
            let p = 1 + (s.next_u64() % (n as u64 - 1)) as usize;
            let q = 1 + (s.next_u64() % (n as u64 - 1)) as usize;
            let mut v = random_frame(n, p, &mut s);
            let w = random_frame(n, q, &mut s);
            // Force a nontrivial intersection half the time.
            if s.next_u64() % 2 == 0 && p >= 2 {
                let col = w.0.column(0).into_owned();
                v.0.set_column(0, &col);
            }
            let a = subspace_angle(&v, &w).unwrap();
            assert!(a > 0.0 && a <= 1.0 + 1e-12);
            let b = subspace_angle(&v.perp(), &w.perp()).unwrap();
            assert!((a - b).abs() < 1e-9, "n={n} p={p} q={q}: {a} vs {b}");
            if let Ok(c) = projection_angle(&v, &w) {
                assert!((a - c).abs() < 1e-9, "n={n} p={p} q={q}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn jacobian_examples() {
        let i2 = DMatrix::identity(2, 2);
        let i3 = DMatrix::identity(3, 3);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((jacobian(&a, &i2, &i3).unwrap() - 1.0).abs() < 1e-15);
        assert!((jacobian(&(i2.clone() * 2.0), &i2, &i2).unwrap() - 4.0).abs() < 1e-14);
        let mut s = seed_stream(5, 0);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 2, |_, _| s.normal());
            let j = jacobian(&a, &i2, &DMatrix::identity(4, 4)).unwrap();
            assert!((j - frame_volume(&SubspaceFrame(a))).abs() < 1e-12);
        }
        let dep = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(jacobian(&dep, &i2, &i2).unwrap(), 0.0);
    }
}
