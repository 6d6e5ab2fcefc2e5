//! Seeded random streams, Gaussian vectors, densities and Gaussian regression.
//!
//! Every stochastic routine in the crate draws from an [`RngStream`]. A stream
//! is identified by `(seed, index)`: the seed keys a ChaCha12 generator and the
//! index selects one of its 2^64 independent block streams. Standard normals
//! are produced by the basic (trigonometric) Box–Muller transform, consuming two
//! uniforms per pair of normals; the second normal of each pair is cached.
//! This transform is part of the reproducibility contract and is not changed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::stats::Welford;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_EIG_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-10;
const RECONSTRUCTION_TOL: f64 = 1e-9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible stream of uniform and standard-normal variates.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    index: u64,
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self {
            seed,
            index,
            rng,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// A child stream keyed by `key`, independent of the parent's position.
    ///
    /// Children of distinct `(seed, index)` parents use distinct derived seeds,
    /// and siblings use distinct ChaCha stream numbers.
    pub fn derive(&self, key: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.index ^ 0x5851_f42d_4c95_7f2d));
        RngStream::new(child_seed, key)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform variate in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

pub fn seed_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed, index)
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    Ok(())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(());
    }
    let asym = (a - a.transpose()).amax() / scale;
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Pivoted Cholesky: returns `L` (n × rank) with `L Lᵀ ≈ a`, stopping once the
/// largest remaining diagonal falls below `tol`.
fn pivoted_cholesky(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    for j in 0..n {
        let (p, &dmax) = perm[j..]
            .iter()
            .map(|&i| &diag[i])
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        if dmax <= tol {
            break;
        }
        perm.swap(j, j + p);
        let pj = perm[j];
        let pivot = dmax.sqrt();
        l[(pj, j)] = pivot;
        for &pi in &perm[j + 1..] {
            let mut s = a[(pi, pj)];
            for c in 0..j {
                s -= l[(pi, c)] * l[(pj, c)];
            }
            let v = s / pivot;
            l[(pi, j)] = v;
            diag[pi] -= v * v;
        }
        rank += 1;
    }
    l.columns(0, rank).into_owned()
}

/// Factor `cov = L Lᵀ` for a symmetric PSD matrix.
///
/// Pivoted Cholesky with tolerance `1e-10·trace`; when its reconstruction
/// misses by more than `1e-9` relative Frobenius error the factor is rebuilt
/// from an eigendecomposition with negative eigenvalues clipped to zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(cov)?;
    check_symmetric(cov)?;
    let n = cov.nrows();
    let norm = cov.norm();
    if norm == 0.0 {
        return Ok(DMatrix::zeros(n, 1));
    }
    let trace = cov.trace().max(0.0);
    let l = pivoted_cholesky(cov, PIVOT_TOL * trace);
    if l.ncols() > 0 && (&l * l.transpose() - cov).norm() <= RECONSTRUCTION_TOL * norm {
        return Ok(l);
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if max_eig <= 0.0 || min_eig < -PSD_EIG_TOL * max_eig {
        return Err(Error::FactorizationFailure { min_eig, max_eig });
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// A centered Gaussian vector with a cached square-root factor.
#[derive(Clone, Debug)]
pub struct GaussianVector {
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianVector {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let factor = psd_factor(&covariance)?;
        Ok(Self { covariance, factor })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Draws `L z` with `z` i.i.d. standard normal.
    pub fn sample(&self, s: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_vec(s.normals(self.factor.ncols()));
        &self.factor * z
    }
}

pub fn sample_gaussian_vector(gv: &GaussianVector, s: &mut RngStream) -> DVector<f64> {
    gv.sample(s)
}

/// Density of `N(0, covariance)` at `x`, with the `(2π)^{s/2}` normalizer.
pub fn gaussian_density(covariance: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    check_square(covariance)?;
    let s = covariance.nrows();
    if x.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: x.len(),
        });
    }
    let det = covariance.determinant();
    if det.abs() < 1e-300 || det <= 0.0 {
        return Err(Error::SingularCovariance(det));
    }
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance(det))?;
    let xv = DVector::from_column_slice(x);
    let q = xv.dot(&chol.solve(&xv));
    Ok((-0.5 * q).exp() / ((2.0 * PI).powf(s as f64 / 2.0) * det.sqrt()))
}

/// Conditioning data of block 1 on block 0 of a joint Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSplit {
    /// `A = K₁₀ K₀₀⁻¹` (n₁ × n₀).
    pub regression_matrix: DMatrix<f64>,
    /// `K₁₁ − K₁₀ K₀₀⁻¹ K₀₁` (n₁ × n₁).
    pub conditional_covariance: DMatrix<f64>,
}

/// Splits `X = (X₀, X₁)` as `X₁ = A X₀ + Y` with `Y` uncorrelated with `X₀`.
pub fn regression_split(joint: &DMatrix<f64>, split_at: usize) -> Result<RegressionSplit> {
    check_square(joint)?;
    let n = joint.nrows();
    if split_at == 0 || split_at > n {
        return Err(Error::InvalidArgument(format!(
            "split index {split_at} out of range for a {n}x{n} joint covariance"
        )));
    }
    let n1 = n - split_at;
    let k00 = joint.view((0, 0), (split_at, split_at)).into_owned();
    let k01 = joint.view((0, split_at), (split_at, n1)).into_owned();
    let k11 = joint.view((split_at, split_at), (n1, n1)).into_owned();

    let scale = k00.amax();
    if scale <= 0.0 {
        return Err(Error::SingularBlock);
    }
    let eig_min = SymmetricEigen::new(k00.clone()).eigenvalues.min();
    if eig_min <= PSD_EIG_TOL * scale {
        return Err(Error::SingularBlock);
    }
    let chol = k00.cholesky().ok_or(Error::SingularBlock)?;
    // A = K₁₀ K₀₀⁻¹ = (K₀₀⁻¹ K₀₁)ᵀ
    let a = chol.solve(&k01).transpose();
    let cond = &k11 - &a * &k01;
    let cond = (&cond + cond.transpose()) * 0.5;
    Ok(RegressionSplit {
        regression_matrix: a,
        conditional_covariance: cond,
    })
}

/// `E|Y|` for `Y ~ N(mu, sigma²)`.
pub fn abs_moment_normal(mu: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return mu.abs();
    }
    let z = mu / sigma;
    sigma * (2.0 / PI).sqrt() * (-0.5 * z * z).exp() + mu * statrs::function::erf::erf(z / SQRT_2)
}

/// Monte-Carlo mean and standard error of `|det G|`, the columns of `G` being
/// independent `N(0, column_covariance)` vectors.
pub fn expected_abs_det_mc(
    column_covariance: &DMatrix<f64>,
    m: usize,
    trials: usize,
    s: &mut RngStream,
) -> Result<(f64, f64)> {
    let mean = DMatrix::zeros(m, m);
    expected_abs_det_mc_shifted(&mean, column_covariance, trials, s)
}

/// As [`expected_abs_det_mc`], with column `j` of `G` having mean `mean[:, j]`.
pub fn expected_abs_det_mc_shifted(
    mean: &DMatrix<f64>,
    column_covariance: &DMatrix<f64>,
    trials: usize,
    s: &mut RngStream,
) -> Result<(f64, f64)> {
    let m = column_covariance.nrows();
    if mean.nrows() != m || mean.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: mean.nrows(),
        });
    }
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 trials required, got {trials}"
        )));
    }
    if column_covariance.amax() == 0.0 {
        let det = mean.determinant().abs();
        return Ok((det, 0.0));
    }
    let gv = GaussianVector::new(column_covariance.clone())?;
    let mut acc = Welford::new();
    let mut g = DMatrix::zeros(m, m);
    for _ in 0..trials {
        for j in 0..m {
            let col = gv.sample(s);
            for i in 0..m {
                g[(i, j)] = mean[(i, j)] + col[i];
            }
        }
        acc.push(g.determinant().abs());
    }
    Ok((acc.mean(), acc.stderr()))
}
