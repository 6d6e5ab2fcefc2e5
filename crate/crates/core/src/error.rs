use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance is not positive semidefinite within tolerance (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    FactorizationFailure { min_eig: f64, max_eig: f64 },

    #[error("covariance is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance is singular (determinant {0:e})")]
    SingularCovariance(f64),

    #[error("conditioning block is not positive definite")]
    SingularBlock,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {0:?} lies outside the declared radius of validity {1}")]
    OutsideDomain(Vec<f64>, f64),

    #[error("Sigma_0 is singular")]
    SingularSigma0,

    #[error("normal framing is not orthonormal (deviation {0:e})")]
    NonOrthonormalFraming(f64),

    #[error("field variance {0:e} at the evaluation point is degenerate")]
    DegenerateAtPoint(f64),

    #[error("W is contained in V")]
    ContainmentViolation,

    #[error("{0}")]
    Unsupported(String),

    #[error("polynomial is identically zero")]
    ZeroPolynomial,

    #[error("polynomial system is degenerate: {0}")]
    DegenerateSystem(String),

    #[error("resample rate {rate:.4} exceeds the 5% limit")]
    ExcessiveResampling { rate: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite field value at ({0}, {1})")]
    NonFiniteValue(f64, f64),

    #[error("grid function has no gradient")]
    MissingGradient,

    #[error("no consistent extremum count after 5 direction retries")]
    TieUnresolved,

    #[error("bridge function fails concavity check (g'' = {0:e})")]
    ConcavityViolation(f64),

    #[error("centers {0} and {1} are closer than 2/k")]
    CenterOverlap(usize, usize),

    #[error("zero set is not transversal on the grid")]
    NonTransversalInstance,

    #[error("perturbation sup norm {sup:e} is not below min(m, delta) = {margin:e}")]
    PerturbationTooLarge { sup: f64, margin: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
