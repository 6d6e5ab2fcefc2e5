//! Numerical laboratory for random real algebraic geometry.
//!
//! * [`gaussian`]: seeded streams, Gaussian vectors, densities, regression.
//! * [`kostlan`]: Kostlan maps, the rescaled and Bargmann–Fock fields, kernels.
//! * [`kacrice`]: closed-form and numerical Kac-Rice expectations, subspace angles.
//! * [`zerocount`]: certified real-root counting and Monte-Carlo averages.
//! * [`nodal`]: grid topology of planar zero sets, condition numbers, Betti bounds.

pub mod error;
pub mod gaussian;
pub mod kacrice;
pub mod kostlan;
pub mod nodal;
mod linalg;
pub mod quadrature;
pub mod stats;
pub mod zerocount;

pub use error::{Error, Result};
