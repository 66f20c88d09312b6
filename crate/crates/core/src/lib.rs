//! Iterative regularization of linear inverse problems `y = X w + noise` by
//! dual (accelerated) gradient descent on a strongly convexified
//! low-complexity prior `R(w) + alpha/2 |w|^2`.
//!
//! The crate is split into:
//!
//! * [`linops`]: dense operators, spectral norm, finite differences, masks.
//! * [`regularizers`]: the l1, group l1/l2, 1-d total variation and nuclear
//!   norm priors with their proximity operators, model descriptors, tangent
//!   projectors, Riemannian Hessians and source-condition certificates.
//! * [`solvers`]: dual gradient descent, its inertial variant and the
//!   continuous-time dual flow integrated with RK4.
//! * [`analysis`]: model-consistency intervals and the local linear-rate
//!   machinery (iteration matrix, spectral radius, rate fit, error envelope).
//! * [`harness`]: synthetic problem generation, noise injection, experiment
//!   drivers and CSV/JSON output used by the `dualreg` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod harness;
pub mod linops;
pub mod regularizers;
pub mod solvers;

pub use error::{Error, Result};
pub use harness::problem::ProblemInstance;
pub use linops::DenseOperator;
pub use regularizers::{ModelDescriptor, RegKind, RegularizerSpec};
pub use solvers::{IterateRecord, Method, SolverConfig, Trace};

pub use nalgebra::{DMatrix, DVector};
