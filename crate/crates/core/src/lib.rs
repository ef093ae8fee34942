//! Banded matrix-factorization mechanisms for differentially private
//! streaming linear queries.
//!
//! The crate covers the full life cycle of a banded mechanism:
//!
//! * [`banded`] and [`gram`]: compact banded lower-triangular encoders, their
//!   streaming multiply / inverse-multiply kernels and banded Cholesky.
//! * [`workload`]: prefix-sum and momentum (SGDM) query workloads.
//! * [`sensitivity`]: sensitivity under single, `(k, b)` and `b`-min-sep
//!   participation, exact for banded Gram matrices and an upper bound otherwise.
//! * [`optimizer`]: LBFGS over banded positive-definite Gram matrices with
//!   masked (equal column norm) or projected (`(k, b)`) gradients.
//! * [`accounting`]: RDP / zCDP accounting with and without amplification by
//!   sampling, noise calibration and band-count sweeps.
//! * [`noise`]: seeded streaming generation of correlated noise.
//!
//! Bandwidth convention: a matrix has `bands = b̂` when every nonzero entry
//! satisfies `|i - j| < b̂`, i.e. `b̂` counts the nonzero diagonals of the
//! lower-triangular factor. `b̂ = 1` is diagonal.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod banded;
pub mod cache;
pub mod dense;
mod error;
pub mod exec;
pub mod gram;
pub mod io;
pub mod noise;
pub mod optimizer;
pub mod repro;
pub mod sensitivity;
pub mod workload;

pub use banded::BandedLowerTriangular;
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use exec::Execution;
pub use gram::GramMatrix;
pub use sensitivity::{ParticipationSchema, SensitivityReport};
pub use workload::Workload;
