//! Gaussian-process regression with the binary tree kernel.
//!
//! Inputs are encoded as bit strings; the kernel between two points is the
//! total weight of their shared prefix. Kernel matrices over such inputs are
//! sums of sparse rank-one terms ([`sros`]), which makes fitting and
//! prediction close to linear in the number of points.

pub mod bits;
pub mod encoding;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod matrix;
#[cfg(feature = "dense-oracle")]
pub mod oracle;
pub mod sros;

pub use bits::BitMatrix;
pub use error::{Error, Result};
pub use matrix::ColMatrix;
