//! Weak phase-transition thresholds for block-sparse and positive
//! block-sparse recovery from Gaussian measurements, together with the
//! machinery to check them empirically.
//!
//! * [`specfun`]: error/incomplete-gamma families and the γ⁺ mixture CDF.
//! * [`thresholds`]: threshold equations, their roots and threshold curves.
//! * [`width`]: Gaussian width of the recovery cone, empirical and limiting.
//! * [`recovery`]: instance generation, convex recovery solvers and the
//!   null-space certificate.
//! * [`harness`]: seeded phase experiments and comparison with theory.

pub mod error;
pub mod harness;
pub mod recovery;
pub mod rng;
pub mod roots;
pub mod specfun;
pub mod thresholds;
pub mod width;

pub use error::{Error, Result};
