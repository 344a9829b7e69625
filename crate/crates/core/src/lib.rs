//! Numerical analysis of the one-dimensional Liouville-type boundary value
//! problem u'' + lambda |x|^l f(u) = 0 on (-1, 1) with zero boundary values,
//! for f(u) = e^u and f(u) = (u + 1)^p.
//!
//! The crate constructs the even solution branch in closed generator form,
//! computes linearized spectra and Morse indices along it, locates degenerate
//! points, finds non-even solutions by shooting, and brackets the
//! symmetry-breaking bifurcation point where the non-even pair merges with
//! the even branch.

// `!(x > 0.0)` guards reject NaN alongside nonpositive values; the RK stepper
// indexes several stage slices in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diagram;
pub mod error;
pub mod korman;
pub mod ode;
pub mod problem;
pub mod quad;
pub mod shooting;
pub mod spectra;

pub use error::{Error, Result};
pub use problem::{Nonlinearity, ProblemSpec, Tolerances};
