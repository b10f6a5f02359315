//! Staircase-laminate convex integration for the scalar Euler–Lagrange
//! differential inclusion `Dw ∈ K_f`.
//!
//! The crate is organised bottom-up:
//!
//! * [`profile`]: the convex profile `φ`, its derivatives and the target set `K_f`.
//! * [`staircase`]: parametrised matrix families, splitting coefficients,
//!   interpolation maps and the certified selection of the scheme constants.
//! * [`laminate`]: laminates of finite order with replayable splitting certificates.
//! * [`schedule`]: the `δ_ℓ`, `t_ℓ` sequences and the constants `C_{r,p}`, `C̃`, `N`.
//! * [`scheme`]: the iteration executed exactly on gradient distributions.
//! * [`realizer`]: piecewise-affine geometric realisation of laminates.
//! * [`regularity`]: exponent bootstrap, pinching solver and a discrete
//!   convolution inequality checker.

// `!(x > 0.0)` guards double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod interval;
pub mod laminate;
pub mod profile;
pub mod realizer;
pub mod regularity;
pub mod schedule;
pub mod scheme;
pub mod staircase;
mod sum;

pub use error::{Error, Result};
pub use profile::{ProfileConfig, SymMatrix2};
pub use staircase::{ParamPoint, StairConfig};
