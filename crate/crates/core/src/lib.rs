//! Transport of the one-point velocity density `p(u; x, t)` of a turbulent
//! flow, driven by conditional statistics of the velocity field.
//!
//! * [`flow_model`]: conditional statistics and the PDE coefficients `B`, `A`, `Q`, `C`.
//! * [`characteristics`]: backward characteristic paths and the linear-drift closed form.
//! * [`estimator`]: Monte Carlo, kernel-quadrature and single-characteristic estimates.
//! * [`invariants`]: mass, divergence, residual, moment and positivity checks.
//! * [`showcase`]: the closed-form example and its figure data.
//! * [`quadrature`]: Gauss rules, the singular-kernel integrator, stencils.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod characteristics;
pub mod error;
pub mod estimator;
pub mod flow_model;
pub mod invariants;
pub mod noise;
pub mod output;
pub mod quadrature;
pub mod report;
pub mod showcase;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::{Mat3, Vec3};
