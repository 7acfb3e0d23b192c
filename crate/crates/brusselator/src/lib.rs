//! Geometric singular perturbation toolkit for the Brusselator relaxation
//! oscillation: coordinate frames, critical-manifold geometry, integration with
//! clock bookkeeping, Poincaré maps, blow-up charts and ε-sweeps.

// `!(x > 0.0)` is used deliberately so that NaN fails validation, and the
// Runge–Kutta stages index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod blowup;
pub mod error;
pub mod flow;
pub mod frames;
pub mod geometry;
pub mod poincare;
pub mod sweep;

pub use error::{Error, Result};
pub use frames::{Clock, FrameId, FrameState, Params, TimeLedger};
