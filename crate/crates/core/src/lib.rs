//! Simulation toolkit for a hollow-cylinder traveling-wave ultrasonic motor:
//! parametric stator geometry, coupled piezoelectric finite elements, modal
//! and transient analysis, a rotor contact model and the characterization
//! harness that compares predictions with bench measurements.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tensor and stencil loops read better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod contact;
pub mod drive;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod materials;
pub mod mesh;
pub mod model;
pub mod modal;
pub mod par;
pub mod transient;
pub mod units;

pub use error::{Error, Result};
