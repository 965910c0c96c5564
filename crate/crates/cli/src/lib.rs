//! Configuration, stage pipeline and checks behind the `hcm-sim` binary.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod pipeline;

pub use config::{parse_config, RunConfig};
pub use pipeline::{parse_stages, Pipeline, RunStatus, Stage};
