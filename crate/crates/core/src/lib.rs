#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod covariates;
pub mod error;
pub mod estimator;
pub mod geo;
pub mod panel;
pub mod pipeline;
pub mod simulator;
pub mod tensor;
pub mod tile;
pub mod vit;

pub use error::{Error, ErrorClass, Result};
