#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod expr;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod periodic;

pub use error::{Error, Result};
