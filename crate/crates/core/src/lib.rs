#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod error;
pub mod io;
pub mod propagation;
pub mod pump;
pub mod scenario;
pub mod spectral;
pub mod theory;

pub use error::{AfcError, Result};
