// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod hog;
pub mod imaging;
pub mod pipeline;
pub mod svm;

pub use error::{Error, ErrorCategory, Result};
