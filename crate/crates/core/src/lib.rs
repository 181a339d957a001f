// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `Var::add` and friends are fallible and cannot implement the operator traits.
#![allow(clippy::should_implement_trait)]

pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod doc;
pub mod error;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod network;

pub use error::{Error, Result};
