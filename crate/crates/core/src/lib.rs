//! Nonlocal capacity of bipartite nonsignaling correlations.

// Index loops mirror the tensor notation; negated float comparisons are how NaN is rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bell;
pub mod error;
pub mod io;
pub mod nsbox;
pub mod optimizer;
pub mod quantum;
pub mod solver;

pub use error::{Error, Result};
pub use nsbox::{BoxShape, InputDist, JointExtension, NSBox};
