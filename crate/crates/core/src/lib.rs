//! Higher-order incremental view maintenance: a compiler from aggregate
//! queries to trigger programs over materialized views, and a runtime that
//! executes them on update streams.

pub mod ast;
pub mod compiler;
pub mod delta;
pub mod error;
pub mod gmr;
pub mod harness;
pub mod optimizer;
pub mod poly;
pub mod runtime;
pub mod value;

pub use error::{Error, Result};
