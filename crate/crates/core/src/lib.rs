//! Knockoff-based factor selection for asset returns.
//!
//! The crate builds synthetic look-alike copies (knockoffs) of candidate
//! return factors, selects factors whose quality beats their knockoff's at a
//! controlled false discovery rate, and applies the selection to fund
//! replication, directed explanatory / prediction network inference, and an
//! out-of-sample prediction backtest.

pub mod error;
pub mod knockoff;
pub mod learners;
pub mod panel;
pub mod seed;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};
