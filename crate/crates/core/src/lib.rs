//! Twisted and weighted Diophantine approximation on the 2-torus.
//!
//! Certified orbit arithmetic, approximating-function constructions,
//! exact rectangle geometry, Cantor-set construction and Monte-Carlo
//! checks of metric zero-one laws.

pub mod badness;
pub mod cli;
pub mod error;
pub mod ktv;
pub mod kurzweil;
pub mod metric;
pub mod psi;
pub mod realnum;
pub mod torusgeo;
pub mod weights;

pub use error::{Error, Result};
pub use weights::Weights;
