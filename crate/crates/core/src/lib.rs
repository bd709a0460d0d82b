//! Variational inequalities over convex bodies given by separation oracles.

pub mod circuits;
pub mod cli;
pub mod ellipsoid;
pub mod error;
pub mod games;
pub mod geometry;
pub mod mlf;
pub mod vi;

pub use error::{Error, Result};
pub use geometry::Vector;
