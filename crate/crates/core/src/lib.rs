//! Acquisition pipeline for common Chinese emotional events.

pub mod clock;
pub mod error;
pub mod eval;
pub mod event;
pub mod filter;
pub mod gateway;
pub mod harvest;
mod hashing;
pub mod indicator;
pub mod kb;
pub mod linear;
mod par;
pub mod polarity;
pub mod prompt;
pub mod scorer;
pub mod text;

pub use error::{Error, Result};
