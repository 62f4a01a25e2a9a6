pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod nnkit;
pub mod normvae;
pub mod synthworld;

mod binio;

pub use binio::atomic_write;
pub use error::{Error, ErrorKind, Result};
