//! Statistical machinery for protocol-driven matched observational studies.

pub mod adaptive;
pub mod error;
pub mod matcher;
pub mod multiplicity;
pub mod pairs;
pub mod rng;
pub mod sensitivity;
pub mod simlab;
pub mod stats;

pub use error::{Error, Result};
