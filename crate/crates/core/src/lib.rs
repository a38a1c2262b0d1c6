pub mod cli;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod logistic;
pub mod model;
pub mod rng;
pub mod schema;
pub mod special;
pub mod stats;
pub mod svg;
pub mod synthworld;

pub use error::{Error, Result};
