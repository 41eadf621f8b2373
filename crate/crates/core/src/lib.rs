//! Desk-scale laboratory for associative versus geometric parametric memory:
//! path-star reasoning with small sequence models, Node2Vec spectral dynamics,
//! embedding-geometry diagnostics and representational-complexity calculators.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod models;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{GeomemError, Result};
