pub mod distsim;
pub mod duality;
pub mod error;
pub mod linalg;
pub mod netmodel;
pub mod pwf;
pub mod rng;
pub mod solvers;
pub mod streams;

pub use error::{Error, Result};
