pub mod domains;
pub mod error;
pub mod graph;
pub mod models;
pub mod optim;
pub mod propagate;
pub mod reconstruct;
pub mod samplers;
pub mod surrogates;

pub use error::{Error, Result};
