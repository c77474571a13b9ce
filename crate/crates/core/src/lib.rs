pub mod chain;
pub mod config;
pub mod detector;
pub mod error;
pub mod optimizer;
pub mod fock;
pub mod montecarlo;
pub mod preparation;
pub mod special;
pub mod statistics;
pub mod witness;

pub use error::{Error, Result};
