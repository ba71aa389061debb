pub mod binning;
pub mod cli;
pub mod error;
pub mod formats;
pub mod identifiability;
pub mod kmer;
pub mod linear;
pub mod nonlinear;
pub mod optim;
pub mod seqio;

pub use error::{Error, Result};
