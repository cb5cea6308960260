pub mod banditsel;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod modelzoo;
pub mod ndnum;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
