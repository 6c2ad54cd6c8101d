pub mod anchor;
pub mod cli;
pub mod coordination;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod mpc;
pub mod pipcheck;
pub mod sim;

pub use error::{Error, Result};
