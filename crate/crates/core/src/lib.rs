pub mod cli;
pub mod error;
pub mod mdp;
pub mod ot;
pub mod risk;
pub mod theorems;

pub use error::{Error, Result};
