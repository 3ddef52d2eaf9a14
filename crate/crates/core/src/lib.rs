pub mod cli;
pub mod cond;
pub mod denot;
pub mod eqnf;
pub mod error;
pub mod finprob;
pub mod gauss;
pub mod lang;
pub mod numlin;
pub mod opsem;

pub use error::{Error, ParseError, Result};
