pub mod diagnostics;
pub mod error;
pub mod gateway;
pub mod policies;
pub mod report;
pub mod runner;
pub mod stream;

pub use error::{Error, Result};
