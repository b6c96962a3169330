pub mod error;
pub mod dataset;
pub mod frontend;
pub mod inference;
pub mod network;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
