pub mod cleaning;
pub mod cnn;
pub mod correlation;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod layout;
pub mod numfmt;
pub mod pipeline;

pub use error::{Error, Result};
