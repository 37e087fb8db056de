pub mod adaptive;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod mobility;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod topology;

pub use error::{Error, Result};
