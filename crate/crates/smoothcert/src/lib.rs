//! File formats, data loading and the certification harness around
//! [`smoothcert_core`].

pub mod certs_io;
pub mod config;
pub mod data_io;
pub mod error;
pub mod harness;
pub mod model_io;

pub use error::{AppError, Result};
