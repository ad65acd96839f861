pub mod abstraction;
pub mod config;
pub mod error;
pub mod eval;
pub mod http;
pub mod library;
pub mod perception;
pub mod pipeline;
pub mod planner;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
