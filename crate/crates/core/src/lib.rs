pub mod chemotaxis;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod monitor;
pub mod params;
pub mod stokes;
pub mod testfn;

pub use error::{Error, Result};
