pub mod ad;
pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod math;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
