pub mod error;
pub mod grid;
pub mod imageio;
pub mod interp;
pub mod metrics;
pub mod moments;
pub mod normalize;
pub mod pipeline;
pub mod raster;
pub mod synthetic;

pub use error::{Error, Result};
