pub mod ablation;
pub mod cache;
pub mod camera;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod error;
pub mod raster;
pub mod imgbuf;
pub mod rng;
pub mod teacher;
pub mod training;
pub mod io;

pub use error::{Error, Result};
pub use imgbuf::Image;
