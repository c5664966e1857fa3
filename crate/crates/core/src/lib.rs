pub mod autodiff;
pub mod error;
pub mod evalsuite;
pub mod losses;
pub mod model;
pub mod pseudolabels;
pub mod scene;
pub mod synthgen;
pub mod trainer;
pub use error::{Error, Result};
