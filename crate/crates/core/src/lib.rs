pub mod cli;
pub mod coco;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod netpbm;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use labels::Category;
