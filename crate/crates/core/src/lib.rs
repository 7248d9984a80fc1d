//! Scene layout generation from dialogue and mask-conditioned sketch generation.

pub mod categories;
pub mod classes;
pub mod clipart;
pub mod codraw;
pub mod embeddings;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod generator;
pub mod manifest;
pub mod proposer;
pub mod quickdraw;
pub mod raster;
pub mod scene;
pub mod similarity;
pub mod stroke;

pub use error::{CoreError, Result};
