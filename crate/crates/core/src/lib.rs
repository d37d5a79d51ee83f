//! Image-side building blocks for face2scene: synthetic degradations, face
//! alignment, the oracle face restorer, metrics and the toy dataset.

pub mod datagen;
pub mod degrade;
pub mod error;
pub mod evalkit;
pub mod facegeom;
pub mod image;
pub mod refsim;
pub mod rng;

pub use error::{Error, Result};
pub use image::{Image, Mask};
