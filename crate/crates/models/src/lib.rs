//! Learned components: the degradation extractor, the token mapper, and
//! the restoration network, plus the pipelines that tie them together.

pub mod error;
pub mod fadex;
pub mod mapnet;
pub mod nn;
pub mod pairs;
pub mod pipeline;
pub mod restorer;

pub use error::{ModelError, Result};
