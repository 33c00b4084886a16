//! Compressive-sensing recovery with generative priors over a structured
//! latent space.

pub mod bundle;
pub mod error;
pub mod experiments;
pub mod generative;
pub mod image;
pub mod mlp;
pub mod projector;
pub mod recovery;
pub mod tensor;
pub mod theory;
pub mod weights;

pub use error::{Error, Result};
