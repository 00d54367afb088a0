//! Desk-scale radiance-field steganography workbench.
//!
//! A tiny MLP radiance field is trained on procedural synthetic scenes, then a
//! secret image is hidden by optimizing additive noise on the encoded sample
//! positions of one viewpoint. Rendering with the noise reveals the secret;
//! rendering without it is bit-identical to the clean model, because embedding
//! never writes to the model parameters.

pub mod error;
pub mod image;
pub mod tensor;

pub mod nerf;
pub mod scene;

pub mod metrics;

pub mod formats;

pub mod stego;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
