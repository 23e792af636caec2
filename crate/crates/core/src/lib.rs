//! Differentiable triangle-mesh rendering with soft triangle extensions,
//! and a desk-scale pipeline for learning 3D shapes from 2D images with a
//! renderer-in-the-loop GAN.

pub mod camera;
pub mod cli;
pub mod error;
pub mod grad;
pub mod image;
pub mod raster;
pub mod trainer;
pub mod scene;

pub use error::{Error, Result};
