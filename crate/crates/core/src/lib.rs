//! Landmark-guided 4D facial expression synthesis.
//!
//! A coarse-to-fine stack of temporal generators, conditioned on a neutral
//! landmark frame, produces landmark displacement sequences of any length. A
//! cross-attention decoder lifts each landmark displacement frame to dense
//! per-vertex mesh displacements, which are added to the neutral mesh.

pub mod autoencoder;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod discriminators;
pub mod error;
pub mod features;
pub mod generator;
pub mod geometry;
pub mod mesh_io;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorClass, Result};
