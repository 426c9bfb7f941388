//! Desk-scale 3D point-cloud / text alignment with structured
//! chain-of-thought annotations: synthetic benchmark generation, two-stage
//! contrastive training, and a dual-layer evaluation harness.

pub mod alignment;
pub mod cli;
pub mod cotformat;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod mock;
pub mod net;
pub mod projection;
pub mod tensorkit;
pub mod trainer;

pub use error::{CotError, Result};
