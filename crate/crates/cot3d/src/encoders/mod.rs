//! The simplified 3D shape encoder and the small trainable text encoder.

pub mod shape;
pub mod text;
pub mod vocab;

pub use shape::{ShapeEncoder, ShapeFeatures, ShapeForward};
pub use text::TextEncoder;
pub use vocab::{build_vocab, tokenize, tokenize_words, Vocab, PAD_ID, UNK_ID};

/// Model dimensions shared by the encoders and the projection module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Keypoint count M.
    pub keypoints: usize,
    /// Neighborhood size m.
    pub neighbors: usize,
    /// Local feature width h.
    pub local_dim: usize,
    /// Global embedding width d (e_3D).
    pub global_dim: usize,
    /// Token embedding width e.
    pub embed_dim: usize,
    /// Shared space width d' (z_3D, z_text).
    pub shared_dim: usize,
    /// Fourier frequency count for positional features.
    pub n_freq: usize,
    pub max_len: usize,
    pub min_freq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            keypoints: 32,
            neighbors: 8,
            local_dim: 64,
            global_dim: 128,
            embed_dim: 64,
            shared_dim: 32,
            n_freq: 4,
            max_len: 256,
            min_freq: 1,
        }
    }
}
