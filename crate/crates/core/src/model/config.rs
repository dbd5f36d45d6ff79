use serde::{Deserialize, Serialize};

/// Architecture hyperparameters.
///
/// The defaults are the desk-scale configuration used throughout the test
/// and training presets; `toy` is small enough for finite-difference
/// verification of the whole model in f64.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Patch edge in pixels.
    pub patch: usize,
    /// Encoder embedding width.
    pub d_enc: usize,
    /// Decoder/state embedding width.
    pub d_dec: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    /// Lightweight raymap encoder depth.
    pub raymap_enc_blocks: usize,
    /// Attention head count (shared by all attention ops).
    pub heads: usize,
    /// Number of persistent state tokens.
    pub n_state: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: 8,
            d_enc: 128,
            d_dec: 128,
            enc_blocks: 4,
            dec_blocks: 4,
            raymap_enc_blocks: 2,
            heads: 4,
            n_state: 64,
            height: 32,
            width: 32,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("image {height}x{width} not divisible by patch {patch}")]
    PatchMismatch {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("embedding width {width} not divisible by {heads} heads")]
    HeadMismatch { width: usize, heads: usize },
    #[error("per-head width {per_head} must be divisible by 4 for 2-d rotary positions")]
    RopeWidth { per_head: usize },
}

impl ModelConfig {
    /// Small but realistic configuration for fast training tests.
    pub fn small() -> Self {
        ModelConfig {
            patch: 4,
            d_enc: 32,
            d_dec: 32,
            enc_blocks: 2,
            dec_blocks: 2,
            raymap_enc_blocks: 2,
            heads: 4,
            n_state: 16,
            height: 16,
            width: 16,
        }
    }

    /// Tiny instantiation for f64 gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            patch: 2,
            d_enc: 8,
            d_dec: 8,
            enc_blocks: 1,
            dec_blocks: 1,
            raymap_enc_blocks: 1,
            heads: 2,
            n_state: 3,
            height: 4,
            width: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(ConfigError::PatchMismatch {
                height: self.height,
                width: self.width,
                patch: self.patch,
            });
        }
        for width in [self.d_enc, self.d_dec] {
            if self.heads == 0 || width % self.heads != 0 {
                return Err(ConfigError::HeadMismatch {
                    width,
                    heads: self.heads,
                });
            }
            let per_head = width / self.heads;
            if per_head % 4 != 0 {
                return Err(ConfigError::RopeWidth { per_head });
            }
        }
        Ok(())
    }

    pub fn patches_y(&self) -> usize {
        self.height / self.patch
    }

    pub fn patches_x(&self) -> usize {
        self.width / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.patches_y() * self.patches_x()
    }

    /// Pixels per image.
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}
