//! Architecture hyperparameters and their integrity hash.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Everything that fixes the network shape. Defaults are the full-scale
/// configuration: a tiny 11-block ViT over 256x256 6-band tiles with the
/// history embedding fused at stage 5 as an 8x8 grid of 24-dim tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub bands: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// 1-based index of the block that receives the history injection.
    pub fuse_stage: usize,
    /// Side length r of the stored history grid (r*r tokens).
    pub he_grid: usize,
    /// Stored width d of each history token.
    pub he_dim: usize,
    /// 1-based block indices whose outputs feed the decoder.
    pub decoder_taps: Vec<usize>,
    /// Channel width of the pyramid decoder.
    pub decoder_channels: usize,
    /// Start tiles from a learned shared embedding instead of zeros.
    pub learned_initial_he: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            patch_size: 16,
            bands: 6,
            embed_dim: 192,
            depth: 11,
            heads: 3,
            mlp_ratio: 4.0,
            fuse_stage: 5,
            he_grid: 8,
            he_dim: 24,
            decoder_taps: vec![3, 5, 7, 11],
            decoder_channels: 128,
            learned_initial_he: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.bands == 0 {
            return fail("bands must be >= 1".into());
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.embed_dim % 4 != 0 {
            return fail(format!(
                "embed_dim {} must be divisible by 4 for 2-D sin/cos encodings",
                self.embed_dim
            ));
        }
        if self.depth == 0 {
            return fail("depth must be >= 1".into());
        }
        if self.fuse_stage == 0 || self.fuse_stage > self.depth {
            return fail(format!(
                "fuse_stage {} outside [1, {}]",
                self.fuse_stage, self.depth
            ));
        }
        if self.he_grid == 0 || self.he_dim == 0 {
            return fail("he_grid and he_dim must be >= 1".into());
        }
        if self.mlp_ratio <= 0.0 {
            return fail("mlp_ratio must be positive".into());
        }
        if self.decoder_taps.is_empty() {
            return fail("decoder_taps must not be empty".into());
        }
        for win in self.decoder_taps.windows(2) {
            if win[0] >= win[1] {
                return fail(format!("decoder_taps must be strictly increasing, got {:?}", self.decoder_taps));
            }
        }
        for &t in &self.decoder_taps {
            if t == 0 || t > self.depth {
                return fail(format!("decoder tap {} outside [1, {}]", t, self.depth));
            }
        }
        if self.decoder_channels == 0 {
            return fail("decoder_channels must be >= 1".into());
        }
        Ok(())
    }

    /// Tokens per image side.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Image token count.
    pub fn n_tokens(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    /// History token count (r squared).
    pub fn he_tokens(&self) -> usize {
        self.he_grid * self.he_grid
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio) as usize
    }

    /// 8-byte digest binding stored embeddings to the architecture that
    /// produced them (FNV-1a over the field values in declaration order).
    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::new();
        for v in [
            self.image_size,
            self.patch_size,
            self.bands,
            self.embed_dim,
            self.depth,
            self.heads,
            self.fuse_stage,
            self.he_grid,
            self.he_dim,
            self.decoder_channels,
            self.learned_initial_he as usize,
        ] {
            h.write_u64(v as u64);
        }
        h.write_u64(self.mlp_ratio.to_bits());
        for &t in &self.decoder_taps {
            h.write_u64(t as u64);
        }
        h.finish()
    }
}

/// FNV-1a, 64-bit. Also used for dataset fingerprints.
#[derive(Debug, Clone)]
pub struct Fnv64 {
    state: u64,
}

impl Fnv64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Self {
            state: Self::OFFSET,
        }
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(Self::PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}
