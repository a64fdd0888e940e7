use serde::{Deserialize, Serialize};

use crate::error::{Result, VoraError};

/// Architecture hyperparameters for the student LLM, its adapters, the
/// vision embedding layer and the teacher ViT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Student transformer blocks.
    pub n_llm: usize,
    /// Teacher blocks; LoRA and distillation cover the first `n_vit` student blocks.
    pub n_vit: usize,
    pub d_model: usize,
    pub d_vit: usize,
    pub n_heads: usize,
    pub vit_heads: usize,
    pub d_ff: usize,
    pub d_vit_ff: usize,
    /// Hidden width of the two-layer vision embedding MLP.
    pub embed_hidden: usize,
    pub vocab: usize,
    /// Patch edge in pixels.
    pub patch: usize,
    pub rank: usize,
    pub alpha: f32,
    pub max_seq: usize,
}

pub const NORM_EPS: f32 = 1e-6;

impl ModelConfig {
    /// The reference micro configuration (6 student blocks, 4 teacher blocks).
    pub fn micro(vocab: usize) -> Self {
        Self {
            n_llm: 6,
            n_vit: 4,
            d_model: 64,
            d_vit: 48,
            n_heads: 4,
            vit_heads: 4,
            d_ff: 128,
            d_vit_ff: 96,
            embed_hidden: 16,
            vocab,
            patch: 8,
            rank: 8,
            alpha: 8.0,
            max_seq: 96,
        }
    }

    /// Every extent at most 8; used by the end-to-end gradient check.
    pub fn nano(vocab: usize) -> Self {
        Self {
            n_llm: 2,
            n_vit: 2,
            d_model: 8,
            d_vit: 8,
            n_heads: 2,
            vit_heads: 2,
            d_ff: 8,
            d_vit_ff: 8,
            embed_hidden: 4,
            vocab,
            patch: 1,
            rank: 2,
            alpha: 2.0,
            max_seq: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn vit_head_dim(&self) -> usize {
        self.d_vit / self.vit_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn lora_scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("n_llm", self.n_llm),
            ("d_model", self.d_model),
            ("d_vit", self.d_vit),
            ("n_heads", self.n_heads),
            ("vit_heads", self.vit_heads),
            ("d_ff", self.d_ff),
            ("d_vit_ff", self.d_vit_ff),
            ("embed_hidden", self.embed_hidden),
            ("vocab", self.vocab),
            ("patch", self.patch),
            ("rank", self.rank),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(VoraError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_vit > self.n_llm {
            return Err(VoraError::Config(format!(
                "n_vit ({}) must not exceed n_llm ({})",
                self.n_vit, self.n_llm
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) || !self.head_dim().is_multiple_of(2) {
            return Err(VoraError::Config(format!(
                "d_model ({}) must split into {} heads of even width",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_vit.is_multiple_of(self.vit_heads) {
            return Err(VoraError::Config(format!(
                "d_vit ({}) must be divisible by vit_heads ({})",
                self.d_vit, self.vit_heads
            )));
        }
        if !self.d_model.is_multiple_of(4) || !self.d_vit.is_multiple_of(4) {
            return Err(VoraError::Config(
                "d_model and d_vit must be multiples of 4 (2-D sinusoidal positions)".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(VoraError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}
