//! Sequence layouts and the hybrid attention mask.
//!
//! Vision tokens see every other vision token of the same image; every other
//! query is causal. Vision always precedes text, so causal text queries see
//! the whole image.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autograd::MASKED;
use crate::error::{Result, VoraError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Bi-directional among vision tokens, causal elsewhere.
    Hybrid,
    /// Plain autoregressive mask everywhere (ablation baseline).
    Causal,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Hybrid => "hybrid",
            MaskMode::Causal => "causal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(MaskMode::Hybrid),
            "causal" => Ok(MaskMode::Causal),
            other => Err(VoraError::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// Where the image and the text sit inside one packed sequence.
///
/// Positions at or beyond `text.end` are padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub vision: Range<usize>,
    pub text: Range<usize>,
    /// First caption/answer token; the LM loss covers `[supervise_from, text.end)`.
    pub supervise_from: usize,
}

impl SequenceLayout {
    pub fn text_only(len: usize, supervise_from: usize) -> Self {
        Self {
            vision: 0..0,
            text: 0..len,
            supervise_from,
        }
    }

    pub fn vision_len(&self) -> usize {
        self.vision.len()
    }

    /// Valid (unpadded) length.
    pub fn len(&self) -> usize {
        self.text.end.max(self.vision.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, total_len: usize) -> Result<()> {
        let (v, t) = (&self.vision, &self.text);
        if v.start > v.end || t.start > t.end {
            return Err(VoraError::Layout(format!("reversed span in {self:?}")));
        }
        if !v.is_empty() && !t.is_empty() && v.end > t.start {
            return Err(VoraError::Layout(format!(
                "vision span {v:?} overlaps or follows text span {t:?}"
            )));
        }
        if !v.is_empty() && v.start != 0 {
            return Err(VoraError::Layout(format!("vision span {v:?} must start the sequence")));
        }
        if self.len() > total_len {
            return Err(VoraError::Layout(format!(
                "layout length {} exceeds sequence length {total_len}",
                self.len()
            )));
        }
        if self.supervise_from < t.start || self.supervise_from > t.end {
            return Err(VoraError::Layout(format!(
                "supervise_from {} outside text span {t:?}",
                self.supervise_from
            )));
        }
        Ok(())
    }

    pub fn allows(&self, mode: MaskMode, q: usize, k: usize) -> bool {
        let both_vision = self.vision.contains(&q) && self.vision.contains(&k);
        k <= q || (mode == MaskMode::Hybrid && both_vision)
    }
}

/// Additive `[total_len, total_len]` mask: 0 where query `q` may attend key `k`, [`MASKED`] elsewhere.
pub fn build_mask(layout: &SequenceLayout, total_len: usize, mode: MaskMode) -> Result<Tensor> {
    layout.validate(total_len)?;
    if total_len == 0 {
        return Err(VoraError::Layout("empty sequence".into()));
    }
    let mut data = vec![MASKED; total_len * total_len];
    for q in 0..total_len {
        for k in 0..total_len {
            if layout.allows(mode, q, k) {
                data[q * total_len + k] = 0.0;
            }
        }
    }
    Tensor::new(vec![total_len, total_len], data)
}

pub fn build_hybrid_mask(layout: &SequenceLayout, total_len: usize) -> Result<Tensor> {
    build_mask(layout, total_len, MaskMode::Hybrid)
}
