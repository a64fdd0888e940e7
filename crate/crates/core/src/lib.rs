//! Encoder-free vision-language training at desk scale: vision enters the LLM through LoRA adapters.
//!
//! A frozen decoder-only student learns to read image patches through
//! low-rank adapters in its first `n_vit` blocks, a shallow vision embedding
//! layer, and block-wise cosine distillation from a frozen toy ViT. Attention
//! is bi-directional among vision tokens and causal elsewhere. After
//! pre-training the adapters merge into the base weights exactly.
//!
//! Everything runs on the small reverse-mode engine in [`autograd`]. Loops over
//! samples, ablation cells and matmul rows use rayon when the `parallel`
//! feature is on (the default) and run sequentially otherwise; results are
//! identical either way.

pub mod autograd;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod lora;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Result, VoraError};
pub use tensor::Tensor;
