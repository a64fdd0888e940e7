//! The decoder-only student: token embedding, pre-norm blocks (RMSNorm,
//! rotary multi-head attention, SiLU-gated FFN), final norm and LM head.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Result, VoraError};
use crate::lora::{lora_forward, AdapterTarget, LayerKind};
use crate::model::{ModelConfig, ParamStore, Session, NORM_EPS};
use crate::tensor::Tensor;

pub const INIT_STD: f32 = 0.02;

/// Hidden state of one student block, captured for distillation.
#[derive(Clone, Copy, Debug)]
pub struct BlockTap {
    pub block_index: usize,
    /// `[seq, d_model]`, the block's post-residual output.
    pub hidden: Var,
}

#[derive(Clone, Debug)]
pub struct LlmOutput {
    pub logits: Var,
    /// One tap per block in `0..n_vit`.
    pub taps: Vec<BlockTap>,
}

pub fn init_llm<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> ParamStore {
    let mut p = ParamStore::new();
    let d = cfg.d_model;
    p.insert("llm.embed", Tensor::randn(&[cfg.vocab, d], INIT_STD, rng));
    for i in 0..cfg.n_llm {
        p.insert(format!("llm.{i}.attn_norm"), Tensor::full(&[d], 1.0));
        for layer in LayerKind::ALL {
            let (d_in, d_out) = layer.dims(cfg);
            p.insert(format!("llm.{i}.{}", layer.name()), Tensor::randn(&[d_out, d_in], INIT_STD, rng));
        }
        p.insert(format!("llm.{i}.ffn_norm"), Tensor::full(&[d], 1.0));
    }
    p.insert("llm.final_norm", Tensor::full(&[d], 1.0));
    p.insert("llm.lm_head", Tensor::randn(&[cfg.vocab, d], INIT_STD, rng));
    p
}

/// Multi-head scaled dot-product attention over `[T, d]` projections.
/// Rotary encoding is applied per head when `rope_positions` is given.
pub(crate) fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: &Tensor,
    rope_positions: Option<&[usize]>,
) -> Result<Var> {
    let d = tape.value(q).cols();
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let mut qh = tape.slice_cols(q, lo, hi)?;
        let mut kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        if let Some(pos) = rope_positions {
            qh = tape.rope(qh, pos)?;
            kh = tape.rope(kh, pos)?;
        }
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax_rows(scores, mask)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    tape.concat(&outs, 1)
}

/// A targeted linear layer: base weight plus its LoRA delta when an adapter is attached.
fn linear(sess: &mut Session<'_>, cfg: &ModelConfig, x: Var, block: usize, layer: LayerKind) -> Result<Var> {
    let target = AdapterTarget { block, layer };
    let w = sess.param(&target.base_name())?;
    let a_name = target.a_name();
    if sess.has(&a_name) {
        let a = sess.param(&a_name)?;
        let b = sess.param(&target.b_name())?;
        lora_forward(&mut sess.tape, x, w, a, b, cfg.lora_scale())
    } else {
        sess.tape.matmul_nt(x, w)
    }
}

/// Runs the student stack over an already-embedded sequence.
pub fn llm_forward(sess: &mut Session<'_>, cfg: &ModelConfig, embedded: Var, mask: &Tensor) -> Result<LlmOutput> {
    let seq = sess.tape.value(embedded).rows();
    if seq > cfg.max_seq {
        return Err(VoraError::Config(format!(
            "sequence length {seq} exceeds max_seq {}",
            cfg.max_seq
        )));
    }
    let positions: Vec<usize> = (0..seq).collect();
    let mut h = embedded;
    let mut taps = Vec::with_capacity(cfg.n_vit);
    for i in 0..cfg.n_llm {
        let g = sess.param(&format!("llm.{i}.attn_norm"))?;
        let a = sess.tape.rms_norm(h, g, NORM_EPS)?;
        let q = linear(sess, cfg, a, i, LayerKind::Q)?;
        let k = linear(sess, cfg, a, i, LayerKind::K)?;
        let v = linear(sess, cfg, a, i, LayerKind::V)?;
        let attn = attention(&mut sess.tape, q, k, v, cfg.n_heads, mask, Some(&positions))?;
        let o = linear(sess, cfg, attn, i, LayerKind::O)?;
        h = sess.tape.add(h, o)?;

        let g = sess.param(&format!("llm.{i}.ffn_norm"))?;
        let f = sess.tape.rms_norm(h, g, NORM_EPS)?;
        let gate = linear(sess, cfg, f, i, LayerKind::FfnGate)?;
        let up = linear(sess, cfg, f, i, LayerKind::FfnUp)?;
        let gate = sess.tape.silu(gate)?;
        let inner = sess.tape.mul(gate, up)?;
        let down = linear(sess, cfg, inner, i, LayerKind::FfnDown)?;
        h = sess.tape.add(h, down)?;
        if i < cfg.n_vit {
            taps.push(BlockTap {
                block_index: i,
                hidden: h,
            });
        }
    }
    let g = sess.param("llm.final_norm")?;
    let h = sess.tape.rms_norm(h, g, NORM_EPS)?;
    let head = sess.param("llm.lm_head")?;
    let logits = sess.tape.matmul_nt(h, head)?;
    Ok(LlmOutput { logits, taps })
}
