//! Low-rank adapters on the student's linear layers.
//!
//! An adapter on a `[d_out, d_in]` weight `W` holds `a: [rank, d_in]` and
//! `b: [d_out, rank]` and contributes `(alpha/rank)·b·a`. `b` starts at zero,
//! so a freshly attached adapter leaves the model's outputs unchanged, and the
//! delta folds exactly into `W` at merge time.

use std::fmt;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Result, VoraError};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

pub const A_INIT_STD: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Q,
    K,
    V,
    O,
    FfnUp,
    FfnGate,
    FfnDown,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Q,
        LayerKind::K,
        LayerKind::V,
        LayerKind::O,
        LayerKind::FfnUp,
        LayerKind::FfnGate,
        LayerKind::FfnDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Q => "q",
            LayerKind::K => "k",
            LayerKind::V => "v",
            LayerKind::O => "o",
            LayerKind::FfnUp => "ffn_up",
            LayerKind::FfnGate => "ffn_gate",
            LayerKind::FfnDown => "ffn_down",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// `(d_in, d_out)` of the base weight.
    pub fn dims(self, cfg: &ModelConfig) -> (usize, usize) {
        match self {
            LayerKind::Q | LayerKind::K | LayerKind::V | LayerKind::O => (cfg.d_model, cfg.d_model),
            LayerKind::FfnUp | LayerKind::FfnGate => (cfg.d_model, cfg.d_ff),
            LayerKind::FfnDown => (cfg.d_ff, cfg.d_model),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdapterTarget {
    pub block: usize,
    pub layer: LayerKind,
}

impl AdapterTarget {
    pub fn base_name(&self) -> String {
        format!("llm.{}.{}", self.block, self.layer.name())
    }

    pub fn a_name(&self) -> String {
        format!("lora.{}.{}.a", self.block, self.layer.name())
    }

    pub fn b_name(&self) -> String {
        format!("lora.{}.{}.b", self.block, self.layer.name())
    }
}

impl fmt::Display for AdapterTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block{}.{}", self.block, self.layer.name())
    }
}

#[derive(Clone, Debug)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f32,
    pub target: AdapterTarget,
    merged: bool,
}

impl LoraAdapter {
    /// Fresh adapter: `a ~ N(0, 0.02²)`, `b = 0`.
    pub fn new<R: Rng + ?Sized>(
        target: AdapterTarget,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f32,
        rng: &mut R,
    ) -> Result<Self> {
        check_rank(rank, d_in, d_out, &target)?;
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(VoraError::Config(format!("LoRA alpha must be > 0, got {alpha}")));
        }
        Ok(Self {
            a: Tensor::randn(&[rank, d_in], A_INIT_STD, rng),
            b: Tensor::zeros(&[d_out, rank]),
            rank,
            alpha,
            target,
            merged: false,
        })
    }

    pub fn from_parts(a: Tensor, b: Tensor, alpha: f32, target: AdapterTarget) -> Result<Self> {
        let (rank, _) = a.expect_2d("lora.a")?;
        let (_, rank_b) = b.expect_2d("lora.b")?;
        if rank != rank_b {
            return Err(crate::error::shape_err("lora", a.shape(), b.shape()));
        }
        Ok(Self {
            a,
            b,
            rank,
            alpha,
            target,
            merged: false,
        })
    }

    pub fn scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    pub fn is_merged(&self) -> bool {
        self.merged
    }

    /// `(alpha/rank)·b·a`, shaped like the base weight.
    pub fn delta(&self) -> Result<Tensor> {
        let mut d = self.b.matmul(&self.a)?;
        let s = self.scale();
        d.data_mut().iter_mut().for_each(|v| *v *= s);
        Ok(d)
    }

    /// Folds this adapter into `base_w` once; a second call is an error.
    pub fn merge_into(&mut self, base_w: &Tensor) -> Result<Tensor> {
        if self.merged {
            return Err(VoraError::State(format!("adapter {} already merged", self.target)));
        }
        let out = merge(base_w, self)?;
        self.merged = true;
        Ok(out)
    }
}

fn check_rank(rank: usize, d_in: usize, d_out: usize, target: &AdapterTarget) -> Result<()> {
    if rank == 0 {
        return Err(VoraError::Config("LoRA rank must be >= 1".into()));
    }
    if rank >= d_in.min(d_out) {
        return Err(VoraError::Config(format!(
            "LoRA rank {rank} is not low-rank for {target} ({d_out}x{d_in})"
        )));
    }
    Ok(())
}

/// One adapter per targeted linear layer of blocks `0..n_vit`, in block-major order.
pub fn attach<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Vec<LoraAdapter>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_vit * LayerKind::ALL.len());
    for block in 0..cfg.n_vit {
        for layer in LayerKind::ALL {
            let (d_in, d_out) = layer.dims(cfg);
            out.push(LoraAdapter::new(
                AdapterTarget { block, layer },
                d_in,
                d_out,
                cfg.rank,
                cfg.alpha,
                rng,
            )?);
        }
    }
    Ok(out)
}

/// `x·Wᵀ + scale·(x·aᵀ)·bᵀ` on the tape.
pub fn lora_forward(tape: &mut Tape, x: Var, base_w: Var, a: Var, b: Var, scale: f32) -> Result<Var> {
    let base = tape.matmul_nt(x, base_w)?;
    let down = tape.matmul_nt(x, a)?;
    let up = tape.matmul_nt(down, b)?;
    let delta = tape.scale(up, scale)?;
    tape.add(base, delta)
}

/// `base_w + (alpha/rank)·b·a`.
pub fn merge(base_w: &Tensor, adapter: &LoraAdapter) -> Result<Tensor> {
    let delta = adapter.delta()?;
    if delta.shape() != base_w.shape() {
        return Err(crate::error::shape_err("lora merge", base_w.shape(), delta.shape()));
    }
    let data = base_w.data().iter().zip(delta.data()).map(|(w, d)| w + d).collect();
    Tensor::new(base_w.shape().to_vec(), data)
}

pub fn adapter_param_count(d_in: usize, d_out: usize, rank: usize) -> Result<usize> {
    if rank == 0 {
        return Err(VoraError::Config("LoRA rank must be >= 1".into()));
    }
    Ok(rank * (d_in + d_out))
}

/// Parameters of the two-layer vision embedding MLP (weights and biases).
pub fn vision_embed_param_count(cfg: &ModelConfig) -> usize {
    cfg.patch_dim() * cfg.embed_hidden + cfg.embed_hidden + cfg.embed_hidden * cfg.d_model + cfg.d_model
}

/// One AuxHead: RMSNorm gain plus the `d_model → d_vit` projection.
pub fn aux_head_param_count(cfg: &ModelConfig) -> usize {
    cfg.d_model + cfg.d_vit * cfg.d_model
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CountOptions {
    pub vision_embed: bool,
    /// Number of AuxHeads to include.
    pub aux_heads: usize,
}

/// Trainable parameters of the pre-training stage.
pub fn param_count(cfg: &ModelConfig, opts: CountOptions) -> Result<usize> {
    let mut n = 0;
    for _ in 0..cfg.n_vit {
        for layer in LayerKind::ALL {
            let (d_in, d_out) = layer.dims(cfg);
            n += adapter_param_count(d_in, d_out, cfg.rank)?;
        }
    }
    if opts.vision_embed {
        n += vision_embed_param_count(cfg);
    }
    n += opts.aux_heads * aux_head_param_count(cfg);
    Ok(n)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig::micro(100)
    }

    #[test]
    fn attach_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = micro();
        assert_eq!(attach(&cfg, &mut rng).unwrap().len(), 28);
        let mut c0 = cfg.clone();
        c0.n_vit = 0;
        assert!(attach(&c0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn attach_enumerates_targets_exactly() {
        let mut cfg = micro();
        cfg.n_llm = 2;
        cfg.n_vit = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got: Vec<AdapterTarget> = attach(&cfg, &mut rng).unwrap().iter().map(|a| a.target).collect();
        let mut want = Vec::new();
        for block in 0..2 {
            for name in ["q", "k", "v", "o", "ffn_up", "ffn_gate", "ffn_down"] {
                want.push(AdapterTarget {
                    block,
                    layer: LayerKind::parse(name).unwrap(),
                });
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn rank_must_be_low() {
        let mut cfg = micro();
        cfg.rank = cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(attach(&cfg, &mut rng), Err(VoraError::Config(_))));
    }

    #[test]
    fn fresh_adapter_has_zero_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = AdapterTarget { block: 0, layer: LayerKind::Q };
        let ad = LoraAdapter::new(t, 16, 16, 4, 4.0, &mut rng).unwrap();
        assert!(ad.b.data().iter().all(|v| *v == 0.0));
        assert!(ad.a.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn hand_arithmetic_forward() {
        // base 0, rank 1, alpha 1, a = ones row, b = ones column, x = [1,2,3] → every output is 6
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let a = tape.constant(Tensor::full(&[1, 3], 1.0));
        let b = tape.constant(Tensor::full(&[2, 1], 1.0));
        let y = lora_forward(&mut tape, x, w, a, b, 1.0).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0, 6.0]);
    }

    #[test]
    fn zero_b_forward_is_plain_linear_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[5, 8], 1.0, &mut rng));
        let w = tape.constant(Tensor::randn(&[6, 8], 0.3, &mut rng));
        let a = tape.constant(Tensor::randn(&[2, 8], 0.02, &mut rng));
        let b = tape.constant(Tensor::zeros(&[6, 2]));
        let plain = tape.matmul_nt(x, w).unwrap();
        let adapted = lora_forward(&mut tape, x, w, a, b, 1.0).unwrap();
        assert!(tape.value(plain).bit_eq(tape.value(adapted)));
    }

    #[test]
    fn base_weight_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let w = tape.leaf(Tensor::randn(&[5, 4], 0.3, &mut rng), false);
        let a = tape.leaf(Tensor::randn(&[2, 4], 0.3, &mut rng), true);
        let b = tape.leaf(Tensor::randn(&[5, 2], 0.3, &mut rng), true);
        let y = lora_forward(&mut tape, x, w, a, b, 0.5).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert!(g.get(a).is_some());
        assert!(g.get(b).is_some());
    }

    #[test]
    fn merge_zero_b_is_identity_and_guarded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = AdapterTarget { block: 0, layer: LayerKind::O };
        let mut ad = LoraAdapter::new(t, 8, 8, 2, 2.0, &mut rng).unwrap();
        let w = Tensor::randn(&[8, 8], 0.1, &mut rng);
        let merged = ad.merge_into(&w).unwrap();
        assert!(merged.bit_eq(&w));
        assert!(matches!(ad.merge_into(&w), Err(VoraError::State(_))));
    }

    #[test]
    fn merged_forward_matches_adapter_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = AdapterTarget { block: 0, layer: LayerKind::FfnUp };
        let mut ad = LoraAdapter::new(t, 8, 12, 3, 5.0, &mut rng).unwrap();
        ad.b = Tensor::randn(&[12, 3], 0.5, &mut rng);
        let w = Tensor::randn(&[12, 8], 0.3, &mut rng);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let merged = merge(&w, &ad).unwrap();
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w));
        let (av, bv) = (tape.constant(ad.a.clone()), tape.constant(ad.b.clone()));
        let y = lora_forward(&mut tape, xv, wv, av, bv, ad.scale()).unwrap();
        let y_merged = x.matmul_nt(&merged).unwrap();
        assert!(tape.value(y).max_abs_diff(&y_merged) <= 1e-5);
    }

    #[test]
    fn counting_examples() {
        assert_eq!(adapter_param_count(16, 16, 4).unwrap(), 128);
        assert_eq!(adapter_param_count(2, 3, 1).unwrap(), 5);
        assert!(adapter_param_count(2, 3, 0).is_err());
    }

    #[test]
    fn count_is_strictly_increasing_in_rank() {
        let mut prev = 0;
        for rank in 1..16 {
            let mut cfg = micro();
            cfg.rank = rank;
            let n = param_count(&cfg, CountOptions::default()).unwrap();
            assert!(n > prev);
            prev = n;
        }
    }
}
