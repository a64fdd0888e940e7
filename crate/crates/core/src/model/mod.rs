//! The student model: parameters, adapters, AuxHeads, forward and decoding.

pub mod checkpoint;
pub mod config;
pub mod llm;
pub mod mask;
pub mod params;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, NORM_EPS};
pub use llm::{llm_forward, BlockTap, LlmOutput};
pub use mask::{build_hybrid_mask, build_mask, MaskMode, SequenceLayout};
pub use params::{ParamStore, Session, Trainable};

use crate::autograd::Var;
use crate::data::vocab::{EOS, IMG};
use crate::error::{Result, VoraError};
use crate::lora::{self, AdapterTarget, LayerKind, LoraAdapter};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::vision::{embed_vision, init_vision_embed, patchify, Image};

/// One packed sequence: `tokens` covers every position (vision positions hold
/// placeholder ids), `image` fills the vision span.
#[derive(Clone, Copy, Debug)]
pub struct SequenceInput<'a> {
    pub tokens: &'a [usize],
    pub layout: &'a SequenceLayout,
    pub image: Option<&'a Image>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    merged: bool,
}

impl Model {
    /// Fresh student (`llm.*`) and vision embedding layer (`vision.*`).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = llm::init_llm(&config, &mut rng_for(seed, "llm", 0));
        params.extend(init_vision_embed(&config, &mut rng_for(seed, "vision", 0)));
        Ok(Self {
            config,
            params,
            merged: false,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore, merged: bool) -> Self {
        Self { config, params, merged }
    }

    pub fn is_merged(&self) -> bool {
        self.merged
    }

    pub fn has_adapters(&self) -> bool {
        self.params.with_prefix("lora.").next().is_some()
    }

    pub fn attach_lora(&mut self, seed: u64) -> Result<()> {
        if self.has_adapters() {
            return Err(VoraError::State("adapters already attached".into()));
        }
        for ad in lora::attach(&self.config, &mut rng_for(seed, "lora", 0))? {
            self.insert_adapter(&ad);
        }
        Ok(())
    }

    pub fn insert_adapter(&mut self, ad: &LoraAdapter) {
        self.params.insert(ad.target.a_name(), ad.a.clone());
        self.params.insert(ad.target.b_name(), ad.b.clone());
    }

    /// Reconstructs the attached adapters from the parameter store.
    pub fn adapters(&self) -> Result<Vec<LoraAdapter>> {
        let mut out = Vec::new();
        for block in 0..self.config.n_llm {
            for layer in LayerKind::ALL {
                let target = AdapterTarget { block, layer };
                if !self.params.contains(&target.a_name()) {
                    continue;
                }
                let a = self.params.get(&target.a_name())?.clone();
                let b = self.params.get(&target.b_name())?.clone();
                out.push(LoraAdapter::from_parts(a, b, self.config.alpha, target)?);
            }
        }
        Ok(out)
    }

    /// Folds every adapter into its base weight and drops the adapters.
    pub fn merge_lora(&mut self) -> Result<usize> {
        if self.merged {
            return Err(VoraError::State("model is already merged".into()));
        }
        let adapters = self.adapters()?;
        if adapters.is_empty() {
            return Err(VoraError::State("no adapters to merge".into()));
        }
        for mut ad in adapters.iter().cloned() {
            let name = ad.target.base_name();
            let merged = ad.merge_into(self.params.get(&name)?)?;
            self.params.insert(name, merged);
        }
        self.params.remove_prefix("lora.");
        self.merged = true;
        Ok(adapters.len())
    }

    /// One AuxHead (`aux.{i}.norm`, `aux.{i}.proj`) per listed student block.
    pub fn attach_aux_heads(&mut self, blocks: &[usize], seed: u64) -> Result<()> {
        let mut rng = rng_for(seed, "aux", 0);
        let (d, dv) = (self.config.d_model, self.config.d_vit);
        for &i in blocks {
            if i >= self.config.n_vit {
                return Err(VoraError::Config(format!("AuxHead block {i} >= n_vit {}", self.config.n_vit)));
            }
            self.params.insert(format!("aux.{i}.norm"), Tensor::full(&[d], 1.0));
            self.params
                .insert(format!("aux.{i}.proj"), Tensor::randn(&[dv, d], (d as f32).powf(-0.5), &mut rng));
        }
        Ok(())
    }

    pub fn aux_blocks(&self) -> Vec<usize> {
        (0..self.config.n_vit)
            .filter(|i| self.params.contains(&format!("aux.{i}.proj")))
            .collect()
    }

    pub fn strip_aux(&mut self) -> usize {
        self.params.remove_prefix("aux.")
    }

    /// Vision embeddings for `image`, on the session's tape.
    pub fn embed_image(&self, sess: &mut Session<'_>, image: &Image) -> Result<Var> {
        let patches = patchify(image, self.config.patch)?;
        let grid = image.grid(self.config.patch)?;
        let p = sess.tape.constant(patches);
        embed_vision(sess, p, grid)
    }

    /// Vision embeddings spliced ahead of the text-token embeddings.
    pub fn embed_sequence(&self, sess: &mut Session<'_>, tokens: &[usize], layout: &SequenceLayout, vision: Option<Var>) -> Result<Var> {
        let s = layout.vision_len();
        let vis_rows = vision.map_or(0, |v| sess.tape.value(v).rows());
        if vis_rows != s {
            return Err(VoraError::Layout(format!(
                "vision span holds {s} positions but {vis_rows} vision embeddings were given"
            )));
        }
        let table = sess.param("llm.embed")?;
        match vision {
            Some(v) if s == tokens.len() => Ok(v),
            Some(v) => {
                let text = sess.tape.embedding(table, &tokens[s..])?;
                sess.tape.concat(&[v, text], 0)
            }
            None => sess.tape.embedding(table, tokens),
        }
    }

    pub fn forward(&self, sess: &mut Session<'_>, input: &SequenceInput<'_>, mode: MaskMode) -> Result<LlmOutput> {
        let vision = match input.image {
            Some(img) => Some(self.embed_image(sess, img)?),
            None => None,
        };
        self.forward_embedded(sess, input.tokens, input.layout, vision, mode)
    }

    pub fn forward_embedded(
        &self,
        sess: &mut Session<'_>,
        tokens: &[usize],
        layout: &SequenceLayout,
        vision: Option<Var>,
        mode: MaskMode,
    ) -> Result<LlmOutput> {
        if tokens.len() > self.config.max_seq {
            return Err(VoraError::Config(format!(
                "sequence length {} exceeds max_seq {}",
                tokens.len(),
                self.config.max_seq
            )));
        }
        let mask = build_mask(layout, tokens.len(), mode)?;
        let x = self.embed_sequence(sess, tokens, layout, vision)?;
        llm_forward(sess, &self.config, x, &mask)
    }

    /// Logits without any gradient bookkeeping.
    pub fn logits(&self, input: &SequenceInput<'_>, mode: MaskMode) -> Result<Tensor> {
        let frozen = Trainable::none();
        let mut sess = Session::new(&self.params, &frozen);
        let out = self.forward(&mut sess, input, mode)?;
        Ok(sess.tape.value(out.logits).clone())
    }

    /// Greedy argmax decoding after `[image][prompt]`. Returns the generated
    /// ids, including the EOS id if one was produced.
    pub fn decode_greedy(&self, image: Option<&Image>, prompt: &[usize], max_new: usize, mode: MaskMode) -> Result<Vec<usize>> {
        if max_new == 0 {
            return Err(VoraError::Config("max_new must be >= 1".into()));
        }
        let frozen = Trainable::none();
        let vision = match image {
            Some(img) => {
                let mut sess = Session::new(&self.params, &frozen);
                let v = self.embed_image(&mut sess, img)?;
                Some(sess.tape.value(v).clone())
            }
            None => None,
        };
        let s = vision.as_ref().map_or(0, |v| v.rows());
        let mut tokens: Vec<usize> = std::iter::repeat_n(IMG, s).chain(prompt.iter().copied()).collect();
        let mut generated = Vec::new();
        while generated.len() < max_new && tokens.len() < self.config.max_seq {
            let layout = SequenceLayout {
                vision: 0..s,
                text: s..tokens.len(),
                supervise_from: tokens.len(),
            };
            let mut sess = Session::new(&self.params, &frozen);
            let v = vision.as_ref().map(|t| sess.tape.constant(t.clone()));
            let out = self.forward_embedded(&mut sess, &tokens, &layout, v, mode)?;
            let logits = sess.tape.value(out.logits);
            let next = argmax(logits.row(logits.rows() - 1));
            tokens.push(next);
            generated.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(generated)
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
