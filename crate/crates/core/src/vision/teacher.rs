//! Frozen toy ViT teacher.
//!
//! Patch embedding, 2-D sinusoidal positions, `n_vit` pre-norm blocks with
//! bi-directional attention and a GELU MLP. No CLS token, so the teacher's
//! sequence lines up one-to-one with the student's vision span. A per-patch
//! classification head exists only for the optional warm-up task.

use crate::autograd::Var;
use crate::data::scene::PATCH_CLASSES;
use crate::error::Result;
use crate::model::llm::attention;
use crate::model::{ModelConfig, ParamStore, Session, Trainable, NORM_EPS};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::vision::{patchify, sincos_2d, Image};

/// Per-block output hidden states, each `[S, d_vit]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherStates {
    pub blocks: Vec<Tensor>,
}

impl TeacherStates {
    pub fn seq_len(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.rows())
    }
}

#[derive(Clone, Debug)]
pub struct Teacher {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Teacher {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "teacher", 0);
        let (d, ff, pd) = (config.d_vit, config.d_vit_ff, config.patch_dim());
        let lin = |o: usize, i: usize, rng: &mut _| Tensor::randn(&[o, i], (i as f32).powf(-0.5), rng);
        let mut p = ParamStore::new();
        p.insert("teacher.patch.w", lin(d, pd, &mut rng));
        p.insert("teacher.patch.b", Tensor::zeros(&[d]));
        for i in 0..config.n_vit {
            p.insert(format!("teacher.{i}.attn_norm"), Tensor::full(&[d], 1.0));
            for name in ["q", "k", "v", "o"] {
                p.insert(format!("teacher.{i}.{name}"), lin(d, d, &mut rng));
            }
            p.insert(format!("teacher.{i}.mlp_norm"), Tensor::full(&[d], 1.0));
            p.insert(format!("teacher.{i}.fc1.w"), lin(ff, d, &mut rng));
            p.insert(format!("teacher.{i}.fc1.b"), Tensor::zeros(&[ff]));
            p.insert(format!("teacher.{i}.fc2.w"), lin(d, ff, &mut rng));
            p.insert(format!("teacher.{i}.fc2.b"), Tensor::zeros(&[d]));
        }
        p.insert("teacher.final_norm", Tensor::full(&[d], 1.0));
        p.insert("teacher.cls.w", lin(PATCH_CLASSES, d, &mut rng));
        p.insert("teacher.cls.b", Tensor::zeros(&[PATCH_CLASSES]));
        Ok(Self {
            config: config.clone(),
            params: p,
        })
    }

    /// Patch-embedding sublayer alone (no positions).
    pub fn patch_embed(&self, patches: &Tensor) -> Result<Tensor> {
        let frozen = Trainable::none();
        let mut sess = Session::new(&self.params, &frozen);
        let x = sess.tape.constant(patches.clone());
        let y = patch_embed(&mut sess, x)?;
        Ok(sess.tape.value(y).clone())
    }

    /// Block outputs without recording anything trainable.
    pub fn forward(&self, image: &Image) -> Result<TeacherStates> {
        let patches = patchify(image, self.config.patch)?;
        let grid = image.grid(self.config.patch)?;
        let frozen = Trainable::none();
        let mut sess = Session::new(&self.params, &frozen);
        let x = sess.tape.constant(patches);
        let outs = forward_taped(&mut sess, &self.config, x, grid)?;
        Ok(TeacherStates {
            blocks: outs.iter().map(|v| sess.tape.value(*v).clone()).collect(),
        })
    }
}

fn patch_embed(sess: &mut Session<'_>, patches: Var) -> Result<Var> {
    let w = sess.param("teacher.patch.w")?;
    let b = sess.param("teacher.patch.b")?;
    let h = sess.tape.matmul_nt(patches, w)?;
    sess.tape.add_bias(h, b)
}

/// Teacher blocks on a session whose store holds `teacher.*`; returns every block output.
pub fn forward_taped(
    sess: &mut Session<'_>,
    cfg: &ModelConfig,
    patches: Var,
    grid: (usize, usize),
) -> Result<Vec<Var>> {
    let s = grid.0 * grid.1;
    let mut h = patch_embed(sess, patches)?;
    let pe = sess.tape.constant(sincos_2d(grid.0, grid.1, cfg.d_vit)?);
    h = sess.tape.add(h, pe)?;
    let open = Tensor::zeros(&[s, s]);
    let mut outs = Vec::with_capacity(cfg.n_vit);
    for i in 0..cfg.n_vit {
        let g = sess.param(&format!("teacher.{i}.attn_norm"))?;
        let a = sess.tape.rms_norm(h, g, NORM_EPS)?;
        let mut proj = [h; 4];
        for (slot, name) in proj.iter_mut().zip(["q", "k", "v"]) {
            let w = sess.param(&format!("teacher.{i}.{name}"))?;
            *slot = sess.tape.matmul_nt(a, w)?;
        }
        let attn = attention(&mut sess.tape, proj[0], proj[1], proj[2], cfg.vit_heads, &open, None)?;
        let wo = sess.param(&format!("teacher.{i}.o"))?;
        let o = sess.tape.matmul_nt(attn, wo)?;
        h = sess.tape.add(h, o)?;

        let g = sess.param(&format!("teacher.{i}.mlp_norm"))?;
        let m = sess.tape.rms_norm(h, g, NORM_EPS)?;
        let (w1, b1) = (sess.param(&format!("teacher.{i}.fc1.w"))?, sess.param(&format!("teacher.{i}.fc1.b"))?);
        let (w2, b2) = (sess.param(&format!("teacher.{i}.fc2.w"))?, sess.param(&format!("teacher.{i}.fc2.b"))?);
        let t = &mut sess.tape;
        let m = t.matmul_nt(m, w1)?;
        let m = t.add_bias(m, b1)?;
        let m = t.gelu(m)?;
        let m = t.matmul_nt(m, w2)?;
        let m = t.add_bias(m, b2)?;
        h = t.add(h, m)?;
        outs.push(h);
    }
    Ok(outs)
}

/// Per-patch class logits from the last block output (warm-up task only).
pub fn classify_taped(sess: &mut Session<'_>, last: Var) -> Result<Var> {
    let g = sess.param("teacher.final_norm")?;
    let w = sess.param("teacher.cls.w")?;
    let b = sess.param("teacher.cls.b")?;
    let h = sess.tape.rms_norm(last, g, NORM_EPS)?;
    let h = sess.tape.matmul_nt(h, w)?;
    sess.tape.add_bias(h, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64) -> Image {
        let mut rng = rng_for(seed, "img", 0);
        let t = Tensor::uniform(&[16 * 24 * 3], 0.0, 1.0, &mut rng);
        Image::new(16, 24, t.into_data()).unwrap()
    }

    #[test]
    fn frozen_and_deterministic() {
        let cfg = ModelConfig::micro(100);
        let t = Teacher::init(&cfg, 3).unwrap();
        let img = image(1);
        let a = t.forward(&img).unwrap();
        let b = t.forward(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.blocks.len(), cfg.n_vit);
        for blk in &a.blocks {
            assert_eq!(blk.shape(), &[2 * 3, cfg.d_vit]);
            assert!(blk.is_finite());
        }
    }

    #[test]
    fn patch_embed_commutes_with_patch_permutation() {
        let cfg = ModelConfig::micro(100);
        let t = Teacher::init(&cfg, 4).unwrap();
        let p = patchify(&image(2), cfg.patch).unwrap();
        let (s, w) = (p.rows(), p.cols());
        let mut swapped = p.clone();
        swapped.data_mut()[..w].copy_from_slice(p.row(s - 1));
        swapped.data_mut()[(s - 1) * w..].copy_from_slice(p.row(0));
        let e = t.patch_embed(&p).unwrap();
        let es = t.patch_embed(&swapped).unwrap();
        assert_eq!(es.row(0), e.row(s - 1));
        assert_eq!(es.row(s - 1), e.row(0));
        for r in 1..s - 1 {
            assert_eq!(es.row(r), e.row(r));
        }
    }
}
