use rand::Rng;

use crate::autograd::Var;
use crate::error::{Result, VoraError};
use crate::model::{ModelConfig, ParamStore, Session};
use crate::tensor::Tensor;

/// Factorized 2-D sinusoidal encoding: the first `dim/2` channels encode the
/// grid row, the rest the column, each as `[sin(p·ω_i)…, cos(p·ω_i)…]` with
/// `ω_i = 10000^(−i/(dim/4))`. Defined for any grid.
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(4) || dim == 0 {
        return Err(VoraError::Config(format!("positional dim {dim} must be a positive multiple of 4")));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 10_000f64.powf(-(i as f64) / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for pos in [r, c] {
                data.extend(omega.iter().map(|w| (pos as f64 * w).sin() as f32));
                data.extend(omega.iter().map(|w| (pos as f64 * w).cos() as f32));
            }
        }
    }
    Tensor::new(vec![rows * cols, dim], data)
}

pub fn init_vision_embed<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> ParamStore {
    let mut p = ParamStore::new();
    let (pd, h, d) = (cfg.patch_dim(), cfg.embed_hidden, cfg.d_model);
    p.insert("vision.fc1.w", Tensor::randn(&[h, pd], (pd as f32).powf(-0.5), rng));
    p.insert("vision.fc1.b", Tensor::zeros(&[h]));
    p.insert("vision.fc2.w", Tensor::randn(&[d, h], (h as f32).powf(-0.5), rng));
    p.insert("vision.fc2.b", Tensor::zeros(&[d]));
    p
}

/// Two-layer MLP (GELU between) per patch, plus the 2-D positional encoding.
pub fn embed_vision(sess: &mut Session<'_>, patches: Var, grid: (usize, usize)) -> Result<Var> {
    let s = sess.tape.value(patches).rows();
    if s != grid.0 * grid.1 {
        return Err(VoraError::Shape {
            op: "embed_vision",
            lhs: vec![s],
            rhs: vec![grid.0, grid.1],
        });
    }
    let w1 = sess.param("vision.fc1.w")?;
    let b1 = sess.param("vision.fc1.b")?;
    let w2 = sess.param("vision.fc2.w")?;
    let b2 = sess.param("vision.fc2.b")?;
    let d = sess.tape.value(w2).shape()[0];
    let t = &mut sess.tape;
    let h = t.matmul_nt(patches, w1)?;
    let h = t.add_bias(h, b1)?;
    let h = t.gelu(h)?;
    let h = t.matmul_nt(h, w2)?;
    let h = t.add_bias(h, b2)?;
    let pe = t.constant(sincos_2d(grid.0, grid.1, d)?);
    t.add(h, pe)
}
