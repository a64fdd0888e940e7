//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoraError};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    /// Norm gains, the token embedding and biases are not decayed.
    pub fn decay_for(&self, name: &str) -> f64 {
        let bias = (name.starts_with("vision.") || name.starts_with("teacher.")) && name.ends_with(".b");
        if name.contains("norm") || name == "llm.embed" || bias {
            0.0
        } else {
            self.weight_decay
        }
    }
}

/// First and second moments for exactly the trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new<'a>(params: &ParamStore, trainable: impl IntoIterator<Item = &'a String>) -> Result<Self> {
        let mut s = Self::default();
        for name in trainable {
            let shape = params.get(name)?.shape().to_vec();
            s.m.insert(name.clone(), Tensor::zeros(&shape));
            s.v.insert(name.clone(), Tensor::zeros(&shape));
        }
        Ok(s)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.m.keys()
    }
}

/// One update of every tensor that has moments. Decay is applied first:
/// `p ← p·(1 − lr·wd)`, then `p ← p − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step(
    params: &mut ParamStore,
    state: &mut OptimState,
    grads: &BTreeMap<String, Tensor>,
    lr: f32,
    opt: &AdamW,
) -> Result<()> {
    for name in state.m.keys() {
        let g = grads.get(name).ok_or_else(|| VoraError::MissingGrad(name.clone()))?;
        let p = params.get(name)?;
        if g.shape() != p.shape() {
            return Err(VoraError::Shape {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let lr = lr as f64;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (name, m) in state.m.iter_mut() {
        let v = state.v.get_mut(name).expect("moments are created in pairs");
        let g = &grads[name];
        let wd = opt.decay_for(name);
        let p = params.get_mut(name)?;
        let it = p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data());
        for (((p, m), v), &g) in it {
            let g = g as f64;
            let mut x = *p as f64 * (1.0 - lr * wd);
            let mn = opt.beta1 * *m as f64 + (1.0 - opt.beta1) * g;
            let vn = opt.beta2 * *v as f64 + (1.0 - opt.beta2) * g * g;
            x -= lr * (mn / bc1) / ((vn / bc2).sqrt() + opt.eps);
            *m = mn as f32;
            *v = vn as f32;
            *p = x as f32;
        }
    }
    Ok(())
}
