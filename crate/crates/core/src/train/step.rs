//! Per-sample gradients, reduced over a batch in sample order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PackedSample;
use crate::distill::{distill_loss, lm_loss, total_loss, DistillMode};
use crate::error::{Result, VoraError};
use crate::model::{Model, Session, Trainable};
use crate::par::{self, Exec};
use crate::tensor::Tensor;
use crate::vision::Teacher;

use super::TrainConfig;

/// One JSONL metrics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f32,
    pub lm_loss: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill_loss: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_block: Option<Vec<f32>>,
    pub total_loss: f32,
}

struct SampleResult {
    grads: BTreeMap<String, Tensor>,
    lm: f32,
    distill: f32,
    per_block: Vec<f32>,
    total: f32,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    /// Batch-mean gradients of every trainable tensor some sample reached.
    pub grads: BTreeMap<String, Tensor>,
    pub lm_loss: f32,
    /// Mean over all samples; text-only samples count as 0.
    pub distill_loss: f32,
    /// Per distilled block, mean over image samples.
    pub per_block: Vec<f32>,
    pub total_loss: f32,
}

fn effective_distill(cfg: &TrainConfig) -> DistillMode {
    if cfg.mode.distills() {
        cfg.distill_mode
    } else {
        DistillMode::None
    }
}

fn sample_gradients(
    model: &Model,
    teacher: Option<&Teacher>,
    trainable: &Trainable,
    sample: &PackedSample,
    cfg: &TrainConfig,
) -> Result<SampleResult> {
    let mut sess = Session::new(&model.params, trainable);
    let out = model.forward(&mut sess, &sample.input(), cfg.mask_mode)?;
    let lm = lm_loss(&mut sess.tape, out.logits, &sample.layout, &sample.tokens)?;
    let mode = effective_distill(cfg);
    let (total, distill, per_block) = match (&sample.image, mode) {
        (Some(img), m) if m != DistillMode::None => {
            let teacher = teacher.ok_or_else(|| VoraError::Config("distillation needs a teacher".into()))?;
            let states = teacher.forward(img)?;
            let terms = distill_loss(&mut sess, &out.taps, &states, m, sample.layout.vision.clone())?;
            let total = total_loss(&mut sess.tape, terms.total, lm, cfg.distill_weight)?;
            let per_block = terms.per_block.iter().map(|(_, v)| sess.tape.value(*v).item()).collect();
            (total, sess.tape.value(terms.total).item(), per_block)
        }
        _ => (lm, 0.0, Vec::new()),
    };
    let mut grads = sess.tape.backward(total)?;
    Ok(SampleResult {
        grads: sess.param_grads(&mut grads),
        lm: sess.tape.value(lm).item(),
        distill,
        per_block,
        total: sess.tape.value(total).item(),
    })
}

pub fn batch_gradients(
    exec: Exec,
    model: &Model,
    teacher: Option<&Teacher>,
    trainable: &Trainable,
    batch: &[PackedSample],
    cfg: &TrainConfig,
) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(VoraError::Config("empty batch".into()));
    }
    let results = par::map(exec, batch, |s| sample_gradients(model, teacher, trainable, s, cfg));
    let n = batch.len() as f32;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let (mut lm, mut distill, mut total) = (0.0f64, 0.0f64, 0.0f64);
    let mut per_block: Vec<f64> = Vec::new();
    let mut image_samples = 0usize;
    for r in results {
        let r = r?;
        for (name, g) in r.grads {
            match grads.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name, g);
                }
            }
        }
        lm += r.lm as f64;
        distill += r.distill as f64;
        total += r.total as f64;
        if !r.per_block.is_empty() {
            image_samples += 1;
            per_block.resize(r.per_block.len(), 0.0);
            per_block.iter_mut().zip(&r.per_block).for_each(|(a, b)| *a += *b as f64);
        }
    }
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    let n = n as f64;
    Ok(BatchResult {
        grads,
        lm_loss: (lm / n) as f32,
        distill_loss: (distill / n) as f32,
        per_block: per_block.iter().map(|v| (v / image_samples.max(1) as f64) as f32).collect(),
        total_loss: (total / n) as f32,
    })
}
