//! Held-out metrics: caption token accuracy, text perplexity, distillation alignment.

use serde::{Deserialize, Serialize};

use crate::data::PackedSample;
use crate::distill::AuxHead;
use crate::error::{Result, VoraError};
use crate::model::{MaskMode, Model, Session, Trainable};
use crate::par::{self, Exec};
use crate::vision::Teacher;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Positional match rate of greedy captions against `answer + EOS`.
    pub caption_token_accuracy: Option<f64>,
    /// `exp` of the mean answer-token NLL on text-only samples.
    pub text_perplexity: Option<f64>,
    /// Mean cosine between AuxHead outputs and teacher states, over blocks and vision tokens.
    pub distill_alignment: Option<f64>,
    pub image_samples: usize,
    pub text_samples: usize,
}

struct SampleEval {
    caption: Option<(usize, usize)>,
    nll: Option<(f64, usize)>,
    alignment: Option<f64>,
}

fn eval_sample(model: &Model, teacher: Option<&Teacher>, s: &PackedSample, mode: MaskMode) -> Result<SampleEval> {
    let frozen = Trainable::none();
    let mut sess = Session::new(&model.params, &frozen);
    let out = model.forward(&mut sess, &s.input(), mode)?;
    let target = s.target();
    if s.image.is_none() {
        let lm = crate::distill::lm_loss(&mut sess.tape, out.logits, &s.layout, &s.tokens)?;
        let n = target.len();
        return Ok(SampleEval {
            caption: None,
            nll: Some((sess.tape.value(lm).item() as f64 * n as f64, n)),
            alignment: None,
        });
    }
    let blocks = model.aux_blocks();
    let alignment = match teacher {
        Some(t) if !blocks.is_empty() => {
            let states = t.forward(s.image.as_ref().expect("image sample"))?;
            let v = s.layout.vision.clone();
            let mut acc = 0.0;
            for &i in &blocks {
                let head = AuxHead::bind(&mut sess, i)?;
                let h = sess.tape.slice_rows(out.taps[i].hidden, v.start, v.end)?;
                let p = head.apply(&mut sess.tape, h)?;
                let tv = sess.tape.constant(states.blocks[i].clone());
                let cos = sess.tape.cosine_rows(p, tv)?;
                let m = sess.tape.mean(cos)?;
                acc += sess.tape.value(m).item() as f64;
            }
            Some(acc / blocks.len() as f64)
        }
        _ => None,
    };
    let decoded = model.decode_greedy(s.image.as_ref(), s.prompt(), target.len(), mode)?;
    let hits = target.iter().zip(&decoded).filter(|(a, b)| a == b).count();
    Ok(SampleEval {
        caption: Some((hits, target.len())),
        nll: None,
        alignment,
    })
}

pub fn eval_metrics(model: &Model, teacher: Option<&Teacher>, heldout: &[PackedSample], mode: MaskMode) -> Result<EvalMetrics> {
    if heldout.is_empty() {
        return Err(VoraError::Data("empty held-out set".into()));
    }
    let results = par::map(Exec::default(), heldout, |s| eval_sample(model, teacher, s, mode));
    let (mut hits, mut total, mut nll, mut tokens) = (0usize, 0usize, 0.0f64, 0usize);
    let mut align = Vec::new();
    let (mut images, mut texts) = (0, 0);
    for r in results {
        let r = r?;
        if let Some((h, t)) = r.caption {
            hits += h;
            total += t;
            images += 1;
        }
        if let Some((l, n)) = r.nll {
            nll += l;
            tokens += n;
            texts += 1;
        }
        align.extend(r.alignment);
    }
    Ok(EvalMetrics {
        caption_token_accuracy: (total > 0).then(|| hits as f64 / total as f64),
        text_perplexity: (tokens > 0).then(|| (nll / tokens as f64).exp()),
        distill_alignment: (!align.is_empty()).then(|| align.iter().sum::<f64>() / align.len() as f64),
        image_samples: images,
        text_samples: texts,
    })
}
