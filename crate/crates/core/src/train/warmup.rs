//! Optional teacher warm-up: per-patch shape/color classification, so the
//! teacher's block states carry scene information worth distilling.

use std::collections::BTreeMap;

use crate::data::{make_batch, DataConfig};
use crate::error::{Result, VoraError};
use crate::model::{Session, Trainable};
use crate::par::{self, Exec};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::vision::teacher::{classify_taped, forward_taped};
use crate::vision::{patchify, Teacher};

use super::{adamw_step, AdamW, OptimState};

/// Trains every teacher tensor for `steps` AdamW steps; returns the per-step mean loss.
pub fn warm_teacher(
    teacher: &mut Teacher,
    data: &DataConfig,
    steps: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
) -> Result<Vec<f32>> {
    let data = DataConfig {
        patch: teacher.config.patch,
        ..data.clone()
    };
    let trainable = Trainable::all();
    let names: Vec<String> = teacher.params.names().cloned().collect();
    let mut optim = OptimState::new(&teacher.params, names.iter())?;
    let opt = AdamW::default();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = make_batch(&mut rng_for(seed, "teacher_warmup", step as u64), batch_size, 1.0, &data)?;
        let t: &Teacher = teacher;
        let results = par::map(Exec::default(), &batch, |s| -> Result<(f32, BTreeMap<String, Tensor>)> {
            let (img, scene) = match (&s.image, &s.scene) {
                (Some(i), Some(sc)) => (i, sc),
                _ => return Err(VoraError::Data("warm-up batch without an image".into())),
            };
            let labels = scene.patch_labels(t.config.patch)?;
            let mut sess = Session::new(&t.params, &trainable);
            let p = sess.tape.constant(patchify(img, t.config.patch)?);
            let outs = forward_taped(&mut sess, &t.config, p, img.grid(t.config.patch)?)?;
            let last = *outs.last().ok_or_else(|| VoraError::Config("teacher has no blocks".into()))?;
            let logits = classify_taped(&mut sess, last)?;
            let loss = sess.tape.cross_entropy(logits, &labels, &vec![false; labels.len()])?;
            let mut g = sess.tape.backward(loss)?;
            Ok((sess.tape.value(loss).item(), sess.param_grads(&mut g)))
        });
        let mut grads: BTreeMap<String, Tensor> = names
            .iter()
            .map(|n| Ok((n.clone(), Tensor::zeros(teacher.params.get(n)?.shape()))))
            .collect::<Result<_>>()?;
        let mut total = 0.0f64;
        for r in results {
            let (l, g) = r?;
            total += l as f64;
            for (name, t) in g {
                let acc = grads.get_mut(&name).expect("teacher tensor");
                acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b / batch_size as f32);
            }
        }
        adamw_step(&mut teacher.params, &mut optim, &grads, lr, &opt)?;
        losses.push((total / batch_size as f64) as f32);
    }
    Ok(losses)
}
