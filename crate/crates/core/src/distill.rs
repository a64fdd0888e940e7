//! Distillation and language-modeling objectives.
//!
//! Per distilled block `i`, an AuxHead (RMSNorm + linear) maps the student's
//! vision-span hidden states to the teacher width, and the block loss is the
//! mean over vision tokens of `1 − cos(AuxHead(h_llm), h_vit)`. Block losses
//! are averaged; the total objective is the plain sum of distillation and LM
//! losses.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Result, VoraError};
use crate::model::{BlockTap, SequenceLayout, Session, NORM_EPS};
use crate::tensor::Tensor;
use crate::vision::TeacherStates;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    None,
    LastBlock,
    BlockWise,
}

impl DistillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMode::None => "none",
            DistillMode::LastBlock => "last_block",
            DistillMode::BlockWise => "block_wise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistillMode::None),
            "last_block" => Ok(DistillMode::LastBlock),
            "block_wise" => Ok(DistillMode::BlockWise),
            other => Err(VoraError::Config(format!("unknown distill mode {other:?}"))),
        }
    }

    /// Student blocks that receive an AuxHead and a distillation term.
    pub fn blocks(self, n_vit: usize) -> Vec<usize> {
        match self {
            DistillMode::None => Vec::new(),
            DistillMode::LastBlock => n_vit.checked_sub(1).into_iter().collect(),
            DistillMode::BlockWise => (0..n_vit).collect(),
        }
    }
}

/// Handles to one AuxHead's parameters on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AuxHead {
    pub norm_gain: Var,
    /// `[d_vit, d_model]`.
    pub proj: Var,
    pub block_index: usize,
}

impl AuxHead {
    pub fn bind(sess: &mut Session<'_>, block_index: usize) -> Result<Self> {
        Ok(Self {
            norm_gain: sess.param(&format!("aux.{block_index}.norm"))?,
            proj: sess.param(&format!("aux.{block_index}.proj"))?,
            block_index,
        })
    }

    pub fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let n = tape.rms_norm(h, self.norm_gain, NORM_EPS)?;
        tape.matmul_nt(n, self.proj)
    }
}

/// `(1/S)·Σ_s (1 − cos(AuxHead(h_llm[s]), h_vit[s]))`, in `[0, 2]`.
pub fn block_distill_loss(tape: &mut Tape, h_llm: Var, h_vit: Var, head: &AuxHead) -> Result<Var> {
    let (sl, sv) = (tape.value(h_llm).rows(), tape.value(h_vit).rows());
    if sl != sv {
        return Err(VoraError::Shape {
            op: "block_distill_loss",
            lhs: tape.value(h_llm).shape().to_vec(),
            rhs: tape.value(h_vit).shape().to_vec(),
        });
    }
    let projected = head.apply(tape, h_llm)?;
    cosine_loss(tape, projected, h_vit)
}

/// Mean of `1 − cos` over rows.
pub fn cosine_loss(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let cos = tape.cosine_rows(a, b)?;
    let mean = tape.mean(cos)?;
    tape.affine(mean, -1.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct DistillTerms {
    pub total: Var,
    /// `(block index, per-block loss)` for every distilled block.
    pub per_block: Vec<(usize, Var)>,
}

/// Averages the block losses selected by `mode`. `none` yields a constant 0 with no graph edges.
pub fn distill_loss(
    sess: &mut Session<'_>,
    taps: &[BlockTap],
    teacher: &TeacherStates,
    mode: DistillMode,
    vision: Range<usize>,
) -> Result<DistillTerms> {
    let n_vit = teacher.blocks.len();
    let blocks = mode.blocks(n_vit);
    if blocks.is_empty() {
        let zero = sess.tape.constant(Tensor::scalar(0.0));
        return Ok(DistillTerms {
            total: zero,
            per_block: Vec::new(),
        });
    }
    if taps.len() < n_vit {
        return Err(VoraError::Config(format!(
            "{} student taps for {n_vit} teacher blocks",
            taps.len()
        )));
    }
    if vision.len() != teacher.seq_len() {
        return Err(VoraError::Shape {
            op: "distill_loss",
            lhs: vec![vision.len()],
            rhs: vec![teacher.seq_len()],
        });
    }
    let mut per_block = Vec::with_capacity(blocks.len());
    for i in blocks {
        let head = AuxHead::bind(sess, i)?;
        let h = sess.tape.slice_rows(taps[i].hidden, vision.start, vision.end)?;
        let target = sess.tape.constant(teacher.blocks[i].clone());
        per_block.push((i, block_distill_loss(&mut sess.tape, h, target, &head)?));
    }
    let total = mean_of(&mut sess.tape, &per_block.iter().map(|(_, v)| *v).collect::<Vec<_>>())?;
    Ok(DistillTerms { total, per_block })
}

/// Mean of scalar vars.
pub fn mean_of(tape: &mut Tape, scalars: &[Var]) -> Result<Var> {
    if scalars.len() == 1 {
        return Ok(scalars[0]);
    }
    let reshaped = scalars
        .iter()
        .map(|v| tape.reshape(*v, &[1]))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&reshaped, 0)?;
    tape.mean(stacked)
}

/// Next-token cross-entropy over positions `[supervise_from, text.end)`.
pub fn lm_loss(tape: &mut Tape, logits: Var, layout: &SequenceLayout, tokens: &[usize]) -> Result<Var> {
    let rows = tape.value(logits).rows();
    if rows != tokens.len() {
        return Err(VoraError::Shape {
            op: "lm_loss",
            lhs: tape.value(logits).shape().to_vec(),
            rhs: vec![tokens.len()],
        });
    }
    let supervised = layout.supervise_from.max(1)..layout.text.end.min(tokens.len());
    if supervised.is_empty() {
        return Err(VoraError::EmptySupervision);
    }
    let mut targets = vec![0usize; rows];
    let mut ignore = vec![true; rows];
    for t in supervised {
        targets[t - 1] = tokens[t];
        ignore[t - 1] = false;
    }
    tape.cross_entropy(logits, &targets, &ignore)
}

/// `weight·distill + lm`; `weight` is 1 unless an ablation changes it.
pub fn total_loss(tape: &mut Tape, distill: Var, lm: Var, weight: f32) -> Result<Var> {
    let d = if weight == 1.0 { distill } else { tape.scale(distill, weight)? };
    tape.add(d, lm)
}
