//! Two-stage training, teacher warm-up, ablations and evaluation.

pub mod ablation;
pub mod eval;
pub mod optim;
pub mod run;
pub mod step;
pub mod warmup;

pub use ablation::{
    direction_checks, run_ablation, steps_to_threshold, to_csv, AblationCell, AblationConfig, AblationRow, CellCurve,
    DirectionCheck,
};
pub use eval::{eval_metrics, EvalMetrics};
pub use optim::{adamw_step, AdamW, OptimState};
pub use run::{finetune, pretrain, pretrain_base, prepare_pretrain, train, DataSource, TrainOutcome, TrainState};
pub use step::{batch_gradients, BatchResult, StepMetrics};
pub use warmup::warm_teacher;

use serde::{Deserialize, Serialize};

use crate::distill::DistillMode;
use crate::error::{Result, VoraError};
use crate::model::{MaskMode, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Frozen base; adapters, vision embedding and AuxHeads train on the combined objective.
    Pretrain,
    /// Adapters merged, AuxHeads dropped; LLM and vision embedding train on the LM loss.
    Finetune,
    /// Every student parameter trains on the combined objective.
    FullLlmUnstable,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Pretrain => "pretrain",
            TrainMode::Finetune => "finetune",
            TrainMode::FullLlmUnstable => "full_llm_unstable",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(TrainMode::Pretrain),
            "finetune" => Ok(TrainMode::Finetune),
            "full_llm_unstable" => Ok(TrainMode::FullLlmUnstable),
            other => Err(VoraError::Config(format!("unknown train mode {other:?}"))),
        }
    }

    pub fn trainable(self) -> Trainable {
        match self {
            TrainMode::Pretrain => Trainable::prefixes(&["lora.", "vision.", "aux."]),
            TrainMode::Finetune => Trainable::prefixes(&["llm.", "vision."]),
            TrainMode::FullLlmUnstable => Trainable::prefixes(&["llm.", "lora.", "vision.", "aux."]),
        }
    }

    pub fn distills(self) -> bool {
        self != TrainMode::Finetune
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub mode: TrainMode,
    pub distill_mode: DistillMode,
    pub mask_mode: MaskMode,
    pub seed: u64,
    pub weight_decay: f32,
    /// Multiplier on the distillation term; 1 gives the plain sum.
    pub distill_weight: f32,
    /// Trailing window for smoothed losses.
    pub smooth_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            warmup_steps: 100,
            batch_size: 16,
            total_steps: 1000,
            mode: TrainMode::Pretrain,
            distill_mode: DistillMode::BlockWise,
            mask_mode: MaskMode::Hybrid,
            seed: 0,
            weight_decay: 0.01,
            distill_weight: 1.0,
            smooth_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VoraError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.total_steps > 0 && self.total_steps <= self.warmup_steps {
            return Err(VoraError::Config(format!(
                "total_steps ({}) must exceed warmup_steps ({})",
                self.total_steps, self.warmup_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(VoraError::Config("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(VoraError::Config("weight_decay must be >= 0".into()));
        }
        if self.smooth_window == 0 {
            return Err(VoraError::Config("smooth_window must be >= 1".into()));
        }
        Ok(())
    }

    /// Linear warmup `lr·s/warmup`, then constant.
    pub fn lr_at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            self.lr * step as f32 / self.warmup_steps as f32
        } else {
            self.lr
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay as f64,
            ..AdamW::default()
        }
    }
}

/// Trailing mean over at most `window` values ending at each index.
pub fn smooth(values: &[f32], window: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0f64;
    for i in 0..values.len() {
        acc += values[i] as f64;
        if i >= window {
            acc -= values[i - window] as f64;
        }
        out.push((acc / (i + 1).min(window) as f64) as f32);
    }
    out
}

/// Steps whose loss exceeds twice the median of the preceding `window` losses
/// (only once at least 10 earlier values exist).
pub fn loss_spikes(values: &[f32], window: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 10..values.len() {
        let mut prev: Vec<f32> = values[i.saturating_sub(window)..i].to_vec();
        prev.sort_by(f32::total_cmp);
        let median = prev[prev.len() / 2];
        if values[i] > 2.0 * median {
            out.push(i);
        }
    }
    out
}
