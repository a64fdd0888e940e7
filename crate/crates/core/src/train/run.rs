//! Training loops for both stages.

use std::io::Write;

use log::{debug, info};

use crate::data::{batch_at, DataConfig, PackedSample};
use crate::error::{Result, VoraError};
use crate::model::{Model, ParamStore, Trainable};
use crate::par::Exec;
use crate::tensor::Tensor;
use crate::vision::Teacher;

use super::step::{batch_gradients, StepMetrics};
use super::{loss_spikes, OptimState, TrainConfig, TrainMode};

/// Where batches come from. The stream is a pure function of `(seed, step)`,
/// so the data order is identical across runs and ablation cells.
#[derive(Clone, Debug)]
pub enum DataSource {
    Stream(DataConfig),
    /// The same samples every step (batch size is ignored).
    Fixed(Vec<PackedSample>),
}

impl DataSource {
    pub fn batch(&self, seed: u64, step: usize, batch_size: usize) -> Result<Vec<PackedSample>> {
        match self {
            DataSource::Stream(cfg) => batch_at(seed, step as u64, batch_size, cfg),
            DataSource::Fixed(samples) => Ok(samples.clone()),
        }
    }
}

/// Optimizer-side state. Data randomness is derived from `(seed, step)`, so
/// those two values are the whole RNG state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub optim: OptimState,
    pub seed: u64,
    pub history: Vec<StepMetrics>,
}

impl TrainState {
    pub fn new(params: &ParamStore, trainable: &Trainable, seed: u64) -> Result<Self> {
        let (t, f): (Vec<&String>, Vec<&String>) = params.names().partition(|n| trainable.contains(n));
        Ok(Self {
            step: 0,
            optim: OptimState::new(params, t.iter().copied())?,
            trainable: t.into_iter().cloned().collect(),
            frozen: f.into_iter().cloned().collect(),
            seed,
            history: Vec::new(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Loss-spike steps; only tracked in `full_llm_unstable` mode.
    pub spikes: Vec<usize>,
}

impl TrainOutcome {
    pub fn lm_curve(&self) -> Vec<f32> {
        self.state.history.iter().map(|m| m.lm_loss).collect()
    }

    pub fn total_curve(&self) -> Vec<f32> {
        self.state.history.iter().map(|m| m.total_loss).collect()
    }
}

fn numeric_abort(e: VoraError, step: usize) -> VoraError {
    match e {
        VoraError::NonFinite { .. } => VoraError::NumericAbort {
            step,
            lm_loss: f32::NAN,
            distill_loss: f32::NAN,
        },
        other => other,
    }
}

/// Runs `cfg.total_steps` AdamW steps on `model` in `cfg.mode`, optionally
/// streaming one JSON metrics record per line into `sink`.
pub fn train(
    model: &mut Model,
    teacher: Option<&Teacher>,
    data: &DataSource,
    cfg: &TrainConfig,
    sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    train_with(model, teacher, data, cfg, &cfg.mode.trainable(), sink)
}

fn train_with(
    model: &mut Model,
    teacher: Option<&Teacher>,
    data: &DataSource,
    cfg: &TrainConfig,
    trainable: &Trainable,
    mut sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainState::new(&model.params, trainable, cfg.seed)?;
    let opt = cfg.optimizer();
    let exec = Exec::default();
    info!(
        "{} run: {} steps, {} trainable tensors, {} frozen",
        cfg.mode.as_str(),
        cfg.total_steps,
        state.trainable.len(),
        state.frozen.len()
    );
    for step in 0..cfg.total_steps {
        let batch = data.batch(cfg.seed, step, cfg.batch_size)?;
        let mut res =
            batch_gradients(exec, model, teacher, trainable, &batch, cfg).map_err(|e| numeric_abort(e, step))?;
        if !res.total_loss.is_finite() {
            return Err(VoraError::NumericAbort {
                step,
                lm_loss: res.lm_loss,
                distill_loss: res.distill_loss,
            });
        }
        for name in &state.trainable {
            if !res.grads.contains_key(name) {
                let shape = model.params.get(name)?.shape().to_vec();
                res.grads.insert(name.clone(), Tensor::zeros(&shape));
            }
        }
        let lr = cfg.lr_at(step);
        super::adamw_step(&mut model.params, &mut state.optim, &res.grads, lr, &opt)?;
        let distills = cfg.mode.distills();
        let m = StepMetrics {
            step,
            lr,
            lm_loss: res.lm_loss,
            distill_loss: distills.then_some(res.distill_loss),
            per_block: distills.then(|| res.per_block.clone()),
            total_loss: res.total_loss,
        };
        debug!("step {step}: lm {:.4} total {:.4}", m.lm_loss, m.total_loss);
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n")?;
        }
        state.history.push(m);
        state.step += 1;
    }
    let spikes = if cfg.mode == TrainMode::FullLlmUnstable {
        let totals: Vec<f32> = state.history.iter().map(|m| m.total_loss).collect();
        loss_spikes(&totals, cfg.smooth_window)
    } else {
        Vec::new()
    };
    Ok(TrainOutcome { state, spikes })
}

/// Attaches adapters and the AuxHeads the distillation mode needs, if absent.
pub fn prepare_pretrain(model: &mut Model, cfg: &TrainConfig) -> Result<()> {
    if model.is_merged() {
        return Err(VoraError::State("cannot pre-train a merged model".into()));
    }
    if !model.has_adapters() {
        model.attach_lora(cfg.seed)?;
    }
    if model.aux_blocks().is_empty() {
        let blocks = cfg.distill_mode.blocks(model.config.n_vit);
        model.attach_aux_heads(&blocks, cfg.seed)?;
    }
    Ok(())
}

/// Stage one: frozen base, combined objective.
pub fn pretrain(
    model: &mut Model,
    teacher: Option<&Teacher>,
    data: &DataSource,
    cfg: &TrainConfig,
    sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if cfg.mode == TrainMode::Finetune {
        return Err(VoraError::Config("pretrain needs mode pretrain or full_llm_unstable".into()));
    }
    if let Some(t) = teacher {
        if t.config.patch != model.config.patch || t.config.n_vit != model.config.n_vit {
            return Err(VoraError::Config("teacher and student disagree on patch or n_vit".into()));
        }
    }
    prepare_pretrain(model, cfg)?;
    train(model, teacher, data, cfg, sink)
}

/// Stage two: merge adapters, drop AuxHeads, train LLM and vision embedding on the LM loss.
pub fn finetune(model: &mut Model, data: &DataSource, cfg: &TrainConfig, sink: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    if model.is_merged() {
        return Err(VoraError::State("checkpoint is already merged".into()));
    }
    if !model.has_adapters() {
        return Err(VoraError::State("checkpoint carries no adapters to merge".into()));
    }
    cfg.validate()?;
    let merged = model.merge_lora()?;
    let dropped = model.strip_aux();
    info!("merged {merged} adapters, dropped {dropped} AuxHead tensors");
    let cfg = TrainConfig {
        mode: TrainMode::Finetune,
        ..cfg.clone()
    };
    train(model, None, data, &cfg, sink)
}

/// Trains only `llm.*` on text-only samples so the frozen base is a language
/// model rather than random weights. Runs before adapters are attached.
pub fn pretrain_base(model: &mut Model, data: &DataConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if model.has_adapters() || model.is_merged() {
        return Err(VoraError::State("base pre-training must run before adapters are attached".into()));
    }
    let text = DataSource::Stream(DataConfig {
        image_fraction: 0.0,
        ..data.clone()
    });
    let cfg = TrainConfig {
        mode: TrainMode::Finetune,
        seed: crate::rng::derive_seed(cfg.seed, "base", 0),
        ..cfg.clone()
    };
    train_with(model, None, &text, &cfg, &Trainable::prefixes(&["llm."]), None)
}
