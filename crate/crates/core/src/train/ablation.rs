//! Ablation grid over mask mode, distillation mode and LoRA rank.
//!
//! Every cell starts from the same seed and consumes the same data stream, so
//! cells differ only in the ablated axis. Steps-to-threshold scans the
//! smoothed LM-loss curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::distill::DistillMode;
use crate::error::{Result, VoraError};
use crate::model::{MaskMode, Model, ModelConfig};
use crate::par::{self, Exec};
use crate::vision::Teacher;

use super::run::{pretrain, DataSource};
use super::{smooth, TrainConfig, TrainMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub mask_mode: MaskMode,
    pub distill_mode: DistillMode,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub cells: Vec<AblationCell>,
    pub budget_steps: usize,
    pub thresholds: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub threshold: f32,
    /// Number of steps until the smoothed LM loss first reaches the threshold.
    pub steps_to_threshold: Option<usize>,
    pub final_loss: f32,
}

#[derive(Clone, Debug)]
pub struct CellCurve {
    pub cell: AblationCell,
    pub lm_loss: Vec<f32>,
    pub smoothed: Vec<f32>,
}

pub fn steps_to_threshold(smoothed: &[f32], threshold: f32) -> Option<usize> {
    smoothed.iter().position(|&l| l <= threshold).map(|i| i + 1)
}

/// Runs every cell for `budget_steps` pre-training steps from a copy of `base_model`. Returns one row per
/// (cell, threshold) plus the raw curves.
pub fn run_ablation(
    grid: &AblationConfig,
    base_model: &Model,
    teacher: Option<&Teacher>,
    data: &DataSource,
    base: &TrainConfig,
) -> Result<(Vec<AblationRow>, Vec<CellCurve>)> {
    if base_model.has_adapters() || base_model.is_merged() {
        return Err(VoraError::State("ablation needs an adapter-free base model".into()));
    }
    if grid.cells.is_empty() {
        return Err(VoraError::Config("empty ablation grid".into()));
    }
    let curves = par::map(Exec::default(), &grid.cells, |cell| -> Result<CellCurve> {
        let cfg = TrainConfig {
            mask_mode: cell.mask_mode,
            distill_mode: cell.distill_mode,
            mode: TrainMode::Pretrain,
            total_steps: grid.budget_steps,
            ..base.clone()
        };
        let mut model = base_model.clone();
        model.config = ModelConfig {
            rank: cell.rank,
            ..model.config.clone()
        };
        model.config.validate()?;
        let out = pretrain(&mut model, teacher, data, &cfg, None)?;
        let lm = out.lm_curve();
        Ok(CellCurve {
            cell: *cell,
            smoothed: smooth(&lm, cfg.smooth_window),
            lm_loss: lm,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for c in &curves {
        for &threshold in &grid.thresholds {
            rows.push(AblationRow {
                cell: c.cell,
                threshold,
                steps_to_threshold: steps_to_threshold(&c.smoothed, threshold),
                final_loss: c.smoothed.last().copied().unwrap_or(f32::NAN),
            });
        }
    }
    Ok((rows, curves))
}

/// The directional echo for one (mask mode, rank) slice of the grid, at the
/// first configured threshold that either `none` or `block_wise` reached.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionCheck {
    pub mask_mode: MaskMode,
    pub rank: usize,
    pub threshold: Option<f32>,
    pub none: Option<usize>,
    /// Whether the slice has a `last_block` cell at all.
    pub has_last_block: bool,
    pub last_block: Option<usize>,
    pub block_wise: Option<usize>,
}

fn steps_or_inf(s: Option<usize>) -> usize {
    s.unwrap_or(usize::MAX)
}

impl DirectionCheck {
    /// `steps(block_wise) ≤ steps(none)`; `None` when no threshold was reached.
    pub fn block_wise_holds(&self) -> Option<bool> {
        self.threshold?;
        Some(steps_or_inf(self.block_wise) <= steps_or_inf(self.none))
    }

    /// `last_block` between the other two (inclusive); `None` if it was not run
    /// or nothing was reached.
    pub fn last_block_between(&self) -> Option<bool> {
        self.threshold?;
        if !self.has_last_block {
            return None;
        }
        let lb = steps_or_inf(self.last_block);
        let (a, b) = (steps_or_inf(self.block_wise), steps_or_inf(self.none));
        Some(a.min(b) <= lb && lb <= a.max(b))
    }
}

/// One check per (mask mode, rank) slice holding both a `none` and a `block_wise` cell.
pub fn direction_checks(rows: &[AblationRow], thresholds: &[f32]) -> Vec<DirectionCheck> {
    let find = |m: MaskMode, r: usize, d: DistillMode, t: f32| {
        rows.iter()
            .find(|x| x.cell.mask_mode == m && x.cell.rank == r && x.cell.distill_mode == d && x.threshold == t)
    };
    let mut slices: Vec<(MaskMode, usize)> = Vec::new();
    for r in rows {
        if !slices.contains(&(r.cell.mask_mode, r.cell.rank)) {
            slices.push((r.cell.mask_mode, r.cell.rank));
        }
    }
    slices
        .into_iter()
        .filter_map(|(m, r)| {
            find(m, r, DistillMode::None, *thresholds.first()?)?;
            find(m, r, DistillMode::BlockWise, *thresholds.first()?)?;
            let steps = |d, t| find(m, r, d, t).and_then(|x| x.steps_to_threshold);
            let has_last_block = find(m, r, DistillMode::LastBlock, *thresholds.first()?).is_some();
            let threshold = thresholds.iter().copied().find(|&t| {
                steps(DistillMode::None, t).is_some() || steps(DistillMode::BlockWise, t).is_some()
            });
            Some(match threshold {
                Some(t) => DirectionCheck {
                    mask_mode: m,
                    rank: r,
                    threshold: Some(t),
                    none: steps(DistillMode::None, t),
                    has_last_block,
                    last_block: steps(DistillMode::LastBlock, t),
                    block_wise: steps(DistillMode::BlockWise, t),
                },
                None => DirectionCheck {
                    mask_mode: m,
                    rank: r,
                    threshold: None,
                    none: None,
                    has_last_block,
                    last_block: None,
                    block_wise: None,
                },
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "mask_mode,distill_mode,rank,threshold,steps_to_threshold,final_loss";

/// Unreached thresholds leave `steps_to_threshold` empty.
pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let steps = r.steps_to_threshold.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.cell.mask_mode.as_str(),
            r.cell.distill_mode.as_str(),
            r.cell.rank,
            r.threshold,
            steps,
            r.final_loss
        );
    }
    s
}
