//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. `seed` is required, every
//! other key has the default listed in [`KEYS`]. Unknown or repeated keys are
//! errors. [`RunConfig::normalized`] prints every key in a fixed order and
//! parses back to an identical value.

use std::fmt;
use std::str::FromStr;

use vora::data::{vocab::Vocab, DataConfig};
use vora::distill::DistillMode;
use vora::model::{MaskMode, ModelConfig};
use vora::train::{TrainConfig, TrainMode};

/// `(key, description)` in file order. `seed` has no default.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for every random stream (required)"),
    ("n_llm", "student blocks"),
    ("n_vit", "teacher blocks; adapters and distillation cover this many student blocks"),
    ("d_model", "student width"),
    ("d_vit", "teacher width"),
    ("n_heads", "student attention heads"),
    ("vit_heads", "teacher attention heads"),
    ("d_ff", "student FFN width"),
    ("d_vit_ff", "teacher MLP width"),
    ("embed_hidden", "vision embedding MLP hidden width"),
    ("patch", "patch edge in pixels"),
    ("rank", "LoRA rank"),
    ("alpha", "LoRA alpha; delta scale is alpha/rank"),
    ("max_seq", "longest packed sequence"),
    ("lr", "peak learning rate"),
    ("warmup_steps", "linear warmup steps"),
    ("batch_size", "samples per step"),
    ("total_steps", "optimizer steps"),
    ("mode", "pretrain | finetune | full_llm_unstable"),
    ("distill_mode", "none | last_block | block_wise"),
    ("mask_mode", "hybrid | causal"),
    ("weight_decay", "AdamW decay on matrices"),
    ("distill_weight", "multiplier on the distillation term (1 = plain sum)"),
    ("smooth_window", "trailing window for smoothed losses"),
    ("image_fraction", "share of image-caption samples per batch"),
    ("image_height", "image height when anyres is off"),
    ("image_width", "image width when anyres is off"),
    ("anyres", "draw a resolution per image"),
    ("anyres_min", "smallest side under anyres"),
    ("anyres_max", "largest side under anyres"),
    ("max_shapes", "shapes per scene, 1..=4"),
    ("base_pretrain_steps", "text-only steps on the base LLM before adapters attach"),
    ("base_pretrain_lr", "learning rate for base pre-training"),
    ("base_pretrain_warmup", "warmup steps for base pre-training"),
    ("teacher_warmup_steps", "teacher classification warm-up steps (0 = fixed random teacher)"),
    ("teacher_warmup_lr", "teacher warm-up learning rate"),
    ("teacher_warmup_batch", "teacher warm-up batch size"),
    ("eval_samples", "held-out samples for eval"),
    ("ablate_mask_modes", "comma list of mask modes"),
    ("ablate_distill_modes", "comma list of distillation modes"),
    ("ablate_ranks", "comma list of ranks"),
    ("ablate_thresholds", "comma list of smoothed LM-loss thresholds"),
    ("ablate_steps", "steps per ablation cell"),
    ("gradcheck_trials", "random trials per op"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "key `{k}`: ")?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, key: Option<&str>, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.map(str::to_string),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub base_pretrain_steps: usize,
    pub base_pretrain_lr: f32,
    pub base_pretrain_warmup: usize,
    pub teacher_warmup_steps: usize,
    pub teacher_warmup_lr: f32,
    pub teacher_warmup_batch: usize,
    pub eval_samples: usize,
    pub ablate_mask_modes: Vec<MaskMode>,
    pub ablate_distill_modes: Vec<DistillMode>,
    pub ablate_ranks: Vec<usize>,
    pub ablate_thresholds: Vec<f32>,
    pub ablate_steps: usize,
    pub gradcheck_trials: usize,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        let model = ModelConfig::micro(Vocab::standard().len());
        Self {
            seed,
            data: DataConfig {
                patch: model.patch,
                ..DataConfig::default()
            },
            model,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            base_pretrain_steps: 0,
            base_pretrain_lr: 2e-3,
            base_pretrain_warmup: 20,
            teacher_warmup_steps: 0,
            teacher_warmup_lr: 2e-3,
            teacher_warmup_batch: 8,
            eval_samples: 32,
            ablate_mask_modes: vec![MaskMode::Hybrid],
            ablate_distill_modes: vec![DistillMode::None, DistillMode::LastBlock, DistillMode::BlockWise],
            ablate_ranks: vec![8],
            ablate_thresholds: vec![3.0],
            ablate_steps: 300,
            gradcheck_trials: 50,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::with_seed(0);
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(Some(line_no), None, format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| err(Some(line_no), Some(key), "unknown key"))?;
            if seen.contains(&known.0) {
                return Err(err(Some(line_no), Some(key), "repeated key"));
            }
            seen.push(known.0);
            cfg.set(key, value).map_err(|m| err(Some(line_no), Some(key), m))?;
        }
        if !seen.contains(&"seed") {
            return Err(err(None, Some("seed"), "missing required key"));
        }
        cfg.train.seed = cfg.seed;
        cfg.data.patch = cfg.model.patch;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| err(None, None, e.to_string()))?;
        self.train.validate().map_err(|e| err(None, None, e.to_string()))?;
        self.data.validate().map_err(|e| err(None, None, e.to_string()))?;
        for (key, empty) in [
            ("ablate_mask_modes", self.ablate_mask_modes.is_empty()),
            ("ablate_distill_modes", self.ablate_distill_modes.is_empty()),
            ("ablate_ranks", self.ablate_ranks.is_empty()),
            ("ablate_thresholds", self.ablate_thresholds.is_empty()),
        ] {
            if empty {
                return Err(err(None, Some(key), "list must not be empty"));
            }
        }
        if self.eval_samples == 0 {
            return Err(err(None, Some("eval_samples"), "must be >= 1"));
        }
        if self.base_pretrain_steps > 0 && self.base_pretrain_steps <= self.base_pretrain_warmup {
            return Err(err(None, Some("base_pretrain_steps"), "must exceed base_pretrain_warmup"));
        }
        if self.teacher_warmup_batch == 0 {
            return Err(err(None, Some("teacher_warmup_batch"), "must be >= 1"));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "seed" => self.seed = num(v)?,
            "n_llm" => m.n_llm = num(v)?,
            "n_vit" => m.n_vit = num(v)?,
            "d_model" => m.d_model = num(v)?,
            "d_vit" => m.d_vit = num(v)?,
            "n_heads" => m.n_heads = num(v)?,
            "vit_heads" => m.vit_heads = num(v)?,
            "d_ff" => m.d_ff = num(v)?,
            "d_vit_ff" => m.d_vit_ff = num(v)?,
            "embed_hidden" => m.embed_hidden = num(v)?,
            "patch" => m.patch = num(v)?,
            "rank" => m.rank = num(v)?,
            "alpha" => m.alpha = num(v)?,
            "max_seq" => m.max_seq = num(v)?,
            "lr" => t.lr = num(v)?,
            "warmup_steps" => t.warmup_steps = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "total_steps" => t.total_steps = num(v)?,
            "mode" => t.mode = TrainMode::parse(v).map_err(|e| e.to_string())?,
            "distill_mode" => t.distill_mode = DistillMode::parse(v).map_err(|e| e.to_string())?,
            "mask_mode" => t.mask_mode = MaskMode::parse(v).map_err(|e| e.to_string())?,
            "weight_decay" => t.weight_decay = num(v)?,
            "distill_weight" => t.distill_weight = num(v)?,
            "smooth_window" => t.smooth_window = num(v)?,
            "image_fraction" => d.image_fraction = num(v)?,
            "image_height" => d.height = num(v)?,
            "image_width" => d.width = num(v)?,
            "anyres" => d.anyres = num(v)?,
            "anyres_min" => d.anyres_min = num(v)?,
            "anyres_max" => d.anyres_max = num(v)?,
            "max_shapes" => d.max_shapes = num(v)?,
            "base_pretrain_steps" => self.base_pretrain_steps = num(v)?,
            "base_pretrain_lr" => self.base_pretrain_lr = num(v)?,
            "base_pretrain_warmup" => self.base_pretrain_warmup = num(v)?,
            "teacher_warmup_steps" => self.teacher_warmup_steps = num(v)?,
            "teacher_warmup_lr" => self.teacher_warmup_lr = num(v)?,
            "teacher_warmup_batch" => self.teacher_warmup_batch = num(v)?,
            "eval_samples" => self.eval_samples = num(v)?,
            "ablate_mask_modes" => {
                self.ablate_mask_modes = list(v, |s| MaskMode::parse(s).map_err(|e| e.to_string()))?
            }
            "ablate_distill_modes" => {
                self.ablate_distill_modes = list(v, |s| DistillMode::parse(s).map_err(|e| e.to_string()))?
            }
            "ablate_ranks" => self.ablate_ranks = list(v, num)?,
            "ablate_thresholds" => self.ablate_thresholds = list(v, num)?,
            "ablate_steps" => self.ablate_steps = num(v)?,
            "gradcheck_trials" => self.gradcheck_trials = num(v)?,
            other => return Err(format!("unhandled key {other}")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        match key {
            "seed" => self.seed.to_string(),
            "n_llm" => m.n_llm.to_string(),
            "n_vit" => m.n_vit.to_string(),
            "d_model" => m.d_model.to_string(),
            "d_vit" => m.d_vit.to_string(),
            "n_heads" => m.n_heads.to_string(),
            "vit_heads" => m.vit_heads.to_string(),
            "d_ff" => m.d_ff.to_string(),
            "d_vit_ff" => m.d_vit_ff.to_string(),
            "embed_hidden" => m.embed_hidden.to_string(),
            "patch" => m.patch.to_string(),
            "rank" => m.rank.to_string(),
            "alpha" => m.alpha.to_string(),
            "max_seq" => m.max_seq.to_string(),
            "lr" => t.lr.to_string(),
            "warmup_steps" => t.warmup_steps.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "total_steps" => t.total_steps.to_string(),
            "mode" => t.mode.as_str().into(),
            "distill_mode" => t.distill_mode.as_str().into(),
            "mask_mode" => t.mask_mode.as_str().into(),
            "weight_decay" => t.weight_decay.to_string(),
            "distill_weight" => t.distill_weight.to_string(),
            "smooth_window" => t.smooth_window.to_string(),
            "image_fraction" => d.image_fraction.to_string(),
            "image_height" => d.height.to_string(),
            "image_width" => d.width.to_string(),
            "anyres" => d.anyres.to_string(),
            "anyres_min" => d.anyres_min.to_string(),
            "anyres_max" => d.anyres_max.to_string(),
            "max_shapes" => d.max_shapes.to_string(),
            "base_pretrain_steps" => self.base_pretrain_steps.to_string(),
            "base_pretrain_lr" => self.base_pretrain_lr.to_string(),
            "base_pretrain_warmup" => self.base_pretrain_warmup.to_string(),
            "teacher_warmup_steps" => self.teacher_warmup_steps.to_string(),
            "teacher_warmup_lr" => self.teacher_warmup_lr.to_string(),
            "teacher_warmup_batch" => self.teacher_warmup_batch.to_string(),
            "eval_samples" => self.eval_samples.to_string(),
            "ablate_mask_modes" => join(self.ablate_mask_modes.iter().map(|m| m.as_str())),
            "ablate_distill_modes" => join(self.ablate_distill_modes.iter().map(|m| m.as_str())),
            "ablate_ranks" => join(self.ablate_ranks.iter()),
            "ablate_thresholds" => join(self.ablate_thresholds.iter()),
            "ablate_steps" => self.ablate_steps.to_string(),
            "gradcheck_trials" => self.gradcheck_trials.to_string(),
            _ => unreachable!("every key in KEYS has a getter"),
        }
    }

    /// Every key, in [`KEYS`] order.
    pub fn normalized(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    /// Documented defaults, one commented block per key.
    pub fn template() -> String {
        let d = Self::with_seed(0);
        let mut out = String::new();
        for (key, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", d.get(key)));
        }
        out
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value {v:?}: {e}"))
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn join<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let e = RunConfig::parse("lr = 0.001\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("seed"));
    }

    #[test]
    fn unknown_key_names_line() {
        let e = RunConfig::parse("seed = 1\n\n# c\nlearning_rate = 3\n").unwrap_err();
        assert_eq!(e.line, Some(4));
        assert_eq!(e.key.as_deref(), Some("learning_rate"));
    }

    #[test]
    fn normalized_round_trip() {
        let c = RunConfig::parse("seed = 9 # root\nlr=0.0005\nablate_ranks = 2, 4\nanyres = true\n").unwrap();
        let n = c.normalized();
        let back = RunConfig::parse(&n).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.normalized(), n);
    }

    #[test]
    fn template_parses_to_defaults() {
        assert_eq!(RunConfig::parse(&RunConfig::template()).unwrap(), RunConfig::with_seed(0));
    }
}
