//! Deterministic synthetic data: shape scenes with captions, templated text
//! tasks, and per-sample sequence packing.

pub mod dump;
pub mod scene;
pub mod text;
pub mod vocab;

pub use scene::{Scene, PATCH_CLASSES};
pub use vocab::{Vocab, BOS, EOS, IMG, PAD};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoraError};
use crate::model::{SequenceInput, SequenceLayout};
use crate::rng::rng_for;
use crate::vision::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ImageCaption,
    TextOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub modality: Modality,
    pub image: Option<Image>,
    pub scene: Option<Scene>,
    /// Starts with BOS.
    pub prompt_tokens: Vec<usize>,
    /// Excludes the trailing EOS.
    pub answer_tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub image_fraction: f64,
    pub height: usize,
    pub width: usize,
    /// Draw each image's resolution from `[anyres_min, anyres_max]` (multiples of `patch`).
    pub anyres: bool,
    pub anyres_min: usize,
    pub anyres_max: usize,
    pub max_shapes: usize,
    pub patch: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_fraction: 0.82,
            height: 32,
            width: 32,
            anyres: false,
            anyres_min: 16,
            anyres_max: 48,
            max_shapes: scene::MAX_SHAPES,
            patch: 8,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.image_fraction) {
            return Err(VoraError::Config(format!(
                "image_fraction {} outside [0, 1]",
                self.image_fraction
            )));
        }
        if self.patch == 0 {
            return Err(VoraError::Config("patch must be >= 1".into()));
        }
        let sides: &[usize] = if self.anyres {
            &[self.anyres_min, self.anyres_max]
        } else {
            &[self.height, self.width]
        };
        for &side in sides {
            scene::check_resolution(side, side).map_err(|e| VoraError::Config(e.to_string()))?;
            if side % self.patch != 0 {
                return Err(VoraError::Config(format!("image side {side} not divisible by patch {}", self.patch)));
            }
        }
        if self.anyres && self.anyres_min > self.anyres_max {
            return Err(VoraError::Config("anyres_min exceeds anyres_max".into()));
        }
        if self.max_shapes == 0 || self.max_shapes > scene::MAX_SHAPES {
            return Err(VoraError::Config(format!("max_shapes must lie in 1..={}", scene::MAX_SHAPES)));
        }
        Ok(())
    }

    pub fn sample_resolution<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        if !self.anyres {
            return (self.height, self.width);
        }
        let (lo, hi) = (self.anyres_min / self.patch, self.anyres_max / self.patch);
        let mut side = || rng.random_range(lo..=hi) * self.patch;
        (side(), side())
    }
}

pub fn gen_image_caption(seed: u64, resolution: (usize, usize)) -> Result<Sample> {
    gen_image_caption_with(seed, resolution, scene::MAX_SHAPES)
}

pub fn gen_image_caption_with(seed: u64, (h, w): (usize, usize), max_shapes: usize) -> Result<Sample> {
    let scene = Scene::random(&mut rng_for(seed, "scene", 0), h, w, max_shapes)?;
    let v = Vocab::standard();
    let mut prompt_tokens = vec![BOS];
    prompt_tokens.extend(v.encode("describe")?);
    Ok(Sample {
        modality: Modality::ImageCaption,
        image: Some(scene.render()),
        answer_tokens: v.encode(&scene.caption())?,
        scene: Some(scene),
        prompt_tokens,
    })
}

pub fn gen_text_sample(seed: u64) -> Result<Sample> {
    let qa = text::random_qa(&mut rng_for(seed, "text", 0));
    let v = Vocab::standard();
    let mut prompt_tokens = vec![BOS];
    prompt_tokens.extend(v.encode(&qa.prompt)?);
    Ok(Sample {
        modality: Modality::TextOnly,
        image: None,
        scene: None,
        prompt_tokens,
        answer_tokens: v.encode(&qa.answer)?,
    })
}

/// One sample laid out as `[IMG × S][prompt][answer][EOS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSample {
    pub tokens: Vec<usize>,
    pub layout: SequenceLayout,
    pub image: Option<Image>,
    pub scene: Option<Scene>,
}

impl PackedSample {
    pub fn input(&self) -> SequenceInput<'_> {
        SequenceInput {
            tokens: &self.tokens,
            layout: &self.layout,
            image: self.image.as_ref(),
        }
    }

    /// Answer tokens plus EOS.
    pub fn target(&self) -> &[usize] {
        &self.tokens[self.layout.supervise_from..self.layout.text.end]
    }

    /// Prompt tokens after the vision span.
    pub fn prompt(&self) -> &[usize] {
        &self.tokens[self.layout.text.start..self.layout.supervise_from]
    }

    /// Appends `extra` PAD positions beyond `text.end`.
    pub fn with_padding(mut self, extra: usize) -> Self {
        self.tokens.extend(std::iter::repeat_n(PAD, extra));
        self
    }
}

pub fn pack(sample: &Sample, patch: usize) -> Result<PackedSample> {
    if sample.answer_tokens.is_empty() {
        return Err(VoraError::Data("empty answer".into()));
    }
    let s = match &sample.image {
        Some(img) => {
            let (r, c) = img.grid(patch)?;
            r * c
        }
        None => 0,
    };
    let mut tokens = vec![IMG; s];
    tokens.extend(&sample.prompt_tokens);
    let supervise_from = tokens.len();
    tokens.extend(&sample.answer_tokens);
    tokens.push(EOS);
    Ok(PackedSample {
        layout: SequenceLayout {
            vision: 0..s,
            text: s..tokens.len(),
            supervise_from,
        },
        tokens,
        image: sample.image.clone(),
        scene: sample.scene.clone(),
    })
}

/// Number of image samples in a batch of `batch_size`.
pub fn image_count(batch_size: usize, image_fraction: f64) -> usize {
    ((batch_size as f64 * image_fraction).round() as usize).min(batch_size)
}

/// Image-caption samples first, then text-only ones; one sequence per sample.
pub fn make_batch<R: Rng + ?Sized>(
    rng: &mut R,
    batch_size: usize,
    image_fraction: f64,
    cfg: &DataConfig,
) -> Result<Vec<PackedSample>> {
    if batch_size == 0 {
        return Err(VoraError::Config("batch_size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&image_fraction) {
        return Err(VoraError::Config(format!("image_fraction {image_fraction} outside [0, 1]")));
    }
    let n_img = image_count(batch_size, image_fraction);
    (0..batch_size)
        .map(|i| {
            let seed = rng.next_u64();
            let sample = if i < n_img {
                let res = cfg.sample_resolution(rng);
                gen_image_caption_with(seed, res, cfg.max_shapes)?
            } else {
                gen_text_sample(seed)?
            };
            pack(&sample, cfg.patch)
        })
        .collect()
}

/// Batch `index` of the stream rooted at `seed`; identical for every run.
pub fn batch_at(seed: u64, index: u64, batch_size: usize, cfg: &DataConfig) -> Result<Vec<PackedSample>> {
    make_batch(&mut rng_for(seed, "data", index), batch_size, cfg.image_fraction, cfg)
}

/// Held-out samples use a seed stream the training batches never touch.
pub fn heldout(seed: u64, n: usize, cfg: &DataConfig) -> Result<Vec<PackedSample>> {
    make_batch(&mut rng_for(seed, "heldout", 0), n, cfg.image_fraction, cfg)
}
