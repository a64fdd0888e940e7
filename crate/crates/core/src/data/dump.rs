//! Dataset dump for inspection.
//!
//! `manifest.jsonl` holds one object per sample:
//! `index`, `modality` (`image_caption` | `text_only`), `height`/`width`
//! (0 for text), `image_file` (relative path or null), `prompt`, `answer`,
//! `prompt_ids`, `answer_ids`. Each image is raw interleaved RGB, one byte
//! per channel, rows top to bottom, `height·width·3` bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::{batch_at, DataConfig, Modality, Vocab};

#[derive(Serialize)]
struct Record {
    index: usize,
    modality: Modality,
    height: usize,
    width: usize,
    image_file: Option<String>,
    prompt: String,
    answer: String,
    prompt_ids: Vec<usize>,
    answer_ids: Vec<usize>,
}

/// Writes the first `batches` training batches of the stream rooted at `seed`.
pub fn dump_dataset(dir: &Path, seed: u64, batches: usize, batch_size: usize, cfg: &DataConfig) -> Result<usize> {
    fs::create_dir_all(dir.join("images"))?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
    let v = Vocab::standard();
    let mut index = 0;
    for b in 0..batches {
        for p in batch_at(seed, b as u64, batch_size, cfg)? {
            let (height, width, image_file) = match &p.image {
                Some(img) => {
                    let name = format!("images/{index:06}.rgb");
                    let bytes: Vec<u8> = img.pixels.iter().map(|v| (v * 255.0).round() as u8).collect();
                    fs::write(dir.join(&name), bytes)?;
                    (img.height, img.width, Some(name))
                }
                None => (0, 0, None),
            };
            let prompt_ids = p.prompt().to_vec();
            let answer_ids = p.target()[..p.target().len() - 1].to_vec();
            let rec = Record {
                index,
                modality: if p.image.is_some() { Modality::ImageCaption } else { Modality::TextOnly },
                height,
                width,
                image_file,
                prompt: v.decode(&prompt_ids)?,
                answer: v.decode(&answer_ids)?,
                prompt_ids,
                answer_ids,
            };
            serde_json::to_writer(&mut manifest, &rec)?;
            manifest.write_all(b"\n")?;
            index += 1;
        }
    }
    manifest.flush()?;
    Ok(index)
}
